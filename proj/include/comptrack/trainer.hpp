#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/params.hpp"
#include "comptrack/scene.hpp"
#include "comptrack/tracker.hpp"

namespace comptrack {

struct TrainConfig {
    int epochs = 30;
    int batch = 16;
    double lr = 1e-4;
    double lr_decay_factor = 5.0;
    int lr_decay_every = 20;  // epochs
    double weight_decay = 0.0;
    int pairs_per_epoch = 0;  // 0: every consecutive pair each epoch
    int threads = 0;          // 0: up to 4 hardware threads
    std::uint64_t seed = 1;
    bool augment = true;
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double mean_pred_loss = 0.0;
    double mean_track_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int steps = 0;
};

namespace detail {

struct TrainPair {
    int seq = 0;
    int t = 0;  // search frame index; template is t-1
};

// One training sample following the appendix protocol: both crops centered
// on the t-1 ground-truth box, shared augmentation draws across the pair.
struct PreparedSample {
    RawBevGrid template_grid;
    RawBevGrid search_grid;
    GtHeatmap m_gt;
    Offsets gt_offsets;
};

inline PreparedSample prepare_sample(const CompTrackModel& model, const Sequence& seq, int t,
                                     std::uint64_t aug_seed, bool augment) {
    const ModelConfig& cfg = model.config();
    const GridGeometry geom = cfg.grid();
    const Box3D& anchor = seq.gt_boxes[t - 1];

    PointCloud template_crop = crop_search_region(seq.frames[t - 1], anchor, cfg.object_class);
    PointCloud search_crop = crop_search_region(seq.frames[t], anchor, cfg.object_class);

    // Boxes in the crop frame: the anchor sits at the origin with zero yaw.
    Box3D template_box{0, 0, 0, anchor.w, anchor.h, anchor.l, 0};
    const Offsets raw = box_offsets_in_crop(anchor, seq.gt_boxes[t]);
    Box3D search_box{raw.dx, raw.dy, raw.dz, anchor.w, anchor.h, anchor.l, raw.dtheta};

    if (augment) {
        auto [tpts, tbox] = augment_frame(template_crop, template_box, aug_seed);
        auto [spts, sbox] = augment_frame(search_crop, search_box, aug_seed);
        template_crop = std::move(tpts);
        template_box = tbox;
        search_crop = std::move(spts);
        search_box = sbox;
    }

    PreparedSample out;
    out.template_grid = pillarize(template_crop, geom);
    out.search_grid = pillarize(search_crop, geom);
    out.m_gt = render_gt_heatmap({search_box}, geom);
    out.gt_offsets = {search_box.x, search_box.y, search_box.z, search_box.theta};
    return out;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
    for (std::uint64_t v : {a, b, c}) {
        h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        h *= 0xff51afd7ed558ccdull;
    }
    return h;
}

}  // namespace detail

// Trains the model in place. Per-sample gradients inside a batch are
// computed by a worker pool and reduced in sample order, so the result is
// bitwise independent of the thread count.
inline TrainResult train(CompTrackModel& model, const std::vector<Sequence>& dataset,
                         const TrainConfig& cfg) {
    if (dataset.empty()) throw DataError("train: empty dataset");
    if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("train: bad epochs/batch");

    std::vector<detail::TrainPair> all_pairs;
    for (size_t s = 0; s < dataset.size(); ++s) {
        if (dataset[s].length() < 2) throw DataError("train: sequence shorter than 2 frames");
        for (size_t t = 1; t < dataset[s].length(); ++t)
            all_pairs.push_back({static_cast<int>(s), static_cast<int>(t)});
    }

    AdamWOptions opt;
    opt.weight_decay = cfg.weight_decay;
    AdamW optimizer(model.params(), opt);
    const size_t n_scalars = model.params().scalar_count();

    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int n_threads =
        cfg.threads > 0 ? cfg.threads : std::max(1, std::min(4, hw > 0 ? hw : 1));

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<detail::TrainPair> pairs = all_pairs;
        std::mt19937_64 shuffle_rng(detail::mix_seed(cfg.seed, epoch, 0x5eedull, 1));
        std::shuffle(pairs.begin(), pairs.end(), shuffle_rng);
        if (cfg.pairs_per_epoch > 0 && static_cast<int>(pairs.size()) > cfg.pairs_per_epoch)
            pairs.resize(cfg.pairs_per_epoch);

        const double lr =
            cfg.lr / std::pow(cfg.lr_decay_factor,
                              cfg.lr_decay_every > 0 ? epoch / cfg.lr_decay_every : 0);

        double loss_sum = 0.0, pred_sum = 0.0, track_sum = 0.0;
        size_t samples = 0;
        for (size_t start = 0; start < pairs.size(); start += cfg.batch) {
            const size_t count = std::min<size_t>(cfg.batch, pairs.size() - start);
            std::vector<std::vector<double>> grads(count);
            std::vector<double> losses(count), preds(count), tracks(count);
            std::vector<std::string> errors(count);

            auto worker = [&](int widx) {
                for (size_t i = widx; i < count; i += n_threads) {
                    const detail::TrainPair& p = pairs[start + i];
                    try {
                        const detail::PreparedSample sample = detail::prepare_sample(
                            model, dataset[p.seq], p.t,
                            detail::mix_seed(cfg.seed, epoch, p.seq, p.t), cfg.augment);
                        Tape tape;
                        const ForwardResult fwd =
                            model.forward(tape, sample.template_grid, sample.search_grid,
                                          /*padded=*/true);
                        const LossNodes loss =
                            model.compute_losses(tape, fwd, sample.gt_offsets, sample.m_gt);
                        DenseMatrix seed_mat(1, 1);
                        seed_mat.at(0, 0) = 1.0;
                        tape.backward(loss.total, seed_mat);
                        grads[i] = model.params().flatten_grads(tape);
                        losses[i] = tape.value(loss.total).at(0, 0);
                        preds[i] = loss.pred;
                        tracks[i] = loss.track;
                    } catch (const std::exception& e) {
                        errors[i] = e.what();
                    }
                }
            };
            if (n_threads == 1) {
                worker(0);
            } else {
                std::vector<std::thread> pool;
                for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker, w);
                for (auto& th : pool) th.join();
            }

            std::vector<double> batch_grad(n_scalars, 0.0);
            for (size_t i = 0; i < count; ++i) {
                if (!errors[i].empty())
                    throw NumericalError("training aborted at batch sample " +
                                         std::to_string(start + i) + ": " + errors[i]);
                if (!std::isfinite(losses[i]))
                    throw NumericalError("non-finite loss at batch sample " +
                                         std::to_string(start + i));
                for (size_t j = 0; j < n_scalars; ++j) batch_grad[j] += grads[i][j];
                loss_sum += losses[i];
                pred_sum += preds[i];
                track_sum += tracks[i];
            }
            const double inv = 1.0 / static_cast<double>(count);
            for (double& g : batch_grad) g *= inv;
            optimizer.step(batch_grad, lr);
            ++result.steps;
            samples += count;
        }

        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        log.mean_loss = samples ? loss_sum / samples : 0.0;
        log.mean_pred_loss = samples ? pred_sum / samples : 0.0;
        log.mean_track_loss = samples ? track_sum / samples : 0.0;
        result.log.push_back(log);
    }
    return result;
}

}  // namespace comptrack
