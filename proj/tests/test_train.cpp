#include <gtest/gtest.h>

#include <filesystem>

#include "comptrack/trainer.hpp"
#include "model_fixtures.hpp"

using namespace comptrack;
using fixtures::make_dataset;
using fixtures::tiny_config;

namespace {

ModelConfig train_config(std::uint64_t seed = 1) {
    ModelConfig cfg = tiny_config(seed);
    cfg.grid_h = cfg.grid_w = 24;
    cfg.channels = 8;
    cfg.pool_size = 16;
    cfg.n_max = 64;
    return cfg;
}

TrainConfig quick_train(int epochs, double lr) {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch = 8;
    tc.lr = lr;
    tc.lr_decay_every = 1000;  // flat schedule for the unit tests
    tc.seed = 3;
    tc.threads = 2;
    return tc;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesParametersBitwiseIdentical) {
    CompTrackModel model(train_config(21));
    const auto dataset = make_dataset(2, 4, 100);
    std::vector<std::vector<double>> before;
    for (const auto& name : model.params().names())
        before.push_back(model.params().value(name).data);
    train(model, dataset, quick_train(1, 0.0));
    size_t i = 0;
    for (const auto& name : model.params().names())
        EXPECT_EQ(model.params().value(name).data, before[i++]) << name;
}

TEST(Train, LossDropsByEpochFive) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        CompTrackModel model(train_config(seed));
        const auto dataset = make_dataset(6, 6, 200 + seed * 17);
        TrainConfig tc = quick_train(6, 1e-3);
        tc.seed = seed;
        const TrainResult result = train(model, dataset, tc);
        ASSERT_EQ(result.log.size(), 6u);
        EXPECT_LT(result.log[5].mean_loss, result.log[0].mean_loss) << "seed " << seed;
    }
}

TEST(Train, DeterministicAcrossThreadCounts) {
    const auto dataset = make_dataset(3, 4, 300);
    auto run = [&](int threads) {
        CompTrackModel model(train_config(5));
        TrainConfig tc = quick_train(2, 5e-4);
        tc.threads = threads;
        train(model, dataset, tc);
        std::vector<double> flat;
        for (const auto& name : model.params().names()) {
            const auto& d = model.params().value(name).data;
            flat.insert(flat.end(), d.begin(), d.end());
        }
        return flat;
    };
    EXPECT_EQ(run(1), run(2));
}

TEST(Train, CheckpointRoundTripReproducesMetrics) {
    namespace fs = std::filesystem;
    CompTrackModel model(train_config(7));
    const auto dataset = make_dataset(4, 5, 400);
    train(model, dataset, quick_train(2, 1e-3));

    const auto eval_set = make_dataset(2, 5, 900);
    auto evaluate = [&](const CompTrackModel& m) {
        double success = 0.0, precision = 0.0;
        for (const auto& seq : eval_set) {
            const InferenceResult inf = infer_sequence(m, seq);
            const std::vector<Box3D> gt(seq.gt_boxes.begin() + 1, seq.gt_boxes.end());
            const OpeReport rep = evaluate_ope(inf.boxes, gt);
            success += rep.success;
            precision += rep.precision;
        }
        return std::make_pair(success, precision);
    };
    const auto before = evaluate(model);

    const std::string path = (fs::temp_directory_path() / "ctk_train.ckpt").string();
    save_checkpoint(path, model.params());
    CompTrackModel loaded(train_config(999));
    load_checkpoint(path, loaded.params());
    const auto after = evaluate(loaded);
    EXPECT_EQ(before.first, after.first);
    EXPECT_EQ(before.second, after.second);
    fs::remove(path);
}

TEST(Train, ModulationSuppressesBackgroundOverEpochs) {
    // Ratio of modulated-feature mass on background cells (M_gt < 0.1) to
    // target cells (M_gt > 0.9), measured on a fixed probe sample: training
    // must push it down over the first epochs.
    ModelConfig cfg = train_config(11);
    cfg.grid_h = cfg.grid_w = 48;  // sigma ~ 1.5 cells so the peak covers cell centers
    const auto dataset = make_dataset(6, 6, 500, /*clutter=*/1.5);
    std::vector<fixtures::SamplePair> probes;
    for (std::uint64_t s : {510u, 511u, 512u, 513u})
        probes.push_back(fixtures::make_sample(cfg, s, /*clutter=*/1.5));

    auto one_probe_ratio = [&](const CompTrackModel& m, const fixtures::SamplePair& probe) {
        Tape t;
        const ParamStore& store = m.params();
        const int f_t = t.matmul(t.constant(probe.template_grid.features),
                                 t.parameter("pillar.proj", store.value("pillar.proj")));
        const int f_s = t.matmul(t.constant(probe.search_grid.features),
                                 t.parameter("pillar.proj", store.value("pillar.proj")));
        const int y = sfp_forward(t, store, t.concat_cols(f_t, f_s), cfg.grid_h, cfg.grid_w,
                                  cfg.channels);
        const int f_hat = modulate(t, f_s, y);
        const DenseMatrix& fh = t.value(f_hat);
        double bg = 0.0, fg = 0.0;
        int bg_n = 0, fg_n = 0;
        for (int cell = 0; cell < cfg.grid().cells(); ++cell) {
            if (!probe.search_grid.occupancy[cell]) continue;
            double mass = 0.0;
            for (int c = 0; c < cfg.channels; ++c) mass += std::abs(fh.at(cell, c));
            if (probe.m_gt.values[cell] < 0.1) {
                bg += mass;
                ++bg_n;
            } else if (probe.m_gt.values[cell] > 0.9) {
                fg += mass;
                ++fg_n;
            }
        }
        if (bg_n == 0 || fg_n == 0 || fg == 0.0) return -1.0;  // degenerate probe
        return (bg / bg_n) / (fg / fg_n);
    };
    auto suppression_ratio = [&](const CompTrackModel& m) {
        double sum = 0.0;
        int valid = 0;
        for (const auto& probe : probes) {
            const double r = one_probe_ratio(m, probe);
            if (r >= 0.0) {
                sum += r;
                ++valid;
            }
        }
        EXPECT_GE(valid, 2);
        return sum / std::max(1, valid);
    };

    std::vector<double> ratios;
    for (int epochs = 0; epochs <= 5; ++epochs) {
        CompTrackModel model(cfg);
        if (epochs > 0) {
            TrainConfig tc = quick_train(epochs, 2e-3);
            tc.seed = 11;
            train(model, dataset, tc);
        }
        ratios.push_back(suppression_ratio(model));
    }
    EXPECT_LT(ratios[5], ratios[0]);
    for (int k = 1; k <= 5; ++k) EXPECT_LT(ratios[k], ratios[k - 1] * 1.10)
        << "epoch " << k << " regressed: " << ratios[k - 1] << " -> " << ratios[k];
}

TEST(Train, NonFiniteLossAbortsWithBatchIndex) {
    CompTrackModel model(train_config(13));
    // Poison one weight so the forward pass goes non-finite.
    model.params().value("head.xy.w1").at(0, 0) = std::numeric_limits<double>::infinity();
    const auto dataset = make_dataset(2, 4, 600);
    try {
        train(model, dataset, quick_train(1, 1e-4));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("batch sample"), std::string::npos);
    }
}
