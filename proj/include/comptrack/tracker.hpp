#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "comptrack/checkpoint.hpp"
#include "comptrack/errors.hpp"
#include "comptrack/geometry.hpp"
#include "comptrack/ibdtc.hpp"
#include "comptrack/linalg.hpp"
#include "comptrack/params.hpp"
#include "comptrack/pillar.hpp"
#include "comptrack/scene.hpp"
#include "comptrack/sfp.hpp"
#include "comptrack/tape.hpp"

namespace comptrack {

struct LossWeights {
    double lambda1 = 1.0;  // L_(x,y)
    double lambda2 = 1.0;  // L_z
    double lambda3 = 1.0;  // L_rot
    double theta1 = 1.0;   // L_pred
    double theta2 = 1.0;   // L_track

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || theta1 < 0 || theta2 < 0)
            throw ConfigError("loss weights must be >= 0");
        if (theta1 == 0.0 && theta2 == 0.0)
            throw ConfigError("at least one of theta1, theta2 must be > 0");
    }
};

struct ModelConfig {
    ObjectClass object_class = ObjectClass::kCar;
    int grid_h = 128;
    int grid_w = 128;
    int channels = 32;
    int pool_size = 128;  // L
    double tau = 0.99;
    // Foreground threshold for hard token selection. With the lightweight
    // SFP's 5x5 receptive field, the learned heatmap over a planar car roof
    // is a plateau near (pi/18)*(w_px/l_px) ~ 0.08, so 0.05 keeps the
    // footprint while 0.1 starves extraction down to the top-8 fallback.
    double gamma = 0.05;
    int n_max = 512;
    FusionMode fusion = FusionMode::kAddition;
    CompressionMode compression = CompressionMode::kIbdtc;
    bool svd_scale_by_sigma = false;
    int fixed_k = 128;  // for the fixed-K baseline
    std::uint64_t init_seed = 1;
    LossWeights weights;

    void validate() const {
        if (grid_h < 4 || grid_w < 4) throw ConfigError("grid too small");
        if (channels % 4 != 0)
            throw ConfigError("channels must be divisible by 4 (grouped conv + PE pairing)");
        if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
        if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
        if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("gamma must be in [0, 1)");
        if (n_max < 1) throw ConfigError("n_max must be >= 1");
        weights.validate();
    }

    GridGeometry grid() const {
        return GridGeometry::for_class(object_class, grid_h, grid_w);
    }

    bool uses_queries() const {
        return compression == CompressionMode::kIbdtc || compression == CompressionMode::kFixedK;
    }
};

// Ground-truth offsets of the search-frame box expressed in the crop frame.
struct Offsets {
    double dx = 0.0, dy = 0.0, dz = 0.0, dtheta = 0.0;
};

inline Offsets box_offsets_in_crop(const Box3D& prev_box, const Box3D& cur_box) {
    const Vec3 local = prev_box.to_local({cur_box.x, cur_box.y, cur_box.z});
    return {local.x, local.y, local.z, wrap_angle(cur_box.theta - prev_box.theta)};
}

inline Box3D apply_offsets(const Box3D& prev_box, const Offsets& off) {
    const Vec3 world = prev_box.to_world({off.dx, off.dy, off.dz});
    Box3D out = prev_box;
    out.x = world.x;
    out.y = world.y;
    out.z = world.z;
    out.theta = wrap_angle(prev_box.theta + off.dtheta);
    return out;
}

struct ForwardResult {
    int y_pred = -1;   // (H*W) x 1 heatmap node
    int x_prime = -1;  // encoded token node (N x C)
    int proxy = -1;    // proxy rows after the self-attention block
    int offsets = -1;  // 1 x 4 node (dx, dy, dz, dtheta)
    int attention = -1;
    CompressionPlan plan;
    std::vector<std::uint8_t> mask;  // leading-K over the padded rows (padded path)
    bool empty_foreground = false;
};

struct LossNodes {
    int total = -1;
    double pred = 0.0, xy = 0.0, z = 0.0, rot = 0.0, track = 0.0;
};

class CompTrackModel {
  public:
    explicit CompTrackModel(ModelConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const int c = cfg_.channels;
        store_.add("pillar.proj",
                   init_uniform_fan_in(kRawPillarChannels, c, kRawPillarChannels,
                                       fnv1a("pillar.proj") ^ cfg_.init_seed));
        register_sfp_params(store_, c, cfg_.init_seed);
        if (cfg_.uses_queries())
            register_dtc_params(store_, c, cfg_.pool_size, cfg_.fusion, cfg_.init_seed);
        register_mix_params(store_, c, cfg_.init_seed);
        auto init = [&](const std::string& name, int rows, int cols, int fan) {
            store_.add(name, init_uniform_fan_in(rows, cols, fan, fnv1a(name) ^ cfg_.init_seed));
        };
        init("head.xy.w1", c, c, c);
        init("head.xy.b1", 1, c, c);
        init("head.xy.w2", c, 2, c);
        init("head.xy.b2", 1, 2, c);
        init("head.zt.w1", c, c, c);
        init("head.zt.b1", 1, c, c);
        init("head.zt.w2", c, 2, c);
        init("head.zt.b2", 1, 2, c);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    // Raw pillar grid -> learnable projection to C channels.
    int project_grid(Tape& tape, const RawBevGrid& grid) const {
        tape.set_stage("pillar");
        return tape.matmul(tape.constant(grid.features),
                           tape.parameter("pillar.proj", store_.value("pillar.proj")));
    }

    // Full forward pass over one (template, search) grid pair. `padded` keeps
    // query tensors at L rows with a leading-K mask (the training layout);
    // otherwise tensors are physically sliced to K rows. A frozen plan pins
    // every data-dependent choice (token selection, K, Q_SVD) so repeated
    // builds differentiate the same function.
    ForwardResult forward(Tape& tape, const RawBevGrid& template_grid,
                          const RawBevGrid& search_grid, bool padded,
                          const CompressionPlan* frozen_plan = nullptr) const {
        const ParamStore& store = store_;
        const int c = cfg_.channels;
        const GridGeometry geom = search_grid.geom;
        ForwardResult out;

        const int f_t = project_grid(tape, template_grid);
        const int f_s = project_grid(tape, search_grid);
        tape.set_stage("sfp");
        const int x_bev = tape.concat_cols(f_t, f_s);
        out.y_pred = sfp_forward(tape, store, x_bev, geom.height, geom.width, c);
        const int f_hat = modulate(tape, f_s, out.y_pred);

        tape.set_stage("compression");
        if (frozen_plan) {
            out.plan = *frozen_plan;
        } else {
            out.plan.selection = extract_foreground_tokens(
                search_grid.occupancy, tape.value(out.y_pred).data, geom.width, cfg_.gamma,
                cfg_.n_max);
        }
        if (out.plan.selection.count() == 0) {
            // Empty foreground: hold-zero offsets, nothing to compress.
            out.empty_foreground = true;
            out.plan.k = 1;
            out.plan.degenerate = true;
            out.plan.q_svd = DenseMatrix::zeros(1, c);
            out.proxy = tape.constant(DenseMatrix::zeros(1, c));
            out.offsets = tape.constant(DenseMatrix::zeros(1, 4));
            return out;
        }

        const int tokens = tape.row_slice(f_hat, out.plan.selection.rows);
        const int x_prime =
            positional_encoding(tape, tokens, out.plan.selection.coords, geom.height,
                                geom.width);
        out.x_prime = x_prime;
        if (cfg_.compression == CompressionMode::kIbdtc && !frozen_plan) {
            CompressionPlan p =
                make_compression_plan(tape.value(x_prime), cfg_.tau, cfg_.pool_size,
                                      cfg_.fusion, cfg_.svd_scale_by_sigma);
            p.selection = std::move(out.plan.selection);
            out.plan = std::move(p);
        }
        compress_and_head(tape, x_prime, padded, out);
        return out;
    }

    // Compression + head stages over an already-encoded token node. The plan
    // in `out` must be populated (selection always; K/Q_SVD for IB-DTC).
    void compress_and_head(Tape& tape, int x_prime, bool padded, ForwardResult& out) const {
        const ParamStore& store = store_;
        const int c = cfg_.channels;
        tape.set_stage("compression");
        switch (cfg_.compression) {
            case CompressionMode::kIbdtc: {
                if (padded) {
                    out.mask = make_leading_mask(out.plan.k, cfg_.pool_size);
                    const int q_act = padded_active_queries(tape, store, out.plan,
                                                            cfg_.pool_size, c, cfg_.fusion);
                    const AttentionNodes att =
                        compress_tokens(tape, store, q_act, x_prime, c, &out.mask);
                    out.attention = att.attention;
                    out.proxy = masked_self_attention(tape, store, att.proxy, c, &out.mask);
                } else {
                    const int q_act = sliced_active_queries(tape, store, out.plan, c,
                                                            cfg_.fusion);
                    const AttentionNodes att = compress_tokens(tape, store, q_act, x_prime, c);
                    out.attention = att.attention;
                    out.proxy = masked_self_attention(tape, store, att.proxy, c);
                }
                break;
            }
            case CompressionMode::kFixedK: {
                const int k = std::min(cfg_.fixed_k, cfg_.pool_size);
                out.plan.k = k;
                out.plan.q_svd = DenseMatrix::zeros(k, c);
                if (padded) {
                    out.mask = make_leading_mask(k, cfg_.pool_size);
                    const int q_act = tape.parameter("dtc.queries", store.value("dtc.queries"));
                    const AttentionNodes att =
                        compress_tokens(tape, store, q_act, x_prime, c, &out.mask);
                    out.attention = att.attention;
                    out.proxy = masked_self_attention(tape, store, att.proxy, c, &out.mask);
                } else {
                    std::vector<int> prefix(k);
                    std::iota(prefix.begin(), prefix.end(), 0);
                    const int q_act = tape.row_slice(
                        tape.parameter("dtc.queries", store.value("dtc.queries")), prefix);
                    const AttentionNodes att = compress_tokens(tape, store, q_act, x_prime, c);
                    out.attention = att.attention;
                    out.proxy = masked_self_attention(tape, store, att.proxy, c);
                }
                break;
            }
            case CompressionMode::kUniformGrid:
            case CompressionMode::kRandomDrop: {
                const std::vector<int> keep =
                    baseline_keep_indices(cfg_.compression, out.plan.selection,
                                          cfg_.grid_w, cfg_.init_seed ^ 0x5eedu);
                const int subset = tape.row_slice(x_prime, keep);
                out.plan.k = static_cast<int>(keep.size());
                out.proxy = masked_self_attention(tape, store, subset, c);
                break;
            }
            case CompressionMode::kUncompressed: {
                out.plan.k = out.plan.selection.count();
                out.proxy = masked_self_attention(tape, store, x_prime, c);
                break;
            }
        }
        tape.set_stage("head");
        out.offsets = head_forward(tape, out.proxy, padded ? &out.mask : nullptr);
    }

    // Bench entry: runs only the compression + head stages over fixed token
    // content with a premade plan.
    ForwardResult forward_tokens(Tape& tape, const DenseMatrix& x_prime,
                                 const CompressionPlan& plan) const {
        ForwardResult out;
        out.plan = plan;
        const int node = tape.constant(x_prime);
        compress_and_head(tape, node, /*padded=*/false, out);
        return out;
    }

    // Masked mean-pool over active proxy rows, then two parallel 2-layer
    // perceptrons: (dx, dy) and (dz, dtheta).
    int head_forward(Tape& tape, int proxy, const std::vector<std::uint8_t>* mask) const {
        const ParamStore& store = store_;
        const int rows = tape.value(proxy).rows;
        DenseMatrix pool_row;
        if (mask) {
            if (static_cast<int>(mask->size()) != rows)
                throw ShapeError("head_forward: mask length != proxy rows");
            pool_row = mask_pooling_row(*mask);
        } else {
            pool_row = DenseMatrix::filled(1, rows, 1.0 / rows);
        }
        const int pooled = tape.matmul(tape.constant(std::move(pool_row)), proxy);
        auto branch = [&](const std::string& prefix) {
            const int a1 = tape.relu(tape.add(
                tape.matmul(pooled, tape.parameter(prefix + ".w1", store.value(prefix + ".w1"))),
                tape.parameter(prefix + ".b1", store.value(prefix + ".b1"))));
            return tape.add(
                tape.matmul(a1, tape.parameter(prefix + ".w2", store.value(prefix + ".w2"))),
                tape.parameter(prefix + ".b2", store.value(prefix + ".b2")));
        };
        return tape.concat_cols(branch("head.xy"), branch("head.zt"));
    }

    // Composite loss. The rotation residual is wrapped to (-pi, pi] by
    // adjusting the constant target before the smooth-L1, which keeps the
    // pass-through gradient exact.
    LossNodes compute_losses(Tape& tape, const ForwardResult& fwd, const Offsets& gt,
                             const GtHeatmap& m_gt) const {
        const LossWeights& w = cfg_.weights;
        tape.set_stage("loss");
        LossNodes out;
        const int l_pred = sfp_loss(tape, fwd.y_pred, m_gt);

        DenseMatrix sel_xy(4, 2);
        sel_xy.at(0, 0) = 1.0;
        sel_xy.at(1, 1) = 1.0;
        DenseMatrix sel_z(4, 1);
        sel_z.at(2, 0) = 1.0;
        DenseMatrix sel_t(4, 1);
        sel_t.at(3, 0) = 1.0;
        const int o_xy = tape.matmul(fwd.offsets, tape.constant(std::move(sel_xy)));
        const int o_z = tape.matmul(fwd.offsets, tape.constant(std::move(sel_z)));
        const int o_t = tape.matmul(fwd.offsets, tape.constant(std::move(sel_t)));

        DenseMatrix gt_xy(1, 2);
        gt_xy.at(0, 0) = gt.dx;
        gt_xy.at(0, 1) = gt.dy;
        DenseMatrix gt_z(1, 1);
        gt_z.at(0, 0) = gt.dz;
        const double pred_theta = tape.value(o_t).at(0, 0);
        DenseMatrix gt_t(1, 1);
        gt_t.at(0, 0) = pred_theta - wrap_angle(pred_theta - gt.dtheta);

        const int l_xy = tape.smooth_l1_loss(o_xy, tape.constant(std::move(gt_xy)));
        const int l_z = tape.smooth_l1_loss(o_z, tape.constant(std::move(gt_z)));
        const int l_rot = tape.smooth_l1_loss(o_t, tape.constant(std::move(gt_t)));

        const int l_track = tape.add(
            tape.add(tape.mul(l_xy, tape.scalar(w.lambda1)),
                     tape.mul(l_z, tape.scalar(w.lambda2))),
            tape.mul(l_rot, tape.scalar(w.lambda3)));
        out.total = tape.add(tape.mul(l_pred, tape.scalar(w.theta1)),
                             tape.mul(l_track, tape.scalar(w.theta2)));
        out.pred = tape.value(l_pred).at(0, 0);
        out.xy = tape.value(l_xy).at(0, 0);
        out.z = tape.value(l_z).at(0, 0);
        out.rot = tape.value(l_rot).at(0, 0);
        out.track = tape.value(l_track).at(0, 0);
        return out;
    }

  private:
    ModelConfig cfg_;
    ParamStore store_;
};

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

struct FrameStats {
    int token_count = 0;       // N
    int effective_k = 0;       // K
    double entropy_before = 0.0;
    double entropy_after = 0.0;
    bool held_last = false;
    std::uint64_t macs = 0;
    std::vector<double> heatmap;  // filled only when requested
};

struct InferenceResult {
    std::vector<Box3D> boxes;  // frames 2..T (T-1 entries)
    std::vector<FrameStats> stats;
};

// Appendix-Algorithm-1 loop: template features fixed from frame 1, search
// crops centered on the previous predicted box, offsets applied in that
// box's frame. Empty crops hold the last box.
inline InferenceResult infer_sequence(const CompTrackModel& model, const Sequence& seq,
                                      bool keep_heatmaps = false) {
    if (seq.length() < 2) throw DataError("infer_sequence: sequence must have >= 2 frames");
    const ModelConfig& cfg = model.config();
    const GridGeometry geom = cfg.grid();

    const PointCloud template_crop =
        crop_search_region(seq.frames[0], seq.gt_boxes[0], cfg.object_class);
    const RawBevGrid template_grid = pillarize(template_crop, geom);

    InferenceResult out;
    Box3D state = seq.gt_boxes[0];
    for (size_t t = 1; t < seq.length(); ++t) {
        FrameStats stats;
        const PointCloud crop = crop_search_region(seq.frames[t], state, cfg.object_class);
        if (crop.size() == 0) {
            stats.held_last = true;
            out.boxes.push_back(state);
            out.stats.push_back(std::move(stats));
            continue;
        }
        const RawBevGrid search_grid = pillarize(crop, geom);
        Tape tape;
        const ForwardResult fwd = model.forward(tape, template_grid, search_grid,
                                                /*padded=*/false);
        stats.token_count = fwd.plan.selection.count();
        stats.effective_k = fwd.plan.k;
        stats.macs = tape.total_macs();
        const double p_before =
            static_cast<double>(search_grid.occupied_cells()) / geom.cells();
        const double hfg = estimate_fg_entropy(search_grid.features, search_grid.occupancy);
        stats.entropy_before = bev_entropy_bits(p_before, hfg, geom.height, geom.width);
        const double p_after =
            static_cast<double>(stats.token_count) / geom.cells();
        stats.entropy_after = bev_entropy_bits(p_after, hfg, geom.height, geom.width);
        if (keep_heatmaps) stats.heatmap = tape.value(fwd.y_pred).data;

        Offsets off;
        if (!fwd.empty_foreground) {
            const DenseMatrix& o = tape.value(fwd.offsets);
            off = {o.at(0, 0), o.at(0, 1), o.at(0, 2), o.at(0, 3)};
        }
        state = apply_offsets(state, off);
        out.boxes.push_back(state);
        out.stats.push_back(std::move(stats));
    }
    return out;
}

struct OpeReport {
    double success = 0.0;    // AUC over IoU thresholds 0..1 step 0.05
    double precision = 0.0;  // AUC over center-distance thresholds 0..2m step 0.1
    std::vector<double> frame_iou;
    std::vector<double> frame_distance;
};

// One-pass-evaluation scoring. Threshold conventions: a frame passes an IoU
// threshold t iff IoU >= t and IoU > 0 (zero-overlap frames never count);
// it passes a distance threshold t iff dist <= t and dist < 2m (total misses
// never count).
inline OpeReport evaluate_ope(const std::vector<Box3D>& pred, const std::vector<Box3D>& gt) {
    if (pred.size() != gt.size())
        throw DataError("evaluate_ope: prediction/ground-truth length mismatch (" +
                        std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + ")");
    if (pred.empty()) throw DataError("evaluate_ope: empty inputs");
    OpeReport out;
    out.frame_iou.reserve(pred.size());
    out.frame_distance.reserve(pred.size());
    for (size_t i = 0; i < pred.size(); ++i) {
        out.frame_iou.push_back(iou3d(pred[i], gt[i]));
        out.frame_distance.push_back(center_distance(pred[i], gt[i]));
    }
    double success_sum = 0.0;
    for (int i = 0; i <= 20; ++i) {
        const double t = static_cast<double>(i) / 20.0;
        int pass = 0;
        for (double iou : out.frame_iou)
            if (iou >= t && iou > 0.0) ++pass;
        success_sum += static_cast<double>(pass) / pred.size();
    }
    out.success = success_sum / 21.0;
    double precision_sum = 0.0;
    for (int i = 0; i <= 20; ++i) {
        const double t = static_cast<double>(i) / 10.0;
        int pass = 0;
        for (double d : out.frame_distance)
            if (d <= t && d < 2.0) ++pass;
        precision_sum += static_cast<double>(pass) / pred.size();
    }
    out.precision = precision_sum / 21.0;
    return out;
}

}  // namespace comptrack
