#pragma once

// Shared tiny-model fixtures for tracker tests and the acceptance suite.

#include <cstdint>

#include "comptrack/scene.hpp"
#include "comptrack/tracker.hpp"
#include "comptrack/trainer.hpp"

namespace fixtures {

using namespace comptrack;

// Tiny instance: 16x16 grid, C=8, L=8, at most 32 tokens.
inline ModelConfig tiny_config(std::uint64_t seed = 1) {
    ModelConfig cfg;
    cfg.object_class = ObjectClass::kCar;
    cfg.grid_h = cfg.grid_w = 16;
    cfg.channels = 8;
    cfg.pool_size = 8;
    cfg.n_max = 32;
    cfg.tau = 0.99;
    cfg.gamma = 0.1;
    cfg.init_seed = seed;
    return cfg;
}

struct SamplePair {
    RawBevGrid template_grid;
    RawBevGrid search_grid;
    GtHeatmap m_gt;
    Offsets gt_offsets;
};

// One deterministic training-style sample at the model's grid size.
inline SamplePair make_sample(const ModelConfig& cfg, std::uint64_t seed,
                              double clutter = 0.5, double surface_bias = 0.5) {
    SceneParams p;
    p.n_frames = 2;
    p.object_class = cfg.object_class;
    p.clutter_density = clutter;
    p.surface_bias = surface_bias;
    p.point_density = 40.0;
    const Sequence seq = generate_sequence(seed, p);
    const GridGeometry geom = cfg.grid();
    const Box3D& anchor = seq.gt_boxes[0];
    SamplePair out;
    out.template_grid =
        pillarize(crop_search_region(seq.frames[0], anchor, cfg.object_class), geom);
    out.search_grid =
        pillarize(crop_search_region(seq.frames[1], anchor, cfg.object_class), geom);
    out.gt_offsets = box_offsets_in_crop(anchor, seq.gt_boxes[1]);
    Box3D local{out.gt_offsets.dx, out.gt_offsets.dy, out.gt_offsets.dz,
                anchor.w, anchor.h, anchor.l, out.gt_offsets.dtheta};
    out.m_gt = render_gt_heatmap({local}, geom);
    return out;
}

inline std::vector<Sequence> make_dataset(int count, int frames, std::uint64_t seed_base,
                                          double clutter = 0.5, double surface_bias = 0.5,
                                          double point_density = 40.0) {
    std::vector<Sequence> out;
    for (int i = 0; i < count; ++i) {
        SceneParams p;
        p.n_frames = frames;
        p.clutter_density = clutter;
        p.surface_bias = surface_bias;
        p.point_density = point_density;
        out.push_back(generate_sequence(seed_base + i, p));
    }
    return out;
}

}  // namespace fixtures
