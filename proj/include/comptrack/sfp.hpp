#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/geometry.hpp"
#include "comptrack/matrix.hpp"
#include "comptrack/params.hpp"
#include "comptrack/pillar.hpp"
#include "comptrack/tape.hpp"

namespace comptrack {

// Spatial Foreground Predictor: 3x3 grouped conv (2C -> 2C, 4 groups), ReLU,
// 3x3 grouped conv (2C -> C, 4 groups), ReLU, 1x1 conv (C -> 1), sigmoid.
// Input is the channel concatenation of template and search BEV features.

inline void register_sfp_params(ParamStore& store, int channels, std::uint64_t seed) {
    if (channels % 4 != 0) throw ConfigError("SFP requires channels divisible by 4");
    const int c2 = 2 * channels;
    const int patch = 9 * (c2 / 4);
    auto init = [&](const std::string& name, int rows, int cols, int fan) {
        store.add(name, init_uniform_fan_in(rows, cols, fan, fnv1a(name) ^ seed));
    };
    init("sfp.conv1.weight", c2, patch, patch);
    init("sfp.conv1.bias", 1, c2, patch);
    init("sfp.conv2.weight", channels, patch, patch);
    init("sfp.conv2.bias", 1, channels, patch);
    init("sfp.conv3.weight", 1, channels, channels);
    // The heatmap target is overwhelmingly zero, and a symmetric final-bias
    // init lets plain MSE drive the sigmoid into its dead zone before the
    // peak is ever expressed (the all-zero map is a near-optimal trap).
    // Starting the output at the background prior sidesteps that collapse.
    const double background_prior = 0.1;
    DenseMatrix bias3(1, 1);
    bias3.at(0, 0) = std::log(background_prior / (1.0 - background_prior));
    store.add("sfp.conv3.bias", bias3);
}

// x_bev: (H*W) x 2C node. Returns the (H*W) x 1 heatmap node.
inline int sfp_forward(Tape& tape, const ParamStore& store, int x_bev, int height, int width,
                       int channels) {
    const int c2 = 2 * channels;
    if (tape.value(x_bev).cols != c2)
        throw ShapeError("sfp_forward: expected " + std::to_string(c2) + " input channels");
    ConvSpec s1{height, width, c2, c2, 4, 3};
    ConvSpec s2{height, width, c2, channels, 4, 3};
    ConvSpec s3{height, width, channels, 1, 1, 1};
    int h = tape.conv2d_grouped(x_bev, tape.parameter("sfp.conv1.weight",
                                                      store.value("sfp.conv1.weight")), s1);
    h = tape.relu(tape.add(h, tape.parameter("sfp.conv1.bias", store.value("sfp.conv1.bias"))));
    h = tape.conv2d_grouped(h, tape.parameter("sfp.conv2.weight", store.value("sfp.conv2.weight")),
                            s2);
    h = tape.relu(tape.add(h, tape.parameter("sfp.conv2.bias", store.value("sfp.conv2.bias"))));
    h = tape.conv2d_grouped(h, tape.parameter("sfp.conv3.weight", store.value("sfp.conv3.weight")),
                            s3);
    h = tape.add(h, tape.parameter("sfp.conv3.bias", store.value("sfp.conv3.bias")));
    return tape.sigmoid(h);
}

struct GtHeatmap {
    std::vector<double> values;  // H*W in [0, 1]
    int skipped_boxes = 0;       // centers outside the grid contribute nothing
};

// Ground-truth heatmap: per box a 2D Gaussian at the BEV center with
// sigma = max(1, min(w_px, l_px) / 6) cells, truncated at 3 sigma, composed
// with an element-wise max over boxes.
inline GtHeatmap render_gt_heatmap(const std::vector<Box3D>& boxes, const GridGeometry& geom) {
    GtHeatmap out;
    out.values.assign(geom.cells(), 0.0);
    for (const Box3D& box : boxes) {
        box.validate();
        const double u = (box.x + geom.range_xy) / geom.cell_size_x();
        const double v = (box.y + geom.range_xy) / geom.cell_size_y();
        if (u < 0.0 || u > geom.height || v < 0.0 || v > geom.width) {
            ++out.skipped_boxes;
            continue;
        }
        const double w_px = box.w / geom.cell_size_y();
        const double l_px = box.l / geom.cell_size_x();
        const double sigma = std::max(1.0, std::min(w_px, l_px) / 6.0);
        const double support = 3.0 * sigma;
        const int ilo = std::max(0, static_cast<int>(std::floor(u - 0.5 - support)));
        const int ihi = std::min(geom.height - 1, static_cast<int>(std::ceil(u - 0.5 + support)));
        const int jlo = std::max(0, static_cast<int>(std::floor(v - 0.5 - support)));
        const int jhi = std::min(geom.width - 1, static_cast<int>(std::ceil(v - 0.5 + support)));
        for (int i = ilo; i <= ihi; ++i) {
            for (int j = jlo; j <= jhi; ++j) {
                const double du = (i + 0.5) - u;
                const double dv = (j + 0.5) - v;
                const double d2 = du * du + dv * dv;
                if (d2 > support * support) continue;
                const double g = std::exp(-d2 / (2.0 * sigma * sigma));
                double& cell = out.values[i * geom.width + j];
                cell = std::min(1.0, std::max(cell, g));
            }
        }
    }
    return out;
}

// F_hat[i,j,c] = F_s[i,j,c] * Y_pred[i,j]; column-broadcast multiply.
inline int modulate(Tape& tape, int f_s, int y_pred) {
    if (tape.value(f_s).rows != tape.value(y_pred).rows || tape.value(y_pred).cols != 1)
        throw ShapeError("modulate: heatmap must be (H*W) x 1 matching the feature rows");
    return tape.mul(f_s, y_pred);
}

// Mean squared error between predicted and ground-truth heatmaps.
inline int sfp_loss(Tape& tape, int y_pred, const GtHeatmap& gt) {
    const int rows = tape.value(y_pred).rows;
    if (static_cast<int>(gt.values.size()) != rows)
        throw ShapeError("sfp_loss: heatmap size mismatch");
    DenseMatrix m(rows, 1, std::vector<double>(gt.values));
    return tape.mse_loss(y_pred, tape.constant(std::move(m)));
}

}  // namespace comptrack
