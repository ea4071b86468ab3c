#include <gtest/gtest.h>

#include <random>

#include "comptrack/sfp.hpp"

using namespace comptrack;

namespace {

constexpr int kH = 8, kW = 8, kC = 8;

GridGeometry small_grid() {
    GridGeometry g;
    g.height = kH;
    g.width = kW;
    g.range_xy = 4.8;
    g.range_z = 1.5;
    return g;
}

ParamStore sfp_store(std::uint64_t seed) {
    ParamStore store;
    register_sfp_params(store, kC, seed);
    return store;
}

DenseMatrix rand_mat(int r, int c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-scale, scale);
    DenseMatrix m(r, c);
    for (double& v : m.data) v = dist(rng);
    return m;
}

}  // namespace

TEST(SfpForward, ZeroInputZeroBiasesGiveHalfEverywhere) {
    // Constant-network case: zero input and zero-initialized biases make the
    // final logits exactly zero, so the heatmap is uniformly sigmoid(0).
    ParamStore store = sfp_store(3);
    for (const char* name : {"sfp.conv1.bias", "sfp.conv2.bias", "sfp.conv3.bias"})
        for (double& v : store.value(name).data) v = 0.0;
    Tape tape;
    const int x = tape.constant(DenseMatrix::zeros(kH * kW, 2 * kC));
    const int y = sfp_forward(tape, store, x, kH, kW, kC);
    for (double v : tape.value(y).data) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(SfpForward, OutputStaysInUnitInterval) {
    ParamStore store = sfp_store(4);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Tape tape;
        const int x = tape.constant(rand_mat(kH * kW, 2 * kC, 1000 + seed, 3.0));
        const int y = sfp_forward(tape, store, x, kH, kW, kC);
        for (double v : tape.value(y).data) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }
}

TEST(SfpForward, ShapeMismatchRejected) {
    ParamStore store = sfp_store(5);
    Tape tape;
    const int x = tape.constant(DenseMatrix::zeros(kH * kW, kC));  // missing template half
    EXPECT_THROW(sfp_forward(tape, store, x, kH, kW, kC), ShapeError);
}

TEST(SfpForward, GradCheckThroughMseLoss) {
    ParamStore store = sfp_store(6);
    const DenseMatrix x = rand_mat(kH * kW, 2 * kC, 7, 0.8);
    GtHeatmap gt;
    gt.values.assign(kH * kW, 0.0);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (double& v : gt.values) v = u01(rng);
    auto build = [&](Tape& t) {
        const int y = sfp_forward(t, store, t.constant(x), kH, kW, kC);
        return sfp_loss(t, y, gt);
    };
    const auto report = grad_check(store, build, 1e-4);
    EXPECT_TRUE(report.pass);
    for (const auto& e : report.entries) EXPECT_LT(e.max_rel_err, 1e-4) << e.name;
}

TEST(RenderGtHeatmap, PeakIsExactlyOneAtCenteredCell) {
    const GridGeometry g = small_grid();
    // Center of cell (2, 3).
    Box3D box;
    box.x = -g.range_xy + (2 + 0.5) * g.cell_size_x();
    box.y = -g.range_xy + (3 + 0.5) * g.cell_size_y();
    box.w = 2.0;
    box.l = 4.0;
    box.h = 1.5;
    const GtHeatmap hm = render_gt_heatmap({box}, g);
    EXPECT_DOUBLE_EQ(hm.values[2 * g.width + 3], 1.0);
    EXPECT_EQ(hm.skipped_boxes, 0);
}

TEST(RenderGtHeatmap, ValueAtOneSigmaIsExpMinusHalf) {
    GridGeometry g = small_grid();
    g.height = g.width = 64;
    Box3D box;
    box.x = -g.range_xy + 32.5 * g.cell_size_x();
    box.y = -g.range_xy + 32.5 * g.cell_size_y();
    box.w = 1.8;
    box.l = 4.2;
    box.h = 1.5;
    const double w_px = box.w / g.cell_size_y();
    const double l_px = box.l / g.cell_size_x();
    const double sigma = std::max(1.0, std::min(w_px, l_px) / 6.0);
    const GtHeatmap hm = render_gt_heatmap({box}, g);
    // Probe along +x at distance sigma (continuous): interpolate exact cell.
    const int di = static_cast<int>(sigma);
    const double d = di;  // whole-cell displacement
    const double expect = std::exp(-d * d / (2.0 * sigma * sigma));
    EXPECT_NEAR(hm.values[(32 + di) * g.width + 32], expect, 1e-12);
    if (std::abs(sigma - std::round(sigma)) < 1e-9) {
        EXPECT_NEAR(hm.values[(32 + static_cast<int>(std::round(sigma))) * g.width + 32],
                    std::exp(-0.5), 1e-12);
    }
}

TEST(RenderGtHeatmap, TwoDistantBoxesComposeByMax) {
    GridGeometry g = small_grid();
    g.height = g.width = 32;
    Box3D a;
    a.x = -g.range_xy + 8.5 * g.cell_size_x();
    a.y = -g.range_xy + 8.5 * g.cell_size_y();
    a.w = a.l = 2.0;
    a.h = 1.0;
    Box3D b = a;
    b.x = -g.range_xy + 24.5 * g.cell_size_x();
    b.y = -g.range_xy + 24.5 * g.cell_size_y();
    const GtHeatmap ha = render_gt_heatmap({a}, g);
    const GtHeatmap hb = render_gt_heatmap({b}, g);
    const GtHeatmap hab = render_gt_heatmap({a, b}, g);
    for (int i = 0; i < g.cells(); ++i)
        EXPECT_DOUBLE_EQ(hab.values[i], std::max(ha.values[i], hb.values[i]));
}

TEST(RenderGtHeatmap, TranslationEquivariantByWholeCells) {
    GridGeometry g = small_grid();
    g.height = g.width = 32;
    Box3D a;
    a.x = -g.range_xy + 10.5 * g.cell_size_x();
    a.y = -g.range_xy + 11.5 * g.cell_size_y();
    a.w = 1.5;
    a.l = 3.0;
    a.h = 1.0;
    Box3D b = a;
    b.x += 3 * g.cell_size_x();
    b.y += 5 * g.cell_size_y();
    const GtHeatmap ha = render_gt_heatmap({a}, g);
    const GtHeatmap hb = render_gt_heatmap({b}, g);
    for (int i = 0; i + 3 < g.height; ++i)
        for (int j = 0; j + 5 < g.width; ++j)
            EXPECT_NEAR(hb.values[(i + 3) * g.width + (j + 5)], ha.values[i * g.width + j],
                        1e-12);
}

TEST(RenderGtHeatmap, CenterOutsideGridContributesNothing) {
    const GridGeometry g = small_grid();
    Box3D box;
    box.x = 3.0 * g.range_xy;
    box.y = 0.0;
    box.w = box.l = 2.0;
    box.h = 1.0;
    const GtHeatmap hm = render_gt_heatmap({box}, g);
    EXPECT_EQ(hm.skipped_boxes, 1);
    for (double v : hm.values) EXPECT_EQ(v, 0.0);
}

TEST(Modulate, IdentityAndSuppressionAndElementwiseOracle) {
    Tape tape;
    const DenseMatrix f = rand_mat(kH * kW, kC, 21);
    const int f_node = tape.constant(f);

    const int ones = tape.constant(DenseMatrix::filled(kH * kW, 1, 1.0));
    EXPECT_EQ(tape.value(modulate(tape, f_node, ones)).data, f.data);

    const int zeros = tape.constant(DenseMatrix::zeros(kH * kW, 1));
    for (double v : tape.value(modulate(tape, f_node, zeros)).data) EXPECT_EQ(v, 0.0);

    const DenseMatrix y = rand_mat(kH * kW, 1, 22, 0.5);
    const int mod = modulate(tape, f_node, tape.constant(y));
    for (int i = 0; i < kH * kW; ++i)
        for (int c = 0; c < kC; ++c)
            EXPECT_DOUBLE_EQ(tape.value(mod).at(i, c), f.at(i, c) * y.at(i, 0));
}

TEST(SfpLoss, TrivialAndRandomCases) {
    Tape tape;
    GtHeatmap gt;
    gt.values.assign(kH * kW, 1.0);

    const int same = tape.constant(DenseMatrix::filled(kH * kW, 1, 1.0));
    EXPECT_DOUBLE_EQ(tape.value(sfp_loss(tape, same, gt)).at(0, 0), 0.0);

    const int zeros = tape.constant(DenseMatrix::zeros(kH * kW, 1));
    EXPECT_DOUBLE_EQ(tape.value(sfp_loss(tape, zeros, gt)).at(0, 0), 1.0);

    const DenseMatrix y = rand_mat(kH * kW, 1, 31, 1.0);
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (double& v : gt.values) v = u01(rng);
    double expect = 0.0;
    for (int i = 0; i < kH * kW; ++i) {
        const double d = y.at(i, 0) - gt.values[i];
        expect += d * d;
    }
    expect /= kH * kW;
    EXPECT_NEAR(tape.value(sfp_loss(tape, tape.constant(y), gt)).at(0, 0), expect, 1e-12);
}
