#include <gtest/gtest.h>

#include <random>

#include "comptrack/linalg.hpp"
#include "oracles.hpp"

using namespace comptrack;

namespace {

DenseMatrix diag3(double a, double b, double c) {
    DenseMatrix m(3, 3);
    m.at(0, 0) = a;
    m.at(1, 1) = b;
    m.at(2, 2) = c;
    return m;
}

SingularSpectrum spectrum_from(std::vector<double> sigma) {
    SingularSpectrum s;
    s.right_basis = DenseMatrix::identity(static_cast<int>(sigma.size()));
    s.values = std::move(sigma);
    return s;
}

}  // namespace

TEST(SvdThin, DiagonalMatrix) {
    const auto s = svd_thin(diag3(3, 2, 1));
    ASSERT_EQ(s.values.size(), 3u);
    EXPECT_NEAR(s.values[0], 3.0, 1e-12);
    EXPECT_NEAR(s.values[1], 2.0, 1e-12);
    EXPECT_NEAR(s.values[2], 1.0, 1e-12);
    // Right basis must be a signed permutation of the identity.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            EXPECT_NEAR(std::abs(s.right_basis.at(i, j)), i == j ? 1.0 : 0.0, 1e-10);
}

TEST(SvdThin, RankOneOuterProduct) {
    std::mt19937_64 rng(3);
    DenseMatrix u = oracles::random_matrix(6, 1, rng);
    DenseMatrix v = oracles::random_matrix(1, 4, rng);
    double un = 0.0, vn = 0.0;
    for (double e : u.data) un += e * e;
    for (double e : v.data) vn += e * e;
    for (double& e : u.data) e /= std::sqrt(un);
    for (double& e : v.data) e /= std::sqrt(vn);
    const auto s = svd_thin(matmul_plain(u, v));
    EXPECT_NEAR(s.values[0], 1.0, 1e-10);
    for (size_t i = 1; i < s.values.size(); ++i) EXPECT_NEAR(s.values[i], 0.0, 1e-10);
}

TEST(SvdThin, PlantedRankEightAgainstGramOracle) {
    std::mt19937_64 rng(2024);
    const DenseMatrix x = oracles::planted_rank_matrix(200, 64, 8, 1e-6, rng);
    const auto s = svd_thin(x);
    const auto ref = oracles::singular_values_via_gram(x);
    ASSERT_EQ(s.values.size(), 64u);
    for (int i = 0; i < 64; ++i)
        EXPECT_NEAR(s.values[i], ref[i], 1e-6 * std::max(1.0, ref[0])) << "index " << i;
    for (int i = 8; i < 64; ++i) EXPECT_LT(s.values[i], 1e-4 * s.values[0]);
}

TEST(SvdThin, EnergyMatchesFrobeniusNorm) {
    std::mt19937_64 rng(11);
    const DenseMatrix x = oracles::random_matrix(40, 12, rng);
    const auto s = svd_thin(x);
    EXPECT_NEAR(s.total_energy(), frobenius_sq(x), 1e-10 * frobenius_sq(x));
}

TEST(SvdThin, RightBasisIsOrthonormal) {
    std::mt19937_64 rng(12);
    const DenseMatrix x = oracles::planted_rank_matrix(50, 16, 5, 1e-3, rng);
    const auto s = svd_thin(x);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 16; ++k)
                dot += s.right_basis.at(i, k) * s.right_basis.at(j, k);
            EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-8);
        }
}

TEST(SvdThin, SignConventionAndDeterminism) {
    std::mt19937_64 rng(13);
    const DenseMatrix x = oracles::random_matrix(30, 8, rng);
    const auto s1 = svd_thin(x);
    const auto s2 = svd_thin(x);
    EXPECT_EQ(s1.values, s2.values);
    EXPECT_EQ(s1.right_basis.data, s2.right_basis.data);
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            const double v = s1.right_basis.at(i, j);
            if (std::abs(v) > 1e-12) {
                EXPECT_GT(v, 0.0) << "row " << i;
                break;
            }
        }
    }
}

TEST(SvdThin, WideMatrixFewerRowsThanCols) {
    std::mt19937_64 rng(14);
    const DenseMatrix x = oracles::random_matrix(5, 12, rng);
    const auto s = svd_thin(x);
    EXPECT_EQ(s.values.size(), 5u);
    EXPECT_EQ(s.right_basis.rows, 12);
    EXPECT_NEAR(s.total_energy(), frobenius_sq(x), 1e-10 * frobenius_sq(x));
}

TEST(SvdThin, NonFiniteInputRejected) {
    DenseMatrix x(2, 2);
    x.at(1, 1) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(svd_thin(x), NumericalError);
}

TEST(EffectiveRank, DirectArithmeticCases) {
    // sigma = (10, 1, 0.1): energy 100 / 101.01 = 0.99000... >= 0.99 at K=1.
    EXPECT_EQ(effective_rank(spectrum_from({10, 1, 0.1}), 0.99).k, 1);
    EXPECT_EQ(effective_rank(spectrum_from({1, 1, 1, 1}), 0.5).k, 2);
    const auto s = spectrum_from({3, 2, 1, 0, 0});
    EXPECT_EQ(effective_rank(s, 1.0).k, 3);  // count of nonzero sigma
}

TEST(EffectiveRank, DegenerateAllZeroSpectrum) {
    const auto r = effective_rank(spectrum_from({0, 0, 0}), 0.99);
    EXPECT_EQ(r.k, 1);
    EXPECT_TRUE(r.degenerate);
}

TEST(EffectiveRank, TauValidation) {
    EXPECT_THROW(effective_rank(spectrum_from({1}), 0.0), ConfigError);
    EXPECT_THROW(effective_rank(spectrum_from({1}), 1.5), ConfigError);
}

TEST(EffectiveRank, MonotoneInTauAndScaleInvariant) {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 10; ++trial) {
        const DenseMatrix x = oracles::planted_rank_matrix(60, 24, 6, 1e-3, rng);
        const auto s = svd_thin(x);
        int prev = 0;
        for (double tau : {0.95, 0.99, 0.999}) {
            const int k = effective_rank(s, tau).k;
            EXPECT_GE(k, prev);
            prev = k;
        }
        DenseMatrix scaled = x;
        for (double& v : scaled.data) v *= 37.5;
        const auto s2 = svd_thin(scaled);
        for (double tau : {0.5, 0.95, 0.99})
            EXPECT_EQ(effective_rank(s, tau).k, effective_rank(s2, tau).k);
    }
}

TEST(TruncationResidual, ExactRankAndArithmetic) {
    std::mt19937_64 rng(16);
    DenseMatrix u = oracles::random_matrix(20, 1, rng);
    DenseMatrix v = oracles::random_matrix(1, 8, rng);
    const DenseMatrix x1 = matmul_plain(u, v);
    const auto s1 = svd_thin(x1);
    EXPECT_LE(truncation_residual(x1, s1, 1), 1e-10 * frobenius_sq(x1));

    // sigma = (10, 1, 0.1), K = 1 -> residual 1.01 via a matching diagonal.
    DenseMatrix d = diag3(10, 1, 0.1);
    const auto sd = svd_thin(d);
    EXPECT_NEAR(truncation_residual(d, sd, 1), 1.01, 1e-10);

    const DenseMatrix x2 = oracles::random_matrix(100, 32, rng);
    const auto s2 = svd_thin(x2);
    EXPECT_LE(truncation_residual(x2, s2, 32), 1e-8 * frobenius_sq(x2));
}

TEST(TruncationResidual, MatchesTailEnergyIdentity) {
    std::mt19937_64 rng(17);
    const DenseMatrix x = oracles::planted_rank_matrix(80, 20, 7, 1e-2, rng);
    const auto s = svd_thin(x);
    for (int k : {1, 4, 8, 20}) {
        double tail = 0.0;
        for (size_t i = k; i < s.values.size(); ++i) tail += s.values[i] * s.values[i];
        const double resid = truncation_residual(x, s, k);
        EXPECT_NEAR(resid, tail, 1e-8 * std::max(1.0, frobenius_sq(x)));
    }
}

TEST(TruncationResidual, RangeValidation) {
    std::mt19937_64 rng(18);
    const DenseMatrix x = oracles::random_matrix(10, 4, rng);
    const auto s = svd_thin(x);
    EXPECT_THROW(truncation_residual(x, s, 0), ShapeError);
    EXPECT_THROW(truncation_residual(x, s, 5), ShapeError);
}

TEST(EckartYoung, BeatsRandomProjections) {
    // Smaller version of acceptance criterion 1 (20 matrices there).
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 4; ++trial) {
        const DenseMatrix x = oracles::planted_rank_matrix(60, 24, 10, 0.05, rng);
        const auto s = svd_thin(x);
        for (int k : {1, 4, 8}) {
            const double ours = truncation_residual(x, s, k);
            for (int p = 0; p < 20; ++p) {
                const DenseMatrix basis = oracles::random_orthonormal(24, k, rng);
                EXPECT_LE(ours, oracles::projection_residual(x, basis) + 1e-9);
            }
        }
    }
}
