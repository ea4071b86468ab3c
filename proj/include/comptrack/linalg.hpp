#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/matrix.hpp"

namespace comptrack {

// Singular values (descending, length min(N, C)) and the full C x C right
// basis, one right singular vector per row. U is never materialized; the
// compression pipeline only needs sigma and V^T rows.
struct SingularSpectrum {
    std::vector<double> values;
    DenseMatrix right_basis;

    double total_energy() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return s;
    }
};

namespace detail {

// Deterministic sign: first entry with magnitude > 1e-12 is nonnegative.
inline void fix_sign(double* v, int n) {
    for (int i = 0; i < n; ++i) {
        if (std::abs(v[i]) > 1e-12) {
            if (v[i] < 0.0)
                for (int j = i; j < n; ++j) v[j] = -v[j];
            return;
        }
    }
}

inline bool lex_less(const double* a, const double* b, int n) {
    for (int i = 0; i < n; ++i) {
        if (a[i] < b[i]) return true;
        if (a[i] > b[i]) return false;
    }
    return false;
}

}  // namespace detail

// Thin SVD by one-sided Jacobi rotations on the columns of X, carried out on
// X^T so every rotation touches two contiguous rows. Sweeps until the largest
// off-diagonal Gram correlation |<a_i,a_j>| / (|a_i||a_j|) drops below 1e-12,
// capped at 30 sweeps.
inline SingularSpectrum svd_thin(const DenseMatrix& X) {
    if (!all_finite(X)) throw NumericalError("svd_thin: non-finite input");
    const int n = X.rows;
    const int c = X.cols;
    DenseMatrix work = transpose_plain(X);  // c rows of length n
    DenseMatrix vt = DenseMatrix::identity(c);

    const double tol = 1e-12;
    const int max_sweeps = 30;
    double max_corr = 0.0;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        max_corr = 0.0;
        for (int p = 0; p < c - 1; ++p) {
            for (int q = p + 1; q < c; ++q) {
                double* wp = &work.data[static_cast<size_t>(p) * n];
                double* wq = &work.data[static_cast<size_t>(q) * n];
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (int i = 0; i < n; ++i) {
                    alpha += wp[i] * wp[i];
                    beta += wq[i] * wq[i];
                    gamma += wp[i] * wq[i];
                }
                const double na = std::sqrt(alpha), nb = std::sqrt(beta);
                // Columns this small are numerically zero; rotating them
                // only stirs underflow noise.
                if (na <= 1e-150 || nb <= 1e-150) continue;
                const double corr = std::abs(gamma) / (na * nb);
                max_corr = std::max(max_corr, corr);
                if (corr <= tol) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (int i = 0; i < n; ++i) {
                    const double a = wp[i], b = wq[i];
                    wp[i] = cs * a - sn * b;
                    wq[i] = sn * a + cs * b;
                }
                double* vp = &vt.data[static_cast<size_t>(p) * c];
                double* vq = &vt.data[static_cast<size_t>(q) * c];
                for (int i = 0; i < c; ++i) {
                    const double a = vp[i], b = vq[i];
                    vp[i] = cs * a - sn * b;
                    vq[i] = sn * a + cs * b;
                }
            }
        }
        if (max_corr <= tol) break;
        if (sweep == max_sweeps - 1)
            throw NumericalError("svd_thin: no convergence after " +
                                 std::to_string(max_sweeps) +
                                 " sweeps, residual correlation " + std::to_string(max_corr));
    }

    std::vector<double> sigma(c);
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        const double* wj = &work.data[static_cast<size_t>(j) * n];
        for (int i = 0; i < n; ++i) s += wj[i] * wj[i];
        sigma[j] = std::sqrt(s);
        detail::fix_sign(&vt.data[static_cast<size_t>(j) * c], c);
    }

    // Descending by sigma; exact ties broken by ascending lexicographic order
    // of the sign-fixed vectors.
    std::vector<int> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (sigma[a] != sigma[b]) return sigma[a] > sigma[b];
        return detail::lex_less(&vt.data[static_cast<size_t>(a) * c],
                                &vt.data[static_cast<size_t>(b) * c], c);
    });

    SingularSpectrum out;
    out.right_basis = DenseMatrix(c, c);
    const int keep = std::min(n, c);
    out.values.resize(keep);
    for (int j = 0; j < c; ++j) {
        if (j < keep) out.values[j] = sigma[order[j]];
        std::copy_n(&vt.data[static_cast<size_t>(order[j]) * c], c,
                    &out.right_basis.data[static_cast<size_t>(j) * c]);
    }
    return out;
}

struct RankResult {
    int k = 1;
    bool degenerate = false;  // all-zero spectrum
};

// Smallest K whose cumulative squared energy reaches tau of the total.
// An all-zero spectrum yields K = 1 with the degenerate flag set.
inline RankResult effective_rank(const SingularSpectrum& spectrum, double tau) {
    if (spectrum.values.empty()) throw ShapeError("effective_rank: empty spectrum");
    if (!(tau > 0.0 && tau <= 1.0))
        throw ConfigError("effective_rank: tau must be in (0, 1], got " + std::to_string(tau));
    const double total = spectrum.total_energy();
    if (total == 0.0) return {1, true};
    double prefix = 0.0;
    for (size_t i = 0; i < spectrum.values.size(); ++i) {
        prefix += spectrum.values[i] * spectrum.values[i];
        if (prefix >= tau * total) return {static_cast<int>(i) + 1, false};
    }
    return {static_cast<int>(spectrum.values.size()), false};
}

// First k rows of V^T as a k x C matrix, optionally scaled by sigma.
inline DenseMatrix top_right_vectors(const SingularSpectrum& spectrum, int k,
                                     bool scale_by_sigma = false) {
    const int c = spectrum.right_basis.cols;
    if (k < 1 || k > spectrum.right_basis.rows)
        throw ShapeError("top_right_vectors: k out of range");
    DenseMatrix out(k, c);
    for (int i = 0; i < k; ++i) {
        const double scale =
            scale_by_sigma && i < static_cast<int>(spectrum.values.size()) ? spectrum.values[i]
                                                                           : 1.0;
        for (int j = 0; j < c; ++j) out.at(i, j) = scale * spectrum.right_basis.at(i, j);
    }
    return out;
}

// ||X - X_K||_F^2 with X_K the rank-K truncation, computed by materializing
// the projection X V_K V_K^T. The discarded-energy identity (tail sum of
// sigma^2) is checked against this in tests, not assumed here.
inline double truncation_residual(const DenseMatrix& X, const SingularSpectrum& spectrum,
                                  int k) {
    const int keep = static_cast<int>(spectrum.values.size());
    if (k < 1 || k > keep)
        throw ShapeError("truncation_residual: K=" + std::to_string(k) +
                         " out of range [1, " + std::to_string(keep) + "]");
    const DenseMatrix vk = top_right_vectors(spectrum, k);  // k x C
    const DenseMatrix y = matmul_plain(X, transpose_plain(vk));  // N x k
    const DenseMatrix xk = matmul_plain(y, vk);                  // N x C
    double resid = 0.0;
    for (size_t i = 0; i < X.data.size(); ++i) {
        const double d = X.data[i] - xk.data[i];
        resid += d * d;
    }
    return resid;
}

}  // namespace comptrack
