#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "comptrack/errors.hpp"

namespace comptrack {

// Dense row-major matrix of doubles. The whole pipeline trains in double
// precision; the float32 surface only appears in on-disk point cloud and
// grid-dump formats.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    DenseMatrix() = default;
    DenseMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {
        if (r <= 0 || c <= 0) throw ShapeError("DenseMatrix: dimensions must be positive");
    }
    DenseMatrix(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (r <= 0 || c <= 0) throw ShapeError("DenseMatrix: dimensions must be positive");
        if (data.size() != static_cast<size_t>(r) * c)
            throw ShapeError("DenseMatrix: data length does not match rows*cols");
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }

    bool same_shape(const DenseMatrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    static DenseMatrix zeros(int r, int c) { return DenseMatrix(r, c); }

    static DenseMatrix filled(int r, int c, double v) {
        DenseMatrix m(r, c);
        std::fill(m.data.begin(), m.data.end(), v);
        return m;
    }

    static DenseMatrix identity(int n) {
        DenseMatrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

inline bool all_finite(const DenseMatrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double frobenius_sq(const DenseMatrix& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return s;
}

// Plain (non-tape) matrix product, used by linear algebra and test oracles.
inline DenseMatrix matmul_plain(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols != b.rows) throw ShapeError("matmul_plain: inner dimensions differ");
    DenseMatrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
            double* orow = &out.data[static_cast<size_t>(i) * out.cols];
            for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

inline DenseMatrix transpose_plain(const DenseMatrix& a) {
    DenseMatrix out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// FNV-1a, stable across builds; used to derive per-parameter init streams.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 1469598103934665603ull) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Conventional fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline DenseMatrix init_uniform_fan_in(int rows, int cols, int fan_in, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseMatrix m(rows, cols);
    for (double& v : m.data) v = dist(rng);
    return m;
}

}  // namespace comptrack
