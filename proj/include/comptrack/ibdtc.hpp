#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/linalg.hpp"
#include "comptrack/matrix.hpp"
#include "comptrack/params.hpp"
#include "comptrack/pillar.hpp"
#include "comptrack/tape.hpp"

namespace comptrack {

enum class FusionMode { kAddition, kLearnableOnly, kSvdOnly, kConcatLinear };

inline const char* fusion_name(FusionMode m) {
    switch (m) {
        case FusionMode::kAddition: return "addition";
        case FusionMode::kLearnableOnly: return "learnable_only";
        case FusionMode::kSvdOnly: return "svd_only";
        case FusionMode::kConcatLinear: return "concat_linear";
    }
    return "?";
}

inline FusionMode fusion_from_name(const std::string& s) {
    if (s == "addition") return FusionMode::kAddition;
    if (s == "learnable_only") return FusionMode::kLearnableOnly;
    if (s == "svd_only") return FusionMode::kSvdOnly;
    if (s == "concat_linear") return FusionMode::kConcatLinear;
    throw ConfigError("unknown fusion mode: " + s);
}

// How the foreground token set is reduced before the head.
enum class CompressionMode {
    kIbdtc,        // SVD-guided dynamic token compression
    kUniformGrid,  // keep every 8th token in raster order
    kRandomDrop,   // seeded retention of 25%
    kFixedK,       // learnable-only queries, K fixed at min(128, L)
    kUncompressed  // all N tokens pass through
};

inline const char* compression_name(CompressionMode m) {
    switch (m) {
        case CompressionMode::kIbdtc: return "ibdtc";
        case CompressionMode::kUniformGrid: return "uniform_grid_1_8";
        case CompressionMode::kRandomDrop: return "random_drop_75";
        case CompressionMode::kFixedK: return "fixed_k_128";
        case CompressionMode::kUncompressed: return "uncompressed";
    }
    return "?";
}

inline CompressionMode compression_from_name(const std::string& s) {
    if (s == "ibdtc") return CompressionMode::kIbdtc;
    if (s == "uniform_grid_1_8") return CompressionMode::kUniformGrid;
    if (s == "random_drop_75") return CompressionMode::kRandomDrop;
    if (s == "fixed_k_128") return CompressionMode::kFixedK;
    if (s == "uncompressed") return CompressionMode::kUncompressed;
    throw ConfigError("unknown compression method: " + s);
}

struct TokenSelection {
    std::vector<int> rows;                      // grid cell indices, one per token
    std::vector<std::pair<int, int>> coords;    // (row, col) per token
    bool fallback_used = false;                 // top-8 rule fired

    int count() const { return static_cast<int>(rows.size()); }
};

// Occupied cells with Y_pred >= gamma, sorted by descending Y (ties by
// ascending cell index), truncated to n_max. If fewer than 8 qualify, the
// top-8 occupied cells by Y are taken regardless of gamma.
inline TokenSelection extract_foreground_tokens(const std::vector<std::uint8_t>& occupancy,
                                                const std::vector<double>& y_pred, int width,
                                                double gamma, int n_max) {
    if (gamma < 0.0 || gamma >= 1.0)
        throw ConfigError("extract_foreground_tokens: gamma must be in [0,1)");
    if (n_max < 1) throw ConfigError("extract_foreground_tokens: n_max must be >= 1");
    if (occupancy.size() != y_pred.size())
        throw ShapeError("extract_foreground_tokens: occupancy/heatmap size mismatch");

    std::vector<int> occupied;
    for (size_t i = 0; i < occupancy.size(); ++i)
        if (occupancy[i]) occupied.push_back(static_cast<int>(i));

    TokenSelection sel;
    if (occupied.empty()) return sel;

    auto by_score = [&](int a, int b) {
        if (y_pred[a] != y_pred[b]) return y_pred[a] > y_pred[b];
        return a < b;
    };
    std::vector<int> qualified;
    for (int cell : occupied)
        if (y_pred[cell] >= gamma) qualified.push_back(cell);
    std::sort(qualified.begin(), qualified.end(), by_score);

    if (static_cast<int>(qualified.size()) < 8) {
        sel.fallback_used = true;
        std::sort(occupied.begin(), occupied.end(), by_score);
        qualified.assign(occupied.begin(),
                         occupied.begin() + std::min<size_t>(8, occupied.size()));
    }
    if (static_cast<int>(qualified.size()) > n_max) qualified.resize(n_max);

    sel.rows = std::move(qualified);
    sel.coords.reserve(sel.rows.size());
    for (int cell : sel.rows) sel.coords.push_back({cell / width, cell % width});
    return sel;
}

// Fixed 2D sinusoidal positional encodings of the (row, col) cell indices.
// The first C/2 channels encode the row, the last C/2 the column; within
// each half, channel 2k holds sin and 2k+1 holds cos at wavelength
// lambda_k = 2 * max(H, W)^(k / (C/4 - 1)), geometric from 2 to 2*max(H, W).
inline DenseMatrix positional_encoding_matrix(const std::vector<std::pair<int, int>>& coords,
                                              int channels, int height, int width) {
    if (channels % 2 != 0)
        throw ConfigError("positional encoding requires an even channel count");
    if (channels % 4 != 0)
        throw ConfigError("positional encoding pairs sin/cos per axis: channels % 4 == 0");
    if (coords.empty()) throw ShapeError("positional encoding: empty token sequence");
    const int n_freq = channels / 4;
    const double top = 2.0 * std::max(height, width);
    DenseMatrix pe(static_cast<int>(coords.size()), channels);
    for (size_t t = 0; t < coords.size(); ++t) {
        const double pos[2] = {static_cast<double>(coords[t].first),
                               static_cast<double>(coords[t].second)};
        for (int axis = 0; axis < 2; ++axis) {
            const int base = axis * (channels / 2);
            for (int k = 0; k < n_freq; ++k) {
                const double expo =
                    n_freq == 1 ? 0.0 : static_cast<double>(k) / (n_freq - 1);
                const double lambda = 2.0 * std::pow(top / 2.0, expo);
                const double angle = 2.0 * kPi * pos[axis] / lambda;
                pe.at(static_cast<int>(t), base + 2 * k) = std::sin(angle);
                pe.at(static_cast<int>(t), base + 2 * k + 1) = std::cos(angle);
            }
        }
    }
    return pe;
}

// Adds PE to a token node; returns the X'_fg node.
inline int positional_encoding(Tape& tape, int tokens,
                               const std::vector<std::pair<int, int>>& coords, int height,
                               int width) {
    const DenseMatrix& v = tape.value(tokens);
    if (static_cast<int>(coords.size()) != v.rows)
        throw ShapeError("positional_encoding: coords count != token rows");
    return tape.add(tokens, tape.constant(positional_encoding_matrix(coords, v.cols, height,
                                                                     width)));
}

// Everything data-dependent the compression stage decides: token selection,
// effective rank, and the SVD basis. The gradient barrier is structural --
// q_svd re-enters the tape as a constant. grad_check freezes a plan so
// finite differences see the same discrete choices and barrier outputs.
struct CompressionPlan {
    TokenSelection selection;
    int k = 1;
    bool degenerate = false;
    bool clamped = false;  // K hit the query-pool size L
    DenseMatrix q_svd;     // k x C; zero rows when unused
    std::vector<double> sigma;
};

inline CompressionPlan make_compression_plan(const DenseMatrix& x_fg_prime, double tau,
                                             int pool_size, FusionMode fusion,
                                             bool scale_by_sigma) {
    CompressionPlan plan;
    const int c = x_fg_prime.cols;
    const SingularSpectrum spectrum = svd_thin(x_fg_prime);
    const RankResult rr = effective_rank(spectrum, tau);
    plan.k = rr.k;
    plan.degenerate = rr.degenerate;
    plan.sigma = spectrum.values;
    if (plan.k > pool_size) {
        plan.k = pool_size;
        plan.clamped = true;
    }
    if (fusion == FusionMode::kLearnableOnly || rr.degenerate) {
        plan.q_svd = DenseMatrix::zeros(plan.k, c);
    } else {
        plan.q_svd = top_right_vectors(spectrum, plan.k, scale_by_sigma);
    }
    return plan;
}

inline void register_dtc_params(ParamStore& store, int channels, int pool_size,
                                FusionMode fusion, std::uint64_t seed) {
    auto init = [&](const std::string& name, int rows, int cols, int fan) {
        store.add(name, init_uniform_fan_in(rows, cols, fan, fnv1a(name) ^ seed));
    };
    init("dtc.queries", pool_size, channels, channels);
    init("dtc.wq", channels, channels, channels);
    init("dtc.wk", channels, channels, channels);
    init("dtc.wv", channels, channels, channels);
    if (fusion == FusionMode::kConcatLinear)
        init("dtc.fuse", 2 * channels, channels, 2 * channels);
}

// Adaptive-mask helpers: leading-K masks over an L-row padded tensor.
inline std::vector<std::uint8_t> make_leading_mask(int k, int l) {
    if (k < 1 || k > l)
        throw ShapeError("adaptive mask: K=" + std::to_string(k) + " out of range [1, " +
                         std::to_string(l) + "]");
    std::vector<std::uint8_t> mask(l, 0);
    std::fill(mask.begin(), mask.begin() + k, 1);
    return mask;
}

inline DenseMatrix mask_column(const std::vector<std::uint8_t>& mask) {
    DenseMatrix m(static_cast<int>(mask.size()), 1);
    for (size_t i = 0; i < mask.size(); ++i) m.at(static_cast<int>(i), 0) = mask[i] ? 1.0 : 0.0;
    return m;
}

// Additive pre-softmax bias: 0 on active keys, -1e30 on masked keys.
inline DenseMatrix mask_key_bias_row(const std::vector<std::uint8_t>& mask) {
    DenseMatrix m(1, static_cast<int>(mask.size()));
    for (size_t i = 0; i < mask.size(); ++i) m.at(0, static_cast<int>(i)) = mask[i] ? 0.0 : -1e30;
    return m;
}

// Masked mean-pool row: 1/K over active positions.
inline DenseMatrix mask_pooling_row(const std::vector<std::uint8_t>& mask) {
    int k = 0;
    for (auto b : mask) k += b;
    DenseMatrix m(1, static_cast<int>(mask.size()));
    for (size_t i = 0; i < mask.size(); ++i)
        m.at(0, static_cast<int>(i)) = mask[i] ? 1.0 / k : 0.0;
    return m;
}

// Active queries for the padded (L-row) training path. For fusion modes with
// an SVD component, Q_SVD is zero-padded to L rows and enters as a constant.
inline int padded_active_queries(Tape& tape, const ParamStore& store, const CompressionPlan& plan,
                                 int pool_size, int channels, FusionMode fusion) {
    DenseMatrix q_svd_pad = DenseMatrix::zeros(pool_size, channels);
    for (int i = 0; i < plan.k; ++i)
        for (int c = 0; c < channels; ++c) q_svd_pad.at(i, c) = plan.q_svd.at(i, c);
    switch (fusion) {
        case FusionMode::kLearnableOnly:
            return tape.parameter("dtc.queries", store.value("dtc.queries"));
        case FusionMode::kAddition:
            return tape.add(tape.parameter("dtc.queries", store.value("dtc.queries")),
                            tape.constant(std::move(q_svd_pad)));
        case FusionMode::kSvdOnly:
            return tape.constant(std::move(q_svd_pad));
        case FusionMode::kConcatLinear: {
            const int cat = tape.concat_cols(
                tape.parameter("dtc.queries", store.value("dtc.queries")),
                tape.constant(std::move(q_svd_pad)));
            return tape.matmul(cat, tape.parameter("dtc.fuse", store.value("dtc.fuse")));
        }
    }
    throw ConfigError("unknown fusion mode");
}

// Active queries for the sliced (K-row) inference path.
inline int sliced_active_queries(Tape& tape, const ParamStore& store, const CompressionPlan& plan,
                                 int channels, FusionMode fusion) {
    std::vector<int> prefix(plan.k);
    std::iota(prefix.begin(), prefix.end(), 0);
    switch (fusion) {
        case FusionMode::kLearnableOnly:
            return tape.row_slice(tape.parameter("dtc.queries", store.value("dtc.queries")),
                                  prefix);
        case FusionMode::kAddition:
            return tape.add(tape.row_slice(tape.parameter("dtc.queries",
                                                          store.value("dtc.queries")),
                                           prefix),
                            tape.constant(plan.q_svd));
        case FusionMode::kSvdOnly:
            return tape.constant(plan.q_svd);
        case FusionMode::kConcatLinear: {
            const int cat = tape.concat_cols(
                tape.row_slice(tape.parameter("dtc.queries", store.value("dtc.queries")),
                               prefix),
                tape.constant(plan.q_svd));
            return tape.matmul(cat, tape.parameter("dtc.fuse", store.value("dtc.fuse")));
        }
    }
    throw ConfigError("unknown fusion mode");
}

struct AttentionNodes {
    int attention = -1;  // softmax rows (queries x tokens)
    int proxy = -1;      // query-count x C
};

// Guided cross-attention, Eq.-10 style:
//   X_p = softmax(Q W_q (X' W_k)^T / sqrt(C)) X' W_v
// When a mask is given, masked query rows are zeroed after attention.
inline AttentionNodes compress_tokens(Tape& tape, const ParamStore& store, int q_act, int x_tokens,
                                      int channels,
                                      const std::vector<std::uint8_t>* mask = nullptr) {
    const int q = tape.matmul(q_act, tape.parameter("dtc.wq", store.value("dtc.wq")));
    const int k = tape.matmul(x_tokens, tape.parameter("dtc.wk", store.value("dtc.wk")));
    const int v = tape.matmul(x_tokens, tape.parameter("dtc.wv", store.value("dtc.wv")));
    int logits = tape.matmul(q, k, /*transpose_b=*/true);
    logits = tape.mul(logits, tape.scalar(1.0 / std::sqrt(static_cast<double>(channels))));
    AttentionNodes out;
    out.attention = tape.row_softmax(logits);
    out.proxy = tape.matmul(out.attention, v);
    if (mask) out.proxy = tape.mul(out.proxy, tape.constant(mask_column(*mask)));
    return out;
}

// One residual self-attention block over proxy rows, the downstream consumer
// of the adaptive mask: masked keys get -1e30 logits pre-softmax, masked rows
// contribute zero value and output.
inline int masked_self_attention(Tape& tape, const ParamStore& store, int x, int channels,
                                 const std::vector<std::uint8_t>* mask = nullptr) {
    const int q = tape.matmul(x, tape.parameter("mix.wq", store.value("mix.wq")));
    const int k = tape.matmul(x, tape.parameter("mix.wk", store.value("mix.wk")));
    const int v = tape.matmul(x, tape.parameter("mix.wv", store.value("mix.wv")));
    int logits = tape.matmul(q, k, /*transpose_b=*/true);
    logits = tape.mul(logits, tape.scalar(1.0 / std::sqrt(static_cast<double>(channels))));
    if (mask) logits = tape.add(logits, tape.constant(mask_key_bias_row(*mask)));
    const int att = tape.row_softmax(logits);
    int out = tape.matmul(att, v);
    if (mask) out = tape.mul(out, tape.constant(mask_column(*mask)));
    return tape.add(x, out);
}

inline void register_mix_params(ParamStore& store, int channels, std::uint64_t seed) {
    auto init = [&](const std::string& name) {
        store.add(name, init_uniform_fan_in(channels, channels, channels, fnv1a(name) ^ seed));
    };
    init("mix.wq");
    init("mix.wk");
    init("mix.wv");
}

// Naive compression baselines: indices into the token sequence to keep.
// uniform_grid_1_8 keeps every 8th token in raster order of its cell;
// random_drop_75 keeps a seeded 25%.
inline std::vector<int> baseline_keep_indices(CompressionMode method,
                                              const TokenSelection& selection, int width,
                                              std::uint64_t seed) {
    const int n = selection.count();
    std::vector<int> keep;
    if (n == 0) return keep;
    switch (method) {
        case CompressionMode::kUniformGrid: {
            std::vector<int> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                const int ra = selection.coords[a].first * width + selection.coords[a].second;
                const int rb = selection.coords[b].first * width + selection.coords[b].second;
                return ra < rb;
            });
            for (int i = 0; i < n; i += 8) keep.push_back(order[i]);
            break;
        }
        case CompressionMode::kRandomDrop: {
            std::vector<int> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::mt19937_64 rng(seed);
            std::shuffle(order.begin(), order.end(), rng);
            const int kept = std::max(1, (n + 3) / 4);
            keep.assign(order.begin(), order.begin() + kept);
            std::sort(keep.begin(), keep.end());
            break;
        }
        default:
            throw ConfigError("baseline_keep_indices: not a subset baseline");
    }
    return keep;
}

}  // namespace comptrack
