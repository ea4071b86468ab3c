#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/matrix.hpp"

namespace comptrack {

// Reverse-mode tape over DenseMatrix values. Forward is eager: every
// primitive computes its value when recorded, so data-dependent control
// flow (token selection, rank estimation) can read intermediate values
// while the graph is being built. The primitive set is closed; there is
// no broadcasting beyond row/column/scalar vectors.
enum class Op {
    Constant,
    Parameter,
    MatMul,
    Add,
    Mul,
    RowSoftmax,
    Sigmoid,
    Relu,
    Conv2dGrouped,
    RowSlice,
    ConcatCols,
    MseLoss,
    SmoothL1Loss,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Constant: return "constant";
        case Op::Parameter: return "parameter";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::RowSoftmax: return "row_softmax";
        case Op::Sigmoid: return "sigmoid";
        case Op::Relu: return "relu";
        case Op::Conv2dGrouped: return "conv2d_grouped";
        case Op::RowSlice: return "row_slice";
        case Op::ConcatCols: return "concat_cols";
        case Op::MseLoss: return "mse_loss";
        case Op::SmoothL1Loss: return "smooth_l1_loss";
    }
    return "?";
}

struct ConvSpec {
    int height = 0;
    int width = 0;
    int in_channels = 0;
    int out_channels = 0;
    int groups = 1;
    int ksize = 3;  // odd; padding (ksize-1)/2 keeps the grid size
};

class Tape {
  public:
    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        DenseMatrix value;
        bool requires_grad = false;
        bool transpose_b = false;  // MatMul only
        std::string name;          // Parameter only
        std::vector<int> slice_rows;
        ConvSpec conv;
        std::uint64_t macs = 0;
        int stage = 0;
    };

    int constant(DenseMatrix v) { return push(Op::Constant, -1, -1, std::move(v), false); }

    int scalar(double v) {
        DenseMatrix m(1, 1);
        m.at(0, 0) = v;
        return constant(std::move(m));
    }

    // Parameters are unique per name; recording the same name twice returns
    // the existing node so gradients accumulate in one place.
    int parameter(const std::string& name, const DenseMatrix& v) {
        auto it = param_ids_.find(name);
        if (it != param_ids_.end()) return it->second;
        int id = push(Op::Parameter, -1, -1, v, true);
        nodes_[id].name = name;
        param_ids_[name] = id;
        return id;
    }

    int matmul(int a, int b, bool transpose_b = false) {
        const DenseMatrix& A = value(a);
        const DenseMatrix& B = value(b);
        const int bk = transpose_b ? B.cols : B.rows;
        const int bn = transpose_b ? B.rows : B.cols;
        if (A.cols != bk)
            throw ShapeError("matmul: inner dimensions differ (" + shape_str(A) + " x " +
                             shape_str(B) + (transpose_b ? "^T" : "") + ")");
        DenseMatrix out(A.rows, bn);
        if (!transpose_b) {
            for (int i = 0; i < A.rows; ++i)
                for (int k = 0; k < A.cols; ++k) {
                    const double aik = A.at(i, k);
                    if (aik == 0.0) continue;
                    const double* brow = &B.data[static_cast<size_t>(k) * B.cols];
                    double* orow = &out.data[static_cast<size_t>(i) * out.cols];
                    for (int j = 0; j < bn; ++j) orow[j] += aik * brow[j];
                }
        } else {
            for (int i = 0; i < A.rows; ++i) {
                const double* arow = &A.data[static_cast<size_t>(i) * A.cols];
                for (int j = 0; j < bn; ++j) {
                    const double* brow = &B.data[static_cast<size_t>(j) * B.cols];
                    double s = 0.0;
                    for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
                    out.at(i, j) = s;
                }
            }
        }
        int id = push(Op::MatMul, a, b, std::move(out), needs_grad(a) || needs_grad(b));
        nodes_[id].transpose_b = transpose_b;
        nodes_[id].macs = static_cast<std::uint64_t>(A.rows) * A.cols * bn;
        return id;
    }

    int add(int a, int b) { return binary_broadcast(Op::Add, a, b); }
    int mul(int a, int b) { return binary_broadcast(Op::Mul, a, b); }

    int row_softmax(int a) {
        const DenseMatrix& A = value(a);
        DenseMatrix out(A.rows, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            const double* x = &A.data[static_cast<size_t>(i) * A.cols];
            double* y = &out.data[static_cast<size_t>(i) * A.cols];
            double mx = x[0];
            for (int j = 1; j < A.cols; ++j) mx = std::max(mx, x[j]);
            double sum = 0.0;
            for (int j = 0; j < A.cols; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            for (int j = 0; j < A.cols; ++j) y[j] /= sum;
        }
        return push(Op::RowSoftmax, a, -1, std::move(out), needs_grad(a));
    }

    int sigmoid(int a) {
        DenseMatrix out = value(a);
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        return push(Op::Sigmoid, a, -1, std::move(out), needs_grad(a));
    }

    int relu(int a) {
        DenseMatrix out = value(a);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(Op::Relu, a, -1, std::move(out), needs_grad(a));
    }

    // Grouped 2D convolution over a grid stored as (H*W) x Cin, one row per
    // cell in row-major cell order. Weight layout: Cout rows, each row the
    // flattened (ky, kx, cin_within_group) patch. Same-size padding.
    int conv2d_grouped(int input, int weight, const ConvSpec& spec) {
        const DenseMatrix& X = value(input);
        const DenseMatrix& W = value(weight);
        if (spec.in_channels % spec.groups != 0 || spec.out_channels % spec.groups != 0)
            throw ShapeError("conv2d_grouped: channels not divisible by groups");
        const int cin_g = spec.in_channels / spec.groups;
        const int cout_g = spec.out_channels / spec.groups;
        const int patch = spec.ksize * spec.ksize * cin_g;
        if (X.rows != spec.height * spec.width || X.cols != spec.in_channels)
            throw ShapeError("conv2d_grouped: input is " + shape_str(X) + ", expected " +
                             std::to_string(spec.height * spec.width) + "x" +
                             std::to_string(spec.in_channels));
        if (W.rows != spec.out_channels || W.cols != patch)
            throw ShapeError("conv2d_grouped: weight is " + shape_str(W) + ", expected " +
                             std::to_string(spec.out_channels) + "x" + std::to_string(patch));
        DenseMatrix out(X.rows, spec.out_channels);
        DenseMatrix col(X.rows, patch);
        for (int g = 0; g < spec.groups; ++g) {
            im2col(X, spec, g, col);
            // out[:, g*cout_g + oc] = col * W_g^T
            for (int cell = 0; cell < X.rows; ++cell) {
                const double* crow = &col.data[static_cast<size_t>(cell) * patch];
                double* orow = &out.data[static_cast<size_t>(cell) * spec.out_channels];
                for (int oc = 0; oc < cout_g; ++oc) {
                    const double* wrow = &W.data[static_cast<size_t>(g * cout_g + oc) * patch];
                    double s = 0.0;
                    for (int p = 0; p < patch; ++p) s += crow[p] * wrow[p];
                    orow[g * cout_g + oc] = s;
                }
            }
        }
        int id = push(Op::Conv2dGrouped, input, weight, std::move(out),
                      needs_grad(input) || needs_grad(weight));
        nodes_[id].conv = spec;
        nodes_[id].macs =
            static_cast<std::uint64_t>(X.rows) * spec.out_channels * patch;
        return id;
    }

    int row_slice(int a, std::vector<int> rows) {
        const DenseMatrix& A = value(a);
        if (rows.empty()) throw ShapeError("row_slice: empty index list");
        for (int r : rows)
            if (r < 0 || r >= A.rows)
                throw ShapeError("row_slice: index " + std::to_string(r) + " out of range for " +
                                 shape_str(A));
        DenseMatrix out(static_cast<int>(rows.size()), A.cols);
        for (size_t i = 0; i < rows.size(); ++i)
            std::copy_n(&A.data[static_cast<size_t>(rows[i]) * A.cols], A.cols,
                        &out.data[i * A.cols]);
        int id = push(Op::RowSlice, a, -1, std::move(out), needs_grad(a));
        nodes_[id].slice_rows = std::move(rows);
        return id;
    }

    int concat_cols(int a, int b) {
        const DenseMatrix& A = value(a);
        const DenseMatrix& B = value(b);
        if (A.rows != B.rows)
            throw ShapeError("concat_cols: row counts differ (" + shape_str(A) + " vs " +
                             shape_str(B) + ")");
        DenseMatrix out(A.rows, A.cols + B.cols);
        for (int i = 0; i < A.rows; ++i) {
            std::copy_n(&A.data[static_cast<size_t>(i) * A.cols], A.cols,
                        &out.data[static_cast<size_t>(i) * out.cols]);
            std::copy_n(&B.data[static_cast<size_t>(i) * B.cols], B.cols,
                        &out.data[static_cast<size_t>(i) * out.cols + A.cols]);
        }
        return push(Op::ConcatCols, a, b, std::move(out), needs_grad(a) || needs_grad(b));
    }

    int mse_loss(int a, int b) {
        const DenseMatrix& A = value(a);
        const DenseMatrix& B = value(b);
        if (!A.same_shape(B))
            throw ShapeError("mse_loss: shapes differ (" + shape_str(A) + " vs " + shape_str(B) +
                             ")");
        double s = 0.0;
        for (size_t i = 0; i < A.data.size(); ++i) {
            const double d = A.data[i] - B.data[i];
            s += d * d;
        }
        DenseMatrix out(1, 1);
        out.at(0, 0) = s / static_cast<double>(A.data.size());
        return push(Op::MseLoss, a, b, std::move(out), needs_grad(a) || needs_grad(b));
    }

    // Mean over elements of the Huber penalty (delta = 1) of a - b.
    int smooth_l1_loss(int a, int b) {
        const DenseMatrix& A = value(a);
        const DenseMatrix& B = value(b);
        if (!A.same_shape(B))
            throw ShapeError("smooth_l1_loss: shapes differ (" + shape_str(A) + " vs " +
                             shape_str(B) + ")");
        double s = 0.0;
        for (size_t i = 0; i < A.data.size(); ++i) {
            const double r = A.data[i] - B.data[i];
            const double ar = std::abs(r);
            s += ar < 1.0 ? 0.5 * r * r : ar - 0.5;
        }
        DenseMatrix out(1, 1);
        out.at(0, 0) = s / static_cast<double>(A.data.size());
        return push(Op::SmoothL1Loss, a, b, std::move(out), needs_grad(a) || needs_grad(b));
    }

    const DenseMatrix& value(int id) const { return nodes_.at(id).value; }
    const Node& node(int id) const { return nodes_.at(id); }
    int size() const { return static_cast<int>(nodes_.size()); }
    bool needs_grad(int id) const { return nodes_.at(id).requires_grad; }

    bool has_op(Op op) const {
        for (const Node& n : nodes_)
            if (n.op == op) return true;
        return false;
    }

    void set_stage(const std::string& name) {
        for (size_t i = 0; i < stage_names_.size(); ++i)
            if (stage_names_[i] == name) {
                current_stage_ = static_cast<int>(i);
                return;
            }
        stage_names_.push_back(name);
        current_stage_ = static_cast<int>(stage_names_.size()) - 1;
    }

    std::uint64_t total_macs() const {
        std::uint64_t s = 0;
        for (const Node& n : nodes_) s += n.macs;
        return s;
    }

    std::map<std::string, std::uint64_t> macs_by_stage() const {
        std::map<std::string, std::uint64_t> out;
        for (const Node& n : nodes_) out[stage_names_[n.stage]] += n.macs;
        return out;
    }

    // Fault-injection hook for validating grad_check's negative control: the
    // named node's outgoing gradient contributions are sign-flipped.
    void debug_negate_backward(int node_id) { debug_negate_node_ = node_id; }

    void backward(int output, const DenseMatrix& seed) {
        if (backward_done_)
            throw NumericalError("backward called twice without a new forward");
        if (!value(output).same_shape(seed))
            throw ShapeError("backward: seed shape differs from output shape");
        grads_.assign(nodes_.size(), DenseMatrix());
        accumulate(output, seed);
        for (int id = output; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || grads_[id].rows == 0) continue;
            DenseMatrix g = grads_[id];
            if (id == debug_negate_node_)
                for (double& v : g.data) v = -v;
            propagate(id, g);
        }
        for (auto& [name, id] : param_ids_) {
            if (grads_[id].rows != 0 && !all_finite(grads_[id]))
                throw NumericalError("non-finite gradient for parameter " + name);
        }
        backward_done_ = true;
    }

    // Zero for nodes no gradient reached.
    DenseMatrix grad(int id) const {
        if (!backward_done_) throw NumericalError("grad queried before backward");
        if (id < 0 || id >= size()) throw ShapeError("grad: bad node id");
        if (grads_[id].rows == 0) {
            const DenseMatrix& v = nodes_[id].value;
            return DenseMatrix::zeros(v.rows, v.cols);
        }
        return grads_[id];
    }

    DenseMatrix param_grad(const std::string& name) const {
        auto it = param_ids_.find(name);
        if (it == param_ids_.end()) throw ShapeError("param_grad: unknown parameter " + name);
        return grad(it->second);
    }

    const std::unordered_map<std::string, int>& parameters() const { return param_ids_; }

  private:
    std::vector<Node> nodes_;
    std::vector<DenseMatrix> grads_;
    std::unordered_map<std::string, int> param_ids_;
    std::vector<std::string> stage_names_ = {"default"};
    int current_stage_ = 0;
    bool backward_done_ = false;
    int debug_negate_node_ = -1;

    static std::string shape_str(const DenseMatrix& m) {
        return std::to_string(m.rows) + "x" + std::to_string(m.cols);
    }

    int push(Op op, int a, int b, DenseMatrix v, bool req) {
        if (!all_finite(v))
            throw NumericalError(std::string("non-finite value produced by ") + op_name(op));
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.value = std::move(v);
        n.requires_grad = req;
        n.stage = current_stage_;
        nodes_.push_back(std::move(n));
        backward_done_ = false;
        return static_cast<int>(nodes_.size()) - 1;
    }

    enum class Broadcast { None, Row, Col, Scalar };

    static Broadcast classify(const DenseMatrix& big, const DenseMatrix& small) {
        if (small.rows == 1 && small.cols == 1) return Broadcast::Scalar;
        if (small.rows == 1 && small.cols == big.cols) return Broadcast::Row;
        if (small.cols == 1 && small.rows == big.rows) return Broadcast::Col;
        throw ShapeError("add/mul: incompatible shapes " + shape_str(big) + " vs " +
                         shape_str(small));
    }

    int binary_broadcast(Op op, int a, int b) {
        const DenseMatrix& A = value(a);
        const DenseMatrix& B = value(b);
        DenseMatrix out(std::max(A.rows, B.rows), std::max(A.cols, B.cols));
        const bool a_small = !A.same_shape(out);
        const bool b_small = !B.same_shape(out);
        if (a_small && b_small)
            throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(A) +
                             " vs " + shape_str(B));
        const DenseMatrix& big = a_small ? B : A;
        const DenseMatrix& small = a_small ? A : B;
        if (a_small || b_small) (void)classify(big, small);  // validates
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) {
                const double x = A.at(std::min(i, A.rows - 1), std::min(j, A.cols - 1));
                const double y = B.at(std::min(i, B.rows - 1), std::min(j, B.cols - 1));
                out.at(i, j) = op == Op::Add ? x + y : x * y;
            }
        return push(op, a, b, std::move(out), needs_grad(a) || needs_grad(b));
    }

    // Sum g down to the shape of target (inverse of broadcast).
    static DenseMatrix reduce_to(const DenseMatrix& g, int rows, int cols) {
        if (g.rows == rows && g.cols == cols) return g;
        DenseMatrix out(rows, cols);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j)
                out.at(std::min(i, rows - 1), std::min(j, cols - 1)) += g.at(i, j);
        return out;
    }

    void accumulate(int id, const DenseMatrix& g) {
        if (id < 0 || !nodes_[id].requires_grad) return;
        DenseMatrix& slot = grads_[id];
        if (slot.rows == 0) {
            slot = g;
        } else {
            for (size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
        }
    }

    static DenseMatrix broadcast_value(const DenseMatrix& m, int rows, int cols) {
        DenseMatrix out(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                out.at(i, j) = m.at(std::min(i, m.rows - 1), std::min(j, m.cols - 1));
        return out;
    }

    void propagate(int id, const DenseMatrix& g) {
        Node& n = nodes_[id];
        switch (n.op) {
            case Op::Constant:
            case Op::Parameter:
                break;
            case Op::MatMul: {
                const DenseMatrix& A = value(n.a);
                const DenseMatrix& B = value(n.b);
                if (!n.transpose_b) {
                    if (needs_grad(n.a)) {
                        // dA = g * B^T
                        DenseMatrix da(A.rows, A.cols);
                        for (int i = 0; i < A.rows; ++i)
                            for (int k = 0; k < A.cols; ++k) {
                                const double* grow = &g.data[static_cast<size_t>(i) * g.cols];
                                const double* brow = &B.data[static_cast<size_t>(k) * B.cols];
                                double s = 0.0;
                                for (int j = 0; j < g.cols; ++j) s += grow[j] * brow[j];
                                da.at(i, k) = s;
                            }
                        accumulate(n.a, da);
                    }
                    if (needs_grad(n.b)) {
                        // dB = A^T * g
                        DenseMatrix db(B.rows, B.cols);
                        for (int i = 0; i < A.rows; ++i) {
                            const double* arow = &A.data[static_cast<size_t>(i) * A.cols];
                            const double* grow = &g.data[static_cast<size_t>(i) * g.cols];
                            for (int k = 0; k < A.cols; ++k) {
                                const double aik = arow[k];
                                if (aik == 0.0) continue;
                                double* drow = &db.data[static_cast<size_t>(k) * db.cols];
                                for (int j = 0; j < g.cols; ++j) drow[j] += aik * grow[j];
                            }
                        }
                        accumulate(n.b, db);
                    }
                } else {
                    // out = A * B^T, g is (A.rows x B.rows)
                    if (needs_grad(n.a)) {
                        DenseMatrix da(A.rows, A.cols);
                        for (int i = 0; i < A.rows; ++i) {
                            const double* grow = &g.data[static_cast<size_t>(i) * g.cols];
                            double* drow = &da.data[static_cast<size_t>(i) * da.cols];
                            for (int j = 0; j < B.rows; ++j) {
                                const double gij = grow[j];
                                if (gij == 0.0) continue;
                                const double* brow = &B.data[static_cast<size_t>(j) * B.cols];
                                for (int k = 0; k < A.cols; ++k) drow[k] += gij * brow[k];
                            }
                        }
                        accumulate(n.a, da);
                    }
                    if (needs_grad(n.b)) {
                        // dB = g^T * A
                        DenseMatrix db(B.rows, B.cols);
                        for (int i = 0; i < A.rows; ++i) {
                            const double* grow = &g.data[static_cast<size_t>(i) * g.cols];
                            const double* arow = &A.data[static_cast<size_t>(i) * A.cols];
                            for (int j = 0; j < B.rows; ++j) {
                                const double gij = grow[j];
                                if (gij == 0.0) continue;
                                double* drow = &db.data[static_cast<size_t>(j) * db.cols];
                                for (int k = 0; k < A.cols; ++k) drow[k] += gij * arow[k];
                            }
                        }
                        accumulate(n.b, db);
                    }
                }
                break;
            }
            case Op::Add: {
                const DenseMatrix& A = value(n.a);
                const DenseMatrix& B = value(n.b);
                if (needs_grad(n.a)) accumulate(n.a, reduce_to(g, A.rows, A.cols));
                if (needs_grad(n.b)) accumulate(n.b, reduce_to(g, B.rows, B.cols));
                break;
            }
            case Op::Mul: {
                const DenseMatrix& A = value(n.a);
                const DenseMatrix& B = value(n.b);
                if (needs_grad(n.a)) {
                    DenseMatrix bb = broadcast_value(B, n.value.rows, n.value.cols);
                    for (size_t i = 0; i < bb.data.size(); ++i) bb.data[i] *= g.data[i];
                    accumulate(n.a, reduce_to(bb, A.rows, A.cols));
                }
                if (needs_grad(n.b)) {
                    DenseMatrix aa = broadcast_value(A, n.value.rows, n.value.cols);
                    for (size_t i = 0; i < aa.data.size(); ++i) aa.data[i] *= g.data[i];
                    accumulate(n.b, reduce_to(aa, B.rows, B.cols));
                }
                break;
            }
            case Op::RowSoftmax: {
                if (!needs_grad(n.a)) break;
                const DenseMatrix& Y = n.value;
                DenseMatrix dx(Y.rows, Y.cols);
                for (int i = 0; i < Y.rows; ++i) {
                    const double* y = &Y.data[static_cast<size_t>(i) * Y.cols];
                    const double* gy = &g.data[static_cast<size_t>(i) * Y.cols];
                    double dot = 0.0;
                    for (int j = 0; j < Y.cols; ++j) dot += y[j] * gy[j];
                    double* d = &dx.data[static_cast<size_t>(i) * Y.cols];
                    for (int j = 0; j < Y.cols; ++j) d[j] = y[j] * (gy[j] - dot);
                }
                accumulate(n.a, dx);
                break;
            }
            case Op::Sigmoid: {
                if (!needs_grad(n.a)) break;
                DenseMatrix dx = n.value;
                for (size_t i = 0; i < dx.data.size(); ++i)
                    dx.data[i] = g.data[i] * dx.data[i] * (1.0 - dx.data[i]);
                accumulate(n.a, dx);
                break;
            }
            case Op::Relu: {
                if (!needs_grad(n.a)) break;
                const DenseMatrix& X = value(n.a);
                DenseMatrix dx(X.rows, X.cols);
                for (size_t i = 0; i < dx.data.size(); ++i)
                    dx.data[i] = X.data[i] > 0.0 ? g.data[i] : 0.0;
                accumulate(n.a, dx);
                break;
            }
            case Op::Conv2dGrouped:
                conv_backward(n, g);
                break;
            case Op::RowSlice: {
                if (!needs_grad(n.a)) break;
                const DenseMatrix& A = value(n.a);
                DenseMatrix dx(A.rows, A.cols);
                for (size_t i = 0; i < n.slice_rows.size(); ++i) {
                    const double* grow = &g.data[i * g.cols];
                    double* drow = &dx.data[static_cast<size_t>(n.slice_rows[i]) * dx.cols];
                    for (int j = 0; j < g.cols; ++j) drow[j] += grow[j];
                }
                accumulate(n.a, dx);
                break;
            }
            case Op::ConcatCols: {
                const DenseMatrix& A = value(n.a);
                const DenseMatrix& B = value(n.b);
                if (needs_grad(n.a)) {
                    DenseMatrix da(A.rows, A.cols);
                    for (int i = 0; i < A.rows; ++i)
                        std::copy_n(&g.data[static_cast<size_t>(i) * g.cols], A.cols,
                                    &da.data[static_cast<size_t>(i) * A.cols]);
                    accumulate(n.a, da);
                }
                if (needs_grad(n.b)) {
                    DenseMatrix db(B.rows, B.cols);
                    for (int i = 0; i < B.rows; ++i)
                        std::copy_n(&g.data[static_cast<size_t>(i) * g.cols + A.cols], B.cols,
                                    &db.data[static_cast<size_t>(i) * B.cols]);
                    accumulate(n.b, db);
                }
                break;
            }
            case Op::MseLoss: {
                const DenseMatrix& A = value(n.a);
                const DenseMatrix& B = value(n.b);
                const double scale = 2.0 * g.at(0, 0) / static_cast<double>(A.data.size());
                if (needs_grad(n.a)) {
                    DenseMatrix da(A.rows, A.cols);
                    for (size_t i = 0; i < A.data.size(); ++i)
                        da.data[i] = scale * (A.data[i] - B.data[i]);
                    accumulate(n.a, da);
                }
                if (needs_grad(n.b)) {
                    DenseMatrix db(B.rows, B.cols);
                    for (size_t i = 0; i < A.data.size(); ++i)
                        db.data[i] = -scale * (A.data[i] - B.data[i]);
                    accumulate(n.b, db);
                }
                break;
            }
            case Op::SmoothL1Loss: {
                const DenseMatrix& A = value(n.a);
                const DenseMatrix& B = value(n.b);
                const double scale = g.at(0, 0) / static_cast<double>(A.data.size());
                auto dr = [](double r) { return std::abs(r) < 1.0 ? r : (r > 0.0 ? 1.0 : -1.0); };
                if (needs_grad(n.a)) {
                    DenseMatrix da(A.rows, A.cols);
                    for (size_t i = 0; i < A.data.size(); ++i)
                        da.data[i] = scale * dr(A.data[i] - B.data[i]);
                    accumulate(n.a, da);
                }
                if (needs_grad(n.b)) {
                    DenseMatrix db(B.rows, B.cols);
                    for (size_t i = 0; i < A.data.size(); ++i)
                        db.data[i] = -scale * dr(A.data[i] - B.data[i]);
                    accumulate(n.b, db);
                }
                break;
            }
        }
    }

    static void im2col(const DenseMatrix& X, const ConvSpec& s, int group, DenseMatrix& col) {
        const int cin_g = s.in_channels / s.groups;
        const int patch = s.ksize * s.ksize * cin_g;
        const int pad = (s.ksize - 1) / 2;
        std::fill(col.data.begin(), col.data.end(), 0.0);
        for (int i = 0; i < s.height; ++i) {
            for (int j = 0; j < s.width; ++j) {
                double* crow = &col.data[static_cast<size_t>(i * s.width + j) * patch];
                for (int ky = 0; ky < s.ksize; ++ky) {
                    const int si = i + ky - pad;
                    if (si < 0 || si >= s.height) continue;
                    for (int kx = 0; kx < s.ksize; ++kx) {
                        const int sj = j + kx - pad;
                        if (sj < 0 || sj >= s.width) continue;
                        const double* xrow =
                            &X.data[static_cast<size_t>(si * s.width + sj) * s.in_channels +
                                    group * cin_g];
                        std::copy_n(xrow, cin_g, crow + (ky * s.ksize + kx) * cin_g);
                    }
                }
            }
        }
    }

    void conv_backward(const Node& n, const DenseMatrix& g) {
        const ConvSpec& s = n.conv;
        const DenseMatrix& X = value(n.a);
        const DenseMatrix& W = value(n.b);
        const int cin_g = s.in_channels / s.groups;
        const int cout_g = s.out_channels / s.groups;
        const int patch = s.ksize * s.ksize * cin_g;
        const int pad = (s.ksize - 1) / 2;
        DenseMatrix col(X.rows, patch);
        DenseMatrix dx;
        DenseMatrix dw;
        if (needs_grad(n.a)) dx = DenseMatrix::zeros(X.rows, X.cols);
        if (needs_grad(n.b)) dw = DenseMatrix::zeros(W.rows, W.cols);
        for (int gidx = 0; gidx < s.groups; ++gidx) {
            if (needs_grad(n.b)) {
                im2col(X, s, gidx, col);
                // dW_g += g_g^T * col
                for (int cell = 0; cell < X.rows; ++cell) {
                    const double* grow =
                        &g.data[static_cast<size_t>(cell) * s.out_channels + gidx * cout_g];
                    const double* crow = &col.data[static_cast<size_t>(cell) * patch];
                    for (int oc = 0; oc < cout_g; ++oc) {
                        const double gv = grow[oc];
                        if (gv == 0.0) continue;
                        double* wrow = &dw.data[static_cast<size_t>(gidx * cout_g + oc) * patch];
                        for (int p = 0; p < patch; ++p) wrow[p] += gv * crow[p];
                    }
                }
            }
            if (needs_grad(n.a)) {
                // dcol = g_g * W_g, then scatter back (col2im)
                for (int i = 0; i < s.height; ++i) {
                    for (int j = 0; j < s.width; ++j) {
                        const int cell = i * s.width + j;
                        const double* grow =
                            &g.data[static_cast<size_t>(cell) * s.out_channels + gidx * cout_g];
                        for (int ky = 0; ky < s.ksize; ++ky) {
                            const int si = i + ky - pad;
                            if (si < 0 || si >= s.height) continue;
                            for (int kx = 0; kx < s.ksize; ++kx) {
                                const int sj = j + kx - pad;
                                if (sj < 0 || sj >= s.width) continue;
                                double* drow =
                                    &dx.data[static_cast<size_t>(si * s.width + sj) *
                                                 s.in_channels +
                                             gidx * cin_g];
                                const int poff = (ky * s.ksize + kx) * cin_g;
                                for (int oc = 0; oc < cout_g; ++oc) {
                                    const double gv = grow[oc];
                                    if (gv == 0.0) continue;
                                    const double* wrow =
                                        &W.data[static_cast<size_t>(gidx * cout_g + oc) * patch +
                                                poff];
                                    for (int c = 0; c < cin_g; ++c) drow[c] += gv * wrow[c];
                                }
                            }
                        }
                    }
                }
            }
        }
        if (needs_grad(n.a)) accumulate(n.a, dx);
        if (needs_grad(n.b)) accumulate(n.b, dw);
    }
};

}  // namespace comptrack
