#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "comptrack/errors.hpp"
#include "comptrack/matrix.hpp"
#include "comptrack/tape.hpp"

namespace comptrack {

// Named parameter collection with a stable iteration order (insertion
// order). Checkpoints, gradient reduction and the optimizer all walk the
// store in this order, which keeps training bitwise reproducible.
class ParamStore {
  public:
    int add(const std::string& name, DenseMatrix value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = static_cast<int>(names_.size());
        names_.push_back(name);
        values_.push_back(std::move(value));
        return static_cast<int>(names_.size()) - 1;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    DenseMatrix& value(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return values_[it->second];
    }
    const DenseMatrix& value(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return values_[it->second];
    }

    size_t count() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    DenseMatrix& value_at(size_t i) { return values_[i]; }
    const DenseMatrix& value_at(size_t i) const { return values_[i]; }

    size_t scalar_count() const {
        size_t n = 0;
        for (const auto& v : values_) n += v.size();
        return n;
    }

    // Flat gradient vector in store order; missing grads count as zero.
    std::vector<double> flatten_grads(const Tape& tape) const {
        std::vector<double> out;
        out.reserve(scalar_count());
        for (size_t i = 0; i < names_.size(); ++i) {
            if (tape.parameters().count(names_[i])) {
                DenseMatrix g = tape.param_grad(names_[i]);
                out.insert(out.end(), g.data.begin(), g.data.end());
            } else {
                out.insert(out.end(), values_[i].size(), 0.0);
            }
        }
        return out;
    }

  private:
    std::vector<std::string> names_;
    std::vector<DenseMatrix> values_;
    std::unordered_map<std::string, int> index_;
};

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// AdamW with decoupled weight decay.
class AdamW {
  public:
    using Options = AdamWOptions;

    explicit AdamW(ParamStore& store, Options opt = Options()) : store_(store), opt_(opt) {
        m_.assign(store.scalar_count(), 0.0);
        v_.assign(store.scalar_count(), 0.0);
    }

    void step(const std::vector<double>& grad, double lr) {
        if (grad.size() != m_.size()) throw ShapeError("AdamW: gradient length mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, t_);
        const double bc2 = 1.0 - std::pow(opt_.beta2, t_);
        size_t off = 0;
        for (size_t p = 0; p < store_.count(); ++p) {
            DenseMatrix& w = store_.value_at(p);
            for (size_t i = 0; i < w.size(); ++i, ++off) {
                const double g = grad[off];
                m_[off] = opt_.beta1 * m_[off] + (1.0 - opt_.beta1) * g;
                v_[off] = opt_.beta2 * v_[off] + (1.0 - opt_.beta2) * g * g;
                const double mh = m_[off] / bc1;
                const double vh = v_[off] / bc2;
                w.data[i] -= lr * (mh / (std::sqrt(vh) + opt_.eps) + opt_.weight_decay * w.data[i]);
            }
        }
    }

  private:
    ParamStore& store_;
    Options opt_;
    std::vector<double> m_, v_;
    std::int64_t t_ = 0;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int worst_index = -1;
    bool finite = true;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    bool pass = true;
};

// Compares tape gradients against central finite differences, parameter by
// parameter. The relative error uses a unit floor so near-zero gradients do
// not amplify finite-difference noise:
//   rel = |analytic - fd| / max(1, |analytic|, |fd|)
// The builder must construct a scalar loss from the store's current values;
// it is re-invoked for every probe, so any data-dependent choices it makes
// (token selection, rank) must be frozen by the caller.
inline GradCheckReport grad_check(ParamStore& store,
                                  const std::function<int(Tape&)>& build_loss,
                                  double tolerance, double h = 1e-5) {
    GradCheckReport report;
    report.tolerance = tolerance;

    Tape tape;
    const int loss = build_loss(tape);
    if (tape.value(loss).rows != 1 || tape.value(loss).cols != 1)
        throw ShapeError("grad_check: loss must be scalar");
    DenseMatrix seed(1, 1);
    seed.at(0, 0) = 1.0;
    tape.backward(loss, seed);

    auto eval = [&]() {
        Tape t;
        const int l = build_loss(t);
        return t.value(l).at(0, 0);
    };

    for (const std::string& name : store.names()) {
        GradCheckEntry entry;
        entry.name = name;
        DenseMatrix analytic = tape.parameters().count(name)
                                   ? tape.param_grad(name)
                                   : DenseMatrix::zeros(store.value(name).rows,
                                                        store.value(name).cols);
        DenseMatrix& w = store.value(name);
        for (size_t i = 0; i < w.size(); ++i) {
            const double saved = w.data[i];
            w.data[i] = saved + h;
            const double lp = eval();
            w.data[i] = saved - h;
            const double lm = eval();
            w.data[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            if (!std::isfinite(fd)) {
                entry.finite = false;
                entry.pass = false;
                entry.worst_index = static_cast<int>(i);
                entry.max_rel_err = std::numeric_limits<double>::infinity();
                break;
            }
            const double a = analytic.data[i];
            const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = static_cast<int>(i);
            }
        }
        entry.pass = entry.pass && entry.max_rel_err < tolerance;
        report.pass = report.pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace comptrack
