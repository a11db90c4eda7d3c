#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "solarpi/kernels.hpp"
#include "solarpi/tensor.hpp"

namespace solarpi::ad {

/// Handle to a node on a Graph's tape.
struct Value {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

/// Running-statistics buffers of one batch-normalization layer. Not part of
/// the trainable parameter set; mutated by train-mode forward passes.
struct BnBuffers {
    Tensor running_mean;
    Tensor running_var;

    static BnBuffers fresh(int64_t features) {
        BnBuffers b{Tensor({features}), Tensor({features})};
        b.running_var.fill(1.0);
        return b;
    }
};

/// Reverse-mode tape over dense tensors. Nodes are created in evaluation
/// order, which is the topological order used by backward(). A graph is
/// built per batch and thrown away; it must not be shared across threads.
class Graph {
public:
    Value constant(Tensor t) { return make_node(std::move(t), false); }

    Value leaf(Tensor t, bool requires_grad = true) {
        return make_node(std::move(t), requires_grad);
    }

    const Tensor& value(Value v) const { return nodes_[static_cast<size_t>(v.id)].value; }

    double scalar(Value v) const {
        const Tensor& t = value(v);
        if (t.size() != 1) throw std::invalid_argument("scalar: node is not a scalar");
        return t[0];
    }

    bool requires_grad(Value v) const {
        return nodes_[static_cast<size_t>(v.id)].requires_grad;
    }

    /// Gradient buffer of a node, allocated (zeroed) on first use.
    Tensor& grad(Value v) {
        Node& n = nodes_[static_cast<size_t>(v.id)];
        if (!n.grad_live) {
            n.grad = Tensor(n.value.shape);
            n.grad_live = true;
        }
        return n.grad;
    }

    const Tensor* grad_if_live(Value v) const {
        const Node& n = nodes_[static_cast<size_t>(v.id)];
        return n.grad_live ? &n.grad : nullptr;
    }

    /// Reverse sweep from a scalar root. Gradients accumulate; call
    /// clear_grads() between passes over the same tape.
    void backward(Value root) {
        if (value(root).size() != 1)
            throw std::invalid_argument("backward: root must be a scalar loss");
        grad(root)[0] += 1.0;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            bool any_out = false;
            for (int32_t out : it->outputs)
                if (nodes_[static_cast<size_t>(out)].grad_live) {
                    any_out = true;
                    break;
                }
            if (any_out) it->backward(*this);
        }
    }

    void clear_grads() {
        for (Node& n : nodes_) {
            n.grad_live = false;
            n.grad = Tensor();
        }
    }

    /// Forward-pass fingerprint of every decision made by kinked primitives
    /// (relu signs, clamp regions, top-k selections, barrier branches).
    /// Two evaluations with equal signatures followed the same smooth piece.
    uint64_t kink_signature() const { return kink_sig_; }

    void note_kink_byte(uint8_t b) {
        kink_sig_ = (kink_sig_ ^ b) * 0x100000001B3ULL;
    }

    void note_kink_u64(uint64_t x) {
        for (int i = 0; i < 8; ++i) note_kink_byte(static_cast<uint8_t>(x >> (8 * i)));
    }

    size_t node_count() const { return nodes_.size(); }

    // --- op construction helpers (used by the free-function primitives) ---

    Value make_node(Tensor t, bool requires_grad) {
        nodes_.push_back(Node{std::move(t), Tensor(), requires_grad, false});
        return Value{static_cast<int32_t>(nodes_.size() - 1)};
    }

    void add_op(std::vector<int32_t> inputs, std::vector<int32_t> outputs,
                std::function<void(Graph&)> bwd) {
        ops_.push_back(Op{std::move(bwd), std::move(inputs), std::move(outputs)});
    }

    void check_finite(Value v, const char* primitive) const {
        const Tensor& t = value(v);
        // NaN and Inf survive summation, so one reduction replaces a branch
        // per element; overflow of genuinely finite sums is not a concern at
        // the magnitudes this library works with.
        double acc = 0.0;
        for (double x : t.values) acc += x;
        if (!std::isfinite(acc))
            throw numeric_error(std::string("non-finite value produced by primitive '") +
                                primitive + "'");
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_live = false;
    };
    struct Op {
        std::function<void(Graph&)> backward;
        std::vector<int32_t> inputs;
        std::vector<int32_t> outputs;
    };

    std::vector<Node> nodes_;
    std::vector<Op> ops_;
    uint64_t kink_sig_ = 0xCBF29CE484222325ULL;
};

namespace detail {

inline bool any_requires(const Graph& g, std::initializer_list<Value> vs) {
    for (Value v : vs)
        if (g.requires_grad(v)) return true;
    return false;
}

template <class Fwd, class Dfx>
Value unary_elementwise(Graph& g, Value x, const char* name, Fwd fwd, Dfx dfx) {
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape);
    for (int64_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    Value y = g.make_node(std::move(out), g.requires_grad(x));
    g.check_finite(y, name);
    if (g.requires_grad(x))
        g.add_op({x.id}, {y.id}, [x, y, dfx](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            const Tensor& xv2 = gg.value(x);
            const Tensor& yv2 = gg.value(y);
            Tensor& dx = gg.grad(x);
            for (int64_t i = 0; i < xv2.size(); ++i)
                dx[i] += (*dy)[i] * dfx(xv2[i], yv2[i]);
        });
    return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Value add(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    require_same_shape(av, bv, "add");
    Tensor out(av.shape);
    for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    Value y = g.make_node(std::move(out), detail::any_requires(g, {a, b}));
    g.check_finite(y, "add");
    if (g.requires_grad(y))
        g.add_op({a.id, b.id}, {y.id}, [a, b, y](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            if (gg.requires_grad(a)) {
                Tensor& da = gg.grad(a);
                for (int64_t i = 0; i < dy->size(); ++i) da[i] += (*dy)[i];
            }
            if (gg.requires_grad(b)) {
                Tensor& db = gg.grad(b);
                for (int64_t i = 0; i < dy->size(); ++i) db[i] += (*dy)[i];
            }
        });
    return y;
}

inline Value sub(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    require_same_shape(av, bv, "sub");
    Tensor out(av.shape);
    for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    Value y = g.make_node(std::move(out), detail::any_requires(g, {a, b}));
    g.check_finite(y, "sub");
    if (g.requires_grad(y))
        g.add_op({a.id, b.id}, {y.id}, [a, b, y](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            if (gg.requires_grad(a)) {
                Tensor& da = gg.grad(a);
                for (int64_t i = 0; i < dy->size(); ++i) da[i] += (*dy)[i];
            }
            if (gg.requires_grad(b)) {
                Tensor& db = gg.grad(b);
                for (int64_t i = 0; i < dy->size(); ++i) db[i] -= (*dy)[i];
            }
        });
    return y;
}

inline Value mul(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    require_same_shape(av, bv, "mul");
    Tensor out(av.shape);
    for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    Value y = g.make_node(std::move(out), detail::any_requires(g, {a, b}));
    g.check_finite(y, "mul");
    if (g.requires_grad(y))
        g.add_op({a.id, b.id}, {y.id}, [a, b, y](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            const Tensor& av2 = gg.value(a);
            const Tensor& bv2 = gg.value(b);
            if (gg.requires_grad(a)) {
                Tensor& da = gg.grad(a);
                for (int64_t i = 0; i < dy->size(); ++i) da[i] += (*dy)[i] * bv2[i];
            }
            if (gg.requires_grad(b)) {
                Tensor& db = gg.grad(b);
                for (int64_t i = 0; i < dy->size(); ++i) db[i] += (*dy)[i] * av2[i];
            }
        });
    return y;
}

inline Value div(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    require_same_shape(av, bv, "div");
    Tensor out(av.shape);
    for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
    Value y = g.make_node(std::move(out), detail::any_requires(g, {a, b}));
    g.check_finite(y, "div");
    if (g.requires_grad(y))
        g.add_op({a.id, b.id}, {y.id}, [a, b, y](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            const Tensor& av2 = gg.value(a);
            const Tensor& bv2 = gg.value(b);
            if (gg.requires_grad(a)) {
                Tensor& da = gg.grad(a);
                for (int64_t i = 0; i < dy->size(); ++i) da[i] += (*dy)[i] / bv2[i];
            }
            if (gg.requires_grad(b)) {
                Tensor& db = gg.grad(b);
                for (int64_t i = 0; i < dy->size(); ++i)
                    db[i] -= (*dy)[i] * av2[i] / (bv2[i] * bv2[i]);
            }
        });
    return y;
}

/// a*x + b with scalar coefficients; covers scaling, shifting and negation.
inline Value affine(Graph& g, Value x, double a, double b) {
    const Tensor& xv = g.value(x);
    Tensor out(xv.shape);
    for (int64_t i = 0; i < xv.size(); ++i) out[i] = a * xv[i] + b;
    Value y = g.make_node(std::move(out), g.requires_grad(x));
    g.check_finite(y, "affine");
    if (g.requires_grad(x))
        g.add_op({x.id}, {y.id}, [x, y, a](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            Tensor& dx = gg.grad(x);
            for (int64_t i = 0; i < dy->size(); ++i) dx[i] += a * (*dy)[i];
        });
    return y;
}

inline Value mul_scalar(Graph& g, Value x, double a) { return affine(g, x, a, 0.0); }
inline Value add_scalar(Graph& g, Value x, double b) { return affine(g, x, 1.0, b); }

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Value tanh_(Graph& g, Value x) {
    return detail::unary_elementwise(
        g, x, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Value sigmoid_(Graph& g, Value x) {
    return detail::unary_elementwise(
        g, x, "sigmoid", [](double v) { return kern::sigmoid(v); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Value softplus_(Graph& g, Value x) {
    return detail::unary_elementwise(
        g, x, "softplus", [](double v) { return kern::softplus(v); },
        [](double v, double) { return kern::sigmoid(v); });
}

inline Value exp_(Graph& g, Value x) {
    return detail::unary_elementwise(
        g, x, "exp", [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

inline Value log_(Graph& g, Value x) {
    return detail::unary_elementwise(
        g, x, "log", [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

/// Subgradient at kinks: relu'(0) = 0, abs'(0) = 0, and the clamp/max/min
/// family takes 0 exactly on their boundaries. The forward pass folds each
/// decision into the graph's kink signature.

inline Value relu_(Graph& g, Value x) {
    const Tensor& xv = g.value(x);
    for (int64_t i = 0; i < xv.size(); ++i) g.note_kink_byte(xv[i] > 0.0 ? 1 : 0);
    return detail::unary_elementwise(
        g, x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Value abs_(Graph& g, Value x) {
    const Tensor& xv = g.value(x);
    for (int64_t i = 0; i < xv.size(); ++i)
        g.note_kink_byte(xv[i] > 0.0 ? 1 : (xv[i] < 0.0 ? 2 : 0));
    return detail::unary_elementwise(
        g, x, "abs", [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// max(c, x) elementwise.
inline Value max_scalar(Graph& g, Value x, double c) {
    const Tensor& xv = g.value(x);
    for (int64_t i = 0; i < xv.size(); ++i) g.note_kink_byte(xv[i] > c ? 1 : 0);
    return detail::unary_elementwise(
        g, x, "max",
        [c](double v) { return v > c ? v : c; },
        [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

/// min(c, x) elementwise.
inline Value min_scalar(Graph& g, Value x, double c) {
    const Tensor& xv = g.value(x);
    for (int64_t i = 0; i < xv.size(); ++i) g.note_kink_byte(xv[i] < c ? 1 : 0);
    return detail::unary_elementwise(
        g, x, "min",
        [c](double v) { return v < c ? v : c; },
        [c](double v, double) { return v < c ? 1.0 : 0.0; });
}

inline Value clamp_(Graph& g, Value x, double lo, double hi) {
    const Tensor& xv = g.value(x);
    for (int64_t i = 0; i < xv.size(); ++i)
        g.note_kink_byte(xv[i] > lo ? (xv[i] < hi ? 1 : 2) : 0);
    return detail::unary_elementwise(
        g, x, "clamp",
        [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Value maximum(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    require_same_shape(av, bv, "max");
    Tensor out(av.shape);
    for (int64_t i = 0; i < av.size(); ++i) {
        out[i] = av[i] >= bv[i] ? av[i] : bv[i];
        g.note_kink_byte(av[i] >= bv[i] ? 1 : 0);
    }
    Value y = g.make_node(std::move(out), detail::any_requires(g, {a, b}));
    g.check_finite(y, "max");
    if (g.requires_grad(y))
        g.add_op({a.id, b.id}, {y.id}, [a, b, y](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            const Tensor& av2 = gg.value(a);
            const Tensor& bv2 = gg.value(b);
            // tie routes to the first argument
            if (gg.requires_grad(a)) {
                Tensor& da = gg.grad(a);
                for (int64_t i = 0; i < dy->size(); ++i)
                    if (av2[i] >= bv2[i]) da[i] += (*dy)[i];
            }
            if (gg.requires_grad(b)) {
                Tensor& db = gg.grad(b);
                for (int64_t i = 0; i < dy->size(); ++i)
                    if (av2[i] < bv2[i]) db[i] += (*dy)[i];
            }
        });
    return y;
}

inline Value minimum(Graph& g, Value a, Value b) {
    Value na = affine(g, a, -1.0, 0.0);
    Value nb = affine(g, b, -1.0, 0.0);
    return affine(g, maximum(g, na, nb), -1.0, 0.0);
}

/// Extended log-barrier: -(1/r)log(-z) on the feasible side of the knot
/// z = -1/r^2, continued by its tangent line beyond it. Total and C1.
inline Value ext_log_barrier(Graph& g, Value z, double r) {
    if (!(r > 0.0)) throw std::invalid_argument("ext_log_barrier: r must be positive");
    const Tensor& zv = g.value(z);
    const double knot = -1.0 / (r * r);
    Tensor out(zv.shape);
    for (int64_t i = 0; i < zv.size(); ++i) {
        const double x = zv[i];
        g.note_kink_byte(x <= knot ? 1 : 0);
        out[i] = x <= knot ? -std::log(-x) / r
                           : r * x - std::log(1.0 / (r * r)) / r + 1.0 / r;
    }
    Value y = g.make_node(std::move(out), g.requires_grad(z));
    g.check_finite(y, "ext_log_barrier");
    if (g.requires_grad(z))
        g.add_op({z.id}, {y.id}, [z, y, r, knot](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            const Tensor& zv2 = gg.value(z);
            Tensor& dz = gg.grad(z);
            for (int64_t i = 0; i < dy->size(); ++i) {
                const double x = zv2[i];
                dz[i] += (*dy)[i] * (x <= knot ? -1.0 / (r * x) : r);
            }
        });
    return y;
}

// ---------------------------------------------------------------------------
// Reductions and selection
// ---------------------------------------------------------------------------

inline Value sum_all(Graph& g, Value x) {
    const Tensor& xv = g.value(x);
    double s = 0.0;
    for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
    Value y = g.make_node(Tensor::scalar(s), g.requires_grad(x));
    g.check_finite(y, "sum");
    if (g.requires_grad(x))
        g.add_op({x.id}, {y.id}, [x, y](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            Tensor& dx = gg.grad(x);
            for (int64_t i = 0; i < dx.size(); ++i) dx[i] += (*dy)[0];
        });
    return y;
}

inline Value mean_all(Graph& g, Value x) {
    const int64_t n = g.value(x).size();
    if (n == 0) throw std::invalid_argument("mean: empty tensor");
    return mul_scalar(g, sum_all(g, x), 1.0 / static_cast<double>(n));
}

/// Indices of the k largest entries, ties broken toward the lower original
/// index (stable); returned in ascending index order.
inline std::vector<int64_t> topk_indices(const double* v, int64_t n, int64_t k) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [v](int64_t a, int64_t b) {
        return v[a] > v[b] || (v[a] == v[b] && a < b);
    });
    idx.resize(static_cast<size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Sum of the k largest entries. Subgradient routes unit weight to the
/// selected entries.
inline Value topk_sum(Graph& g, Value x, int64_t k) {
    const Tensor& xv = g.value(x);
    const int64_t n = xv.size();
    if (k < 1 || k > n) throw std::invalid_argument("topk_sum: k out of range");
    auto sel = topk_indices(xv.data(), n, k);
    for (int64_t i : sel) g.note_kink_u64(static_cast<uint64_t>(i));
    double s = 0.0;
    for (int64_t i : sel) s += xv[i];
    Value y = g.make_node(Tensor::scalar(s), g.requires_grad(x));
    g.check_finite(y, "topk_sum");
    if (g.requires_grad(x))
        g.add_op({x.id}, {y.id}, [x, y, sel = std::move(sel)](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            Tensor& dx = gg.grad(x);
            for (int64_t i : sel) dx[i] += (*dy)[0];
        });
    return y;
}

// ---------------------------------------------------------------------------
// Linear algebra and structured ops
// ---------------------------------------------------------------------------

inline Value matmul(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
        throw std::invalid_argument("matmul: incompatible shapes " + av.shape_str() + " x " +
                                    bv.shape_str());
    const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor out({m, n});
    kern::matmul_nn(av.data(), bv.data(), out.data(), m, k, n, false);
    Value y = g.make_node(std::move(out), detail::any_requires(g, {a, b}));
    g.check_finite(y, "matmul");
    if (g.requires_grad(y))
        g.add_op({a.id, b.id}, {y.id}, [a, b, y, m, k, n](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            if (gg.requires_grad(a))
                kern::matmul_nt(dy->data(), gg.value(b).data(), gg.grad(a).data(), m, n, k, true);
            if (gg.requires_grad(b))
                kern::matmul_tn(gg.value(a).data(), dy->data(), gg.grad(b).data(), m, k, n, true);
        });
    return y;
}

/// x*W + b with b broadcast across rows.
inline Value linear(Graph& g, Value x, Value w, Value b) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    const Tensor& bv = g.value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[0] ||
        bv.size() != wv.shape[1])
        throw std::invalid_argument("linear: incompatible shapes");
    const int64_t m = xv.shape[0], k = xv.shape[1], n = wv.shape[1];
    Tensor out({m, n});
    kern::matmul_nn(xv.data(), wv.data(), out.data(), m, k, n, false);
    kern::add_row_bias(out.data(), bv.data(), m, n);
    Value y = g.make_node(std::move(out), detail::any_requires(g, {x, w, b}));
    g.check_finite(y, "linear");
    if (g.requires_grad(y))
        g.add_op({x.id, w.id, b.id}, {y.id}, [x, w, b, y, m, k, n](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            if (gg.requires_grad(x))
                kern::matmul_nt(dy->data(), gg.value(w).data(), gg.grad(x).data(), m, n, k, true);
            if (gg.requires_grad(w))
                kern::matmul_tn(gg.value(x).data(), dy->data(), gg.grad(w).data(), m, k, n, true);
            if (gg.requires_grad(b))
                kern::col_sums(dy->data(), gg.grad(b).data(), m, n, true);
        });
    return y;
}

/// Column c of an N x C tensor as a flat {N} vector.
inline Value select_col(Graph& g, Value x, int64_t col) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 2 || col < 0 || col >= xv.shape[1])
        throw std::invalid_argument("select_col: bad column");
    const int64_t n = xv.shape[0], c = xv.shape[1];
    Tensor out({n});
    for (int64_t i = 0; i < n; ++i) out[i] = xv[i * c + col];
    Value y = g.make_node(std::move(out), g.requires_grad(x));
    if (g.requires_grad(x))
        g.add_op({x.id}, {y.id}, [x, y, col, n, c](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            Tensor& dx = gg.grad(x);
            for (int64_t i = 0; i < n; ++i) dx[i * c + col] += (*dy)[i];
        });
    return y;
}

inline Value concat_cols(Graph& g, Value a, Value b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.shape[0] != bv.shape[0])
        throw std::invalid_argument("concat_cols: row mismatch");
    const int64_t m = av.shape[0], ca = av.shape[1], cb = bv.shape[1];
    Tensor out({m, ca + cb});
    for (int64_t i = 0; i < m; ++i) {
        std::copy_n(av.data() + i * ca, ca, out.data() + i * (ca + cb));
        std::copy_n(bv.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
    }
    Value y = g.make_node(std::move(out), detail::any_requires(g, {a, b}));
    if (g.requires_grad(y))
        g.add_op({a.id, b.id}, {y.id}, [a, b, y, m, ca, cb](Graph& gg) {
            const Tensor* dy = gg.grad_if_live(y);
            if (!dy) return;
            if (gg.requires_grad(a)) {
                Tensor& da = gg.grad(a);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < ca; ++j)
                        da[i * ca + j] += (*dy)[i * (ca + cb) + j];
            }
            if (gg.requires_grad(b)) {
                Tensor& db = gg.grad(b);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < cb; ++j)
                        db[i * cb + j] += (*dy)[i * (ca + cb) + ca + j];
            }
        });
    return y;
}

/// One recurrent gated step; returns (hidden, cell).
inline std::pair<Value, Value> lstm_cell(Graph& g, Value xh, Value c_prev, Value w, Value b,
                                         double forget_bias) {
    auto fw = kern::lstm_cell_forward(g.value(xh), g.value(c_prev), g.value(w), g.value(b),
                                      forget_bias);
    const int64_t n = fw.h.shape[0], hidden = fw.h.shape[1];
    const int64_t in_dim = g.value(xh).shape[1];
    const bool req = detail::any_requires(g, {xh, c_prev, w, b});
    auto stash = std::make_shared<kern::LstmCellOut>(std::move(fw));
    Value h_out = g.make_node(std::move(stash->h), req);
    Value c_out = g.make_node(std::move(stash->c), req);
    g.check_finite(h_out, "lstm_cell");
    g.check_finite(c_out, "lstm_cell");
    if (req)
        g.add_op({xh.id, c_prev.id, w.id, b.id}, {h_out.id, c_out.id},
                 [xh, c_prev, w, b, h_out, c_out, stash, n, hidden, in_dim](Graph& gg) {
                     const Tensor* dh = gg.grad_if_live(h_out);
                     const Tensor* dc_out = gg.grad_if_live(c_out);
                     if (!dh && !dc_out) return;
                     const Tensor& cp = gg.value(c_prev);
                     Tensor d_gates({n, 4 * hidden});
                     Tensor dc_prev_local({n, hidden});
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kern::thread_count()) \
    if (n * hidden > 16384)
#endif
                     for (int64_t r = 0; r < n; ++r) {
                         const double* gt = stash->gates.data() + r * 4 * hidden;
                         const double* tc = stash->tanh_c.data() + r * hidden;
                         const double* cpr = cp.data() + r * hidden;
                         double* dg = d_gates.data() + r * 4 * hidden;
                         double* dcp = dc_prev_local.data() + r * hidden;
                         for (int64_t j = 0; j < hidden; ++j) {
                             const double gi = gt[j];
                             const double gf = gt[hidden + j];
                             const double gg_ = gt[2 * hidden + j];
                             const double go = gt[3 * hidden + j];
                             const double dhv = dh ? (*dh)[r * hidden + j] : 0.0;
                             double dct = dc_out ? (*dc_out)[r * hidden + j] : 0.0;
                             dct += dhv * go * (1.0 - tc[j] * tc[j]);
                             dg[j] = dct * gg_ * gi * (1.0 - gi);
                             dg[hidden + j] = dct * cpr[j] * gf * (1.0 - gf);
                             dg[2 * hidden + j] = dct * gi * (1.0 - gg_ * gg_);
                             dg[3 * hidden + j] = dhv * tc[j] * go * (1.0 - go);
                             dcp[j] = dct * gf;
                         }
                     }
                     if (gg.requires_grad(xh))
                         kern::matmul_nt(d_gates.data(), gg.value(w).data(), gg.grad(xh).data(),
                                         n, 4 * hidden, in_dim, true);
                     if (gg.requires_grad(w))
                         kern::matmul_tn(gg.value(xh).data(), d_gates.data(), gg.grad(w).data(),
                                         n, in_dim, 4 * hidden, true);
                     if (gg.requires_grad(b))
                         kern::col_sums(d_gates.data(), gg.grad(b).data(), n, 4 * hidden, true);
                     if (gg.requires_grad(c_prev)) {
                         Tensor& dcp_acc = gg.grad(c_prev);
                         for (int64_t i = 0; i < dcp_acc.size(); ++i)
                             dcp_acc[i] += dc_prev_local[i];
                     }
                 });
    return {h_out, c_out};
}

/// Batch normalization over an N x C activation. In training mode the batch
/// statistics normalize and (optionally) refresh the running buffers; in
/// inference mode the running buffers normalize and nothing is mutated.
inline Value batchnorm(Graph& g, Value x, Value gamma, Value beta, BnBuffers& buffers,
                       bool training, double momentum, double eps, bool update_stats = true) {
    const Tensor& xv = g.value(x);
    if (xv.rank() != 2) throw std::invalid_argument("batchnorm: expects rank-2 input");
    const int64_t n = xv.shape[0], c = xv.shape[1];
    if (g.value(gamma).size() != c || g.value(beta).size() != c ||
        buffers.running_mean.size() != c)
        throw std::invalid_argument("batchnorm: feature count mismatch");

    auto xhat = std::make_shared<Tensor>(Tensor({n, c}));
    auto invstd = std::make_shared<Tensor>(Tensor({c}));
    if (training) {
        kern::BnStats st = kern::bn_batch_stats(xv, eps);
        *invstd = st.invstd;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j)
                (*xhat)[i * c + j] = (xv[i * c + j] - st.mean[j]) * st.invstd[j];
        if (update_stats && n > 1) {
            const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
            for (int64_t j = 0; j < c; ++j) {
                buffers.running_mean[j] =
                    (1.0 - momentum) * buffers.running_mean[j] + momentum * st.mean[j];
                buffers.running_var[j] =
                    (1.0 - momentum) * buffers.running_var[j] + momentum * st.var[j] * unbias;
            }
        }
    } else {
        for (int64_t j = 0; j < c; ++j)
            (*invstd)[j] = 1.0 / std::sqrt(buffers.running_var[j] + eps);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j)
                (*xhat)[i * c + j] = (xv[i * c + j] - buffers.running_mean[j]) * (*invstd)[j];
    }

    const Tensor& gv = g.value(gamma);
    const Tensor& bv = g.value(beta);
    Tensor out({n, c});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j)
            out[i * c + j] = gv[j] * (*xhat)[i * c + j] + bv[j];
    Value y = g.make_node(std::move(out), detail::any_requires(g, {x, gamma, beta}));
    g.check_finite(y, "batchnorm");
    if (g.requires_grad(y))
        g.add_op({x.id, gamma.id, beta.id}, {y.id},
                 [x, gamma, beta, y, xhat, invstd, n, c, training](Graph& gg) {
                     const Tensor* dy = gg.grad_if_live(y);
                     if (!dy) return;
                     const Tensor& gv2 = gg.value(gamma);
                     if (gg.requires_grad(gamma)) {
                         Tensor& dgm = gg.grad(gamma);
                         for (int64_t i = 0; i < n; ++i)
                             for (int64_t j = 0; j < c; ++j)
                                 dgm[j] += (*dy)[i * c + j] * (*xhat)[i * c + j];
                     }
                     if (gg.requires_grad(beta)) {
                         Tensor& dbt = gg.grad(beta);
                         kern::col_sums(dy->data(), dbt.data(), n, c, true);
                     }
                     if (!gg.requires_grad(x)) return;
                     Tensor& dx = gg.grad(x);
                     if (training) {
                         // dL/dx through the batch statistics
                         std::vector<double> s1(static_cast<size_t>(c), 0.0);
                         std::vector<double> s2(static_cast<size_t>(c), 0.0);
                         for (int64_t i = 0; i < n; ++i)
                             for (int64_t j = 0; j < c; ++j) {
                                 s1[static_cast<size_t>(j)] += (*dy)[i * c + j];
                                 s2[static_cast<size_t>(j)] +=
                                     (*dy)[i * c + j] * (*xhat)[i * c + j];
                             }
                         const double inv_n = 1.0 / static_cast<double>(n);
                         for (int64_t i = 0; i < n; ++i)
                             for (int64_t j = 0; j < c; ++j)
                                 dx[i * c + j] += gv2[j] * (*invstd)[j] *
                                                  ((*dy)[i * c + j] -
                                                   s1[static_cast<size_t>(j)] * inv_n -
                                                   (*xhat)[i * c + j] *
                                                       s2[static_cast<size_t>(j)] * inv_n);
                     } else {
                         for (int64_t i = 0; i < n; ++i)
                             for (int64_t j = 0; j < c; ++j)
                                 dx[i * c + j] += (*dy)[i * c + j] * gv2[j] * (*invstd)[j];
                     }
                 });
    return y;
}

}  // namespace solarpi::ad
