#pragma once

// Reverse-mode differentiation over dense tensors. A Graph records every op as a node
// (value, inputs, backward rule); nodes are appended in execution order, so the node
// vector is already a topological order and backward is one reverse sweep.

#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coaction/rng.hpp"
#include "coaction/tensor.hpp"

namespace coaction::ad {

/// Trainable tensor living outside any graph. Graphs bind it as a leaf and add into grad.
struct Parameter {
    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }

    std::string name;
    Tensor value;
    Tensor grad;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;

    Graph& graph() const noexcept { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }
    inline const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) noexcept : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value) { return push("constant", std::move(value), {}, false, nullptr, nullptr); }

    Var variable(Tensor value) { return push("variable", std::move(value), {}, true, nullptr, nullptr); }

    Var parameter(Parameter& p) { return push("parameter", p.value, {}, true, nullptr, &p); }

    /// Appends an op node. requires_grad is inherited from the inputs. Ops that only move
    /// values around pass check_finite = false.
    Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
               bool check_finite = true)
    {
        bool needs = false;
        for (auto i : inputs) {
            needs = needs || nodes_[i].requires_grad;
        }
        if (check_finite && !value.all_finite()) {
            std::string msg = "op '" + std::string(op) + "' produced non-finite values";
            if (!scope_.empty()) {
                msg += " in " + scope_;
            }
            throw DomainError(msg);
        }
        return push(op, std::move(value), std::move(inputs), needs, needs ? std::move(backward) : nullptr, nullptr);
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& value(Var v) const { return value(v.id()); }
    std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    bool has_grad(Var v) const { return nodes_.at(v.id()).has_grad; }

    const Tensor& grad(Var v) const
    {
        const auto& n = nodes_.at(v.id());
        if (!n.has_grad) {
            throw std::logic_error("no gradient recorded for node " + std::to_string(v.id()));
        }
        return n.grad;
    }

    /// Gradient accumulator of a node during backward, zero-initialised on first use.
    /// Null when the node does not require a gradient.
    Tensor* grad_buffer(std::size_t id)
    {
        auto& n = nodes_[id];
        if (!n.requires_grad) {
            return nullptr;
        }
        if (!n.has_grad) {
            n.grad = Tensor(n.value.shape());
            n.has_grad = true;
        }
        return &n.grad;
    }

    const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

    void backward(Var root)
    {
        if (root.graph_ != this) {
            throw std::invalid_argument("backward root belongs to another graph");
        }
        if (backward_done_) {
            throw std::logic_error("backward already ran on this graph; call reset() first");
        }
        if (nodes_.at(root.id()).value.size() != 1) {
            throw ShapeError("backward root must be a scalar, got shape " + to_string(root.shape()));
        }
        backward_done_ = true;
        if (!nodes_[root.id()].requires_grad) {
            return;
        }
        grad_buffer(root.id())->fill(1.0);
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.has_grad) {
                continue;
            }
            if (n.backward) {
                n.backward(*this, i);
            }
            if (n.bound != nullptr) {
                auto g = n.bound->grad.values();
                const auto src = n.grad.values();
                for (std::size_t k = 0; k < g.size(); ++k) {
                    g[k] += src[k];
                }
            }
        }
    }

    /// Clears gradients so backward may run again.
    void reset()
    {
        for (auto& n : nodes_) {
            n.has_grad = false;
            n.grad = Tensor();
        }
        backward_done_ = false;
    }

    /// Label attached to errors raised while recording (e.g. a layer name).
    void set_scope(std::string scope) { scope_ = std::move(scope); }
    const std::string& scope() const noexcept { return scope_; }

private:
    struct Node {
        std::string_view op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* bound = nullptr;
        bool requires_grad = false;
        bool has_grad = false;
    };

    Var push(std::string_view op, Tensor value, std::vector<std::size_t> inputs, bool requires_grad,
             BackwardFn backward, Parameter* bound)
    {
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        n.backward = std::move(backward);
        n.bound = bound;
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
    std::string scope_;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

class ScopeGuard {
public:
    ScopeGuard(Graph& g, std::string scope) : graph_(g), saved_(g.scope()) { g.set_scope(std::move(scope)); }
    ~ScopeGuard() { graph_.set_scope(std::move(saved_)); }
    ScopeGuard(const ScopeGuard&) = delete;
    ScopeGuard& operator=(const ScopeGuard&) = delete;

private:
    Graph& graph_;
    std::string saved_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline void require_same_graph(Var a, Var b)
{
    if (&a.graph() != &b.graph()) {
        throw std::invalid_argument("operands belong to different graphs");
    }
}

inline bool is_suffix(const Shape& small, const Shape& big)
{
    if (small.size() > big.size()) {
        return false;
    }
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

/// Elementwise binary op. The operand of lower rank may broadcast over the leading
/// dims of the other when its shape equals their trailing dims.
template <class F, class DA, class DB>
Var binary(std::string_view name, Var a, Var b, F f, DA dfa, DB dfb)
{
    require_same_graph(a, b);
    Graph& g = a.graph();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Shape out_shape;
    if (av.shape() == bv.shape() || is_suffix(bv.shape(), av.shape())) {
        out_shape = av.shape();
    } else if (is_suffix(av.shape(), bv.shape())) {
        out_shape = bv.shape();
    } else {
        throw ShapeError(std::string(name) + ": incompatible shapes " + to_string(av.shape()) + " and " +
                         to_string(bv.shape()));
    }
    Tensor out = Tensor::uninitialized(out_shape);
    const std::size_t n = out.size();
    const std::size_t na = av.size();
    const std::size_t nb = bv.size();
    const double* pa = av.data();
    const double* pb = bv.data();
    double* po = out.data();
    if (na == n && nb == n) {
        for (std::size_t i = 0; i < n; ++i) {
            po[i] = f(pa[i], pb[i]);
        }
    } else if (na == n) {
        for (std::size_t blk = 0; blk < n; blk += nb) {
            for (std::size_t i = 0; i < nb; ++i) {
                po[blk + i] = f(pa[blk + i], pb[i]);
            }
        }
    } else {
        for (std::size_t blk = 0; blk < n; blk += na) {
            for (std::size_t i = 0; i < na; ++i) {
                po[blk + i] = f(pa[i], pb[blk + i]);
            }
        }
    }
    return g.record(name, std::move(out), {a.id(), b.id()}, [dfa, dfb](Graph& gr, std::size_t self) {
        const auto& in = gr.inputs(self);
        const Tensor& x = gr.value(in[0]);
        const Tensor& y = gr.value(in[1]);
        const Tensor& go = gr.out_grad(self);
        const std::size_t nn = go.size();
        const std::size_t nx = x.size();
        const std::size_t ny = y.size();
        // the smaller operand repeats in whole blocks along the larger one
        const std::size_t block = std::min(nx, ny);
        const bool x_full = nx == nn;
        const bool y_full = ny == nn;
        const double* px = x.data();
        const double* py = y.data();
        const double* pg = go.data();
        if (Tensor* gx = gr.grad_buffer(in[0])) {
            double* d = gx->data();
            for (std::size_t blk = 0; blk < nn; blk += block) {
                const double* xb = x_full ? px + blk : px;
                const double* yb = y_full ? py + blk : py;
                double* db = x_full ? d + blk : d;
                for (std::size_t i = 0; i < block; ++i) {
                    db[i] += pg[blk + i] * dfa(xb[i], yb[i]);
                }
            }
        }
        if (Tensor* gy = gr.grad_buffer(in[1])) {
            double* d = gy->data();
            for (std::size_t blk = 0; blk < nn; blk += block) {
                const double* xb = x_full ? px + blk : px;
                const double* yb = y_full ? py + blk : py;
                double* db = y_full ? d + blk : d;
                for (std::size_t i = 0; i < block; ++i) {
                    db[i] += pg[blk + i] * dfb(xb[i], yb[i]);
                }
            }
        }
    });
}

/// Elementwise unary op; the derivative rule sees both input x and output y.
template <class F, class D>
Var unary(std::string_view name, Var a, F f, D df)
{
    const Tensor& av = a.value();
    Tensor out = Tensor::uninitialized(av.shape());
    const std::size_t n = av.size();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[i]);
    }
    return a.graph().record(name, std::move(out), {a.id()}, [df](Graph& gr, std::size_t self) {
        const auto in = gr.inputs(self)[0];
        Tensor* gx = gr.grad_buffer(in);
        const Tensor& x = gr.value(in);
        const Tensor& y = gr.value(self);
        const Tensor& go = gr.out_grad(self);
        for (std::size_t i = 0; i < go.size(); ++i) {
            (*gx)[i] += go[i] * df(x[i], y[i]);
        }
    });
}

}  // namespace detail

// ---- elementwise arithmetic ------------------------------------------------------------

inline Var add(Var a, Var b)
{
    return detail::binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b)
{
    return detail::binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b)
{
    return detail::binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Var div(Var a, Var b)
{
    return detail::binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

inline Var scale(Var a, double s)
{
    return detail::unary(
        "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var a, double s)
{
    return detail::unary(
        "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }
inline Var operator+(double s, Var a) { return add_scalar(a, s); }
inline Var operator-(Var a, double s) { return add_scalar(a, -s); }
inline Var operator-(double s, Var a) { return add_scalar(scale(a, -1.0), s); }

// ---- elementwise functions ---------------------------------------------------------------

inline Var sin(Var a)
{
    return detail::unary(
        "sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Var cos(Var a)
{
    return detail::unary(
        "cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

inline Var exp(Var a)
{
    return detail::unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a)
{
    for (double v : a.value().values()) {
        if (!(v > 0.0)) {
            throw DomainError("log of non-positive value " + std::to_string(v));
        }
    }
    return detail::unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(Var a)
{
    for (double v : a.value().values()) {
        if (v < 0.0) {
            throw DomainError("sqrt of negative value " + std::to_string(v));
        }
    }
    return detail::unary(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

/// x^p for a constant exponent. Non-integer exponents need x >= 0.
inline Var pow(Var a, double p)
{
    if (p != std::floor(p)) {
        for (double v : a.value().values()) {
            if (v < 0.0) {
                throw DomainError("fractional power of negative value " + std::to_string(v));
            }
        }
    }
    return detail::unary(
        "power", a, [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

inline Var square(Var a)
{
    return detail::unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var tanh(Var a)
{
    return detail::unary(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_value(double x) noexcept
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(Var a)
{
    return detail::unary(
        "sigmoid", a, [](double x) { return sigmoid_value(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var a)
{
    return detail::unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---- shape ops -----------------------------------------------------------------------------

inline Var reshape(Var a, Shape shape)
{
    Tensor out = a.value().reshaped(std::move(shape));
    return a.graph().record("reshape", std::move(out), {a.id()}, [](Graph& gr, std::size_t self) {
        const auto in = gr.inputs(self)[0];
        Tensor* gx = gr.grad_buffer(in);
        const Tensor& go = gr.out_grad(self);
        for (std::size_t i = 0; i < go.size(); ++i) {
            (*gx)[i] += go[i];
        }
    }, false);
}

namespace detail {

/// out[perm-index] = in[index]; returns for each output position the source offset.
inline std::vector<std::size_t> permutation_map(const Shape& in_shape, const std::vector<std::size_t>& perm,
                                                Shape& out_shape)
{
    const std::size_t r = in_shape.size();
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) {
        in_strides[i - 1] = in_strides[i] * in_shape[i];
    }
    out_shape.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in_shape[perm[i]];
    }
    const std::size_t n = shape_size(in_shape);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < n; ++o) {
        map[o] = src;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            src += in_strides[perm[ax]];
            if (idx[ax] < out_shape[ax]) {
                break;
            }
            src -= in_strides[perm[ax]] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    return map;
}

}  // namespace detail

/// Reorders axes: output axis i is input axis perm[i].
inline Var permute(Var a, std::vector<std::size_t> perm)
{
    const Tensor& av = a.value();
    std::vector<bool> seen(av.rank(), false);
    if (perm.size() != av.rank()) {
        throw ShapeError("permute: permutation length " + std::to_string(perm.size()) + " for rank " +
                         std::to_string(av.rank()));
    }
    for (auto p : perm) {
        if (p >= av.rank() || seen[p]) {
            throw ShapeError("permute: invalid permutation");
        }
        seen[p] = true;
    }
    Shape out_shape;
    auto map = detail::permutation_map(av.shape(), perm, out_shape);
    Tensor out = Tensor::uninitialized(out_shape);
    for (std::size_t o = 0; o < map.size(); ++o) {
        out[o] = av[map[o]];
    }
    return a.graph().record("permute", std::move(out), {a.id()},
                            [map = std::move(map)](Graph& gr, std::size_t self) {
                                Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
                                const Tensor& go = gr.out_grad(self);
                                for (std::size_t o = 0; o < map.size(); ++o) {
                                    (*gx)[map[o]] += go[o];
                                }
                            },
                            false);
}

/// Swaps the last two axes.
inline Var transpose(Var a)
{
    const auto r = a.value().rank();
    if (r < 2) {
        throw ShapeError("transpose needs rank >= 2");
    }
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(a, std::move(perm));
}

/// Concatenation along the last axis; all leading extents must agree.
inline Var concat(const std::vector<Var>& parts)
{
    if (parts.empty()) {
        throw ShapeError("concat of zero tensors");
    }
    const Shape& first = parts[0].shape();
    if (first.empty()) {
        throw ShapeError("concat needs rank >= 1");
    }
    Shape lead(first.begin(), first.end() - 1);
    std::vector<std::size_t> widths;
    std::vector<std::size_t> ids;
    std::size_t total = 0;
    for (const auto& p : parts) {
        detail::require_same_graph(parts[0], p);
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
            throw ShapeError("concat: incompatible shapes " + to_string(first) + " and " + to_string(s));
        }
        widths.push_back(s.back());
        ids.push_back(p.id());
        total += s.back();
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor out = Tensor::uninitialized(out_shape);
    const std::size_t rows = shape_size(lead);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + offset);
        }
        offset += widths[k];
    }
    return parts[0].graph().record("concat", std::move(out), std::move(ids),
                                   [widths, rows, total](Graph& gr, std::size_t self) {
                                       const Tensor& go = gr.out_grad(self);
                                       const auto& in = gr.inputs(self);
                                       std::size_t off = 0;
                                       for (std::size_t k = 0; k < in.size(); ++k) {
                                           if (Tensor* gx = gr.grad_buffer(in[k])) {
                                               for (std::size_t r = 0; r < rows; ++r) {
                                                   for (std::size_t c = 0; c < widths[k]; ++c) {
                                                       (*gx)[r * widths[k] + c] += go[r * total + off + c];
                                                   }
                                               }
                                           }
                                           off += widths[k];
                                       }
                                   });
}

/// Columns [begin, end) of the last axis.
inline Var slice(Var a, std::size_t begin, std::size_t end)
{
    const Tensor& av = a.value();
    if (av.rank() == 0 || begin >= end || end > av.last_dim()) {
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for shape " +
                         to_string(av.shape()));
    }
    const std::size_t width = av.last_dim();
    const std::size_t rows = av.leading_size();
    const std::size_t w = end - begin;
    Shape out_shape = av.shape();
    out_shape.back() = w;
    Tensor out = Tensor::uninitialized(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.data() + r * width + begin, w, out.data() + r * w);
    }
    return a.graph().record("slice", std::move(out), {a.id()}, [begin, width, rows, w](Graph& gr, std::size_t self) {
        Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
        const Tensor& go = gr.out_grad(self);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                (*gx)[r * width + begin + c] += go[r * w + c];
            }
        }
    }, false);
}

// ---- linear algebra ----------------------------------------------------------------------

/// Matrix product over the last two axes.
///  - a (..., K) times b (K, M): the leading axes of a act as rows.
///  - a (N, R, K) times b (N, K, M): batched product.
inline Var matmul(Var a, Var b)
{
    detail::require_same_graph(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() < 2 && !(av.rank() == 1 && bv.rank() == 2)) {
        throw ShapeError("matmul: left operand shape " + to_string(av.shape()));
    }
    if (bv.rank() == 2) {
        const std::size_t k = av.last_dim();
        if (bv.dim(0) != k) {
            throw ShapeError("matmul: inner dimensions differ, " + to_string(av.shape()) + " x " +
                             to_string(bv.shape()));
        }
        const std::size_t rows = av.leading_size();
        const std::size_t m = bv.dim(1);
        Shape out_shape = av.shape();
        out_shape.back() = m;
        Tensor out = Tensor::uninitialized(out_shape);
        detail::MutMap(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m)).noalias() =
            detail::ConstMap(av.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k)) *
            detail::ConstMap(bv.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
        return a.graph().record("matmul", std::move(out), {a.id(), b.id()},
                                [rows, k, m](Graph& gr, std::size_t self) {
                                    const auto& in = gr.inputs(self);
                                    const auto r = static_cast<Eigen::Index>(rows);
                                    const auto kk = static_cast<Eigen::Index>(k);
                                    const auto mm = static_cast<Eigen::Index>(m);
                                    detail::ConstMap go(gr.out_grad(self).data(), r, mm);
                                    if (Tensor* ga = gr.grad_buffer(in[0])) {
                                        detail::ConstMap bm(gr.value(in[1]).data(), kk, mm);
                                        detail::MutMap(ga->data(), r, kk).noalias() += go * bm.transpose();
                                    }
                                    if (Tensor* gb = gr.grad_buffer(in[1])) {
                                        detail::ConstMap am(gr.value(in[0]).data(), r, kk);
                                        detail::MutMap(gb->data(), kk, mm).noalias() += am.transpose() * go;
                                    }
                                });
    }
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
        throw ShapeError("matmul: incompatible shapes " + to_string(av.shape()) + " x " + to_string(bv.shape()));
    }
    const std::size_t batch = av.dim(0);
    const std::size_t rows = av.dim(1);
    const std::size_t k = av.dim(2);
    const std::size_t m = bv.dim(2);
    Tensor out = Tensor::uninitialized(Shape{batch, rows, m});
    const auto r = static_cast<Eigen::Index>(rows);
    const auto kk = static_cast<Eigen::Index>(k);
    const auto mm = static_cast<Eigen::Index>(m);
    for (std::size_t i = 0; i < batch; ++i) {
        detail::MutMap(out.data() + i * rows * m, r, mm).noalias() =
            detail::ConstMap(av.data() + i * rows * k, r, kk).lazyProduct(
                detail::ConstMap(bv.data() + i * k * m, kk, mm));
    }
    return a.graph().record("batched_matmul", std::move(out), {a.id(), b.id()},
                            [batch, r, kk, mm](Graph& gr, std::size_t self) {
                                const auto& in = gr.inputs(self);
                                const Tensor& go = gr.out_grad(self);
                                const Tensor& x = gr.value(in[0]);
                                const Tensor& y = gr.value(in[1]);
                                Tensor* ga = gr.grad_buffer(in[0]);
                                Tensor* gb = gr.grad_buffer(in[1]);
                                for (std::size_t i = 0; i < batch; ++i) {
                                    detail::ConstMap goi(go.data() + i * r * mm, r, mm);
                                    if (ga != nullptr) {
                                        detail::MutMap(ga->data() + i * r * kk, r, kk).noalias() +=
                                            goi.lazyProduct(detail::ConstMap(y.data() + i * kk * mm, kk, mm).transpose());
                                    }
                                    if (gb != nullptr) {
                                        detail::MutMap(gb->data() + i * kk * mm, kk, mm).noalias() +=
                                            detail::ConstMap(x.data() + i * r * kk, r, kk).transpose().lazyProduct(goi);
                                    }
                                }
                            });
}

// ---- reductions --------------------------------------------------------------------------

/// Sum of all elements, as a rank-0 tensor.
inline Var sum(Var a)
{
    const Tensor& av = a.value();
    double s = 0.0;
    for (double v : av.values()) {
        s += v;
    }
    return a.graph().record("sum", Tensor::scalar(s), {a.id()}, [](Graph& gr, std::size_t self) {
        Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
        const double go = gr.out_grad(self)[0];
        for (auto& v : gx->values()) {
            v += go;
        }
    });
}

inline Var mean(Var a)
{
    const auto n = a.value().size();
    if (n == 0) {
        throw ShapeError("mean of empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// Sum over the last axis; the result drops that axis.
inline Var sum_lastdim(Var a)
{
    const Tensor& av = a.value();
    if (av.rank() == 0) {
        throw ShapeError("sum_lastdim needs rank >= 1");
    }
    const std::size_t w = av.last_dim();
    const std::size_t rows = av.leading_size();
    Tensor out = Tensor::uninitialized(Shape(av.shape().begin(), av.shape().end() - 1));
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < w; ++c) {
            s += av[r * w + c];
        }
        out[r] = s;
    }
    return a.graph().record("sum_lastdim", std::move(out), {a.id()}, [w, rows](Graph& gr, std::size_t self) {
        Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
        const Tensor& go = gr.out_grad(self);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                (*gx)[r * w + c] += go[r];
            }
        }
    });
}

struct MinResult {
    Var value;
    std::vector<std::size_t> index;
};

/// Minimum over the last axis with its argmin; ties resolve to the lowest index and the
/// gradient flows to that element only.
inline MinResult min_reduce_with_index(Var a)
{
    const Tensor& av = a.value();
    if (av.rank() == 0 || av.last_dim() == 0) {
        throw ShapeError("min_reduce_with_index needs a non-empty last axis");
    }
    const std::size_t w = av.last_dim();
    const std::size_t rows = av.leading_size();
    Tensor out = Tensor::uninitialized(Shape(av.shape().begin(), av.shape().end() - 1));
    std::vector<std::size_t> index(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < w; ++c) {
            if (av[r * w + c] < av[r * w + best]) {
                best = c;
            }
        }
        index[r] = best;
        out[r] = av[r * w + best];
    }
    Var v = a.graph().record("min_reduce", std::move(out), {a.id()}, [index, w](Graph& gr, std::size_t self) {
        Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
        const Tensor& go = gr.out_grad(self);
        for (std::size_t r = 0; r < index.size(); ++r) {
            (*gx)[r * w + index[r]] += go[r];
        }
    });
    return {v, std::move(index)};
}

// ---- normalisation and attention primitives ---------------------------------------------

inline Var softmax_lastdim(Var a)
{
    const Tensor& av = a.value();
    if (av.rank() == 0) {
        throw ShapeError("softmax_lastdim needs rank >= 1");
    }
    const std::size_t w = av.last_dim();
    const std::size_t rows = av.leading_size();
    Tensor out = Tensor::uninitialized(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * w;
        double* y = out.data() + r * w;
        const double mx = *std::max_element(x, x + w);
        double s = 0.0;
        for (std::size_t c = 0; c < w; ++c) {
            y[c] = std::exp(x[c] - mx);
            s += y[c];
        }
        const double inv = 1.0 / s;
        for (std::size_t c = 0; c < w; ++c) {
            y[c] *= inv;
        }
    }
    return a.graph().record("softmax", std::move(out), {a.id()}, [w, rows](Graph& gr, std::size_t self) {
        Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
        const Tensor& y = gr.value(self);
        const Tensor& go = gr.out_grad(self);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < w; ++c) {
                dot += go[r * w + c] * y[r * w + c];
            }
            for (std::size_t c = 0; c < w; ++c) {
                (*gx)[r * w + c] += y[r * w + c] * (go[r * w + c] - dot);
            }
        }
    });
}

/// (x - mean) / sqrt(var + eps) over the last axis, without affine terms.
inline Var layer_norm_lastdim(Var a, double eps = 1e-5)
{
    const Tensor& av = a.value();
    if (av.rank() == 0) {
        throw ShapeError("layer_norm_lastdim needs rank >= 1");
    }
    const std::size_t w = av.last_dim();
    const std::size_t rows = av.leading_size();
    Tensor out = Tensor::uninitialized(av.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * w;
        double mu = 0.0;
        for (std::size_t c = 0; c < w; ++c) {
            mu += x[c];
        }
        mu /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t c = 0; c < w; ++c) {
            var += (x[c] - mu) * (x[c] - mu);
        }
        var /= static_cast<double>(w);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < w; ++c) {
            out[r * w + c] = (x[c] - mu) * inv_std[r];
        }
    }
    return a.graph().record("layer_norm", std::move(out), {a.id()},
                            [w, rows, inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
                                Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
                                const Tensor& y = gr.value(self);
                                const Tensor& go = gr.out_grad(self);
                                const double inv_w = 1.0 / static_cast<double>(w);
                                for (std::size_t r = 0; r < rows; ++r) {
                                    double mg = 0.0;
                                    double mgy = 0.0;
                                    for (std::size_t c = 0; c < w; ++c) {
                                        mg += go[r * w + c];
                                        mgy += go[r * w + c] * y[r * w + c];
                                    }
                                    mg *= inv_w;
                                    mgy *= inv_w;
                                    for (std::size_t c = 0; c < w; ++c) {
                                        (*gx)[r * w + c] +=
                                            inv_std[r] * (go[r * w + c] - mg - y[r * w + c] * mgy);
                                    }
                                }
                            });
}

/// Inverted dropout: kept entries are scaled by 1/(1-p) during training. With
/// train == false (or p == 0) the input node itself is returned.
inline Var dropout(Var a, double p, bool train, CounterRng& rng)
{
    if (!(p >= 0.0 && p < 1.0)) {
        throw std::invalid_argument("dropout probability must lie in [0, 1)");
    }
    if (!train || p == 0.0) {
        return a;
    }
    const Tensor& av = a.value();
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(av.size());
    Tensor out = Tensor::uninitialized(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] = av[i] * mask[i];
    }
    return a.graph().record("dropout", std::move(out), {a.id()}, [mask = std::move(mask)](Graph& gr, std::size_t self) {
        Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
        const Tensor& go = gr.out_grad(self);
        for (std::size_t i = 0; i < mask.size(); ++i) {
            (*gx)[i] += go[i] * mask[i];
        }
    });
}

// ---- custom row-wise functions -----------------------------------------------------------

/// Callback computing f (out_cols values) and the row-major Jacobian (out_cols x in_cols)
/// for a single input row.
using RowFunction = std::function<void(std::span<const double> x, std::span<double> f, std::span<double> jacobian)>;

/// Applies a vector function to each row of a (rows, in_cols) tensor; backward uses the
/// Jacobians captured during the forward pass.
inline Var map_rows(std::string_view name, Var a, std::size_t out_cols, const RowFunction& fn)
{
    const Tensor& av = a.value();
    if (av.rank() != 2) {
        throw ShapeError(std::string(name) + ": expected a (rows, cols) tensor, got " + to_string(av.shape()));
    }
    const std::size_t rows = av.dim(0);
    const std::size_t in_cols = av.dim(1);
    Tensor out(Shape{rows, out_cols});
    auto jac = std::make_shared<std::vector<double>>(rows * out_cols * in_cols);
    for (std::size_t r = 0; r < rows; ++r) {
        fn(std::span<const double>(av.data() + r * in_cols, in_cols),
           std::span<double>(out.data() + r * out_cols, out_cols),
           std::span<double>(jac->data() + r * out_cols * in_cols, out_cols * in_cols));
    }
    return a.graph().record(name, std::move(out), {a.id()},
                            [jac, rows, in_cols, out_cols](Graph& gr, std::size_t self) {
                                Tensor* gx = gr.grad_buffer(gr.inputs(self)[0]);
                                const Tensor& go = gr.out_grad(self);
                                for (std::size_t r = 0; r < rows; ++r) {
                                    const double* j = jac->data() + r * out_cols * in_cols;
                                    for (std::size_t o = 0; o < out_cols; ++o) {
                                        const double g = go[r * out_cols + o];
                                        if (g == 0.0) {
                                            continue;
                                        }
                                        for (std::size_t c = 0; c < in_cols; ++c) {
                                            (*gx)[r * in_cols + c] += g * j[o * in_cols + c];
                                        }
                                    }
                                }
                            });
}

/// Elementwise op with caller-supplied value and derivative rules.
template <class F, class D>
Var elementwise(std::string_view name, Var a, F f, D df)
{
    return detail::unary(name, a, std::move(f), [df](double x, double) { return df(x); });
}

}  // namespace coaction::ad
