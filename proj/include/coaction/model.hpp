#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "coaction/autodiff.hpp"
#include "coaction/conditioning.hpp"
#include "coaction/rng.hpp"

namespace coaction {

enum class Backbone { transformer, mlp };

inline std::string to_string(Backbone b) { return b == Backbone::transformer ? "transformer" : "mlp"; }

inline Backbone parse_backbone(const std::string& s)
{
    if (s == "transformer") return Backbone::transformer;
    if (s == "mlp") return Backbone::mlp;
    throw std::invalid_argument("unknown backbone '" + s + "' (expected transformer or mlp)");
}

struct TaskSpec {
    std::string id;
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> lower;
    std::vector<double> upper;
    bool bounded = true;  // x = l + (u - l) sigmoid(z); otherwise z is emitted as is
};

struct ModelConfig {
    Backbone backbone = Backbone::transformer;
    std::size_t embed_dim = 128;
    std::size_t heads = 4;
    std::size_t ff_dim = 128;
    std::size_t encoder_layers = 1;
    double dropout = 0.1;
    std::size_t pool_hidden = 64;
    std::size_t mlp_hidden = 256;
    std::size_t d_task = kDefaultTaskDim;
    std::vector<TaskSpec> tasks;
    std::uint64_t seed = 0;

    std::size_t d_max() const
    {
        std::size_t d = 0;
        for (const auto& t : tasks) d = std::max(d, t.m);
        return d;
    }
    std::size_t input_dim() const { return d_task + d_max(); }
};

inline void validate(const ModelConfig& c)
{
    if (c.tasks.empty()) throw std::invalid_argument("model needs at least one task");
    if (c.embed_dim == 0 || c.heads == 0 || c.embed_dim % c.heads != 0) {
        throw std::invalid_argument("embed_dim must be a positive multiple of heads");
    }
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
    if (c.d_task < 2 || c.d_task % 2 != 0) throw std::invalid_argument("d_task must be even and >= 2");
    if (c.embed_dim % 2 != 0) throw std::invalid_argument("embed_dim must be even for the positional encoding");
    for (std::size_t i = 0; i < c.tasks.size(); ++i) {
        const auto& t = c.tasks[i];
        if (t.n == 0 || t.m == 0) throw std::invalid_argument("task '" + t.id + "' has empty dimensions");
        if (t.bounded && (t.lower.size() != t.n || t.upper.size() != t.n)) {
            throw std::invalid_argument("task '" + t.id + "' bounds do not match n");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (c.tasks[j].id == t.id) throw std::invalid_argument("duplicate task id '" + t.id + "'");
        }
    }
}

/// Standard sinusoidal position code, base 10000.
inline Tensor positional_encoding(std::size_t length, std::size_t dim)
{
    Tensor pe(Shape{length, dim});
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double a = static_cast<double>(pos) /
                             std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
            pe[pos * dim + 2 * i] = std::sin(a);
            pe[pos * dim + 2 * i + 1] = std::cos(a);
        }
    }
    return pe;
}

class ParetoModel {
public:
    explicit ParetoModel(ModelConfig cfg) : cfg_(std::move(cfg))
    {
        validate(cfg_);
        const std::size_t e = cfg_.embed_dim;
        const std::size_t in = cfg_.input_dim();
        if (cfg_.backbone == Backbone::transformer) {
            linear("input", 1, e);
            for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
                const std::string p = "encoder." + std::to_string(l) + ".";
                norm(p + "norm1", e);
                linear(p + "attn.q", e, e);
                linear(p + "attn.k", e, e);
                linear(p + "attn.v", e, e);
                linear(p + "attn.out", e, e);
                norm(p + "norm2", e);
                linear(p + "ff1", e, cfg_.ff_dim);
                linear(p + "ff2", cfg_.ff_dim, e);
            }
            norm("encoder.norm", e);
            linear("pool.hidden", e, cfg_.pool_hidden);
            linear("pool.score", cfg_.pool_hidden, 1);
            pe_ = positional_encoding(in, e);
        } else {
            linear("mlp.0", in, cfg_.mlp_hidden);
            linear("mlp.1", cfg_.mlp_hidden, cfg_.mlp_hidden);
            linear("mlp.2", cfg_.mlp_hidden, cfg_.mlp_hidden);
            linear("mlp.3", cfg_.mlp_hidden, e);
        }
        for (const auto& t : cfg_.tasks) {
            linear("head." + t.id, e, t.n);
        }
    }

    ParetoModel(const ParetoModel&) = delete;
    ParetoModel& operator=(const ParetoModel&) = delete;

    const ModelConfig& config() const noexcept { return cfg_; }

    /// Positional table added to the token embeddings, (d_task + d_max, embed_dim).
    const Tensor& positional_table() const noexcept { return pe_; }
    void set_positional_table(Tensor pe)
    {
        if (pe.shape() != pe_.shape()) throw ShapeError("positional table shape mismatch");
        pe_ = std::move(pe);
    }

    /// Xavier-uniform weights, zero biases, unit norm gains.
    void init(CounterRng& rng)
    {
        for (auto& p : params_) {
            const auto& name = p.name;
            if (name.ends_with(".weight")) {
                const double fan_in = static_cast<double>(p.value.dim(0));
                const double fan_out = static_cast<double>(p.value.dim(1));
                const double bound = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& v : p.value.values()) v = rng.uniform(-bound, bound);
            } else if (name.ends_with(".gain")) {
                p.value.fill(1.0);
            } else {
                p.value.fill(0.0);
            }
        }
    }

    std::vector<ad::Parameter*> parameters()
    {
        std::vector<ad::Parameter*> out;
        for (auto& p : params_) out.push_back(&p);
        return out;
    }
    std::vector<const ad::Parameter*> parameters() const
    {
        std::vector<const ad::Parameter*> out;
        for (const auto& p : params_) out.push_back(&p);
        return out;
    }

    ad::Parameter& parameter(const std::string& name)
    {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
        return params_[it->second];
    }
    const ad::Parameter& parameter(const std::string& name) const
    {
        return const_cast<ParetoModel*>(this)->parameter(name);
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.size();
        return n;
    }

    void zero_grad()
    {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t task_index(const std::string& id) const
    {
        for (std::size_t i = 0; i < cfg_.tasks.size(); ++i) {
            if (cfg_.tasks[i].id == id) return i;
        }
        throw std::out_of_range("unknown task '" + id + "'");
    }

    /// Shared representation (B, embed_dim) for input rows (B, d_task + d_max).
    ad::Var backbone(ad::Graph& g, const Tensor& input, bool train, CounterRng& rng)
    {
        if (input.rank() != 2 || input.dim(1) != cfg_.input_dim()) {
            throw ShapeError("model input must be (batch, " + std::to_string(cfg_.input_dim()) + "), got " +
                             to_string(input.shape()));
        }
        ad::Var x = g.constant(input);
        return cfg_.backbone == Backbone::transformer ? transformer(g, x, train, rng) : mlp(g, x);
    }

    /// Head pre-activation z (B, n_t) from a backbone representation.
    ad::Var head(ad::Graph& g, ad::Var h, std::size_t task)
    {
        if (task >= cfg_.tasks.size()) {
            throw std::out_of_range("task index " + std::to_string(task) + " is not registered");
        }
        ad::ScopeGuard scope(g, "head." + cfg_.tasks[task].id);
        return apply_linear(g, h, "head." + cfg_.tasks[task].id);
    }

    /// Decision vectors (B, n_t), mapped into the task bounds when the task is bounded.
    ad::Var forward(ad::Graph& g, const Tensor& input, std::size_t task, bool train, CounterRng& rng)
    {
        if (task >= cfg_.tasks.size()) {
            throw std::out_of_range("task index " + std::to_string(task) + " is not registered");
        }
        ad::Var z = head(g, backbone(g, input, train, rng), task);
        const TaskSpec& t = cfg_.tasks[task];
        if (!t.bounded) {
            return z;
        }
        std::vector<double> width(t.n);
        for (std::size_t i = 0; i < t.n; ++i) width[i] = t.upper[i] - t.lower[i];
        ad::ScopeGuard scope(g, "output." + t.id);
        return ad::sigmoid(z) * g.constant(Tensor::vector(width)) + g.constant(Tensor::vector(t.lower));
    }

private:
    void add(std::string name, Shape shape)
    {
        index_[name] = params_.size();
        params_.emplace_back(std::move(name), Tensor(std::move(shape)));
    }
    void linear(const std::string& name, std::size_t in, std::size_t out)
    {
        add(name + ".weight", {in, out});
        add(name + ".bias", {out});
    }
    void norm(const std::string& name, std::size_t dim)
    {
        add(name + ".gain", {dim});
        add(name + ".offset", {dim});
    }

    ad::Var bind(ad::Graph& g, const std::string& name) { return g.parameter(parameter(name)); }

    ad::Var apply_linear(ad::Graph& g, ad::Var x, const std::string& name)
    {
        return ad::matmul(x, bind(g, name + ".weight")) + bind(g, name + ".bias");
    }

    ad::Var apply_norm(ad::Graph& g, ad::Var x, const std::string& name)
    {
        return ad::layer_norm_lastdim(x) * bind(g, name + ".gain") + bind(g, name + ".offset");
    }

    ad::Var transformer(ad::Graph& g, ad::Var x, bool train, CounterRng& rng)
    {
        const std::size_t b = x.value().dim(0);
        const std::size_t len = x.value().dim(1);
        const std::size_t e = cfg_.embed_dim;
        const std::size_t h = cfg_.heads;
        const std::size_t dk = e / h;
        const double p = cfg_.dropout;

        ad::Var t;
        {
            ad::ScopeGuard scope(g, "input");
            t = apply_linear(g, ad::reshape(x, {b, len, 1}), "input") + g.constant(pe_);
            t = ad::dropout(t, p, train, rng);
        }
        for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) {
            const std::string pre = "encoder." + std::to_string(l) + ".";
            {
                ad::ScopeGuard scope(g, pre + "attn");
                ad::Var n1 = apply_norm(g, t, pre + "norm1");
                auto split = [&](ad::Var v) {
                    return ad::reshape(ad::permute(ad::reshape(v, {b, len, h, dk}), {0, 2, 1, 3}), {b * h, len, dk});
                };
                ad::Var q = split(apply_linear(g, n1, pre + "attn.q"));
                ad::Var k = split(apply_linear(g, n1, pre + "attn.k"));
                ad::Var v = split(apply_linear(g, n1, pre + "attn.v"));
                ad::Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
                ad::Var attn = ad::dropout(ad::softmax_lastdim(scores), p, train, rng);
                ad::Var ctx = ad::matmul(attn, v);
                ctx = ad::reshape(ad::permute(ad::reshape(ctx, {b, h, len, dk}), {0, 2, 1, 3}), {b, len, e});
                t = t + ad::dropout(apply_linear(g, ctx, pre + "attn.out"), p, train, rng);
            }
            {
                ad::ScopeGuard scope(g, pre + "ff");
                ad::Var n2 = apply_norm(g, t, pre + "norm2");
                ad::Var f = ad::dropout(ad::relu(apply_linear(g, n2, pre + "ff1")), p, train, rng);
                t = t + ad::dropout(apply_linear(g, f, pre + "ff2"), p, train, rng);
            }
        }
        // Without a final norm the residual stream grows whenever some head is pushed toward a
        // bound, dragging every other head into sigmoid saturation.
        t = apply_norm(g, t, "encoder.norm");
        ad::ScopeGuard scope(g, "pool");
        ad::Var s = apply_linear(g, ad::tanh(apply_linear(g, t, "pool.hidden")), "pool.score");
        ad::Var w = ad::softmax_lastdim(ad::reshape(s, {b, len}));
        return ad::reshape(ad::matmul(ad::reshape(w, {b, 1, len}), t), {b, e});
    }

    ad::Var mlp(ad::Graph& g, ad::Var x)
    {
        ad::ScopeGuard scope(g, "mlp");
        ad::Var hcur = x;
        for (int i = 0; i < 3; ++i) {
            hcur = ad::relu(apply_linear(g, hcur, "mlp." + std::to_string(i)));
        }
        return apply_linear(g, hcur, "mlp.3");
    }

    ModelConfig cfg_;
    std::deque<ad::Parameter> params_;
    std::map<std::string, std::size_t> index_;
    Tensor pe_;
};

}  // namespace coaction
