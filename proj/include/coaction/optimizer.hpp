#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "coaction/autodiff.hpp"

namespace coaction {

struct AdamWConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

inline void validate(const AdamWConfig& c)
{
    if (!(c.lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0, 1)");
    if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0, 1)");
    if (!(c.eps > 0.0)) throw std::invalid_argument("eps must be positive");
    if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
}

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step() = 0;
    /// Writes the iterate meant for evaluation into the parameters.
    virtual void finalize() {}
    std::size_t steps() const noexcept { return t_; }

protected:
    std::size_t t_ = 0;
};

/// Adaptive moments with decoupled weight decay:
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
class AdamW : public Optimizer {
public:
    AdamW(std::vector<ad::Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg)
    {
        validate(cfg_);
        for (auto* p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }

    void step() override
    {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto w = params_[k]->value.values();
            const auto g = params_[k]->grad.values();
            auto m = m_[k].values();
            auto v = v_[k].values();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                w[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[i]);
            }
        }
    }

private:
    std::vector<ad::Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// Schedule-free variant: gradients are taken at y = (1 - beta1) z + beta1 x, z follows the
/// base step and x is the uniform average of the z iterates. Parameters hold y while
/// training; finalize() swaps in x.
class ScheduleFreeAdamW : public Optimizer {
public:
    ScheduleFreeAdamW(std::vector<ad::Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg)
    {
        validate(cfg_);
        for (auto* p : params_) {
            z_.push_back(p->value);
            x_.push_back(p->value);
            v_.emplace_back(p->value.shape());
        }
    }

    void step() override
    {
        ++t_;
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const double c = 1.0 / static_cast<double>(t_);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto y = params_[k]->value.values();
            const auto g = params_[k]->grad.values();
            auto z = z_[k].values();
            auto x = x_[k].values();
            auto v = v_[k].values();
            for (std::size_t i = 0; i < y.size(); ++i) {
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                z[i] -= cfg_.lr * (g[i] / (std::sqrt(v[i] / bc2) + cfg_.eps) + cfg_.weight_decay * y[i]);
                x[i] = (1.0 - c) * x[i] + c * z[i];
                y[i] = (1.0 - cfg_.beta1) * z[i] + cfg_.beta1 * x[i];
            }
        }
    }

    void finalize() override
    {
        for (std::size_t k = 0; k < params_.size(); ++k) {
            params_[k]->value = x_[k];
        }
    }

private:
    std::vector<ad::Parameter*> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> z_;
    std::vector<Tensor> x_;
    std::vector<Tensor> v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(std::vector<ad::Parameter*> params, const AdamWConfig& cfg,
                                                 bool schedule_free)
{
    if (schedule_free) {
        return std::make_unique<ScheduleFreeAdamW>(std::move(params), cfg);
    }
    return std::make_unique<AdamW>(std::move(params), cfg);
}

inline double global_grad_norm(const std::vector<ad::Parameter*>& params)
{
    double s = 0.0;
    for (const auto* p : params) {
        for (double g : p->grad.values()) {
            s += g * g;
        }
    }
    return std::sqrt(s);
}

/// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the factor applied.
inline double clip_gradients(const std::vector<ad::Parameter*>& params, double max_norm)
{
    if (!(max_norm > 0.0)) {
        throw std::invalid_argument("max_norm must be positive");
    }
    const double norm = global_grad_norm(params);
    if (!(norm > max_norm)) {
        return 1.0;
    }
    const double s = max_norm / norm;
    for (auto* p : params) {
        for (double& g : p->grad.values()) {
            g *= s;
        }
    }
    return s;
}

}  // namespace coaction
