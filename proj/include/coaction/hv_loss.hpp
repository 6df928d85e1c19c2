#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "coaction/autodiff.hpp"

namespace coaction {

inline constexpr double kDefaultReference = 3.5;

/// Volume of the positive orthant part of the unit m-ball: pi^(m/2) / (2^m Gamma(m/2 + 1)).
inline double hv_constant(std::size_t m)
{
    const double md = static_cast<double>(m);
    return std::pow(std::numbers::pi, md / 2.0) / (std::pow(2.0, md) * std::tgamma(md / 2.0 + 1.0));
}

struct LossContext {
    std::vector<double> r;
    std::size_t m = 0;
    double c_m = 0.0;
};

inline LossContext make_loss_context(std::vector<double> r)
{
    if (r.empty()) {
        throw std::invalid_argument("reference point must be nonempty");
    }
    for (double v : r) {
        if (!(v >= 1.0) || !std::isfinite(v)) {
            throw std::invalid_argument("reference point entries must be >= 1 in normalized space, got " +
                                        std::to_string(v));
        }
    }
    LossContext ctx;
    ctx.m = r.size();
    ctx.c_m = hv_constant(ctx.m);
    ctx.r = std::move(r);
    return ctx;
}

inline LossContext make_loss_context(std::size_t m, double reference = kDefaultReference)
{
    return make_loss_context(std::vector<double>(m, reference));
}

struct ProjectedDistance {
    ad::Var rho;                      // (B)
    std::vector<std::size_t> argmin;  // 0-based, lowest index on ties
};

/// rho_b = min_i (r_i - f_bi) / lambda_bi for f of shape (B, m) and lambda of shape (B, m).
inline ProjectedDistance projected_distance(ad::Var f, const Tensor& lambda, const LossContext& ctx)
{
    if (f.value().rank() != 2 || f.value().dim(1) != ctx.m || lambda.shape() != f.shape()) {
        throw ShapeError("projected_distance: objectives " + to_string(f.shape()) + ", preferences " +
                         to_string(lambda.shape()) + ", m = " + std::to_string(ctx.m));
    }
    for (double l : lambda.values()) {
        if (!(l >= 1e-6)) {
            throw DomainError("preference component " + std::to_string(l) + " below 1e-6; truncation was skipped");
        }
    }
    ad::Graph& g = f.graph();
    ad::Var gap = g.constant(Tensor::vector(ctx.r)) - f;
    auto m = ad::min_reduce_with_index(gap / g.constant(lambda));
    return {m.value, std::move(m.index)};
}

struct HvLoss {
    ad::Var loss;
    ProjectedDistance distance;
};

/// L = -c_m * mean_b(rho_b^m if rho_b >= 0 else rho_b)
inline HvLoss psl_hv1_loss(ad::Var f, const Tensor& lambda, const LossContext& ctx)
{
    if (f.value().rank() != 2 || f.value().dim(0) == 0) {
        throw ShapeError("psl_hv1_loss: batch must be a nonempty (B, m) tensor");
    }
    auto pd = projected_distance(f, lambda, ctx);
    const double md = static_cast<double>(ctx.m);
    auto shaped = ad::elementwise(
        "rho_power", pd.rho, [md](double x) { return x >= 0.0 ? std::pow(x, md) : x; },
        [md](double x) { return x >= 0.0 ? md * std::pow(x, md - 1.0) : 1.0; });
    return {ad::scale(ad::mean(shaped), -ctx.c_m), std::move(pd)};
}

}  // namespace coaction
