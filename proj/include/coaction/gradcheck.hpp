#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "coaction/autodiff.hpp"

namespace coaction::ad {

/// Scalar-valued function of one tensor, expressed as graph operations.
using GraphFunction = std::function<Var(Graph&, Var)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

/// Compares backward() against central differences (f(x+h e_i) - f(x-h e_i)) / 2h.
/// Relative error per coordinate is |analytic - numeric| / (|analytic| + 1e-8).
/// An empty coordinate list checks every coordinate of x.
inline GradCheckResult finite_diff_report(const GraphFunction& f, const Tensor& x, double h = 1e-5,
                                          std::span<const std::size_t> coordinates = {})
{
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite difference step must be positive");
    }
    auto evaluate = [&](const Tensor& point) {
        Graph g;
        const double v = f(g, g.constant(point)).value().item();
        if (!std::isfinite(v)) {
            throw DomainError("finite_diff_check: function value is not finite");
        }
        return v;
    };

    Graph g;
    Var in = g.variable(x);
    Var out = f(g, in);
    if (!std::isfinite(out.value().item())) {
        throw DomainError("finite_diff_check: function value is not finite");
    }
    g.backward(out);
    const Tensor analytic = g.has_grad(in) ? g.grad(in) : Tensor(x.shape());

    std::vector<std::size_t> coords(coordinates.begin(), coordinates.end());
    if (coords.empty()) {
        coords.resize(x.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
    }

    GradCheckResult result;
    Tensor probe = x;
    for (auto i : coords) {
        const double saved = probe[i];
        probe[i] = saved + h;
        const double up = evaluate(probe);
        probe[i] = saved - h;
        const double down = evaluate(probe);
        probe[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
        result.analytic.push_back(analytic[i]);
        result.numeric.push_back(numeric);
        if (err > result.max_rel_error || result.analytic.size() == 1) {
            result.max_rel_error = err;
            result.worst_coordinate = i;
        }
    }
    return result;
}

inline double finite_diff_check(const GraphFunction& f, const Tensor& x, double h = 1e-5,
                                std::span<const std::size_t> coordinates = {})
{
    return finite_diff_report(f, x, h, coordinates).max_rel_error;
}

}  // namespace coaction::ad
