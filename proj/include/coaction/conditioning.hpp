#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "coaction/rng.hpp"
#include "coaction/tensor.hpp"

namespace coaction {

inline constexpr std::size_t kDefaultTaskDim = 6;
inline constexpr double kTruncLow = 0.01;
inline constexpr double kTruncHigh = 0.99;

/// Fixed sinusoidal code for task t (1-based). t = 0 is accepted so the formula can be probed.
inline std::vector<double> embed_task(std::size_t t, std::size_t d = kDefaultTaskDim)
{
    if (d < 2 || d % 2 != 0) {
        throw std::invalid_argument("task embedding dimension must be even and >= 2, got " + std::to_string(d));
    }
    std::vector<double> e(d);
    for (std::size_t i = 0; i < d / 2; ++i) {
        const double freq = std::pow(50.0, static_cast<double>(2 * i) / static_cast<double>(d));
        const double a = static_cast<double>(t) / freq;
        e[2 * i] = std::sin(a);
        e[2 * i + 1] = std::cos(a);
    }
    return e;
}

struct PreferenceSample {
    std::vector<double> theta;
    std::vector<double> lambda;
    std::vector<double> lambda_trunc;
};

inline void check_objective_count(std::size_t m)
{
    if (m != 2 && m != 3) {
        throw std::invalid_argument("preference sampling supports 2 or 3 objectives, got " + std::to_string(m));
    }
}

/// Polar map from theta in [0, pi/2]^(m-1) to the positive unit sphere.
inline std::vector<double> lambda_from_theta(const std::vector<double>& theta)
{
    const std::size_t m = theta.size() + 1;
    check_objective_count(m);
    if (m == 2) {
        return {std::sin(theta[0]), std::cos(theta[0])};
    }
    const double s1 = std::sin(theta[0]);
    return {s1 * std::sin(theta[1]), s1 * std::cos(theta[1]), std::cos(theta[0])};
}

inline std::vector<double> truncate_preference(std::vector<double> lambda)
{
    for (auto& v : lambda) {
        v = std::clamp(v, kTruncLow, kTruncHigh);
    }
    return lambda;
}

inline PreferenceSample make_preference(std::vector<double> theta)
{
    PreferenceSample p;
    p.lambda = lambda_from_theta(theta);
    p.lambda_trunc = truncate_preference(p.lambda);
    p.theta = std::move(theta);
    return p;
}

/// The j-th standard basis vector as a preference, with the polar angles that produce it.
inline PreferenceSample extreme_preference(std::size_t j, std::size_t m)
{
    check_objective_count(m);
    if (j >= m) {
        throw std::out_of_range("basis index out of range");
    }
    constexpr double half_pi = std::numbers::pi / 2.0;
    std::vector<double> theta;
    if (m == 2) {
        theta = {j == 0 ? half_pi : 0.0};
    } else {
        theta = {j == 2 ? 0.0 : half_pi, j == 0 ? half_pi : 0.0};
    }
    PreferenceSample p;
    p.theta = theta;
    p.lambda.assign(m, 0.0);
    p.lambda[j] = 1.0;
    p.lambda_trunc = truncate_preference(p.lambda);
    return p;
}

inline std::vector<PreferenceSample> sample_preferences(std::size_t m, std::size_t batch, CounterRng& rng)
{
    check_objective_count(m);
    if (batch == 0) {
        throw std::invalid_argument("preference batch must be nonempty");
    }
    std::vector<PreferenceSample> out;
    out.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<double> theta(m - 1);
        for (auto& t : theta) {
            t = rng.uniform(0.0, std::numbers::pi / 2.0);
        }
        out.push_back(make_preference(std::move(theta)));
    }
    return out;
}

/// Appends the m basis vectors when requested, then clamps every lambda to [0.01, 0.99].
/// Clamped vectors are not renormalized.
inline std::vector<PreferenceSample> apply_extreme_and_truncate(std::vector<PreferenceSample> batch, std::size_t m,
                                                                bool use_extreme)
{
    if (batch.empty()) {
        throw std::invalid_argument("preference batch must be nonempty");
    }
    if (use_extreme) {
        for (std::size_t j = 0; j < m; ++j) {
            batch.push_back(extreme_preference(j, m));
        }
    }
    for (auto& p : batch) {
        p.lambda_trunc = truncate_preference(p.lambda);
    }
    return batch;
}

/// [e_t, lambda_trunc, zeros(d_max - m_t)]
inline std::vector<double> assemble_input(const std::vector<double>& embedding, const PreferenceSample& p,
                                          std::size_t m_t, std::size_t d_max)
{
    if (m_t > d_max) {
        throw std::invalid_argument("task has " + std::to_string(m_t) + " objectives but d_max is " +
                                    std::to_string(d_max));
    }
    if (p.lambda_trunc.size() != m_t) {
        throw ShapeError("preference has " + std::to_string(p.lambda_trunc.size()) + " entries, task expects " +
                         std::to_string(m_t));
    }
    std::vector<double> v(embedding);
    v.insert(v.end(), p.lambda_trunc.begin(), p.lambda_trunc.end());
    v.resize(embedding.size() + d_max, 0.0);
    return v;
}

/// Stacks assemble_input rows into a (batch, d + d_max) tensor.
inline Tensor assemble_batch(const std::vector<double>& embedding, const std::vector<PreferenceSample>& batch,
                             std::size_t m_t, std::size_t d_max)
{
    const std::size_t width = embedding.size() + d_max;
    Tensor out(Shape{batch.size(), width});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto row = assemble_input(embedding, batch[b], m_t, d_max);
        std::copy(row.begin(), row.end(), out.data() + b * width);
    }
    return out;
}

/// Truncated lambdas as a (batch, m) tensor for the loss.
inline Tensor lambda_matrix(const std::vector<PreferenceSample>& batch)
{
    const std::size_t m = batch.front().lambda_trunc.size();
    Tensor out(Shape{batch.size(), m});
    for (std::size_t b = 0; b < batch.size(); ++b) {
        std::copy(batch[b].lambda_trunc.begin(), batch[b].lambda_trunc.end(), out.data() + b * m);
    }
    return out;
}

}  // namespace coaction
