#pragma once

// Benchmark multi-objective problems. Objectives are templates over the scalar type so the
// same code yields values (double) and exact Jacobians (Jet<N>).
//
//   zdt1, zdt2         n = 30, x in [0,1]^n, analytic front
//   vlmop1, vlmop2     n = 6,  x in [-2,2]^n, analytic front
//   re21, re24, re37   RE suite (four bar truss, hatch cover, rocket injector)
//   bbob_f1_fk         D = 10, x in [-5,5]^D, sphere paired with f1..f5 (no COCO transforms)

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "coaction/autodiff.hpp"
#include "coaction/jet.hpp"
#include "coaction/rng.hpp"

namespace coaction {

class UnsupportedError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class UnknownProblemError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ProblemDescriptor {
    std::string id;
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<double> ideal;
    std::vector<double> nadir;
    bool has_analytic_front = false;
};

/// Raw objectives plus two affine rescalings by (ideal, nadir): `scaled` is unclamped,
/// `normalized` is clamped to [0, 1].
struct ObjectiveValue {
    std::vector<double> raw;
    std::vector<double> scaled;
    std::vector<double> normalized;
};

class Problem {
public:
    explicit Problem(ProblemDescriptor d) : desc_(std::move(d)) {}
    virtual ~Problem() = default;

    const ProblemDescriptor& descriptor() const noexcept { return desc_; }
    const std::string& id() const noexcept { return desc_.id; }
    std::size_t n() const noexcept { return desc_.n; }
    std::size_t m() const noexcept { return desc_.m; }

    virtual void raw(std::span<const double> x, std::span<double> f) const = 0;

    /// Objective values and the row-major (m x n) Jacobian.
    virtual void raw_with_jacobian(std::span<const double> x, std::span<double> f, std::span<double> jac) const = 0;

    /// k points of the normalized Pareto front, evenly spaced in its natural parameter.
    virtual std::vector<std::vector<double>> front(std::size_t k) const
    {
        (void)k;
        throw UnsupportedError("problem " + desc_.id + " has no analytic Pareto front");
    }

    void set_normalizers(std::vector<double> ideal, std::vector<double> nadir)
    {
        if (ideal.size() != desc_.m || nadir.size() != desc_.m) {
            throw std::invalid_argument("normalizer size differs from objective count of " + desc_.id);
        }
        for (std::size_t j = 0; j < desc_.m; ++j) {
            if (!(nadir[j] > ideal[j])) {
                throw std::invalid_argument("nadir must exceed ideal for every objective of " + desc_.id);
            }
        }
        desc_.ideal = std::move(ideal);
        desc_.nadir = std::move(nadir);
    }

private:
    ProblemDescriptor desc_;
};

namespace detail {

template <class Derived, std::size_t N, std::size_t M>
class StaticProblem : public Problem {
public:
    using Problem::Problem;

    void raw(std::span<const double> x, std::span<double> f) const override
    {
        check(x, f);
        std::array<double, N> xs{};
        std::copy_n(x.begin(), N, xs.begin());
        std::array<double, M> fs{};
        static_cast<const Derived&>(*this).objectives(xs, fs);
        std::copy(fs.begin(), fs.end(), f.begin());
    }

    void raw_with_jacobian(std::span<const double> x, std::span<double> f, std::span<double> jac) const override
    {
        check(x, f);
        if (jac.size() != N * M) {
            throw ShapeError("jacobian buffer of " + id() + " must hold " + std::to_string(N * M) + " values");
        }
        std::array<Jet<N>, N> xs{};
        for (std::size_t i = 0; i < N; ++i) {
            xs[i] = Jet<N>::variable(x[i], i);
        }
        std::array<Jet<N>, M> fs{};
        static_cast<const Derived&>(*this).objectives(xs, fs);
        for (std::size_t j = 0; j < M; ++j) {
            f[j] = fs[j].v;
            std::copy(fs[j].d.begin(), fs[j].d.end(), jac.begin() + static_cast<std::ptrdiff_t>(j * N));
        }
    }

private:
    void check(std::span<const double> x, std::span<double> f) const
    {
        if (x.size() != N) {
            throw ShapeError(id() + " expects " + std::to_string(N) + " decision variables, got " +
                             std::to_string(x.size()));
        }
        if (f.size() != M) {
            throw ShapeError(id() + " has " + std::to_string(M) + " objectives, buffer holds " +
                             std::to_string(f.size()));
        }
    }
};

inline ProblemDescriptor box(std::string id, std::size_t n, std::size_t m, double lo, double hi, bool analytic)
{
    ProblemDescriptor d;
    d.id = std::move(id);
    d.n = n;
    d.m = m;
    d.lower.assign(n, lo);
    d.upper.assign(n, hi);
    d.has_analytic_front = analytic;
    return d;
}

inline ProblemDescriptor unit_normalized(ProblemDescriptor d)
{
    d.ideal.assign(d.m, 0.0);
    d.nadir.assign(d.m, 1.0);
    return d;
}

inline std::vector<double> linspace01(std::size_t k)
{
    if (k < 2) {
        throw std::invalid_argument("front sampling needs k >= 2");
    }
    std::vector<double> t(k);
    for (std::size_t i = 0; i < k; ++i) {
        t[i] = static_cast<double>(i) / static_cast<double>(k - 1);
    }
    return t;
}

}  // namespace detail

// ---- ZDT -------------------------------------------------------------------------------

class Zdt1 : public detail::StaticProblem<Zdt1, 30, 2> {
public:
    Zdt1() : StaticProblem(detail::unit_normalized(detail::box("zdt1", 30, 2, 0.0, 1.0, true))) {}

    template <class T>
    void objectives(const std::array<T, 30>& x, std::array<T, 2>& f) const
    {
        using std::sqrt;
        T s = x[1];
        for (std::size_t i = 2; i < 30; ++i) s = s + x[i];
        const T g = 1.0 + s * (9.0 / 29.0);
        f[0] = x[0];
        f[1] = g * (1.0 - sqrt(x[0] / g));
    }

    std::vector<std::vector<double>> front(std::size_t k) const override
    {
        std::vector<std::vector<double>> pts;
        for (double a : detail::linspace01(k)) pts.push_back({a, 1.0 - std::sqrt(a)});
        return pts;
    }
};

class Zdt2 : public detail::StaticProblem<Zdt2, 30, 2> {
public:
    Zdt2() : StaticProblem(detail::unit_normalized(detail::box("zdt2", 30, 2, 0.0, 1.0, true))) {}

    template <class T>
    void objectives(const std::array<T, 30>& x, std::array<T, 2>& f) const
    {
        T s = x[1];
        for (std::size_t i = 2; i < 30; ++i) s = s + x[i];
        const T g = 1.0 + s * (9.0 / 29.0);
        const T q = x[0] / g;
        f[0] = x[0];
        f[1] = g * (1.0 - q * q);
    }

    std::vector<std::vector<double>> front(std::size_t k) const override
    {
        std::vector<std::vector<double>> pts;
        for (double a : detail::linspace01(k)) pts.push_back({a, 1.0 - a * a});
        return pts;
    }
};

// ---- VLMOP -----------------------------------------------------------------------------

/// n-dimensional VLMOP1: f1 = sum x^2 / 4n, f2 = sum (x-2)^2 / 4n on [-2,2]^n.
/// The front (all x_i = s in [0,2]) satisfies sqrt(f1) + sqrt(f2) = 1.
class Vlmop1 : public detail::StaticProblem<Vlmop1, 6, 2> {
public:
    Vlmop1() : StaticProblem(detail::unit_normalized(detail::box("vlmop1", 6, 2, -2.0, 2.0, true))) {}

    template <class T>
    void objectives(const std::array<T, 6>& x, std::array<T, 2>& f) const
    {
        T a = x[0] * x[0];
        T b = (x[0] - 2.0) * (x[0] - 2.0);
        for (std::size_t i = 1; i < 6; ++i) {
            a = a + x[i] * x[i];
            b = b + (x[i] - 2.0) * (x[i] - 2.0);
        }
        f[0] = a * (1.0 / 24.0);
        f[1] = b * (1.0 / 24.0);
    }

    std::vector<std::vector<double>> front(std::size_t k) const override
    {
        std::vector<std::vector<double>> pts;
        for (double t : detail::linspace01(k)) {
            const double s = 2.0 * t;
            pts.push_back({s * s / 4.0, (s - 2.0) * (s - 2.0) / 4.0});
        }
        return pts;
    }
};

class Vlmop2 : public detail::StaticProblem<Vlmop2, 6, 2> {
public:
    Vlmop2() : StaticProblem(detail::unit_normalized(detail::box("vlmop2", 6, 2, -2.0, 2.0, true))) {}

    template <class T>
    void objectives(const std::array<T, 6>& x, std::array<T, 2>& f) const
    {
        using std::exp;
        const double c = 1.0 / std::sqrt(6.0);
        T a = (x[0] - c) * (x[0] - c);
        T b = (x[0] + c) * (x[0] + c);
        for (std::size_t i = 1; i < 6; ++i) {
            a = a + (x[i] - c) * (x[i] - c);
            b = b + (x[i] + c) * (x[i] + c);
        }
        f[0] = 1.0 - exp(-a);
        f[1] = 1.0 - exp(-b);
    }

    std::vector<std::vector<double>> front(std::size_t k) const override
    {
        std::vector<std::vector<double>> pts;
        for (double t : detail::linspace01(k)) {
            const double u = 2.0 * t;
            pts.push_back({1.0 - std::exp(-u * u), 1.0 - std::exp(-(2.0 - u) * (2.0 - u))});
        }
        return pts;
    }
};

// ---- RE suite --------------------------------------------------------------------------

/// Four bar truss design.
class Re21 : public detail::StaticProblem<Re21, 4, 2> {
public:
    Re21() : StaticProblem(descriptor_()) {}

    template <class T>
    void objectives(const std::array<T, 4>& x, std::array<T, 2>& f) const
    {
        using std::sqrt;
        constexpr double F = 10.0;
        constexpr double E = 2.0e5;
        constexpr double L = 200.0;
        const double r2 = std::numbers::sqrt2;
        f[0] = L * (2.0 * x[0] + r2 * x[1] + sqrt(x[2]) + x[3]);
        f[1] = (F * L / E) * (2.0 / x[0] + 2.0 * r2 / x[1] - 2.0 * r2 / x[2] + 2.0 / x[3]);
    }

private:
    static ProblemDescriptor descriptor_()
    {
        auto d = detail::box("re21", 4, 2, 1.0, 3.0, false);
        d.lower = {1.0, std::numbers::sqrt2, std::numbers::sqrt2, 1.0};
        return d;
    }
};

/// Hatch cover design; the second objective is the summed violation of the four
/// original constraints.
class Re24 : public detail::StaticProblem<Re24, 2, 2> {
public:
    Re24() : StaticProblem(descriptor_()) {}

    template <class T>
    void objectives(const std::array<T, 2>& x, std::array<T, 2>& f) const
    {
        constexpr double E = 700000.0;
        constexpr double sigma_b_max = 700.0;
        constexpr double tau_max = 450.0;
        constexpr double delta_max = 1.5;
        const T sigma_k = (E * x[0] * x[0]) / 100.0;
        const T sigma_b = 4500.0 / (x[0] * x[1]);
        const T tau = 1800.0 / x[1];
        const T delta = (56.2 * 10000.0) / (E * x[0] * x[1] * x[1]);
        f[0] = x[0] + 120.0 * x[1];
        f[1] = positive_part(sigma_b / sigma_b_max - 1.0) + positive_part(tau / tau_max - 1.0) +
               positive_part(delta / delta_max - 1.0) + positive_part(sigma_b / sigma_k - 1.0);
    }

private:
    static ProblemDescriptor descriptor_()
    {
        auto d = detail::box("re24", 2, 2, 0.5, 4.0, false);
        d.upper = {4.0, 50.0};
        return d;
    }
};

/// Rocket injector design (response-surface objectives).
class Re37 : public detail::StaticProblem<Re37, 4, 3> {
public:
    Re37() : StaticProblem(detail::box("re37", 4, 3, 0.0, 1.0, false)) {}

    template <class T>
    void objectives(const std::array<T, 4>& x, std::array<T, 3>& f) const
    {
        const T& a = x[0];
        const T& ha = x[1];
        const T& oa = x[2];
        const T& optt = x[3];
        f[0] = 0.692 + 0.477 * a - 0.687 * ha - 0.080 * oa - 0.0650 * optt - 0.167 * a * a - 0.0129 * ha * a +
               0.0796 * ha * ha - 0.0634 * oa * a - 0.0257 * oa * ha + 0.0877 * oa * oa - 0.0521 * optt * a +
               0.00156 * optt * ha + 0.00198 * optt * oa + 0.0184 * optt * optt;
        f[1] = 0.153 - 0.322 * a + 0.396 * ha + 0.424 * oa + 0.0226 * optt + 0.175 * a * a + 0.0185 * ha * a -
               0.0701 * ha * ha - 0.251 * oa * a + 0.179 * oa * ha + 0.0150 * oa * oa + 0.0134 * optt * a +
               0.0296 * optt * ha + 0.0752 * optt * oa + 0.0192 * optt * optt;
        f[2] = 0.370 - 0.205 * a + 0.0307 * ha + 0.108 * oa + 1.019 * optt - 0.135 * a * a + 0.0141 * ha * a +
               0.0998 * ha * ha + 0.208 * oa * a - 0.0301 * oa * ha - 0.226 * oa * oa + 0.353 * optt * a -
               0.0497 * optt * oa - 0.423 * optt * optt + 0.202 * ha * a * a - 0.281 * oa * a * a -
               0.342 * ha * ha * a - 0.245 * ha * ha * oa + 0.281 * oa * oa * ha - 0.184 * optt * optt * a -
               0.281 * ha * a * oa;
    }
};

// ---- simplified bbob-biobj pairs ---------------------------------------------------------

namespace bbob {

inline constexpr std::size_t kDim = 10;

/// Optimum of the shared sphere component.
inline std::array<double, kDim> first_optimum()
{
    return {-2.0, -1.6, -1.2, -2.0, -1.6, -1.2, -2.0, -1.6, -1.2, -2.0};
}

/// Optimum of the paired component (f5 uses its sign pattern: optimum at 5 * sign).
inline std::array<double, kDim> second_optimum()
{
    return {2.0, 1.6, 1.2, 0.8, 2.0, 1.6, 1.2, 0.8, 2.0, 1.6};
}

inline double axis_weight(std::size_t i, double exponent)
{
    return std::pow(10.0, exponent * static_cast<double>(i) / static_cast<double>(kDim - 1));
}

template <class T>
T sphere(const std::array<T, kDim>& x, const std::array<double, kDim>& o)
{
    T s = (x[0] - o[0]) * (x[0] - o[0]);
    for (std::size_t i = 1; i < kDim; ++i) s = s + (x[i] - o[i]) * (x[i] - o[i]);
    return s;
}

template <class T>
T ellipsoid(const std::array<T, kDim>& x, const std::array<double, kDim>& o)
{
    T s(0.0);
    for (std::size_t i = 0; i < kDim; ++i) s = s + axis_weight(i, 6.0) * (x[i] - o[i]) * (x[i] - o[i]);
    return s;
}

template <class T>
T rastrigin_of(const std::array<T, kDim>& z)
{
    using std::cos;
    T s(10.0 * static_cast<double>(kDim));
    for (std::size_t i = 0; i < kDim; ++i) s = s - 10.0 * cos(2.0 * std::numbers::pi * z[i]) + z[i] * z[i];
    return s;
}

template <class T>
T rastrigin(const std::array<T, kDim>& x, const std::array<double, kDim>& o)
{
    std::array<T, kDim> z;
    for (std::size_t i = 0; i < kDim; ++i) z[i] = x[i] - o[i];
    return rastrigin_of(z);
}

/// Asymmetric Rastrigin: axis scaling 10^(0.5 i/(D-1)), times 10 for positive offsets on
/// even (0-based) axes.
template <class T>
T bueche_rastrigin(const std::array<T, kDim>& x, const std::array<double, kDim>& o)
{
    std::array<T, kDim> z;
    for (std::size_t i = 0; i < kDim; ++i) {
        const T zi = x[i] - o[i];
        double s = axis_weight(i, 0.5);
        if (i % 2 == 0 && value_of(zi) > 0.0) s *= 10.0;
        z[i] = s * zi;
    }
    return rastrigin_of(z);
}

/// Linear slope with optimum at the box corner 5 * sign(o).
template <class T>
T linear_slope(const std::array<T, kDim>& x, const std::array<double, kDim>& o)
{
    T s(0.0);
    for (std::size_t i = 0; i < kDim; ++i) {
        const double si = (o[i] >= 0.0 ? 1.0 : -1.0) * axis_weight(i, 1.0);
        s = s + (5.0 * std::abs(si) - si * x[i]);
    }
    return s;
}

}  // namespace bbob

class BbobPair : public detail::StaticProblem<BbobPair, bbob::kDim, 2> {
public:
    explicit BbobPair(int second)
        : StaticProblem(detail::box("bbob_f1_f" + std::to_string(second), bbob::kDim, 2, -5.0, 5.0, false)),
          second_(second)
    {
        if (second < 1 || second > 5) {
            throw UnknownProblemError("bbob pair index must be in 1..5");
        }
    }

    template <class T>
    void objectives(const std::array<T, bbob::kDim>& x, std::array<T, 2>& f) const
    {
        const auto o1 = bbob::first_optimum();
        const auto o2 = bbob::second_optimum();
        f[0] = bbob::sphere(x, o1);
        switch (second_) {
        case 1: f[1] = bbob::sphere(x, o2); break;
        case 2: f[1] = bbob::ellipsoid(x, o2); break;
        case 3: f[1] = bbob::rastrigin(x, o2); break;
        case 4: f[1] = bbob::bueche_rastrigin(x, o2); break;
        default: f[1] = bbob::linear_slope(x, o2); break;
        }
    }

    int second() const noexcept { return second_; }

private:
    int second_;
};

// ---- normalization, registry, graph evaluation -------------------------------------------

struct Normalizers {
    std::vector<double> ideal;
    std::vector<double> nadir;
};

/// Componentwise min/max of raw objectives over uniform samples in the box, widened by 1%
/// of the span on each side.
inline Normalizers calibrate_normalizers(const Problem& problem, std::size_t samples, std::uint64_t seed)
{
    if (samples < 10000) {
        throw std::invalid_argument("calibration needs at least 10000 samples");
    }
    const auto& d = problem.descriptor();
    CounterRng rng(seed, 0xCA11B);
    std::vector<double> x(d.n);
    std::vector<double> f(d.m);
    std::vector<double> lo(d.m, std::numeric_limits<double>::infinity());
    std::vector<double> hi(d.m, -std::numeric_limits<double>::infinity());
    for (std::size_t s = 0; s < samples; ++s) {
        for (std::size_t i = 0; i < d.n; ++i) {
            x[i] = rng.uniform(d.lower[i], d.upper[i]);
        }
        problem.raw(x, f);
        for (std::size_t j = 0; j < d.m; ++j) {
            lo[j] = std::min(lo[j], f[j]);
            hi[j] = std::max(hi[j], f[j]);
        }
    }
    Normalizers out{lo, hi};
    for (std::size_t j = 0; j < d.m; ++j) {
        const double span = hi[j] - lo[j];
        if (!(span >= 1e-9)) {
            throw DomainError("degenerate objective span for " + d.id + " objective " + std::to_string(j));
        }
        out.ideal[j] = lo[j] - 0.01 * span;
        out.nadir[j] = hi[j] + 0.01 * span;
    }
    return out;
}

inline constexpr std::size_t kCalibrationSamples = 100000;
inline constexpr std::uint64_t kCalibrationSeed = 0;

inline const std::vector<std::string>& problem_ids()
{
    static const std::vector<std::string> ids = {"zdt1",       "zdt2",       "vlmop1",     "vlmop2",
                                                 "re21",       "re24",       "re37",       "bbob_f1_f1",
                                                 "bbob_f1_f2", "bbob_f1_f3", "bbob_f1_f4", "bbob_f1_f5"};
    return ids;
}

/// Builds a problem by id; RE and bbob problems get calibrated normalizers.
inline std::unique_ptr<Problem> make_problem(std::string_view id)
{
    std::unique_ptr<Problem> p;
    if (id == "zdt1") return std::make_unique<Zdt1>();
    if (id == "zdt2") return std::make_unique<Zdt2>();
    if (id == "vlmop1") return std::make_unique<Vlmop1>();
    if (id == "vlmop2") return std::make_unique<Vlmop2>();
    if (id == "re21") {
        p = std::make_unique<Re21>();
    } else if (id == "re24") {
        p = std::make_unique<Re24>();
    } else if (id == "re37") {
        p = std::make_unique<Re37>();
    } else if (id.starts_with("bbob_f1_f") && id.size() == 10 && id[9] >= '1' && id[9] <= '5') {
        p = std::make_unique<BbobPair>(id[9] - '0');
    } else {
        throw UnknownProblemError("unknown problem id '" + std::string(id) + "'");
    }
    auto n = calibrate_normalizers(*p, kCalibrationSamples, kCalibrationSeed);
    p->set_normalizers(std::move(n.ideal), std::move(n.nadir));
    return p;
}

inline ObjectiveValue evaluate_point(const Problem& problem, std::span<const double> x)
{
    const auto& d = problem.descriptor();
    ObjectiveValue v;
    v.raw.resize(d.m);
    problem.raw(x, v.raw);
    for (std::size_t j = 0; j < d.m; ++j) {
        if (!std::isfinite(v.raw[j])) {
            throw DomainError("problem " + d.id + " produced a non-finite objective");
        }
        const double s = (v.raw[j] - d.ideal[j]) / (d.nadir[j] - d.ideal[j]);
        v.scaled.push_back(s);
        v.normalized.push_back(std::clamp(s, 0.0, 1.0));
    }
    return v;
}

inline std::vector<std::vector<double>> true_front(const Problem& problem, std::size_t k)
{
    if (!problem.descriptor().has_analytic_front) {
        throw UnsupportedError("problem " + problem.id() + " has no analytic Pareto front");
    }
    return problem.front(k);
}

/// Graph nodes of a batch evaluation. The loss differentiates through `scaled`;
/// `normalized` additionally clamps to [0, 1] (zero gradient outside).
struct GraphObjectives {
    ad::Var raw;
    ad::Var scaled;
    ad::Var normalized;
};

inline GraphObjectives evaluate(const Problem& problem, ad::Var x)
{
    const auto& d = problem.descriptor();
    const auto& shape = x.shape();
    if (shape.size() != 2 || shape[1] != d.n) {
        throw ShapeError("problem " + d.id + " expects a (batch, " + std::to_string(d.n) + ") decision tensor, got " +
                         to_string(shape));
    }
    ad::RowFunction fn = [&problem](std::span<const double> xr, std::span<double> f, std::span<double> jac) {
        problem.raw_with_jacobian(xr, f, jac);
        for (double v : f) {
            if (!std::isfinite(v)) {
                throw DomainError("problem " + problem.id() + " produced a non-finite objective");
            }
        }
    };
    ad::Graph& g = x.graph();
    ad::Var raw = ad::map_rows("objectives", x, d.m, fn);
    std::vector<double> span(d.m);
    for (std::size_t j = 0; j < d.m; ++j) {
        span[j] = d.nadir[j] - d.ideal[j];
    }
    ad::Var scaled = (raw - g.constant(Tensor::vector(d.ideal))) / g.constant(Tensor::vector(span));
    ad::Var normalized = ad::elementwise(
        "clamp01", scaled, [](double v) { return std::clamp(v, 0.0, 1.0); },
        [](double v) { return (v > 0.0 && v < 1.0) ? 1.0 : 0.0; });
    return {raw, scaled, normalized};
}

}  // namespace coaction
