#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace coaction {

using Point = std::vector<double>;

/// a weakly better everywhere and strictly better somewhere (minimization).
inline bool dominates(const Point& a, const Point& b)
{
    bool strict = false;
    for (std::size_t j = 0; j < a.size(); ++j) {
        if (a[j] > b[j]) return false;
        if (a[j] < b[j]) strict = true;
    }
    return strict;
}

/// Indices of the non-dominated points in input order. Of several identical points only the
/// first is kept.
inline std::vector<std::size_t> nondominated_indices(const std::vector<Point>& points)
{
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < points.size(); ++i) {
        bool drop = false;
        for (std::size_t j = 0; j < points.size() && !drop; ++j) {
            if (j == i) continue;
            drop = dominates(points[j], points[i]) || (j < i && points[j] == points[i]);
        }
        if (!drop) keep.push_back(i);
    }
    return keep;
}

inline std::vector<Point> nondominated_filter(const std::vector<Point>& points)
{
    std::vector<Point> out;
    for (auto i : nondominated_indices(points)) out.push_back(points[i]);
    return out;
}

namespace detail {

// Area dominated by 2D points (all inside the box) up to (r0, r1).
inline double hv2d(std::vector<std::pair<double, double>> pts, double r0, double r1)
{
    std::sort(pts.begin(), pts.end());
    double area = 0.0;
    double ceiling = r1;
    for (const auto& [a, b] : pts) {
        if (b < ceiling) {
            area += (r0 - a) * (ceiling - b);
            ceiling = b;
        }
    }
    return area;
}

}  // namespace detail

struct HypervolumeResult {
    double value = 0.0;
    std::size_t excluded = 0;  // points not weakly dominating r
};

/// Exact hypervolume for 2 or 3 objectives. Points exceeding r in any coordinate are left out.
inline HypervolumeResult hypervolume_detail(const std::vector<Point>& points, const Point& r)
{
    const std::size_t m = r.size();
    if (m != 2 && m != 3) {
        throw std::invalid_argument("hypervolume supports 2 or 3 objectives, got " + std::to_string(m));
    }
    HypervolumeResult res;
    std::vector<Point> inside;
    for (const auto& p : points) {
        if (p.size() != m) throw std::invalid_argument("point arity does not match the reference point");
        bool ok = true;
        for (std::size_t j = 0; j < m; ++j) ok = ok && p[j] <= r[j];
        if (ok) {
            inside.push_back(p);
        } else {
            ++res.excluded;
        }
    }
    if (m == 2) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& p : inside) pts.emplace_back(p[0], p[1]);
        res.value = detail::hv2d(std::move(pts), r[0], r[1]);
        return res;
    }
    std::sort(inside.begin(), inside.end(), [](const Point& a, const Point& b) { return a[2] < b[2]; });
    std::vector<std::pair<double, double>> slice;
    for (std::size_t i = 0; i < inside.size(); ++i) {
        slice.emplace_back(inside[i][0], inside[i][1]);
        const double top = i + 1 < inside.size() ? inside[i + 1][2] : r[2];
        const double depth = top - inside[i][2];
        if (depth > 0.0) {
            res.value += depth * detail::hv2d(slice, r[0], r[1]);
        }
    }
    return res;
}

inline double hypervolume(const std::vector<Point>& points, const Point& r)
{
    auto res = hypervolume_detail(points, r);
    if (res.excluded > 0) {
        std::clog << "warning: " << res.excluded << " point(s) outside the reference box ignored in hypervolume\n";
    }
    return res.value;
}

/// Polar angles of f/|f|, the inverse of the preference map.
inline std::vector<double> polar_angles(const Point& f)
{
    if (f.size() == 2) {
        return {std::atan2(f[0], f[1])};
    }
    if (f.size() == 3) {
        const double norm = std::sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2]);
        return {std::acos(std::clamp(f[2] / norm, -1.0, 1.0)), std::atan2(f[0], f[1])};
    }
    throw std::invalid_argument("polar angles defined for 2 or 3 objectives");
}

/// Sum over angular coordinates of the spread (max - min) of the points' polar angles.
inline double range_metric(const std::vector<Point>& points)
{
    std::vector<std::vector<double>> angles;
    for (const auto& p : points) {
        double n2 = 0.0;
        for (double v : p) n2 += v * v;
        if (std::sqrt(n2) < 1e-9) continue;
        angles.push_back(polar_angles(p));
    }
    if (angles.size() < 2) return 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < angles.front().size(); ++k) {
        double lo = angles[0][k];
        double hi = angles[0][k];
        for (const auto& a : angles) {
            lo = std::min(lo, a[k]);
            hi = std::max(hi, a[k]);
        }
        total += hi - lo;
    }
    return total;
}

/// Mean squared gap between consecutive points after sorting by the first objective.
inline double sparsity_metric(std::vector<Point> points)
{
    if (points.size() < 2) return 0.0;
    std::sort(points.begin(), points.end());
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        for (std::size_t j = 0; j < points[i].size(); ++j) {
            const double d = points[i][j] - points[i + 1][j];
            s += d * d;
        }
    }
    return s / static_cast<double>(points.size() - 1);
}

struct MetricsReport {
    std::string task_id;
    double hv = 0.0;
    double range = 0.0;
    double sparsity = 0.0;
    std::size_t count_after_filter = 0;
    Point r_used;
};

/// Filters to the non-dominated subset, then computes HV, Range and Sparsity on it.
inline MetricsReport compute_metrics(const std::string& task_id, const std::vector<Point>& points, const Point& r)
{
    MetricsReport rep;
    rep.task_id = task_id;
    rep.r_used = r;
    const auto front = nondominated_filter(points);
    rep.count_after_filter = front.size();
    rep.hv = hypervolume(front, r);
    rep.range = range_metric(front);
    rep.sparsity = sparsity_metric(front);
    return rep;
}

// ---- exact Wilcoxon signed-rank test -----------------------------------------------------

enum class Direction { plus, equal, minus };

inline std::string to_symbol(Direction d)
{
    switch (d) {
        case Direction::plus: return "+";
        case Direction::minus: return "-";
        default: return "=";
    }
}

struct WilcoxonResult {
    double p_two_sided = 1.0;
    double w_plus = 0.0;
    double w_minus = 0.0;
    std::size_t n_used = 0;
    Direction direction = Direction::equal;
};

inline constexpr std::size_t kWilcoxonMaxN = 20;

/// Ranks of |d| with ties sharing the average rank.
inline std::vector<double> average_ranks(const std::vector<double>& values)
{
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

/// Paired two-sided test on d = a - b, zero differences dropped, p from all 2^n sign patterns.
inline WilcoxonResult wilcoxon_exact(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("wilcoxon_exact needs paired samples of equal length");
    }
    WilcoxonResult res;
    std::vector<double> d;
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double di = a[i] - b[i];
        mean += di;
        if (di != 0.0) d.push_back(di);
    }
    if (!a.empty()) mean /= static_cast<double>(a.size());
    res.n_used = d.size();
    if (d.empty()) return res;
    if (d.size() > kWilcoxonMaxN) {
        throw std::invalid_argument("exact enumeration supports at most " + std::to_string(kWilcoxonMaxN) + " pairs");
    }
    res.direction = mean > 0.0 ? Direction::plus : (mean < 0.0 ? Direction::minus : Direction::equal);

    std::vector<double> mags(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) mags[i] = std::abs(d[i]);
    const auto ranks = average_ranks(mags);
    for (std::size_t i = 0; i < d.size(); ++i) {
        (d[i] > 0.0 ? res.w_plus : res.w_minus) += ranks[i];
    }
    const double n = static_cast<double>(d.size());
    const double centre = n * (n + 1.0) / 4.0;
    const double observed = std::abs(res.w_plus - centre);
    const std::uint64_t patterns = std::uint64_t{1} << d.size();
    std::uint64_t extreme = 0;
    for (std::uint64_t mask = 0; mask < patterns; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (mask & (std::uint64_t{1} << i)) w += ranks[i];
        }
        if (std::abs(w - centre) >= observed - 1e-9) ++extreme;
    }
    res.p_two_sided = static_cast<double>(extreme) / static_cast<double>(patterns);
    return res;
}

}  // namespace coaction
