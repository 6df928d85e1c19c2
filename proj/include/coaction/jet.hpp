#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace coaction {

/// Forward-mode dual number carrying a value and its gradient with respect to N inputs.
/// Objective functions are written once as templates and instantiated with double (values)
/// or Jet<N> (values plus exact Jacobian rows).
template <std::size_t N>
struct Jet {
    double v = 0.0;
    std::array<double, N> d{};

    Jet() = default;
    Jet(double value) : v(value) {}  // NOLINT(google-explicit-constructor): constants mix freely

    static Jet variable(double value, std::size_t index)
    {
        Jet j(value);
        j.d[index] = 1.0;
        return j;
    }

    Jet& operator+=(const Jet& o)
    {
        v += o.v;
        for (std::size_t i = 0; i < N; ++i) d[i] += o.d[i];
        return *this;
    }
    Jet& operator-=(const Jet& o)
    {
        v -= o.v;
        for (std::size_t i = 0; i < N; ++i) d[i] -= o.d[i];
        return *this;
    }
    Jet& operator*=(const Jet& o)
    {
        for (std::size_t i = 0; i < N; ++i) d[i] = d[i] * o.v + v * o.d[i];
        v *= o.v;
        return *this;
    }
    Jet& operator/=(const Jet& o)
    {
        const double inv = 1.0 / o.v;
        const double q = v * inv;
        for (std::size_t i = 0; i < N; ++i) d[i] = (d[i] - q * o.d[i]) * inv;
        v = q;
        return *this;
    }
};

template <std::size_t N>
Jet<N> operator+(Jet<N> a, const Jet<N>& b) { return a += b; }
template <std::size_t N>
Jet<N> operator-(Jet<N> a, const Jet<N>& b) { return a -= b; }
template <std::size_t N>
Jet<N> operator*(Jet<N> a, const Jet<N>& b) { return a *= b; }
template <std::size_t N>
Jet<N> operator/(Jet<N> a, const Jet<N>& b) { return a /= b; }
template <std::size_t N>
Jet<N> operator+(Jet<N> a, double b) { a.v += b; return a; }
template <std::size_t N>
Jet<N> operator+(double b, Jet<N> a) { a.v += b; return a; }
template <std::size_t N>
Jet<N> operator-(Jet<N> a, double b) { a.v -= b; return a; }
template <std::size_t N>
Jet<N> operator-(double b, const Jet<N>& a) { return Jet<N>(b) - a; }
template <std::size_t N>
Jet<N> operator*(Jet<N> a, double b)
{
    a.v *= b;
    for (auto& x : a.d) x *= b;
    return a;
}
template <std::size_t N>
Jet<N> operator*(double b, Jet<N> a) { return a * b; }
template <std::size_t N>
Jet<N> operator/(Jet<N> a, double b) { return a * (1.0 / b); }
template <std::size_t N>
Jet<N> operator/(double b, const Jet<N>& a) { return Jet<N>(b) / a; }
template <std::size_t N>
Jet<N> operator-(Jet<N> a) { return a * -1.0; }

template <std::size_t N>
bool operator<(const Jet<N>& a, double b) { return a.v < b; }
template <std::size_t N>
bool operator>(const Jet<N>& a, double b) { return a.v > b; }

namespace detail {
template <std::size_t N>
Jet<N> chain(const Jet<N>& a, double value, double derivative)
{
    Jet<N> r(value);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = derivative * a.d[i];
    return r;
}
}  // namespace detail

template <std::size_t N>
Jet<N> sqrt(const Jet<N>& a)
{
    const double s = std::sqrt(a.v);
    return detail::chain(a, s, 0.5 / s);
}
template <std::size_t N>
Jet<N> exp(const Jet<N>& a)
{
    const double e = std::exp(a.v);
    return detail::chain(a, e, e);
}
template <std::size_t N>
Jet<N> sin(const Jet<N>& a) { return detail::chain(a, std::sin(a.v), std::cos(a.v)); }
template <std::size_t N>
Jet<N> cos(const Jet<N>& a) { return detail::chain(a, std::cos(a.v), -std::sin(a.v)); }
template <std::size_t N>
Jet<N> pow(const Jet<N>& a, double p) { return detail::chain(a, std::pow(a.v, p), p * std::pow(a.v, p - 1.0)); }

inline double value_of(double x) { return x; }
template <std::size_t N>
double value_of(const Jet<N>& x) { return x.v; }

/// max(x, 0); derivative taken as 0 at the kink.
inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }
template <std::size_t N>
Jet<N> positive_part(const Jet<N>& x) { return x.v > 0.0 ? x : Jet<N>(0.0); }

}  // namespace coaction
