#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <queue>
#include <vector>

#include "../error.hpp"

namespace gafsim::quad
{

/// Gauss-Legendre rule on [-1, 1].
struct GaussRule
{
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail
{
inline GaussRule compute_gauss_legendre(int n)
{
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    int const m = (n + 1) / 2;
    for (int i = 0; i < m; ++i)
    {
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0;
        for (int iter = 0; iter < 100; ++iter)
        {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 0; j < n; ++j)
            {
                double const p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1);
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            double const z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) < 1e-15)
                break;
        }
        rule.nodes[i] = -z;
        rule.nodes[n - 1 - i] = z;
        rule.weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        rule.weights[n - 1 - i] = rule.weights[i];
    }
    return rule;
}
}  // namespace detail

/// Cached n-point Gauss-Legendre rule (thread-safe).
inline GaussRule const& gauss_legendre(int n)
{
    static std::mutex mutex;
    static std::map<int, GaussRule> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it == cache.end())
        it = cache.emplace(n, detail::compute_gauss_legendre(n)).first;
    return it->second;
}

/// Fixed-order Gauss-Legendre on [a, b].
template<class F>
double gauss(F&& f, double a, double b, int n)
{
    auto const& rule = gauss_legendre(n);
    double const c = 0.5 * (a + b), h = 0.5 * (b - a);
    double sum = 0;
    for (int i = 0; i < n; ++i)
        sum += rule.weights[i] * f(c + h * rule.nodes[i]);
    return sum * h;
}

namespace detail
{
// 15-point Kronrod extension of the 7-point Gauss rule, nonnegative abscissae.
inline constexpr std::array<double, 8> xgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> wgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> wg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment
{
    double a, b, value, error;
    bool operator<(Segment const& o) const { return error < o.error; }
};

template<class F>
Segment gk15(F& f, double a, double b)
{
    double const c = 0.5 * (a + b), h = 0.5 * (b - a);
    double const fc = f(c);
    double resk = fc * wgk[7];
    double resg = fc * wg[3];
    for (int j = 0; j < 7; ++j)
    {
        double const dx = h * xgk[j];
        double const f1 = f(c - dx), f2 = f(c + dx);
        resk += wgk[j] * (f1 + f2);
        if (j % 2 == 1)
            resg += wg[j / 2] * (f1 + f2);
    }
    return {a, b, resk * h, std::abs((resk - resg) * h)};
}
}  // namespace detail

struct AdaptiveOptions
{
    double abs_tol = 0.0;
    double rel_tol = 1e-10;
    int max_segments = 2000;
};

/// Globally adaptive Gauss-Kronrod (7/15) integration of f over [a, b].
/// Throws QuadratureFailure when the error estimate cannot be brought below
/// max(abs_tol, rel_tol*|I|) within the segment budget.
template<class F>
double adaptive(F&& f, double a, double b, AdaptiveOptions const& opt = {})
{
    if (a == b)
        return 0.0;
    std::priority_queue<detail::Segment> queue;
    auto first = detail::gk15(f, a, b);
    double total = first.value, error = first.error;
    queue.push(first);
    int segments = 1;
    auto tolerance = [&] {
        return std::max(opt.abs_tol, opt.rel_tol * std::abs(total));
    };
    while (error > tolerance())
    {
        if (segments >= opt.max_segments)
        {
            throw Error(ErrorCode::QuadratureFailure,
                        "adaptive quadrature did not converge on ["
                            + std::to_string(a) + ", " + std::to_string(b)
                            + "], error estimate " + std::to_string(error));
        }
        auto worst = queue.top();
        queue.pop();
        double const mid = 0.5 * (worst.a + worst.b);
        auto left = detail::gk15(f, worst.a, mid);
        auto right = detail::gk15(f, mid, worst.b);
        total += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        queue.push(left);
        queue.push(right);
        ++segments;
        // Guard against an estimate that has been degraded by cancellation.
        if (segments % 64 == 0)
        {
            auto copy = queue;
            total = error = 0;
            while (!copy.empty())
            {
                total += copy.top().value;
                error += copy.top().error;
                copy.pop();
            }
        }
    }
    return total;
}

/// Kahan-compensated accumulator.
class KahanSum
{
  public:
    void add(double x)
    {
        double const y = x - c_;
        double const t = sum_ + y;
        c_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

  private:
    double sum_ = 0, c_ = 0;
};

}  // namespace gafsim::quad
