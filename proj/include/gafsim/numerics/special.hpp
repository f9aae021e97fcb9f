#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "../error.hpp"
#include "../types.hpp"

namespace gafsim::special
{

/// Li_2(x) = sum_{n>=1} x^n / n^2 for x in [0, 1], to ~1e-15.
inline double dilog(double x)
{
    GAFSIM_REQUIRE(x >= 0.0 && x <= 1.0, ErrorCode::InvalidArgument,
                   "dilog argument outside [0,1]");
    if (x == 0.0)
        return 0.0;
    if (x == 1.0)
        return pi * pi / 6.0;
    if (x > 0.5)
    {
        // Euler reflection keeps the series argument below 1/2.
        return pi * pi / 6.0 - std::log(x) * std::log1p(-x) - dilog(1.0 - x);
    }
    double term = x, sum = 0.0;
    for (int n = 1; n < 200; ++n)
    {
        double const add = term / (double(n) * n);
        sum += add;
        if (add < 1e-17 * sum)
            break;
        term *= x;
    }
    return sum;
}

inline double normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Asymptotic Kolmogorov survival function Q_KS(lambda).
inline double kolmogorov_survival(double lambda)
{
    if (lambda < 1e-3)
        return 1.0;
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j)
    {
        double const term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += (j % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-16)
            break;
    }
    return std::clamp(sum, 0.0, 1.0);
}

struct KsResult
{
    double statistic = 0;
    double p_value = 1;
};

/// One-sample KS test of `sample` against N(0,1).
inline KsResult ks_test_normal(std::vector<double> sample)
{
    GAFSIM_REQUIRE(!sample.empty(), ErrorCode::InvalidArgument,
                   "empty sample");
    std::sort(sample.begin(), sample.end());
    double const n = double(sample.size());
    double d = 0;
    for (std::size_t i = 0; i < sample.size(); ++i)
    {
        double const f = normal_cdf(sample[i]);
        d = std::max({d, (i + 1) / n - f, f - i / n});
    }
    double const sqn = std::sqrt(n);
    return {d, kolmogorov_survival((sqn + 0.12 + 0.11 / sqn) * d)};
}

/// Two-sample KS test.
inline KsResult ks_test_two_sample(std::vector<double> a, std::vector<double> b)
{
    GAFSIM_REQUIRE(!a.empty() && !b.empty(), ErrorCode::InvalidArgument,
                   "empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0;
    double const na = double(a.size()), nb = double(b.size());
    while (i < a.size() && j < b.size())
    {
        double const x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x)
            ++i;
        while (j < b.size() && b[j] <= x)
            ++j;
        d = std::max(d, std::abs(i / na - j / nb));
    }
    double const ne = std::sqrt(na * nb / (na + nb));
    return {d, kolmogorov_survival((ne + 0.12 + 0.11 / ne) * d)};
}

struct Moments
{
    double mean = 0;
    double variance = 0;  // unbiased
    double skewness = 0;
    double excess_kurtosis = 0;
    std::size_t count = 0;
};

/// Two-pass moments, summed in index order so results are reproducible.
inline Moments moments(std::vector<double> const& x)
{
    Moments m;
    m.count = x.size();
    if (x.empty())
        return m;
    double s = 0;
    for (double v : x)
        s += v;
    m.mean = s / double(x.size());
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : x)
    {
        double const d = v - m.mean, d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    double const n = double(x.size());
    m.variance = x.size() > 1 ? m2 / (n - 1) : 0.0;
    if (m2 > 0)
    {
        double const var_b = m2 / n;
        m.skewness = (m3 / n) / std::pow(var_b, 1.5);
        m.excess_kurtosis = (m4 / n) / (var_b * var_b) - 3.0;
    }
    return m;
}

/// Weighted least-squares line y = intercept + slope * x.
struct LineFit
{
    double slope = 0;
    double intercept = 0;
    double slope_se = 0;
    double intercept_se = 0;
    double r_squared = 0;
};

/// Weights are inverse variances; pass all-ones for ordinary least squares.
/// Standard errors use the weights as absolute variances when
/// `absolute_sigma` is set, and are rescaled by the residual variance
/// otherwise.
inline LineFit fit_line(std::vector<double> const& x,
                        std::vector<double> const& y,
                        std::vector<double> w = {},
                        bool absolute_sigma = false)
{
    std::size_t const n = x.size();
    GAFSIM_REQUIRE(n >= 2 && y.size() == n, ErrorCode::InvalidArgument,
                   "line fit needs at least two points");
    if (w.empty())
        w.assign(n, 1.0);
    double sw = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i)
    {
        sw += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
    }
    double const xm = sx / sw, ym = sy / sw;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i)
    {
        double const dx = x[i] - xm, dy = y[i] - ym;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    GAFSIM_REQUIRE(sxx > 0, ErrorCode::InvalidArgument,
                   "line fit needs distinct abscissae");
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = ym - fit.slope * xm;
    double ssr = 0;
    for (std::size_t i = 0; i < n; ++i)
    {
        double const r = y[i] - fit.intercept - fit.slope * x[i];
        ssr += w[i] * r * r;
    }
    fit.r_squared = syy > 0 ? 1.0 - ssr / syy : 1.0;
    double scale = 1.0;
    if (!absolute_sigma)
        scale = n > 2 ? ssr / double(n - 2) : 0.0;
    fit.slope_se = std::sqrt(scale / sxx);
    fit.intercept_se = std::sqrt(scale * (1.0 / sw + xm * xm / sxx));
    return fit;
}

/// Wilson score interval for a binomial proportion.
struct Interval
{
    double lo = 0, hi = 1;
};

inline Interval wilson_interval(std::size_t successes, std::size_t trials,
                                double z = 3.0)
{
    if (trials == 0)
        return {0.0, 1.0};
    double const n = double(trials);
    double const p = successes / n;
    double const z2 = z * z;
    double const centre = (p + z2 / (2 * n)) / (1 + z2 / n);
    double const half
        = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Upper confidence bound when no events were observed in n trials
/// (the "rule of three", ~95% one-sided).
inline double zero_event_upper_bound(std::size_t trials)
{
    GAFSIM_REQUIRE(trials > 0, ErrorCode::InvalidArgument, "no trials");
    return 3.0 / double(trials);
}

}  // namespace gafsim::special
