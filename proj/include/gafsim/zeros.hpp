#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "numerics/rng.hpp"
#include "pointprocess.hpp"
#include "test_function.hpp"
#include "types.hpp"

namespace gafsim
{

enum class ZeroMethod
{
    PolyRoots,
    ArgPrincipleSubdivision
};

inline std::string to_string(ZeroMethod m)
{
    return m == ZeroMethod::PolyRoots ? "PolyRoots" : "ArgPrincipleSubdivision";
}

struct ZeroSet
{
    std::vector<Complex> zeros;
    Region region = Rect{};
    ZeroMethod method = ZeroMethod::ArgPrincipleSubdivision;
    std::vector<double> residuals;  // |f| e^(-phi_L) at each zero
    double residual_max = 0;
    double tol = 0;
    int unresolved = 0;  // cells Newton could not settle, or suspected multiple zeros

    std::size_t size() const { return zeros.size(); }
    bool flagged() const { return unresolved > 0; }
};

struct ZeroOptions
{
    double tol = 0;          // 0 picks 1e-10 rho_L at the region centre
    int jitter_retries = 5;
    int max_newton = 60;
};

/// f and f' at a point; any common positive rescaling is allowed since only
/// arg f and f'/f are used.
struct FnValue
{
    Complex f;
    Complex df;
};

namespace detail
{

struct Node
{
    double t;
    Complex z;
    FnValue v;
};

// Sum of arg increments of fn along a parametrized arc; nullopt when the
// integrand spikes (zero on or extremely close to the arc).
template<class Fn, class Path>
std::optional<double> arg_increment(Fn const& fn, Path const& path, double t0, double t1,
                                    int n0, double min_step)
{
    auto make = [&](double t) {
        Complex const z = path(t);
        return Node{t, z, fn(z)};
    };
    std::vector<Node> stack;
    Node left = make(t0);
    if (left.v.f == Complex(0.0))
        return std::nullopt;
    for (int k = n0; k >= 1; --k)
        stack.push_back(make(t0 + (t1 - t0) * k / n0));
    double total = 0;
    while (!stack.empty())
    {
        Node right = stack.back();
        if (right.v.f == Complex(0.0) || !std::isfinite(std::abs(right.v.f)))
            return std::nullopt;
        Complex const dz = right.z - left.z;
        double const delta = std::arg(right.v.f / left.v.f);
        double const pa = (left.v.df / left.v.f * dz).imag();
        double const pb = (right.v.df / right.v.f * dz).imag();
        bool const ok = std::abs(delta) <= pi / 4 && std::abs(pa - delta) <= 0.3
                        && std::abs(pb - delta) <= 0.3;
        if (ok)
        {
            total += delta;
            left = right;
            stack.pop_back();
            continue;
        }
        if (std::abs(dz) < min_step)
            return std::nullopt;
        stack.push_back(make(0.5 * (left.t + right.t)));
    }
    return total;
}

inline int initial_nodes(double length, double rho)
{
    return std::clamp(int(std::ceil(2.0 * length / rho)), 8, 1 << 16);
}

inline std::optional<int> winding_from(double total)
{
    double const w = total / (2 * pi);
    double const n = std::round(w);
    if (std::abs(w - n) > 0.05)
        return std::nullopt;
    return int(n);
}

template<class Fn>
std::optional<int> try_count_disc(Fn const& fn, Disc const& d, double rho)
{
    auto path = [&](double t) { return d.center + std::polar(d.radius, t); };
    auto total = arg_increment(fn, path, 0.0, 2 * pi,
                               initial_nodes(2 * pi * d.radius, rho), 1e-9 * rho);
    if (!total)
        return std::nullopt;
    return winding_from(*total);
}

template<class Fn>
std::optional<int> try_count_rect(Fn const& fn, Rect const& r, double rho)
{
    Complex const c[4] = {{r.x0, r.y0}, {r.x1, r.y0}, {r.x1, r.y1}, {r.x0, r.y1}};
    double total = 0;
    for (int e = 0; e < 4; ++e)
    {
        Complex const a = c[e], b = c[(e + 1) % 4];
        auto path = [&](double t) { return a + (b - a) * t; };
        auto part = arg_increment(fn, path, 0.0, 1.0, initial_nodes(std::abs(b - a), rho),
                                  1e-9 * rho);
        if (!part)
            return std::nullopt;
        total += *part;
    }
    return winding_from(total);
}

}  // namespace detail

/// Number of zeros of fn inside the disc by the argument principle. `rho` is
/// the length scale of the zero spacing; `jitter` seeds the radius retries.
template<class Fn>
int count_zeros_argument(Fn const& fn, Disc const& d, double rho,
                         rng::StreamId jitter = {}, int retries = 5)
{
    GAFSIM_REQUIRE(d.radius > 0, ErrorCode::InvalidArgument, "disc radius must be positive");
    Disc trial = d;
    for (int attempt = 0; attempt <= retries; ++attempt)
    {
        if (auto n = detail::try_count_disc(fn, trial, rho))
            return *n;
        double const u = rng::uniform_pair(jitter.with_tag(0x6a177e5), attempt)[0];
        trial.radius = d.radius * (1.0 + u * 1e-6);
    }
    throw Error(ErrorCode::BoundaryZeroSuspected,
                "argument increments spike on every jittered circle");
}

template<class Fn>
int count_zeros_argument(Fn const& fn, Rect const& r, double rho,
                         rng::StreamId jitter = {}, int retries = 5)
{
    GAFSIM_REQUIRE(!r.empty(), ErrorCode::InvalidArgument, "empty rectangle");
    Rect trial = r;
    for (int attempt = 0; attempt <= retries; ++attempt)
    {
        if (auto n = detail::try_count_rect(fn, trial, rho))
            return *n;
        double const u = rng::uniform_pair(jitter.with_tag(0x6a177e5), attempt)[0];
        trial = r.padded(u * 1e-6 * std::max(r.width(), r.height()));
    }
    throw Error(ErrorCode::BoundaryZeroSuspected,
                "argument increments spike on every jittered rectangle");
}

inline auto sample_fn(GafSample const& g)
{
    return [&g](Complex z) {
        auto const v = g.eval_normalized(z, true);
        return FnValue{v.f, v.df};
    };
}

// Smallest rho_L over the box; sets the initial contour node spacing.
inline double zero_scale(GafSample const& g, Rect const& box)
{
    return detail::rho_range(g.model().rho_field(), box, 5).first;
}

inline int count_zeros_argument(GafSample const& g, Disc const& d)
{
    g.model().basis().check_domain(Complex(d.max_abs(), 0.0));
    return count_zeros_argument(sample_fn(g), d, zero_scale(g, d.bounding_box()), g.stream());
}

inline int count_zeros_argument(GafSample const& g, Rect const& r)
{
    g.model().basis().check_domain(Complex(r.max_abs(), 0.0));
    return count_zeros_argument(sample_fn(g), r, zero_scale(g, r), g.stream());
}

/// Quadtree on argument-principle counts with Newton refinement of isolated
/// zeros. Zeros are returned sorted lexicographically.
template<class Fn>
ZeroSet locate_zeros(Fn const& fn, Region const& region, double rho,
                     ZeroOptions const& opt = {}, rng::StreamId jitter = {})
{
    Rect const box = bounding_box(region);
    ZeroSet out;
    out.region = region;
    out.method = ZeroMethod::ArgPrincipleSubdivision;
    out.tol = opt.tol > 0 ? opt.tol : 1e-10 * rho;
    double const tol = out.tol;

    struct Cell
    {
        Rect r;
        int count;
    };
    std::vector<Cell> work;
    {
        // the root box may be padded slightly when a zero sits on its edge
        Rect root = box;
        std::optional<int> n;
        for (int attempt = 0; attempt <= opt.jitter_retries && !n; ++attempt)
        {
            if (attempt > 0)
            {
                double const u = rng::uniform_pair(jitter.with_tag(0xb0c5), attempt)[0];
                root = box.padded(u * 1e-6 * std::max(box.width(), box.height()));
            }
            n = detail::try_count_rect(fn, root, rho);
        }
        if (!n)
            throw Error(ErrorCode::BoundaryZeroSuspected,
                        "argument increments spike on the region boundary");
        if (*n > 0)
            work.push_back({root, *n});
    }

    auto newton = [&](Rect const& cell) -> std::optional<Complex> {
        Complex z = cell.center();
        Rect const accept = cell.padded(tol);
        for (int it = 0; it < opt.max_newton; ++it)
        {
            FnValue const v = fn(z);
            if (v.df == Complex(0.0))
                return std::nullopt;
            Complex const step = v.f / v.df;
            z -= step;
            // iterates leaving the cell are abandoned; subdivision takes over
            if (!std::isfinite(z.real()) || !std::isfinite(z.imag()) || !accept.contains(z))
                return std::nullopt;
            if (std::abs(step) < tol)
            {
                FnValue const w = fn(z);
                if (w.df != Complex(0.0))
                    z -= w.f / w.df;
                if (accept.contains(z))
                    return z;
                return std::nullopt;
            }
        }
        return std::nullopt;
    };

    static constexpr double splits[] = {0.5, 0.4711, 0.5289, 0.4423, 0.5577};
    while (!work.empty())
    {
        Cell const c = work.back();
        work.pop_back();
        double const diam = std::hypot(c.r.width(), c.r.height());
        if (c.count == 1)
        {
            if (auto z = newton(c.r))
            {
                out.zeros.push_back(*z);
                continue;
            }
        }
        if (diam < 64.0 * tol)
        {
            ++out.unresolved;
            continue;
        }
        bool split_ok = false;
        for (double fx : splits)
        {
            double const xm = c.r.x0 + fx * c.r.width();
            double const ym = c.r.y0 + fx * c.r.height();
            Rect const kids[4] = {{c.r.x0, c.r.y0, xm, ym},
                                  {xm, c.r.y0, c.r.x1, ym},
                                  {c.r.x0, ym, xm, c.r.y1},
                                  {xm, ym, c.r.x1, c.r.y1}};
            int counts[4];
            int sum = 0;
            bool ok = true;
            for (int k = 0; k < 4 && ok; ++k)
            {
                auto n = detail::try_count_rect(fn, kids[k], rho);
                if (!n || *n < 0)
                    ok = false;
                else
                    sum += counts[k] = *n;
            }
            if (!ok || sum != c.count)
                continue;
            for (int k = 0; k < 4; ++k)
                if (counts[k] > 0)
                    work.push_back({kids[k], counts[k]});
            split_ok = true;
            break;
        }
        if (!split_ok)
            ++out.unresolved;
    }

    std::vector<Complex> kept;
    for (Complex z : out.zeros)
        if (region_contains(region, z))
            kept.push_back(z);
    std::sort(kept.begin(), kept.end(), [](Complex a, Complex b) {
        return a.real() < b.real() || (a.real() == b.real() && a.imag() < b.imag());
    });
    out.zeros.clear();
    for (Complex z : kept)
    {
        bool dup = false;
        for (Complex y : out.zeros)
            if (std::abs(y - z) <= 10 * tol)
                dup = true;
        if (dup)
        {
            ++out.unresolved;
            continue;
        }
        out.zeros.push_back(z);
    }
    for (Complex z : out.zeros)
    {
        double const r = std::abs(fn(z).f);
        out.residuals.push_back(r);
        out.residual_max = std::max(out.residual_max, r);
    }
    return out;
}

inline ZeroSet locate_zeros(GafSample const& g, Region const& region, ZeroOptions const& opt = {})
{
    Rect const box = bounding_box(region);
    g.model().basis().check_domain(Complex(box.max_abs(), 0.0));
    ZeroOptions o = opt;
    if (o.tol <= 0)
        o.tol = 1e-10 * g.model().rho_field().rho(box.center());
    return locate_zeros(sample_fn(g), region, zero_scale(g, box), o, g.stream());
}

/// (1/L) sum of psi over the zeros.
inline double linear_statistic(ZeroSet const& zs, TestFunction const& psi, double L)
{
    if (!region_contains(zs.region, psi.support()))
        throw Error(ErrorCode::SupportEscapesRegion,
                    "test function support is not inside the zero-set region");
    double total = 0;
    for (Complex z : zs.zeros)
        total += psi(z);
    return total / L;
}

inline void write_zeros_csv(ZeroSet const& zs, std::string const& path)
{
    std::ofstream out(path);
    GAFSIM_REQUIRE(out.good(), ErrorCode::InvalidArgument, "cannot write " + path);
    out << "re,im,residual\n" << std::setprecision(17);
    for (std::size_t i = 0; i < zs.zeros.size(); ++i)
        out << zs.zeros[i].real() << ',' << zs.zeros[i].imag() << ',' << zs.residuals[i]
            << '\n';
}

}  // namespace gafsim
