#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "numerics/quadrature.hpp"
#include "types.hpp"

namespace gafsim
{

//---------------------------------------------------------------------------//
// Weights
//---------------------------------------------------------------------------//

/// phi(z) = |z|^alpha / 2.
struct RadialPower
{
    double alpha = 2.0;
};

/// phi(z) = (Re z)^2.
struct RealPartSquare
{
};

/// Laplacian density sampled on a regular grid, bilinear inside the grid and
/// extended by clamping outside it.
struct TabulatedDensity
{
    double x0 = 0, y0 = 0, dx = 1, dy = 1;
    int nx = 0, ny = 0;
    std::vector<double> values;  // row-major: values[j * nx + i] at (x0+i*dx, y0+j*dy)
    std::string source;

    double node(int i, int j) const { return values[std::size_t(j) * nx + i]; }
    Rect extent() const
    {
        return {x0, y0, x0 + (nx - 1) * dx, y0 + (ny - 1) * dy};
    }
};

/// A subharmonic weight phi together with its Laplacian density mu = Delta phi.
class WeightSpec
{
  public:
    using Kind = std::variant<RadialPower, RealPartSquare, TabulatedDensity>;

    static WeightSpec radial_power(double alpha)
    {
        GAFSIM_REQUIRE(std::isfinite(alpha) && alpha > 0,
                       ErrorCode::InvalidArgument,
                       "radial_power weight needs alpha > 0");
        return WeightSpec(RadialPower{alpha},
                          "radial_power(alpha=" + format_real(alpha) + ")");
    }

    static WeightSpec re_square()
    {
        return WeightSpec(RealPartSquare{}, "re_square");
    }

    static WeightSpec tabulated(TabulatedDensity table)
    {
        GAFSIM_REQUIRE(table.nx >= 2 && table.ny >= 2 && table.dx > 0
                           && table.dy > 0,
                       ErrorCode::InvalidArgument,
                       "tabulated density needs a grid of at least 2x2 nodes");
        GAFSIM_REQUIRE(table.values.size() == std::size_t(table.nx) * table.ny,
                       ErrorCode::InvalidArgument,
                       "tabulated density: values size != nx*ny");
        for (double v : table.values)
        {
            GAFSIM_REQUIRE(std::isfinite(v) && v > 0,
                           ErrorCode::InvalidArgument,
                           "tabulated density must be strictly positive");
        }
        std::string name = "tabulated(" + table.source + ")";
        return WeightSpec(std::move(table), std::move(name));
    }

    /// Reads {"x0","y0","dx","dy","nx","ny","values":[...]} from a JSON file.
    static WeightSpec tabulated_from_file(std::string const& path)
    {
        std::ifstream in(path);
        GAFSIM_REQUIRE(in.good(), ErrorCode::InvalidArgument,
                       "cannot open tabulated density file " + path);
        nlohmann::json j;
        try
        {
            in >> j;
            TabulatedDensity t;
            t.x0 = j.at("x0").get<double>();
            t.y0 = j.at("y0").get<double>();
            t.dx = j.at("dx").get<double>();
            t.dy = j.at("dy").get<double>();
            t.nx = j.at("nx").get<int>();
            t.ny = j.at("ny").get<int>();
            t.values = j.at("values").get<std::vector<double>>();
            t.source = path;
            return tabulated(std::move(t));
        }
        catch (nlohmann::json::exception const& e)
        {
            throw Error(ErrorCode::InvalidArgument,
                        "malformed tabulated density " + path + ": " + e.what());
        }
    }

    Kind const& kind() const { return kind_; }
    std::string const& name() const { return name_; }

    bool is_radial() const { return std::holds_alternative<RadialPower>(kind_); }
    bool is_tabulated() const
    {
        return std::holds_alternative<TabulatedDensity>(kind_);
    }
    double alpha() const
    {
        GAFSIM_REQUIRE(is_radial(), ErrorCode::UnsupportedWeight,
                       name_ + " has no exponent alpha");
        return std::get<RadialPower>(kind_).alpha;
    }

    /// True when Delta phi is the constant 2 (alpha = 2 or (Re z)^2).
    bool has_unit_flat_density() const
    {
        if (auto const* r = std::get_if<RadialPower>(&kind_))
            return r->alpha == 2.0;
        return std::holds_alternative<RealPartSquare>(kind_);
    }

    /// Laplacian density of mu at z (the standard Laplacian of phi).
    double density(Complex z) const
    {
        return std::visit(
            [z](auto const& k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, RadialPower>)
                {
                    double const a = k.alpha;
                    if (a == 2.0)
                        return 2.0;
                    double const s = std::abs(z);
                    if (s == 0.0)
                        return a < 2.0 ? HUGE_VAL : 0.0;
                    return 0.5 * a * a * std::pow(s, a - 2.0);
                }
                else if constexpr (std::is_same_v<K, RealPartSquare>)
                {
                    return 2.0;
                }
                else
                {
                    return tabulated_value(k, z);
                }
            },
            kind_);
    }

    /// Supremum of the density over a rectangle (may be +inf).
    double sup_density(Rect const& r) const
    {
        return std::visit(
            [&r](auto const& k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, RadialPower>)
                {
                    double const a = k.alpha;
                    if (a == 2.0)
                        return 2.0;
                    double const s = a > 2.0 ? r.max_abs() : r.min_abs();
                    if (s == 0.0)
                        return a < 2.0 ? HUGE_VAL : 0.0;
                    return 0.5 * a * a * std::pow(s, a - 2.0);
                }
                else if constexpr (std::is_same_v<K, RealPartSquare>)
                {
                    return 2.0;
                }
                else
                {
                    return *std::max_element(k.values.begin(), k.values.end());
                }
            },
            kind_);
    }

    /// phi(z). For tabulated densities this is the logarithmic potential of
    /// the density restricted to the grid, so Delta phi matches the table
    /// inside the grid extent.
    double phi(Complex z) const
    {
        return std::visit(
            [z](auto const& k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, RadialPower>)
                    return 0.5 * std::pow(std::abs(z), k.alpha);
                else if constexpr (std::is_same_v<K, RealPartSquare>)
                    return z.real() * z.real();
                else
                    return tabulated_potential(k, z);
            },
            kind_);
    }

    nlohmann::json to_json() const
    {
        return std::visit(
            [](auto const& k) -> nlohmann::json {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, RadialPower>)
                    return {{"kind", "radial_power"}, {"alpha", k.alpha}};
                else if constexpr (std::is_same_v<K, RealPartSquare>)
                    return {{"kind", "re_square"}};
                else
                    return {{"kind", "tabulated"}, {"path", k.source}};
            },
            kind_);
    }

    static WeightSpec from_json(nlohmann::json const& j)
    {
        std::string const kind = j.at("kind").get<std::string>();
        if (kind == "radial_power")
            return radial_power(j.at("alpha").get<double>());
        if (kind == "re_square")
            return re_square();
        if (kind == "tabulated")
            return tabulated_from_file(j.at("path").get<std::string>());
        throw Error(ErrorCode::InvalidArgument, "unknown weight kind " + kind);
    }

    static double tabulated_value(TabulatedDensity const& t, Complex z)
    {
        double const fx = std::clamp((z.real() - t.x0) / t.dx, 0.0,
                                     double(t.nx - 1));
        double const fy = std::clamp((z.imag() - t.y0) / t.dy, 0.0,
                                     double(t.ny - 1));
        int const i = std::min(int(fx), t.nx - 2);
        int const j = std::min(int(fy), t.ny - 2);
        double const u = fx - i, v = fy - j;
        return (1 - u) * (1 - v) * t.node(i, j) + u * (1 - v) * t.node(i + 1, j)
               + (1 - u) * v * t.node(i, j + 1) + u * v * t.node(i + 1, j + 1);
    }

  private:
    WeightSpec(Kind kind, std::string name)
        : kind_(std::move(kind)), name_(std::move(name))
    {
    }

    static std::string format_real(double x)
    {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", x);
        return buf;
    }

    static double tabulated_potential(TabulatedDensity const& t, Complex z);

    Kind kind_;
    std::string name_;
};

//---------------------------------------------------------------------------//
// Disc mass
//---------------------------------------------------------------------------//

namespace detail
{

/// mu(D(z0, r)) for phi = |z|^alpha/2, integrating arc fractions of the
/// circles |z| = s against dM(s) = pi alpha^2 s^(alpha-1) ds.
inline double radial_disc_mass(double alpha, Complex z0, double r)
{
    double const a = std::abs(z0);
    auto mass_centered = [alpha](double s) {
        return pi * alpha * std::pow(s, alpha);
    };
    if (a == 0.0)
        return mass_centered(r);
    if (alpha == 2.0)
        return 2.0 * pi * r * r;

    bool const covers_origin = r >= a;
    double const inner = covers_origin ? mass_centered(r - a) : 0.0;
    // s = m - h cos t maps t in [0, pi] onto [|a-r|, a+r].
    double const m = covers_origin ? r : a;
    double const h = covers_origin ? a : r;
    auto integrand = [&](double t) {
        double const ct = std::cos(t), st = std::sin(t);
        double const s = m - h * ct;
        if (s <= 0.0)
            return 0.0;
        double const one_minus = 2.0 * std::pow(std::sin(0.5 * t), 2);
        // (r - s + a)(r + s - a), written without cancellation.
        double const product
            = covers_origin ? a * (1.0 + ct) * (2.0 * (r - a) + a * one_minus)
                            : r * r * st * st;
        double const half_sin = std::sqrt(std::max(0.0, product / (4.0 * a * s)));
        double const theta = 2.0 * std::asin(std::min(1.0, half_sin));
        return alpha * alpha * theta * std::pow(s, alpha - 1.0) * h * st;
    };
    quad::AdaptiveOptions opt;
    opt.rel_tol = 1e-13;
    opt.abs_tol = 1e-15 * std::max(inner, mass_centered(a + r) * 1e-3);
    opt.max_segments = 4000;
    return inner + quad::adaptive(integrand, 0.0, pi, opt);
}

/// Integral of the bilinear-with-clamping tabulated density over a disc,
/// exact up to rounding: per cell, Green's theorem turns the area integral
/// into a line integral over the cell/disc boundary.
inline double tabulated_disc_mass(TabulatedDensity const& t, Complex c,
                                  double r)
{
    if (r <= 0)
        return 0.0;
    double const cx = c.real(), cy = c.imag();
    Rect const box{cx - r, cy - r, cx + r, cy + r};
    Rect const grid = t.extent();

    // Extended cell index -1 is the outer strip before the grid, n-1 the
    // strip after it.
    auto cell_bounds = [](int idx, double origin, double step, int n,
                          double lo, double hi) {
        double a = idx < 0 ? lo : origin + idx * step;
        double b = idx >= n - 1 ? hi : origin + (idx + 1) * step;
        if (idx < 0)
            b = origin;
        if (idx >= n - 1)
            a = origin + (n - 1) * step;
        return std::pair{a, b};
    };
    auto index_range = [](double lo, double hi, double origin, double step,
                          int n) {
        int first = int(std::floor((lo - origin) / step));
        int last = int(std::floor((hi - origin) / step));
        first = std::clamp(first, -1, n - 1);
        last = std::clamp(last, -1, n - 1);
        return std::pair{first, last};
    };

    auto const [ix0, ix1] = index_range(box.x0, box.x1, t.x0, t.dx, t.nx);
    auto const [iy0, iy1] = index_range(box.y0, box.y1, t.y0, t.dy, t.ny);
    auto const& gl = quad::gauss_legendre(20);

    double total = 0.0;
    for (int iy = iy0; iy <= iy1; ++iy)
    {
        auto [ya, yb] = cell_bounds(iy, t.y0, t.dy, t.ny, box.y0, box.y1);
        ya = std::max(ya, box.y0);
        yb = std::min(yb, box.y1);
        if (yb <= ya)
            continue;
        for (int ix = ix0; ix <= ix1; ++ix)
        {
            auto [xa, xb] = cell_bounds(ix, t.x0, t.dx, t.nx, box.x0, box.x1);
            xa = std::max(xa, box.x0);
            xb = std::min(xb, box.x1);
            if (xb <= xa)
                continue;
            Rect const cell{xa, ya, xb, yb};
            if (!disc_intersects_rect(Disc{c, r}, cell))
                continue;

            // Density on this cell is bilinear in (clamped x, clamped y);
            // outside the grid the clamped coordinate is constant.
            double const mx = 0.5 * (xa + xb), my = 0.5 * (ya + yb);
            bool const x_inside = ix >= 0 && ix < t.nx - 1;
            bool const y_inside = iy >= 0 && iy < t.ny - 1;
            auto f_at = [&](double x, double y) {
                return WeightSpec::tabulated_value(t, Complex(x, y));
            };
            double const hx = x_inside ? 0.5 * (xb - xa) : 0.0;
            double const hy = y_inside ? 0.5 * (yb - ya) : 0.0;
            double const xs = x_inside ? mx : std::clamp(mx, grid.x0, grid.x1);
            double const ys = y_inside ? my : std::clamp(my, grid.y0, grid.y1);
            double const f00 = f_at(xs - hx, ys - hy), f10 = f_at(xs + hx, ys - hy);
            double const f01 = f_at(xs - hx, ys + hy), f11 = f_at(xs + hx, ys + hy);
            // f = k0 + kx X + ky Y + kxy X Y, X = x - mx, Y = y - my.
            double const k0 = 0.25 * (f00 + f10 + f01 + f11);
            double const kx = hx > 0 ? 0.25 * (f10 - f00 + f11 - f01) / hx : 0.0;
            double const ky = hy > 0 ? 0.25 * (f01 - f00 + f11 - f10) / hy : 0.0;
            double const kxy
                = (hx > 0 && hy > 0) ? 0.25 * (f11 - f10 - f01 + f00) / (hx * hy)
                                     : 0.0;
            double const Xa = xa - mx;
            // F(x, y) = int_{xa}^{x} f(s, y) ds.
            auto F = [&](double x, double y) {
                double const X = x - mx, Y = y - my;
                auto prim = [&](double u) {
                    return k0 * u + 0.5 * kx * u * u + ky * Y * u
                           + 0.5 * kxy * u * u * Y;
                };
                return prim(X) - prim(Xa);
            };

            double cell_total = 0.0;
            // Right edge, upward, where it lies inside the disc.
            double const dxr = xb - cx;
            if (std::abs(dxr) < r)
            {
                double const half = std::sqrt(r * r - dxr * dxr);
                double const lo = std::max(ya, cy - half);
                double const hi = std::min(yb, cy + half);
                if (hi > lo)
                {
                    double const g = 0.5 / std::sqrt(3.0) * (hi - lo);
                    double const mid = 0.5 * (hi + lo);
                    cell_total += 0.5 * (hi - lo) * (F(xb, mid - g) + F(xb, mid + g));
                }
            }
            // Circle arcs inside the cell, counter-clockwise.
            std::vector<double> angles{0.0, 2 * pi};
            auto add_line = [&](double offset, bool vertical) {
                if (std::abs(offset) >= r)
                    return;
                double const base = vertical ? std::acos(offset / r)
                                             : std::asin(offset / r);
                double a1 = base, a2 = vertical ? 2 * pi - base : pi - base;
                for (double a : {a1, a2})
                {
                    a = std::fmod(a + 2 * pi, 2 * pi);
                    angles.push_back(a);
                }
            };
            add_line(xa - cx, true);
            add_line(xb - cx, true);
            add_line(ya - cy, false);
            add_line(yb - cy, false);
            std::sort(angles.begin(), angles.end());
            for (std::size_t k = 0; k + 1 < angles.size(); ++k)
            {
                double const t0 = angles[k], t1 = angles[k + 1];
                if (t1 - t0 < 1e-15)
                    continue;
                double const tm = 0.5 * (t0 + t1);
                Complex const pm(cx + r * std::cos(tm), cy + r * std::sin(tm));
                if (!cell.contains(pm))
                    continue;
                int const pieces = int(std::ceil((t1 - t0) / (0.5 * pi)));
                double const step = (t1 - t0) / pieces;
                for (int p = 0; p < pieces; ++p)
                {
                    double const s0 = t0 + p * step;
                    double const sc = s0 + 0.5 * step, sh = 0.5 * step;
                    double acc = 0.0;
                    for (std::size_t q = 0; q < gl.nodes.size(); ++q)
                    {
                        double const tt = sc + sh * gl.nodes[q];
                        double const x = cx + r * std::cos(tt);
                        double const y = cy + r * std::sin(tt);
                        acc += gl.weights[q] * F(x, y) * r * std::cos(tt);
                    }
                    cell_total += acc * sh;
                }
            }
            total += cell_total;
        }
    }
    return total;
}

}  // namespace detail

inline double WeightSpec::tabulated_potential(TabulatedDensity const& t,
                                              Complex z)
{
    // (1/2pi) int_grid log|z - w| density(w) dm(w), cell by cell. Each cell is
    // split into four triangles with apex at the cell point nearest z; the
    // Duffy map removes the logarithmic singularity at the apex.
    auto const& gl = quad::gauss_legendre(12);
    double total = 0.0;
    for (int j = 0; j + 1 < t.ny; ++j)
    {
        for (int i = 0; i + 1 < t.nx; ++i)
        {
            double const xa = t.x0 + i * t.dx, xb = xa + t.dx;
            double const ya = t.y0 + j * t.dy, yb = ya + t.dy;
            Complex const apex(std::clamp(z.real(), xa, xb),
                               std::clamp(z.imag(), ya, yb));
            Complex const v[4] = {{xa, ya}, {xb, ya}, {xb, yb}, {xa, yb}};
            for (int e = 0; e < 4; ++e)
            {
                Complex const p = v[e] - apex, q = v[(e + 1) % 4] - v[e];
                double const jac = std::abs(p.real() * q.imag() - p.imag() * q.real());
                if (jac < 1e-300)
                    continue;
                double acc = 0.0;
                for (std::size_t a = 0; a < gl.nodes.size(); ++a)
                {
                    double const u = 0.5 * (1 + gl.nodes[a]);
                    for (std::size_t b = 0; b < gl.nodes.size(); ++b)
                    {
                        double const s = 0.5 * (1 + gl.nodes[b]);
                        Complex const w = apex + u * (p + s * q);
                        double const dist = std::abs(z - w);
                        if (dist == 0.0)
                            continue;
                        acc += 0.25 * gl.weights[a] * gl.weights[b] * u
                               * std::log(dist) * tabulated_value(t, w);
                    }
                }
                total += acc * jac;
            }
        }
    }
    return total / (2.0 * pi);
}

/// L * mu(D(z0, r)).
inline double mu_disc(WeightSpec const& w, Complex z0, double r, double L)
{
    GAFSIM_REQUIRE(r >= 0 && std::isfinite(r), ErrorCode::InvalidArgument,
                   "mu_disc needs r >= 0");
    GAFSIM_REQUIRE(L >= 1, ErrorCode::InvalidArgument, "mu_disc needs L >= 1");
    if (r == 0.0)
        return 0.0;
    return L
           * std::visit(
               [&](auto const& k) -> double {
                   using K = std::decay_t<decltype(k)>;
                   if constexpr (std::is_same_v<K, RadialPower>)
                       return detail::radial_disc_mass(k.alpha, z0, r);
                   else if constexpr (std::is_same_v<K, RealPartSquare>)
                       return 2.0 * pi * r * r;
                   else
                       return detail::tabulated_disc_mass(k, z0, r);
               },
               w.kind());
}

inline double weight_eval(WeightSpec const& w, Complex z)
{
    return w.phi(z);
}

//---------------------------------------------------------------------------//
// rho_L
//---------------------------------------------------------------------------//

/// Memoized rho_L(z): the radius with L mu(D(z, rho_L(z))) = 1.
///
/// Query points are quantized to `quantum` and rho is evaluated at the
/// quantized point, so results are independent of query order and thread
/// interleaving. For radial weights the key is the quantized modulus.
class RhoField
{
  public:
    struct Options
    {
        double tol_rel = 1e-11;
        double quantum = 1e-6;
    };

    RhoField(WeightSpec weight, double L) : RhoField(std::move(weight), L, Options{}) {}

    RhoField(WeightSpec weight, double L, Options opt)
        : weight_(std::move(weight)), L_(L), opt_(opt)
    {
        GAFSIM_REQUIRE(L >= 1 && std::isfinite(L), ErrorCode::InvalidArgument,
                       "RhoField needs L >= 1");
        GAFSIM_REQUIRE(opt.tol_rel > 0 && opt.quantum > 0,
                       ErrorCode::InvalidArgument, "bad RhoField options");
    }

    RhoField(RhoField const&) = delete;
    RhoField& operator=(RhoField const&) = delete;

    WeightSpec const& weight() const { return weight_; }
    double L() const { return L_; }
    double tol_rel() const { return opt_.tol_rel; }
    double quantum() const { return opt_.quantum; }

    double operator()(Complex z) const { return rho(z); }

    double rho(Complex z) const
    {
        GAFSIM_REQUIRE(std::isfinite(z.real()) && std::isfinite(z.imag()),
                       ErrorCode::InvalidArgument, "rho needs a finite point");
        Key key;
        Complex q;
        if (weight_.is_radial())
        {
            key = {std::llround(std::abs(z) / opt_.quantum), 0};
            q = Complex(double(key.first) * opt_.quantum, 0.0);
        }
        else
        {
            key = {std::llround(z.real() / opt_.quantum),
                   std::llround(z.imag() / opt_.quantum)};
            q = Complex(double(key.first) * opt_.quantum,
                        double(key.second) * opt_.quantum);
        }
        {
            std::shared_lock lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end())
                return it->second;
        }
        double const value = solve(q);
        std::unique_lock lock(mutex_);
        cache_.emplace(key, value);
        return value;
    }

    /// Cached (quantized point, rho) pairs, for invariant checks.
    std::vector<std::pair<Complex, double>> cached_entries() const
    {
        std::shared_lock lock(mutex_);
        std::vector<std::pair<Complex, double>> out;
        for (auto const& [k, v] : cache_)
        {
            out.emplace_back(Complex(double(k.first) * opt_.quantum,
                                     double(k.second) * opt_.quantum),
                             v);
        }
        return out;
    }

    std::size_t cache_size() const
    {
        std::shared_lock lock(mutex_);
        return cache_.size();
    }

    /// Uncached root solve at exactly z.
    double solve(Complex z) const
    {
        if (auto const* rp = std::get_if<RadialPower>(&weight_.kind()))
        {
            if (z == Complex(0, 0))
                return std::pow(pi * rp->alpha * L_, -1.0 / rp->alpha);
        }
        if (weight_.has_unit_flat_density())
            return 1.0 / std::sqrt(2.0 * pi * L_);

        auto g = [&](double r) { return mu_disc(weight_, z, r, L_) - 1.0; };
        constexpr double r_min = 1e-12;
        double lo, hi;
        double r = 1.0;
        double gr = g(r);
        int steps = 0;
        if (gr < 0)
        {
            while (gr < 0)
            {
                GAFSIM_REQUIRE(++steps <= 60, ErrorCode::NoBracket,
                               "mass never reaches 1 around the point");
                r *= 2.0;
                gr = g(r);
            }
            lo = r / 2.0;
            hi = r;
        }
        else
        {
            while (gr >= 0)
            {
                r /= 2.0;
                GAFSIM_REQUIRE(r > r_min, ErrorCode::NoBracket,
                               "mass exceeds 1 on every disc down to 1e-12");
                gr = g(r);
            }
            lo = r;
            hi = 2.0 * r;
        }
        double glo = g(lo), ghi = g(hi);
        // Bisection in log r narrows the bracket, then a safeguarded secant
        // step polishes the root.
        for (int i = 0; i < 6; ++i)
        {
            double const mid = std::sqrt(lo * hi);
            double const gm = g(mid);
            if (gm < 0)
                lo = mid, glo = gm;
            else
                hi = mid, ghi = gm;
        }
        double best = std::abs(glo) < std::abs(ghi) ? lo : hi;
        double gbest = std::min(std::abs(glo), std::abs(ghi));
        for (int i = 0; i < 100 && gbest > opt_.tol_rel; ++i)
        {
            double x = hi - ghi * (hi - lo) / (ghi - glo);
            if (!(x > lo && x < hi) || hi - lo < 1e-15 * hi)
                x = 0.5 * (lo + hi);
            double const gx = g(x);
            if (std::abs(gx) < gbest)
                best = x, gbest = std::abs(gx);
            if (gx < 0)
            {
                // Illinois modification keeps both ends moving.
                if (lo == x)
                    break;
                lo = x;
                glo = gx;
                ghi *= 0.5;
            }
            else
            {
                if (hi == x)
                    break;
                hi = x;
                ghi = gx;
                glo *= 0.5;
            }
            if (hi - lo <= 1e-16 * hi)
                break;
        }
        return best;
    }

  private:
    using Key = std::pair<long long, long long>;
    struct KeyHash
    {
        std::size_t operator()(Key const& k) const noexcept
        {
            auto const a = std::uint64_t(k.first), b = std::uint64_t(k.second);
            return std::size_t(a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull + (a << 6)));
        }
    };

    WeightSpec weight_;
    double L_;
    Options opt_;
    mutable std::shared_mutex mutex_;
    mutable std::unordered_map<Key, double, KeyHash> cache_;
};

/// Straight-segment upper bound on d_mu(z, zeta):
/// int_0^1 |zeta - z| / rho_L(z + t (zeta - z)) dt.
inline double dmu_approx(RhoField const& field, Complex z, Complex zeta)
{
    double const length = std::abs(zeta - z);
    if (length == 0.0)
        return 0.0;
    if (field.weight().has_unit_flat_density())
        return length / field.rho(z);
    // Parametrize about the midpoint so that reversing the path maps the
    // symmetric quadrature nodes onto themselves.
    // Cached rho is piecewise constant on the quantization grid, so a fixed
    // composite rule is used rather than an adaptive one.
    Complex const mid = 0.5 * (z + zeta);
    Complex const dir = zeta - z;
    double const rough = length / field.rho(mid);
    int const pieces = std::clamp(int(std::ceil(rough)), 1, 64);
    auto const& gl = quad::gauss_legendre(16);
    double total = 0.0;
    for (int p = 0; p < pieces; ++p)
    {
        double const c = -0.5 + (p + 0.5) / pieces, h = 0.5 / pieces;
        for (std::size_t k = 0; k < gl.nodes.size(); ++k)
            total += gl.weights[k] * h / field.rho(mid + (c + h * gl.nodes[k]) * dir);
    }
    return length * total;
}

namespace detail
{
inline std::vector<Complex> grid_points(Rect const& region, int n)
{
    std::vector<Complex> pts;
    if (n <= 1)
        return {region.center()};
    for (int j = 0; j < n; ++j)
    {
        for (int i = 0; i < n; ++i)
        {
            pts.emplace_back(region.x0 + region.width() * i / (n - 1),
                             region.y0 + region.height() * j / (n - 1));
        }
    }
    return pts;
}

inline std::pair<double, double> rho_range(RhoField const& field, Rect const& r,
                                           int n = 17)
{
    double lo = HUGE_VAL, hi = 0.0;
    for (Complex z : grid_points(r, n))
    {
        double const v = field.rho(z);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (r.min_abs() == 0.0)
    {
        double const v = field.rho(0.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}
}  // namespace detail

/// Empirical lower bound on the doubling constant: the largest
/// mu(D(z,2r))/mu(D(z,r)) over a grid of centres and the given radii.
inline double doubling_ratio_scan(WeightSpec const& w, Rect const& region,
                                  std::vector<double> const& radii,
                                  int grid_n = 7)
{
    GAFSIM_REQUIRE(region.width() >= 0 && region.height() >= 0,
                   ErrorCode::InvalidArgument, "empty region");
    GAFSIM_REQUIRE(!radii.empty(), ErrorCode::InvalidArgument, "no radii");
    double worst = 0.0;
    for (Complex z : detail::grid_points(region, grid_n))
    {
        for (double r : radii)
        {
            GAFSIM_REQUIRE(r > 0, ErrorCode::InvalidArgument,
                           "radii must be positive");
            double const small = mu_disc(w, z, r, 1.0);
            if (!(small > 0))
            {
                throw Error(ErrorCode::DivisionByZeroMass,
                            "zero mass at z=(" + std::to_string(z.real()) + ","
                                + std::to_string(z.imag())
                                + ") r=" + std::to_string(r));
            }
            worst = std::max(worst, mu_disc(w, z, 2 * r, 1.0) / small);
        }
    }
    return worst;
}

struct FlatnessBand
{
    double min_ratio = 0;
    double max_ratio = 0;
    double width() const { return max_ratio / min_ratio; }
};

/// Scans unit-mass discs D = D(z, rho(z)) centred on a grid of the region
/// and sub-discs D' inside them; returns the extremes of
/// mu(D') (r(D)/r(D'))^2.
inline FlatnessBand local_flatness_scan(WeightSpec const& w, Rect const& region,
                                        int grid_n = 5)
{
    GAFSIM_REQUIRE(region.width() >= 0 && region.height() >= 0,
                   ErrorCode::InvalidArgument, "empty region");
    RhoField field(w, 1.0);
    FlatnessBand band{HUGE_VAL, 0.0};
    constexpr double fractions[] = {0.5, 0.25, 0.1};
    constexpr double offsets[] = {0.0, 0.5, 1.0};
    for (Complex z : detail::grid_points(region, grid_n))
    {
        double const big = field.rho(z);
        for (double f : fractions)
        {
            double const small = f * big;
            for (double off : offsets)
            {
                int const directions = off == 0.0 ? 1 : 8;
                for (int k = 0; k < directions; ++k)
                {
                    Complex const c
                        = z + std::polar(off * (big - small), 2 * pi * k / directions);
                    double const ratio
                        = mu_disc(w, c, small, 1.0) * (big / small) * (big / small);
                    band.min_ratio = std::min(band.min_ratio, ratio);
                    band.max_ratio = std::max(band.max_ratio, ratio);
                }
            }
        }
    }
    return band;
}

}  // namespace gafsim
