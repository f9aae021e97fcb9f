#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <variant>

namespace gafsim
{

using Complex = std::complex<double>;

inline constexpr double pi = std::numbers::pi;

/// Axis-aligned closed rectangle [x0, x1] x [y0, y1].
struct Rect
{
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    bool empty() const { return !(x1 > x0 && y1 > y0); }
    Complex center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }

    bool contains(Complex z) const
    {
        return z.real() >= x0 && z.real() <= x1 && z.imag() >= y0
               && z.imag() <= y1;
    }
    bool contains(Rect const& r) const
    {
        return r.x0 >= x0 && r.x1 <= x1 && r.y0 >= y0 && r.y1 <= y1;
    }
    Rect padded(double pad) const
    {
        return {x0 - pad, y0 - pad, x1 + pad, y1 + pad};
    }
    /// Largest |z| over the rectangle.
    double max_abs() const
    {
        double const ax = std::max(std::abs(x0), std::abs(x1));
        double const ay = std::max(std::abs(y0), std::abs(y1));
        return std::hypot(ax, ay);
    }
    /// Distance from the origin to the rectangle (0 if it contains it).
    double min_abs() const
    {
        double const dx = std::max({x0, 0.0, -x1});
        double const dy = std::max({y0, 0.0, -y1});
        return std::hypot(dx, dy);
    }
};

struct Disc
{
    Complex center{0, 0};
    double radius = 0;

    bool contains(Complex z) const { return std::abs(z - center) <= radius; }
    bool contains(Disc const& d) const
    {
        return std::abs(d.center - center) + d.radius <= radius;
    }
    Rect bounding_box() const
    {
        return {center.real() - radius, center.imag() - radius,
                center.real() + radius, center.imag() + radius};
    }
    double max_abs() const { return std::abs(center) + radius; }
};

/// Regions used for zero location and test-function supports.
using Region = std::variant<Rect, Disc>;

inline Rect bounding_box(Region const& r)
{
    if (auto const* d = std::get_if<Disc>(&r))
        return d->bounding_box();
    return std::get<Rect>(r);
}

inline bool region_contains(Region const& r, Complex z)
{
    return std::visit([z](auto const& g) { return g.contains(z); }, r);
}

inline bool region_contains(Region const& outer, Disc const& d)
{
    if (auto const* od = std::get_if<Disc>(&outer))
        return od->contains(d);
    return std::get<Rect>(outer).contains(d.bounding_box());
}

inline bool disc_intersects_rect(Disc const& d, Rect const& r)
{
    double const cx = std::clamp(d.center.real(), r.x0, r.x1);
    double const cy = std::clamp(d.center.imag(), r.y0, r.y1);
    return std::hypot(cx - d.center.real(), cy - d.center.imag()) <= d.radius;
}

inline double region_max_abs(Region const& r)
{
    return std::visit([](auto const& g) { return g.max_abs(); }, r);
}

}  // namespace gafsim
