#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "error.hpp"
#include "fock.hpp"
#include "measure.hpp"
#include "numerics/parallel.hpp"
#include "numerics/special.hpp"
#include "test_function.hpp"
#include "types.hpp"

namespace gafsim
{

inline void require_support_in_domain(KernelModel const& model, TestFunction const& psi)
{
    double const reach = psi.support().max_abs();
    if (reach > model.basis().domain_radius())
        throw Error(ErrorCode::OutOfCertifiedDomain,
                    "test function support reaches |z| = " + std::to_string(reach)
                        + " beyond the certified radius");
}

/// Limit of the mean linear statistic, (1/2pi) int psi d(mu).
inline double mean_limit(TestFunction const& psi, WeightSpec const& w)
{
    return integral_mu(psi, w) / (2 * pi);
}

/// Expected linear statistic from the zero intensity,
/// (1/(4 pi L)) int psi Laplacian(log K(z,z)) dm.
inline double ek_expected(KernelModel const& model, TestFunction const& psi,
                          unsigned threads = default_thread_count())
{
    require_support_in_domain(model, psi);
    auto const [panels, nt] = support_grid(psi, psi.support_radius() / 24.0);
    std::vector<Complex> z;
    std::vector<double> w;
    for_each_support_node(psi, panels, nt, [&](Complex p, double wt) {
        if (psi(p) != 0.0)
        {
            z.push_back(p);
            w.push_back(wt);
        }
    });
    std::vector<double> part(z.size());
    parallel_for(z.size(), threads, [&](std::size_t i) {
        part[i] = w[i] * psi(z[i]) * kernel_log_laplacian(model, z[i]);
    });
    double total = 0;
    for (double v : part)
        total += v;
    return total / (4 * pi * model.L());
}

/// Expected number of zeros in a disc, (1/4pi) int_D Laplacian(log K(z,z)) dm.
inline double expected_count(KernelModel const& model, Disc const& d,
                             unsigned threads = default_thread_count())
{
    model.basis().check_domain(Complex(d.max_abs(), 0.0));
    double const rho_lo = detail::rho_range(model.rho_field(), d.bounding_box(), 9).first;
    TestFunction const shape(PolynomialBump{d.center, d.radius, 1.0});
    auto const [panels, nt] = support_grid(shape, 0.5 * rho_lo);
    std::vector<Complex> z;
    std::vector<double> w;
    for_each_support_node(shape, panels, nt, [&](Complex p, double wt) {
        z.push_back(p);
        w.push_back(wt);
    });
    std::vector<double> part(z.size());
    parallel_for(z.size(), threads,
                 [&](std::size_t i) { part[i] = w[i] * kernel_log_laplacian(model, z[i]); });
    double total = 0;
    for (double v : part)
        total += v;
    return total / (4 * pi);
}

/// Coordinates that factor the normalized covariance as
/// K(z,w) e^(-phi(z)-phi(w)) = sum_n left(z)_n conj(right(w)_n).
/// For frames, right = conj(M) left with M the frame Gram operator in the
/// basis coordinates.
class CovarianceCoords
{
  public:
    struct Vec
    {
        int lo = 0;
        std::vector<Complex> v;
    };

    explicit CovarianceCoords(KernelModel const& model) : model_(model)
    {
        if (model.form() != GafForm::Frame)
            return;
        BasisModel const& b = model.basis();
        n_ = b.n_max() + 1;
        cm_.assign(std::size_t(n_) * n_, 0.0);
        auto const& seq = model.sequence();
        auto const& scale = model.frame_scale();
        for (std::size_t i = 0; i < seq.points.size(); ++i)
        {
            Vec t = trimmed(seq.points[i]);
            double const s2 = scale[i] * scale[i];
            int const m = int(t.v.size());
            for (int a = 0; a < m; ++a)
            {
                Complex const ta = s2 * t.v[a];
                Complex* row = &cm_[std::size_t(t.lo + a) * n_ + t.lo];
                for (int c = 0; c < m; ++c)
                    row[c] += ta * std::conj(t.v[c]);
            }
        }
    }

    Vec left(Complex z) const { return trimmed(z); }

    Vec right(Complex z) const
    {
        Vec t = trimmed(z);
        if (model_.form() != GafForm::Frame)
            return t;
        Vec out{0, std::vector<Complex>(n_, 0.0)};
        int const m = int(t.v.size());
        for (int r = 0; r < n_; ++r)
        {
            Complex const* row = &cm_[std::size_t(r) * n_ + t.lo];
            Complex acc = 0;
            for (int c = 0; c < m; ++c)
                acc += row[c] * t.v[c];
            out.v[r] = acc;
        }
        return out;
    }

    static Complex dot(Vec const& a, Vec const& b)
    {
        int const lo = std::max(a.lo, b.lo);
        int const hi = std::min(a.lo + int(a.v.size()), b.lo + int(b.v.size()));
        Complex acc = 0;
        for (int n = lo; n < hi; ++n)
            acc += a.v[n - a.lo] * std::conj(b.v[n - b.lo]);
        return acc;
    }

  private:
    // normalized terms with negligible leading and trailing entries dropped
    Vec trimmed(Complex z) const
    {
        auto full = model_.basis().terms(z);
        double mx = 0;
        for (Complex t : full)
            mx = std::max(mx, std::norm(t));
        int lo = 0, hi = int(full.size());
        while (lo < hi && std::norm(full[lo]) < 1e-36 * mx)
            ++lo;
        while (hi > lo && std::norm(full[hi - 1]) < 1e-36 * mx)
            --hi;
        return {lo, std::vector<Complex>(full.begin() + lo, full.begin() + hi)};
    }

    KernelModel const& model_;
    int n_ = 0;
    std::vector<Complex> cm_;
};

struct PairIntegrals
{
    double variance = 0;     // (1/L^2) int int Lap psi Lap psi J_L
    double xi2_theta = 0;    // int int |Xi|^2 Theta Theta dnu dnu
    double sup_xi1 = 0;      // sup_z int |Xi(z,w)| dnu(w)
    double sup_xi2 = 0;      // sup_z int |Xi(z,w)|^2 dnu(w)
    double max_xi2 = 0;      // largest |Xi|^2 seen; at most 1 by Cauchy-Schwarz
    double min_j_term = 0;   // smallest series summand seen; nonnegative
    std::size_t nodes = 0;
};

namespace detail
{

// Double integrals over a square grid of the support at spacing
// min(rho_L)/3; pairs farther apart than cut_factor * max(rho_L) are
// dropped (|Xi|^2 there is below e^(-cut^2 / (2 pi)) for flat weights).
inline PairIntegrals pair_integrals(KernelModel const& model, TestFunction const& psi,
                                    bool with_nu, unsigned threads)
{
    require_support_in_domain(model, psi);
    RhoField const& field = model.rho_field();
    Disc const supp = psi.support();
    auto const [rho_lo, rho_hi] = rho_range(field, supp.bounding_box(), 9);
    double const h = rho_lo / 3.0;
    double const cut = (with_nu ? 17.0 : 12.0) * rho_hi;
    int const half = int(std::ceil(supp.radius / h));
    int const side = 2 * half + 1;

    std::vector<int> index(std::size_t(side) * side, -1);
    std::vector<Complex> z;
    std::vector<int> gx, gy;
    for (int j = 0; j < side; ++j)
        for (int i = 0; i < side; ++i)
        {
            Complex const p = supp.center + Complex((i - half) * h, (j - half) * h);
            if (std::abs(p - supp.center) >= supp.radius)
                continue;
            index[std::size_t(j) * side + i] = int(z.size());
            z.push_back(p);
            gx.push_back(i);
            gy.push_back(j);
        }
    std::size_t const n = z.size();
    GAFSIM_REQUIRE(n > 0, ErrorCode::QuadratureFailure, "support holds no grid nodes");

    CovarianceCoords const coords(model);
    std::vector<CovarianceCoords::Vec> left(n), right(n);
    std::vector<double> lap(n), diag(n), inv_rho2(n, 0.0);
    RhoField unit(model.weight(), 1.0);
    parallel_for(n, threads, [&](std::size_t i) {
        left[i] = coords.left(z[i]);
        right[i] = coords.right(z[i]);
        diag[i] = CovarianceCoords::dot(left[i], right[i]).real();
        lap[i] = psi.laplacian(z[i]);
        if (with_nu)
        {
            double const r = unit.rho(z[i]);
            inv_rho2[i] = 1.0 / (r * r);
        }
    });
    double const area = h * h;
    double c_nu = 0;
    for (double v : inv_rho2)
        c_nu += v * area;

    int const reach = int(std::ceil(cut / h));
    struct Row
    {
        double var = 0, xi2t = 0, xi1 = 0, xi2 = 0, max_xi2 = 0, min_term = 0;
    };
    std::vector<Row> rows(n);
    parallel_for(n, threads, [&](std::size_t i) {
        Row r;
        if (lap[i] == 0.0 && !with_nu)
            return;
        for (int dy = -reach; dy <= reach; ++dy)
        {
            int const yy = gy[i] + dy;
            if (yy < 0 || yy >= side)
                continue;
            for (int dx = -reach; dx <= reach; ++dx)
            {
                int const xx = gx[i] + dx;
                if (xx < 0 || xx >= side || (dx * dx + dy * dy) * h * h > cut * cut)
                    continue;
                int const j = index[std::size_t(yy) * side + xx];
                if (j < 0)
                    continue;
                Complex const k = CovarianceCoords::dot(left[i], right[j]);
                double const x2 = std::norm(k) / (diag[i] * diag[j]);
                r.max_xi2 = std::max(r.max_xi2, x2);
                double const xc = std::min(x2, 1.0);
                r.min_term = std::min(r.min_term, xc);
                double const ll = lap[i] * lap[j] * area * area;
                r.var += ll * special::dilog(xc);
                r.xi2t += ll * xc;
                if (with_nu)
                {
                    r.xi1 += std::sqrt(xc) * inv_rho2[j] * area;
                    r.xi2 += xc * inv_rho2[j] * area;
                }
            }
        }
        rows[i] = r;
    });
    PairIntegrals out;
    out.nodes = n;
    double const L = model.L();
    for (Row const& r : rows)
    {
        out.variance += r.var;
        out.xi2_theta += r.xi2t;
        out.sup_xi1 = std::max(out.sup_xi1, r.xi1);
        out.sup_xi2 = std::max(out.sup_xi2, r.xi2);
        out.max_xi2 = std::max(out.max_xi2, r.max_xi2);
        out.min_j_term = std::min(out.min_j_term, r.min_term);
    }
    out.variance /= 16 * pi * pi * L * L;
    out.xi2_theta /= 4 * pi * pi;
    if (with_nu)
    {
        out.sup_xi1 /= c_nu;
        out.sup_xi2 /= c_nu;
    }
    return out;
}

}  // namespace detail

struct VarianceTheory
{
    double exact = 0;      // double integral against J_L
    double surrogate = 0;  // (1/L^2) int (Laplacian psi)^2 rho_L^2 dm
    double max_xi2 = 0;
    double ratio() const { return exact / surrogate; }
};

inline double variance_surrogate(KernelModel const& model, TestFunction const& psi)
{
    RhoField const& field = model.rho_field();
    auto const [panels, nt] = support_grid(psi, psi.support_radius() / 24.0);
    double total = 0;
    for_each_support_node(psi, panels, nt, [&](Complex z, double wt) {
        double const l = psi.laplacian(z);
        if (l == 0.0)
            return;
        double const r = field.rho(z);
        total += wt * l * l * r * r;
    });
    double const L = model.L();
    return total / (L * L);
}

inline VarianceTheory variance_theoretical(KernelModel const& model, TestFunction const& psi,
                                           unsigned threads = default_thread_count())
{
    auto const p = detail::pair_integrals(model, psi, false, threads);
    return {p.variance, variance_surrogate(model, psi), p.max_xi2};
}

struct NormalityConditions
{
    double ratio_liminf_proxy = 0;  // int int |Xi|^2 Theta Theta / sup int |Xi|^2 dnu
    double sup_integral = 0;        // sup_z int |Xi| dnu
    double sup_integral_sq = 0;     // sup_z int |Xi|^2 dnu
    double numerator = 0;
};

inline NormalityConditions normality_conditions(KernelModel const& model,
                                                TestFunction const& psi,
                                                unsigned threads = default_thread_count())
{
    auto const p = detail::pair_integrals(model, psi, true, threads);
    return {p.xi2_theta / p.sup_xi2, p.sup_xi1, p.sup_xi2, p.xi2_theta};
}

}  // namespace gafsim
