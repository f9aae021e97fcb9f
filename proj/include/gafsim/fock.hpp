#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "measure.hpp"
#include "numerics/quadrature.hpp"
#include "sampling_sequence.hpp"
#include "types.hpp"

namespace gafsim
{

struct BasisOptions
{
    /// Compute norms at L = 1 and rescale (exact for radial weights);
    /// otherwise integrate against rho_L directly.
    bool use_scaling = true;
    int n_cap = 20000;
    double tail_target = 1e-10;
    /// Multiplies the certified truncation order (1 keeps it).
    double n_max_factor = 1.0;
    /// Forces the truncation order when positive.
    int n_max_override = 0;
};

namespace detail
{

/// Nodes and log-weights for int_0^inf v^(2n+1) e^(-v^alpha) 2 pi / rho(v)^2 dv,
/// good for every n <= n_top.
struct NormTable
{
    std::vector<double> log_v;
    std::vector<double> v_alpha;
    std::vector<double> log_w;
};

inline NormTable make_norm_table(double alpha, int n_top,
                                 std::function<double(double)> const& rho_v)
{
    // The n-th integrand peaks where alpha v^alpha = 2n + 1 with width
    // v^(1 - alpha/2) / alpha there; panels are half that wide.
    auto step = [alpha](double v) {
        double const width = std::pow(v, 1.0 - 0.5 * alpha) / alpha;
        double const cap = alpha >= 2.0 ? 0.25 : HUGE_VAL;
        return std::clamp(0.5 * width, 0.01, cap);
    };
    double const peak = (2.0 * n_top + 1.0) / alpha;
    double const v_max = std::pow(2.0 * peak + 80.0, 1.0 / alpha);

    std::vector<std::pair<double, double>> panels;
    double const h0 = 0.05;
    double lo = h0 * std::ldexp(1.0, -12);
    panels.emplace_back(0.0, lo);
    for (int k = 11; k >= 0; --k)
    {
        double const hi = h0 * std::ldexp(1.0, -k);
        panels.emplace_back(lo, hi);
        lo = hi;
    }
    while (lo < v_max)
    {
        double const hi = lo + step(lo);
        panels.emplace_back(lo, hi);
        lo = hi;
    }

    auto const& gl = quad::gauss_legendre(20);
    NormTable t;
    for (auto [a, b] : panels)
    {
        double const c = 0.5 * (a + b), half = 0.5 * (b - a);
        for (std::size_t q = 0; q < gl.nodes.size(); ++q)
        {
            double const v = c + half * gl.nodes[q];
            double const rho = rho_v(v);
            t.log_v.push_back(std::log(v));
            t.v_alpha.push_back(std::pow(v, alpha));
            t.log_w.push_back(std::log(gl.weights[q] * half * 2.0 * pi * v)
                              - 2.0 * std::log(rho));
        }
    }
    return t;
}

/// log of int v^(2n+1) e^(-v^alpha) 2 pi / rho^2 dv for n = 0..n_top.
inline std::vector<double> log_moments(NormTable const& t, int n_top)
{
    std::vector<double> out(n_top + 1);
    std::size_t const size = t.log_v.size();
    for (int n = 0; n <= n_top; ++n)
    {
        // 2n log v - v^alpha is unimodal in v; scan outward from its peak.
        auto smooth = [&](std::size_t k) {
            return 2.0 * n * t.log_v[k] - t.v_alpha[k];
        };
        std::size_t best = 0;
        {
            std::size_t a = 0, b = size - 1;
            while (b - a > 2)
            {
                std::size_t const m1 = a + (b - a) / 3, m2 = b - (b - a) / 3;
                if (smooth(m1) < smooth(m2))
                    a = m1;
                else
                    b = m2;
            }
            best = a;
            for (std::size_t k = a; k <= b; ++k)
                if (smooth(k) > smooth(best))
                    best = k;
        }
        double const top = smooth(best);
        std::size_t first = best, last = best;
        while (first > 0 && smooth(first - 1) > top - 90.0)
            --first;
        while (last + 1 < size && smooth(last + 1) > top - 90.0)
            ++last;
        double m = -HUGE_VAL;
        for (std::size_t k = first; k <= last; ++k)
            m = std::max(m, t.log_w[k] + smooth(k));
        double acc = 0.0;
        for (std::size_t k = first; k <= last; ++k)
            acc += std::exp(t.log_w[k] + smooth(k) - m);
        out[n] = m + std::log(acc);
    }
    return out;
}

inline int norm_bucket(int n_top)
{
    int b = 256;
    while (b < n_top + 2)
        b *= 2;
    return b;
}

/// log c_n^2 at L = 1 for a radial power, cached per (alpha, bucket) so
/// results do not depend on call order.
inline std::shared_ptr<std::vector<double> const>
unit_log_moments(double alpha, int bucket)
{
    static std::mutex mutex;
    static std::map<std::pair<double, int>, std::shared_ptr<std::vector<double> const>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{alpha, bucket}];
    if (!slot)
    {
        RhoField field(WeightSpec::radial_power(alpha), 1.0,
                       RhoField::Options{1e-12, 1e-12});
        auto table = make_norm_table(alpha, bucket,
                                     [&](double v) { return field.solve(v); });
        slot = std::make_shared<std::vector<double> const>(log_moments(table, bucket));
    }
    return slot;
}

}  // namespace detail

/// Orthonormal monomial basis e_n(z) = z^n / ||z^n|| of the weighted space,
/// truncated at n_max with a certified tail on |z| <= domain_radius.
///
/// For phi = (Re z)^2 the space is the alpha = 2 space multiplied by
/// exp(L z^2 / 2), so e_n carries that gauge factor.
class BasisModel
{
  public:
    BasisModel(WeightSpec weight, double L, double domain_radius,
               BasisOptions const& opt = {})
        : weight_(std::move(weight)), L_(L), domain_radius_(domain_radius)
    {
        GAFSIM_REQUIRE(L >= 1 && std::isfinite(L), ErrorCode::InvalidArgument,
                       "basis needs L >= 1");
        GAFSIM_REQUIRE(domain_radius > 0 && std::isfinite(domain_radius),
                       ErrorCode::InvalidArgument, "basis needs domain_radius > 0");
        if (weight_.is_radial())
        {
            alpha_ = weight_.alpha();
        }
        else if (std::holds_alternative<RealPartSquare>(weight_.kind()))
        {
            alpha_ = 2.0;
            gauge_ = true;
        }
        else
        {
            throw Error(ErrorCode::UnsupportedWeight,
                        "no orthonormal basis is available for " + weight_.name());
        }
        build(opt);
    }

    WeightSpec const& weight() const { return weight_; }
    double alpha() const { return alpha_; }
    double L() const { return L_; }
    int n_max() const { return n_max_; }
    double domain_radius() const { return domain_radius_; }
    double tail_bound() const { return tail_bound_; }
    bool gauged() const { return gauge_; }

    /// log ||z^n|| in the weighted space, n = 0..n_max.
    std::vector<double> const& log_norms() const { return log_norms_; }
    double norm(int n) const { return std::exp(log_norms_.at(n)); }
    std::vector<double> norms() const
    {
        std::vector<double> out;
        for (double v : log_norms_)
            out.push_back(std::exp(v));
        return out;
    }
    /// ||z^(n-1)|| / ||z^n||.
    double ratio(int n) const { return ratio_[n]; }

    double phi_L(Complex z) const { return L_ * weight_.phi(z); }

    void check_domain(Complex z) const
    {
        if (!(std::abs(z) <= domain_radius_ * (1 + 1e-12)))
        {
            throw Error(ErrorCode::OutOfCertifiedDomain,
                        "|z| = " + std::to_string(std::abs(z))
                            + " exceeds certified radius "
                            + std::to_string(domain_radius_));
        }
    }

    /// Calls f(n, t_n) with t_n = (z^n / ||z^n||) exp(-s(z)), where s is the
    /// radial part of phi_L. Stops once the remaining terms are negligible.
    template<class F>
    void for_each_term(Complex z, F&& f) const
    {
        constexpr double big = 1e100, ln_big = 230.25850929940458;
        double const az = std::abs(z);
        Complex m = 1.0;
        double log_scale = -log_norms_[0] - series_ref(az);
        double factor = std::exp(log_scale);
        double tmax = 0.0;
        for (int n = 0; n <= n_max_; ++n)
        {
            if (n > 0)
            {
                m *= z * ratio_[n];
                double const am = std::abs(m.real()) + std::abs(m.imag());
                if (am > big)
                {
                    m /= big;
                    log_scale += ln_big;
                    factor = std::exp(log_scale);
                }
                else if (am < 1.0 / big)
                {
                    if (am == 0.0)
                    {
                        f(n, Complex(0.0));
                        break;
                    }
                    m *= big;
                    log_scale -= ln_big;
                    factor = std::exp(log_scale);
                }
            }
            Complex const t = m * factor;
            f(n, t);
            double const at = std::norm(t);
            tmax = std::max(tmax, at);
            if (n + 1 <= n_max_ && az * ratio_[n + 1] < 1.0 && at <= 1e-36 * tmax)
                break;
        }
    }

    /// e_n(z) exp(-phi_L(z)) for n = 0..n_max.
    std::vector<Complex> terms(Complex z) const
    {
        check_domain(z);
        std::vector<Complex> out(n_max_ + 1, 0.0);
        Complex const ph = gauge_phase(z);
        for_each_term(z, [&](int n, Complex t) { out[n] = ph * t; });
        return out;
    }

    struct Value
    {
        Complex f;   // sum c_n e_n(z) exp(-phi_L(z))
        Complex df;  // sum c_n e_n'(z) exp(-phi_L(z))
    };

    Value evaluate(std::span<Complex const> coeffs, Complex z, bool derivative) const
    {
        check_domain(z);
        Complex s = 0.0, ds = 0.0, prev = 0.0;
        std::size_t const size = coeffs.size();
        for_each_term(z, [&](int n, Complex t) {
            if (std::size_t(n) < size)
            {
                s += coeffs[n] * t;
                if (derivative && n > 0)
                    ds += coeffs[n] * (double(n) * ratio_[n]) * prev;
            }
            prev = t;
        });
        if (!gauge_)
            return {s, ds};
        Complex const ph = gauge_phase(z);
        return {ph * s, ph * (ds + L_ * z * s)};
    }

    /// K(z, z) exp(-2 phi_L(z)).
    double diag_normalized(Complex z) const
    {
        check_domain(z);
        double acc = 0.0;
        for_each_term(z, [&](int, Complex t) { acc += std::norm(t); });
        return acc;
    }

    /// K(z, w) exp(-phi_L(z) - phi_L(w)).
    Complex kernel_normalized(Complex z, Complex w) const
    {
        auto const tw = terms(w);
        auto const tz = terms(z);
        Complex acc = 0.0;
        for (int n = 0; n <= n_max_; ++n)
            acc += tz[n] * std::conj(tw[n]);
        return acc;
    }

    Complex gauge_phase(Complex z) const
    {
        if (!gauge_)
            return 1.0;
        return std::polar(1.0, 0.5 * L_ * (z * z).imag());
    }

  private:
    double series_ref(double az) const
    {
        return 0.5 * L_ * std::pow(az, alpha_);
    }

    void build(BasisOptions const& opt)
    {
        double const log_L = std::log(L_);
        auto compute = [&](int n_top) {
            int const bucket = detail::norm_bucket(n_top);
            std::vector<double> out;
            if (opt.use_scaling)
            {
                auto unit = detail::unit_log_moments(alpha_, bucket);
                for (int n = 0; n <= bucket; ++n)
                    out.push_back((*unit)[n] - 2.0 * n / alpha_ * log_L);
            }
            else
            {
                RhoField field(WeightSpec::radial_power(alpha_), L_,
                               RhoField::Options{1e-12, 1e-12});
                double const scale = std::pow(L_, -1.0 / alpha_);
                auto table = detail::make_norm_table(
                    alpha_, bucket, [&](double v) {
                        return field.solve(v * scale);
                    });
                auto lm = detail::log_moments(table, bucket);
                for (int n = 0; n <= bucket; ++n)
                    out.push_back(lm[n] - (2.0 * n + 2.0) / alpha_ * log_L);
            }
            for (double& v : out)
                v *= 0.5;
            return out;
        };

        double const log_R = std::log(domain_radius_);
        auto log_term = [&](std::vector<double> const& ln, int n) {
            return 2.0 * n * log_R - 2.0 * ln[n];
        };
        // Relative tail after N; geometric bound valid once the ratios
        // ||z^n||^2 / ||z^(n+1)||^2 decrease, i.e. under log-convexity.
        auto tail_after = [&](std::vector<double> const& ln, int N,
                              double log_partial) {
            double const l1 = log_term(ln, N + 1), l2 = log_term(ln, N + 2);
            double const q = std::exp(l2 - l1);
            if (!(q < 1.0))
                return HUGE_VAL;
            return std::exp(l1 - std::log1p(-q) - log_partial);
        };

        double const peak = 0.5 * alpha_ * L_ * std::pow(domain_radius_, alpha_);
        int guess = int(peak + 12.0 * std::sqrt(alpha_ * (peak + 1.0)) + 30.0);
        if (opt.n_max_override > 0)
            guess = opt.n_max_override;
        std::vector<double> ln;
        int chosen = -1;
        double tail = HUGE_VAL;
        while (true)
        {
            GAFSIM_REQUIRE(guess <= opt.n_cap, ErrorCode::TruncationBudgetExceeded,
                           "certified truncation needs more than "
                               + std::to_string(opt.n_cap) + " terms");
            ln = compute(guess + 2);
            int const top = int(ln.size()) - 3;
            double log_partial = -HUGE_VAL;
            for (int N = 0; N <= top; ++N)
            {
                double const lt = log_term(ln, N);
                log_partial = std::max(log_partial, lt)
                              + std::log1p(std::exp(-std::abs(log_partial - lt)));
                if (opt.n_max_override > 0)
                {
                    if (N == opt.n_max_override)
                    {
                        chosen = N;
                        tail = tail_after(ln, N, log_partial);
                        break;
                    }
                    continue;
                }
                double const t = tail_after(ln, N, log_partial);
                if (t <= opt.tail_target)
                {
                    chosen = N;
                    tail = t;
                    break;
                }
            }
            if (chosen >= 0)
                break;
            guess = 2 * std::max(guess, top);
        }
        if (opt.n_max_factor != 1.0 && opt.n_max_override <= 0)
        {
            int const scaled = int(std::ceil(opt.n_max_factor * chosen));
            GAFSIM_REQUIRE(scaled <= opt.n_cap, ErrorCode::TruncationBudgetExceeded,
                           "scaled truncation exceeds the cap");
            if (scaled + 2 >= int(ln.size()))
                ln = compute(scaled + 2);
            double log_partial = -HUGE_VAL;
            for (int N = 0; N <= scaled; ++N)
            {
                double const lt = log_term(ln, N);
                log_partial = std::max(log_partial, lt)
                              + std::log1p(std::exp(-std::abs(log_partial - lt)));
            }
            chosen = scaled;
            tail = tail_after(ln, scaled, log_partial);
        }
        n_max_ = chosen;
        tail_bound_ = tail;
        log_norms_.assign(ln.begin(), ln.begin() + n_max_ + 1);
        // One extra ratio so the stopping rule can look ahead.
        ratio_.assign(n_max_ + 2, 0.0);
        for (int n = 1; n <= n_max_ + 1; ++n)
            ratio_[n] = std::exp(ln[n - 1] - ln[n]);
    }

    WeightSpec weight_;
    double L_;
    double alpha_ = 2.0;
    bool gauge_ = false;
    double domain_radius_;
    int n_max_ = 0;
    double tail_bound_ = 0;
    std::vector<double> log_norms_;
    std::vector<double> ratio_;
};

inline std::shared_ptr<BasisModel const>
build_basis(WeightSpec const& weight, double L, double domain_radius,
            BasisOptions const& opt = {})
{
    return std::make_shared<BasisModel const>(weight, L, domain_radius, opt);
}

inline std::shared_ptr<BasisModel const>
build_basis(double alpha, double L, double domain_radius, BasisOptions const& opt = {})
{
    return build_basis(WeightSpec::radial_power(alpha), L, domain_radius, opt);
}

enum class GafForm
{
    Basis,
    Frame
};

inline char const* to_string(GafForm f)
{
    return f == GafForm::Basis ? "basis" : "frame";
}

/// Reproducing kernel of the basis (sum_n e_n(z) conj e_n(w)) or the frame
/// kernel sum_lambda k_lambda(z) conj k_lambda(w), with
/// k_lambda = K(., lambda) / K(lambda, lambda)^(1/2).
class KernelModel
{
  public:
    static std::shared_ptr<KernelModel const>
    from_basis(std::shared_ptr<BasisModel const> basis)
    {
        return std::shared_ptr<KernelModel const>(
            new KernelModel(std::move(basis), nullptr));
    }

    static std::shared_ptr<KernelModel const>
    from_frame(std::shared_ptr<BasisModel const> basis,
               std::shared_ptr<SamplingSequence const> sequence)
    {
        GAFSIM_REQUIRE(sequence && !sequence->points.empty(),
                       ErrorCode::InvalidArgument, "empty sampling sequence");
        GAFSIM_REQUIRE(std::abs(sequence->L - basis->L()) <= 1e-12 * basis->L(),
                       ErrorCode::InvalidArgument,
                       "sampling sequence and basis use different L");
        return std::shared_ptr<KernelModel const>(
            new KernelModel(std::move(basis), std::move(sequence)));
    }

    GafForm form() const { return sequence_ ? GafForm::Frame : GafForm::Basis; }
    BasisModel const& basis() const { return *basis_; }
    std::shared_ptr<BasisModel const> basis_ptr() const { return basis_; }
    SamplingSequence const& sequence() const
    {
        GAFSIM_REQUIRE(sequence_ != nullptr, ErrorCode::InvalidArgument,
                       "basis-form kernel has no sampling sequence");
        return *sequence_;
    }
    double L() const { return basis_->L(); }
    WeightSpec const& weight() const { return basis_->weight(); }
    RhoField const& rho_field() const { return *rho_; }

    /// 1 / K(lambda, lambda)^(1/2) in normalized units, per frame point.
    std::vector<double> const& frame_scale() const { return frame_scale_; }

    /// K(z, z) exp(-2 phi_L(z)).
    double diag_normalized(Complex z) const
    {
        if (!sequence_)
            return basis_->diag_normalized(z);
        auto const tz = basis_->terms(z);
        double acc = 0.0;
        for_near(z, [&](std::size_t, Complex k) { acc += std::norm(k); }, tz);
        return acc;
    }

    /// K(z, w) exp(-phi_L(z) - phi_L(w)).
    Complex normalized(Complex z, Complex w) const
    {
        if (!sequence_)
            return basis_->kernel_normalized(z, w);
        auto const tz = basis_->terms(z);
        auto const tw = basis_->terms(w);
        Complex acc = 0.0;
        for_near(z, [&](std::size_t i, Complex kz) {
            acc += kz * std::conj(frame_value(i, tw));
        }, tz);
        return acc;
    }

    /// Normalized k_lambda_i at the point whose normalized terms are `t`.
    Complex frame_value(std::size_t i, std::vector<Complex> const& t) const
    {
        auto const& tl = lambda_terms(i);
        Complex acc = 0.0;
        for (std::size_t n = 0; n < t.size(); ++n)
            acc += t[n] * std::conj(tl[n]);
        return acc * frame_scale_[i];
    }

    /// Radius beyond which frame terms are dropped in kernel evaluation.
    double frame_cutoff(Complex z) const { return 16.0 * rho_->rho(z); }

  private:
    KernelModel(std::shared_ptr<BasisModel const> basis,
                std::shared_ptr<SamplingSequence const> sequence)
        : basis_(std::move(basis)), sequence_(std::move(sequence))
    {
        rho_ = std::make_shared<RhoField>(basis_->weight(), basis_->L(),
                                          RhoField::Options{1e-11, 1e-12});
        if (sequence_)
        {
            auto const& pts = sequence_->points;
            frame_scale_.resize(pts.size());
            for (std::size_t i = 0; i < pts.size(); ++i)
                frame_scale_[i] = 1.0 / std::sqrt(basis_->diag_normalized(pts[i]));
            double rmax = 0.0;
            for (double r : sequence_->rho)
                rmax = std::max(rmax, r);
            cell_ = 16.0 * rmax;
            for (std::size_t i = 0; i < pts.size(); ++i)
                grid_[cell_key(pts[i])].push_back(i);
        }
    }

    std::pair<long long, long long> cell_key(Complex z) const
    {
        return {(long long)std::floor(z.real() / cell_),
                (long long)std::floor(z.imag() / cell_)};
    }

    std::vector<Complex> lambda_terms(std::size_t i) const
    {
        return basis_->terms(sequence_->points[i]);
    }

    template<class F>
    void for_near(Complex z, F&& f, std::vector<Complex> const& tz) const
    {
        double const cut = frame_cutoff(z);
        auto const [cx, cy] = cell_key(z);
        int const reach = int(std::ceil(cut / cell_));
        for (long long gy = cy - reach; gy <= cy + reach; ++gy)
        {
            for (long long gx = cx - reach; gx <= cx + reach; ++gx)
            {
                auto it = grid_.find({gx, gy});
                if (it == grid_.end())
                    continue;
                for (std::size_t i : it->second)
                {
                    if (std::abs(sequence_->points[i] - z) <= cut)
                        f(i, frame_value(i, tz));
                }
            }
        }
    }

    struct PairHash
    {
        std::size_t operator()(std::pair<long long, long long> const& k) const noexcept
        {
            return std::size_t(k.first * 0x9E3779B97F4A7C15ll ^ k.second);
        }
    };

    std::shared_ptr<BasisModel const> basis_;
    std::shared_ptr<SamplingSequence const> sequence_;
    std::shared_ptr<RhoField> rho_;
    std::vector<double> frame_scale_;
    double cell_ = 1.0;
    std::unordered_map<std::pair<long long, long long>, std::vector<std::size_t>, PairHash> grid_;
};

/// K_L(z, w). Overflows to infinity when phi_L is large; use
/// KernelModel::normalized for the scaled value.
inline Complex kernel_eval(KernelModel const& model, Complex z, Complex w)
{
    Complex const v = model.normalized(z, w);
    BasisModel const& b = model.basis();
    return v * std::exp(b.phi_L(z) + b.phi_L(w));
}

/// Five-point Laplacian of log K(z, z) with step 1e-3 rho_L(z). The smooth
/// factor exp(2 phi_L) is differentiated analytically where its Laplacian
/// is finite.
inline double kernel_log_laplacian(KernelModel const& model, Complex z)
{
    double const h = 1e-3 * model.rho_field().rho(z);
    BasisModel const& b = model.basis();
    b.check_domain(Complex(std::abs(z) + 2 * h, 0));
    double const density = model.weight().density(z);
    bool const split = std::isfinite(density) && std::abs(z) > 4 * h;
    auto f = [&](Complex p) {
        double v = std::log(model.diag_normalized(p));
        if (!split)
            v += 2.0 * (b.phi_L(p) - b.phi_L(z));
        return v;
    };
    double const c = f(z);
    double const lap = (f(z + h) + f(z - h) + f(z + Complex(0, h))
                        + f(z - Complex(0, h)) - 4.0 * c)
                       / (h * h);
    return split ? lap + 2.0 * model.L() * density : lap;
}

namespace detail
{

/// sup over |z| <= r of int_{|zeta| > R} |K(z,zeta)|^2 e^(-2phi(z)-2phi(zeta))
/// dm / rho^2 for a basis kernel with radially symmetric |K|, by expanding
/// in the orthonormal basis: only diagonal terms survive the angular
/// integral.
inline double fast_decay_radial(BasisModel const& b, RhoField const& field,
                                double r, double R)
{
    double const alpha = b.alpha(), L = b.L();
    int const N = b.n_max();
    auto const& ln = b.log_norms();
    double const scale = std::pow(L, -1.0 / alpha);
    auto sigma = [alpha](int n) {
        double const k = 2.0 * n + 1.0;
        return std::pow(k / alpha, 1.0 / alpha) / std::sqrt(alpha * k);
    };
    double const h = scale * std::min({0.25, 0.5 * sigma(0), 0.5 * sigma(N)});
    double const end = scale * std::pow(2.0 * (2.0 * N + 1.0) / alpha + 80.0, 1.0 / alpha);
    // Outside mass of each |e_n|^2.
    std::vector<double> outside(N + 1, 0.0);
    if (end > R)
    {
        auto const& gl = quad::gauss_legendre(20);
        int const panels = int(std::ceil((end - R) / h));
        double const width = (end - R) / panels;
        for (int p = 0; p < panels; ++p)
        {
            double const c = R + (p + 0.5) * width;
            for (std::size_t q = 0; q < gl.nodes.size(); ++q)
            {
                double const s = c + 0.5 * width * gl.nodes[q];
                double const rho = b.gauged() ? field.rho(0.0) : field.rho(s);
                double const log_w = std::log(gl.weights[q] * 0.5 * width * 2 * pi * s)
                                     - 2.0 * std::log(rho) - L * std::pow(s, alpha);
                double const log_s = std::log(s);
                for (int n = 0; n <= N; ++n)
                {
                    double const e = log_w + 2.0 * n * log_s - 2.0 * ln[n];
                    if (e > -745.0)
                        outside[n] += std::exp(e);
                }
            }
        }
    }
    double best = 0.0;
    for (int k = 0; k <= 32; ++k)
    {
        double const az = r * k / 32.0;
        double acc = 0.0;
        b.for_each_term(Complex(az, 0.0), [&](int n, Complex t) {
            acc += std::norm(t) * outside[n];
        });
        best = std::max(best, acc);
    }
    return best;
}

}  // namespace detail

/// sup_{z in D(z0, r)} e^(-2 phi_L(z)) int_{|zeta - z0| > R} |K(z, zeta)|^2
/// e^(-2 phi_L(zeta)) dm(zeta) / rho_L(zeta)^2, radii in the Euclidean metric.
inline double fast_decay_integral(KernelModel const& model, Complex z0,
                                  double r, double R)
{
    GAFSIM_REQUIRE(R > r && r > 0, ErrorCode::InvalidArgument,
                   "fast_decay_integral needs R > r > 0");
    BasisModel const& b = model.basis();
    bool const radial_modulus = b.weight().is_radial() || b.gauged();
    if (model.form() == GafForm::Basis && radial_modulus && z0 == Complex(0, 0))
        return detail::fast_decay_radial(b, model.rho_field(), r, R);

    // General case: polar quadrature about z0 on annuli of width ~ 2 rho.
    std::vector<Complex> zs{z0};
    for (int i = 1; i <= 4; ++i)
        for (int j = 0; j < 8; ++j)
            zs.push_back(z0 + std::polar(r * i / 4.0, 2 * pi * j / 8.0));
    std::vector<std::vector<Complex>> tz;
    for (Complex z : zs)
        tz.push_back(b.terms(z));
    auto kernel_norm2 = [&](std::size_t iz, std::vector<Complex> const& tw,
                            Complex w) {
        if (model.form() == GafForm::Basis)
        {
            Complex acc = 0.0;
            for (std::size_t n = 0; n < tw.size(); ++n)
                acc += tz[iz][n] * std::conj(tw[n]);
            return std::norm(acc);
        }
        return std::norm(model.normalized(zs[iz], w));
    };

    auto const& gl = quad::gauss_legendre(8);
    double const rho0 = model.rho_field().rho(z0);
    double const width = 2.0 * rho0;
    std::vector<double> acc(zs.size(), 0.0);
    int quiet = 0;
    for (int k = 0; quiet < 2; ++k)
    {
        double const s0 = R + k * width;
        std::vector<double> ring(zs.size(), 0.0);
        for (std::size_t q = 0; q < gl.nodes.size(); ++q)
        {
            double const s = s0 + 0.5 * width * (1 + gl.nodes[q]);
            int const nt = std::max(64, 8 * int(std::ceil(2 * pi * s / rho0)));
            for (int j = 0; j < nt; ++j)
            {
                Complex const w = z0 + std::polar(s, 2 * pi * (j + 0.5) / nt);
                b.check_domain(w);
                double const rw = model.rho_field().rho(w);
                auto const tw = b.terms(w);
                double const weight = gl.weights[q] * 0.5 * width * s * (2 * pi / nt)
                                      / (rw * rw);
                for (std::size_t iz = 0; iz < zs.size(); ++iz)
                    ring[iz] += weight * kernel_norm2(iz, tw, w);
            }
        }
        bool small = true;
        for (std::size_t iz = 0; iz < zs.size(); ++iz)
        {
            acc[iz] += ring[iz];
            if (ring[iz] > 1e-16 * acc[iz])
                small = false;
        }
        quiet = small ? quiet + 1 : 0;
    }
    return *std::max_element(acc.begin(), acc.end());
}

}  // namespace gafsim
