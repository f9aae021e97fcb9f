#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "fock.hpp"
#include "measure.hpp"
#include "numerics/rng.hpp"
#include "sampling_sequence.hpp"
#include "types.hpp"

namespace gafsim
{

//---------------------------------------------------------------------------//
// Sampling sequences
//---------------------------------------------------------------------------//

struct SamplingOptions
{
    double pad_factor = 12.0;
    int max_densify_rounds = 20;
};

namespace detail
{

class PointHash
{
  public:
    explicit PointHash(double cell) : cell_(cell) {}

    void insert(Complex z, std::size_t index) { cells_[key(z)].push_back(index); }

    template<class F>
    void visit(Complex z, double radius, F&& f) const
    {
        auto const [cx, cy] = key(z);
        int const reach = int(std::ceil(radius / cell_));
        for (long long gy = cy - reach; gy <= cy + reach; ++gy)
            for (long long gx = cx - reach; gx <= cx + reach; ++gx)
            {
                auto it = cells_.find({gx, gy});
                if (it == cells_.end())
                    continue;
                for (std::size_t i : it->second)
                    if (!f(i))
                        return;
            }
    }

  private:
    using Key = std::pair<long long, long long>;
    struct Hash
    {
        std::size_t operator()(Key const& k) const noexcept
        {
            return std::size_t(k.first * 0x9E3779B97F4A7C15ll ^ k.second);
        }
    };
    Key key(Complex z) const
    {
        return {(long long)std::floor(z.real() / cell_),
                (long long)std::floor(z.imag() / cell_)};
    }

    double cell_;
    std::unordered_map<Key, std::vector<std::size_t>, Hash> cells_;
};

}  // namespace detail

/// Greedy rho_L-separated packing of a padded window, densified until every
/// point of `region` is within R rho_L of the sequence.
inline SamplingSequence make_sampling_sequence(RhoField const& field,
                                               Rect const& region, double delta,
                                               double R,
                                               SamplingOptions const& opt = {})
{
    GAFSIM_REQUIRE(delta > 0 && R > delta, ErrorCode::InvalidArgument,
                   "sampling sequence needs 0 < delta < R");
    GAFSIM_REQUIRE(!region.empty(), ErrorCode::InvalidArgument,
                   "sampling sequence needs a nonempty region");
    auto const [rho_lo0, rho_hi0] = detail::rho_range(field, region);
    Rect const window = region.padded(opt.pad_factor * R * rho_hi0);
    auto const [rho_lo, rho_hi] = detail::rho_range(field, window);

    SamplingSequence seq;
    seq.separation_delta = delta;
    seq.covering_R = R;
    seq.L = field.L();
    seq.region = region;
    seq.window = window;

    detail::PointHash hash(delta * rho_hi);
    // Lipschitz bound rho(z) <= rho(l) + |z - l| lets most candidates be
    // rejected without evaluating rho at them.
    auto try_add = [&](Complex z) {
        bool blocked = false;
        hash.visit(z, delta * rho_hi, [&](std::size_t i) {
            if (std::abs(z - seq.points[i]) < delta * seq.rho[i])
            {
                blocked = true;
                return false;
            }
            return true;
        });
        if (blocked)
            return false;
        double const rz = field.rho(z);
        hash.visit(z, delta * std::max(rz, rho_hi), [&](std::size_t i) {
            if (std::abs(z - seq.points[i]) < delta * std::max(rz, seq.rho[i]))
            {
                blocked = true;
                return false;
            }
            return true;
        });
        if (blocked)
            return false;
        hash.insert(z, seq.points.size());
        seq.points.push_back(z);
        seq.rho.push_back(rz);
        return true;
    };

    double const pitch = delta * rho_lo / 4.0;
    long long const nx = (long long)std::floor(window.width() / pitch) + 1;
    long long const ny = (long long)std::floor(window.height() / pitch) + 1;
    for (long long j = 0; j < ny; ++j)
        for (long long i = 0; i < nx; ++i)
            try_add(Complex(window.x0 + i * pitch, window.y0 + j * pitch));

    // Covering check on a probe grid with a Lipschitz margin for the gaps.
    double const probe = delta * rho_lo0 / 2.0;
    double const margin = (1.0 + R) * probe / std::sqrt(2.0);
    long long const px = (long long)std::ceil(region.width() / probe) + 1;
    long long const py = (long long)std::ceil(region.height() / probe) + 1;
    for (int round = 0;; ++round)
    {
        std::vector<Complex> uncovered;
        for (long long j = 0; j < py; ++j)
            for (long long i = 0; i < px; ++i)
            {
                Complex const z(std::min(region.x0 + i * probe, region.x1),
                                std::min(region.y0 + j * probe, region.y1));
                bool covered = false;
                double const reach = R * rho_hi + margin;
                hash.visit(z, reach, [&](std::size_t k) {
                    double const d = std::abs(z - seq.points[k]);
                    if (d * (1.0 + R) + margin <= R * seq.rho[k])
                    {
                        covered = true;
                        return false;
                    }
                    return true;
                });
                if (!covered)
                {
                    double const rz = field.rho(z);
                    hash.visit(z, reach, [&](std::size_t k) {
                        if (std::abs(z - seq.points[k]) + margin <= R * rz)
                        {
                            covered = true;
                            return false;
                        }
                        return true;
                    });
                }
                if (!covered)
                    uncovered.push_back(z);
            }
        if (uncovered.empty())
            break;
        if (round >= opt.max_densify_rounds)
        {
            throw Error(ErrorCode::CoverageFailure,
                        std::to_string(uncovered.size())
                            + " probe points remain uncovered; delta is too "
                              "large relative to R");
        }
        for (Complex z : uncovered)
            try_add(z);
    }
    return seq;
}

/// Smallest #(Lambda in D) / (L mu(D)) over probe discs D = D(z, r rho_L(z))
/// that fit inside the generation window.
inline double sampling_density_ratio(SamplingSequence const& seq,
                                     RhoField const& field,
                                     std::vector<double> const& radii = {5, 10, 20},
                                     int probes_per_axis = 5)
{
    double worst = HUGE_VAL;
    double rho_hi = 0.0;
    for (double r : seq.rho)
        rho_hi = std::max(rho_hi, r);
    detail::PointHash hash(rho_hi);
    for (std::size_t i = 0; i < seq.points.size(); ++i)
        hash.insert(seq.points[i], i);
    for (Complex z : detail::grid_points(seq.window, probes_per_axis + 2))
    {
        double const rz = field.rho(z);
        for (double r : radii)
        {
            Disc const d{z, r * rz};
            Rect const box = d.bounding_box();
            if (!seq.window.contains(box))
                continue;
            std::size_t count = 0;
            hash.visit(z, d.radius, [&](std::size_t i) {
                if (d.contains(seq.points[i]))
                    ++count;
                return true;
            });
            double const mass = mu_disc(field.weight(), z, d.radius, field.L());
            worst = std::min(worst, double(count) / mass);
        }
    }
    GAFSIM_REQUIRE(std::isfinite(worst), ErrorCode::InvalidArgument,
                   "no probe disc fits inside the window");
    return worst;
}

inline void write_sampling_csv(SamplingSequence const& seq, std::string const& path)
{
    std::ofstream out(path);
    GAFSIM_REQUIRE(out.good(), ErrorCode::InvalidArgument, "cannot write " + path);
    out << "re,im,rho_L\n" << std::setprecision(17);
    for (std::size_t i = 0; i < seq.points.size(); ++i)
        out << seq.points[i].real() << ',' << seq.points[i].imag() << ','
            << seq.rho[i] << '\n';
}

//---------------------------------------------------------------------------//
// GAF samples
//---------------------------------------------------------------------------//

/// One draw of the basis GAF sum a_n e_n or the frame GAF sum a_l k_l.
/// Frame draws are folded into series coefficients b_n on the same basis.
class GafSample
{
  public:
    GafSample(std::shared_ptr<KernelModel const> model, std::vector<Complex> coeffs,
              rng::StreamId id = {})
        : model_(std::move(model)), coeffs_(std::move(coeffs)), id_(id)
    {
        BasisModel const& b = model_->basis();
        if (model_->form() == GafForm::Basis)
        {
            GAFSIM_REQUIRE(coeffs_.size() == std::size_t(b.n_max() + 1),
                           ErrorCode::InvalidArgument,
                           "basis GAF needs n_max + 1 coefficients");
            series_ = coeffs_;
            return;
        }
        auto const& seq = model_->sequence();
        GAFSIM_REQUIRE(coeffs_.size() == seq.points.size(), ErrorCode::InvalidArgument,
                       "frame GAF needs one coefficient per frame point");
        series_.assign(b.n_max() + 1, 0.0);
        auto const& scale = model_->frame_scale();
        for (std::size_t i = 0; i < seq.points.size(); ++i)
        {
            Complex const a = coeffs_[i] * scale[i];
            b.check_domain(seq.points[i]);
            if (a == Complex(0.0))
                continue;
            Complex const ph = std::conj(b.gauge_phase(seq.points[i]));
            b.for_each_term(seq.points[i], [&](int n, Complex t) {
                series_[n] += a * ph * std::conj(t);
            });
        }
    }

    GafForm form() const { return model_->form(); }
    KernelModel const& model() const { return *model_; }
    std::shared_ptr<KernelModel const> model_ptr() const { return model_; }
    std::vector<Complex> const& coeffs() const { return coeffs_; }
    std::vector<Complex> const& series_coeffs() const { return series_; }
    rng::StreamId stream() const { return id_; }
    double L() const { return model_->L(); }

    /// f(z) e^(-phi_L(z)) and f'(z) e^(-phi_L(z)).
    BasisModel::Value eval_normalized(Complex z, bool derivative = true) const
    {
        return model_->basis().evaluate(series_, z, derivative);
    }

    Complex operator()(Complex z) const
    {
        return eval_normalized(z, false).f * std::exp(model_->basis().phi_L(z));
    }

    Complex derivative(Complex z) const
    {
        return eval_normalized(z, true).df * std::exp(model_->basis().phi_L(z));
    }

  private:
    std::shared_ptr<KernelModel const> model_;
    std::vector<Complex> coeffs_;
    std::vector<Complex> series_;
    rng::StreamId id_;
};

inline std::vector<Complex> gaussian_coefficients(rng::StreamId id, std::size_t count)
{
    std::vector<Complex> a(count);
    for (std::size_t i = 0; i < count; ++i)
        a[i] = rng::complex_gaussian(id, i);
    return a;
}

inline GafSample sample_basis_gaf(std::shared_ptr<KernelModel const> model,
                                  rng::StreamId id)
{
    GAFSIM_REQUIRE(model->form() == GafForm::Basis, ErrorCode::InvalidArgument,
                   "sample_basis_gaf needs a basis-form kernel");
    std::size_t const count = model->basis().n_max() + 1;
    return GafSample(std::move(model), gaussian_coefficients(id, count), id);
}

inline GafSample sample_basis_gaf(std::shared_ptr<KernelModel const> model,
                                  std::uint64_t seed)
{
    return sample_basis_gaf(std::move(model), rng::StreamId{seed, 0});
}

/// Throws RegionNotPadded unless `region` lies inside the area the frame's
/// sequence was generated to cover.
inline void check_frame_padding(KernelModel const& model, Rect const& region)
{
    auto const& seq = model.sequence();
    if (!seq.region.contains(region))
    {
        throw Error(ErrorCode::RegionNotPadded,
                    "experiment region extends beyond the padded frame window");
    }
}

inline GafSample sample_frame_gaf(std::shared_ptr<KernelModel const> model,
                                  rng::StreamId id)
{
    GAFSIM_REQUIRE(model->form() == GafForm::Frame, ErrorCode::InvalidArgument,
                   "sample_frame_gaf needs a frame-form kernel");
    std::size_t const count = model->sequence().points.size();
    return GafSample(std::move(model), gaussian_coefficients(id, count), id);
}

inline GafSample sample_frame_gaf(std::shared_ptr<KernelModel const> model,
                                  rng::StreamId id, Rect const& region)
{
    check_frame_padding(*model, region);
    return sample_frame_gaf(std::move(model), id);
}

//---------------------------------------------------------------------------//
// Poisson baseline
//---------------------------------------------------------------------------//

struct PoissonOptions
{
    /// Replace a small disc around a density singularity at the origin by
    /// exact sampling of its radial law.
    bool excise_origin = true;
};

/// Poisson process on `region` with intensity intensity_scale * L * density
/// by thinning.
inline std::vector<Complex> sample_poisson_pp(RhoField const& field, Rect const& region,
                                              double intensity_scale,
                                              rng::StreamId id,
                                              PoissonOptions const& opt = {})
{
    GAFSIM_REQUIRE(intensity_scale > 0, ErrorCode::InvalidArgument,
                   "intensity_scale must be positive");
    GAFSIM_REQUIRE(!region.empty(), ErrorCode::InvalidArgument, "empty region");
    WeightSpec const& w = field.weight();
    double const scale = intensity_scale * field.L();
    rng::StreamEngine engine(id);
    std::vector<Complex> out;

    double sup = w.sup_density(region);
    double eps = 0.0;
    if (!std::isfinite(sup))
    {
        if (!opt.excise_origin || !w.is_radial())
            throw Error(ErrorCode::UnboundedDensity,
                        "density is unbounded on the region");
        double const alpha = w.alpha();
        eps = std::min(0.25, 0.1 * std::sqrt(region.area()));
        // Points of the micro-disc D(0, eps): mass pi alpha s^alpha within
        // radius s, so radius = eps U^(1/alpha).
        double const mass = scale * pi * alpha * std::pow(eps, alpha);
        std::poisson_distribution<long long> count(mass);
        long long const k = count(engine);
        for (long long i = 0; i < k; ++i)
        {
            double const s = eps * std::pow(engine.uniform(), 1.0 / alpha);
            Complex const z = std::polar(s, 2 * pi * engine.uniform());
            if (region.contains(z))
                out.push_back(z);
        }
        sup = 0.5 * alpha * alpha * std::pow(eps, alpha - 2.0);
    }
    double const lambda_max = scale * sup;
    std::poisson_distribution<long long> count(lambda_max * region.area());
    long long const k = count(engine);
    for (long long i = 0; i < k; ++i)
    {
        Complex const z(region.x0 + region.width() * engine.uniform(),
                        region.y0 + region.height() * engine.uniform());
        double const u = engine.uniform();
        if (eps > 0 && std::abs(z) < eps)
            continue;
        if (u * sup < w.density(z))
            out.push_back(z);
    }
    return out;
}

}  // namespace gafsim
