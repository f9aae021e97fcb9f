#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gafsim/numerics/special.hpp>
#include <gafsim/pointprocess.hpp>

using namespace gafsim;

namespace
{

void expect_separated(SamplingSequence const& s)
{
    double worst = HUGE_VAL;
    for (std::size_t i = 0; i < s.points.size(); ++i)
        for (std::size_t j = i + 1; j < s.points.size(); ++j)
        {
            double const d = std::abs(s.points[i] - s.points[j]);
            worst = std::min(worst, d / (s.separation_delta * std::max(s.rho[i], s.rho[j])));
        }
    EXPECT_GE(worst, 1.0);
}

void expect_covering(SamplingSequence const& s, RhoField const& field, int n)
{
    rng::StreamEngine eng(rng::StreamId{99, 0});
    Rect const r = s.region;
    double worst = 0;
    for (int k = 0; k < n; ++k)
    {
        Complex const z(r.x0 + r.width() * eng.uniform(), r.y0 + r.height() * eng.uniform());
        double best = HUGE_VAL;
        for (Complex p : s.points)
            best = std::min(best, std::abs(z - p));
        worst = std::max(worst, best / (s.covering_R * field.solve(z)));
    }
    EXPECT_LE(worst, 1.0);
}

}  // namespace

TEST(Sampling, FlatSequenceSeparatedAndCovering)
{
    RhoField field(WeightSpec::radial_power(2.0), 10.0);
    auto s = make_sampling_sequence(field, Rect{-0.5, -0.5, 0.5, 0.5}, 0.4, 1.0);
    EXPECT_GT(s.points.size(), 100u);
    EXPECT_TRUE(s.window.contains(s.region));
    expect_separated(s);
    expect_covering(s, field, 1500);
    for (std::size_t i = 0; i < s.points.size(); i += 37)
        EXPECT_NEAR(s.rho[i], field.solve(s.points[i]), 1e-9);
}

TEST(Sampling, CurvedSequenceSeparatedAndCovering)
{
    RhoField field(WeightSpec::radial_power(3.0), 8.0);
    auto s = make_sampling_sequence(field, Rect{-0.3, 0.2, 0.7, 1.0}, 0.5, 1.5,
                                    SamplingOptions{3.0, 20});
    expect_separated(s);
    expect_covering(s, field, 800);
}

TEST(Sampling, DensityAboveCriticalValue)
{
    RhoField field(WeightSpec::re_square(), 12.0);
    auto s = make_sampling_sequence(field, Rect{-0.5, -0.5, 0.5, 0.5}, 0.4, 1.0);
    double const ratio = sampling_density_ratio(s, field, {5, 10});
    EXPECT_GT(ratio, 1.0 / (2 * pi));
}

TEST(Sampling, ImpossibleCoveringReported)
{
    RhoField field(WeightSpec::radial_power(2.0), 5.0);
    try
    {
        make_sampling_sequence(field, Rect{-0.3, -0.3, 0.3, 0.3}, 0.99, 1.0,
                               SamplingOptions{12.0, 2});
        FAIL() << "expected CoverageFailure";
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::CoverageFailure);
    }
}

TEST(BasisGaf, ZeroCoefficientsGiveZeroFunction)
{
    auto model = KernelModel::from_basis(build_basis(2.0, 10.0, 2.0));
    GafSample g(model, std::vector<Complex>(model->basis().n_max() + 1, 0.0));
    for (Complex z : {Complex(0, 0), Complex(0.7, -1.1), Complex(-1.5, 0.2)})
    {
        auto v = g.eval_normalized(z);
        EXPECT_EQ(v.f, Complex(0.0));
        EXPECT_EQ(v.df, Complex(0.0));
    }
}

TEST(BasisGaf, ReproducibleFromSeed)
{
    auto model = KernelModel::from_basis(build_basis(3.0, 6.0, 1.5));
    auto a = sample_basis_gaf(model, rng::StreamId{17, 4});
    auto b = sample_basis_gaf(model, rng::StreamId{17, 4});
    auto c = sample_basis_gaf(model, rng::StreamId{17, 5});
    Complex const z(0.4, 0.9);
    EXPECT_EQ(a.eval_normalized(z).f, b.eval_normalized(z).f);
    EXPECT_NE(a.eval_normalized(z).f, c.eval_normalized(z).f);
}

TEST(BasisGaf, NormalizedAgreesWithRaw)
{
    auto model = KernelModel::from_basis(build_basis(2.0, 3.0, 1.0));
    auto g = sample_basis_gaf(model, 5);
    Complex const z(0.3, -0.5);
    // Raw series sum a_n z^n / ||z^n||.
    Complex raw = 0, draw = 0;
    for (int n = 0; n <= model->basis().n_max(); ++n)
    {
        raw += g.coeffs()[n] * std::pow(z, n) / model->basis().norm(n);
        if (n > 0)
            draw += g.coeffs()[n] * double(n) * std::pow(z, n - 1) / model->basis().norm(n);
    }
    EXPECT_LT(std::abs(g(z) - raw), 1e-10 * std::abs(raw));
    EXPECT_LT(std::abs(g.derivative(z) - draw), 1e-10 * std::abs(draw));
}

TEST(BasisGaf, PointwiseVarianceMatchesKernel)
{
    auto model = KernelModel::from_basis(build_basis(3.0, 10.0, 2.0));
    Complex const z(0.8, 0.6);
    std::vector<double> v;
    for (std::uint64_t t = 0; t < 4000; ++t)
        v.push_back(std::norm(sample_basis_gaf(model, rng::StreamId{3, t}).eval_normalized(z).f));
    auto const m = special::moments(v);
    double const expect = model->diag_normalized(z);
    EXPECT_LT(std::abs(m.mean - expect), 4 * std::sqrt(m.variance / v.size()));
}

TEST(BasisGaf, ReorderedBasisIndistinguishable)
{
    auto model = KernelModel::from_basis(build_basis(2.0, 8.0, 1.5));
    std::size_t const n = model->basis().n_max() + 1;
    Complex const z(-0.4, 0.7);
    std::vector<double> a, b;
    for (std::uint64_t t = 0; t < 1500; ++t)
    {
        auto coeff = gaussian_coefficients(rng::StreamId{11, t}, n);
        a.push_back(std::abs(GafSample(model, coeff).eval_normalized(z).f));
        auto other = gaussian_coefficients(rng::StreamId{12, t}, n);
        std::reverse(other.begin(), other.end());
        std::rotate(other.begin(), other.begin() + n / 3, other.end());
        b.push_back(std::abs(GafSample(model, other).eval_normalized(z).f));
    }
    EXPECT_GT(special::ks_test_two_sample(a, b).p_value, 1e-3);
}

TEST(FrameGaf, SeriesMatchesDirectFrameSum)
{
    auto basis = build_basis(2.0, 10.0, 3.0);
    RhoField field(WeightSpec::radial_power(2.0), 10.0);
    auto seq = std::make_shared<SamplingSequence const>(
        make_sampling_sequence(field, Rect{-0.3, -0.3, 0.3, 0.3}, 0.4, 1.0));
    auto model = KernelModel::from_frame(basis, seq);
    auto g = sample_frame_gaf(model, rng::StreamId{8, 1}, Rect{-0.2, -0.2, 0.2, 0.2});
    for (Complex z : {Complex(0, 0), Complex(0.2, -0.1), Complex(-0.25, 0.3)})
    {
        auto const t = basis->terms(z);
        Complex direct = 0;
        for (std::size_t i = 0; i < seq->points.size(); ++i)
            direct += g.coeffs()[i] * model->frame_value(i, t);
        EXPECT_LT(std::abs(g.eval_normalized(z).f - direct), 1e-10 * (1 + std::abs(direct)));
    }
}

TEST(FrameGaf, GaugedFrameMatchesDirectSum)
{
    auto basis = build_basis(WeightSpec::re_square(), 8.0, 3.2);
    RhoField field(WeightSpec::re_square(), 8.0);
    auto seq = std::make_shared<SamplingSequence const>(
        make_sampling_sequence(field, Rect{-0.3, -0.3, 0.3, 0.3}, 0.4, 1.0));
    auto model = KernelModel::from_frame(basis, seq);
    auto g = sample_frame_gaf(model, rng::StreamId{8, 2});
    Complex const z(0.15, 0.2);
    auto const t = basis->terms(z);
    Complex direct = 0;
    for (std::size_t i = 0; i < seq->points.size(); ++i)
        direct += g.coeffs()[i] * model->frame_value(i, t);
    EXPECT_LT(std::abs(g.eval_normalized(z).f - direct), 1e-10 * (1 + std::abs(direct)));
}

TEST(FrameGaf, RegionOutsideWindowRejected)
{
    auto basis = build_basis(2.0, 10.0, 3.0);
    RhoField field(WeightSpec::radial_power(2.0), 10.0);
    auto seq = std::make_shared<SamplingSequence const>(
        make_sampling_sequence(field, Rect{-0.3, -0.3, 0.3, 0.3}, 0.4, 1.0));
    auto model = KernelModel::from_frame(basis, seq);
    try
    {
        sample_frame_gaf(model, rng::StreamId{1, 0}, Rect{-0.5, -0.5, 0.5, 0.5});
        FAIL() << "expected RegionNotPadded";
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::RegionNotPadded);
    }
}

TEST(Poisson, FlatCountsMatchIntensity)
{
    RhoField field(WeightSpec::radial_power(2.0), 20.0);
    Rect const r{-1, -0.5, 1, 0.5};
    double const expect = 20.0 / (2 * pi) * 2.0 * r.area();
    std::vector<double> counts;
    for (std::uint64_t t = 0; t < 400; ++t)
        counts.push_back(double(sample_poisson_pp(field, r, 1 / (2 * pi), rng::StreamId{4, t}).size()));
    auto const m = special::moments(counts);
    EXPECT_LT(std::abs(m.mean - expect), 4 * std::sqrt(expect / counts.size()));
    EXPECT_NEAR(m.variance / expect, 1.0, 0.25);
}

TEST(Poisson, SingularDensityUsesExactCore)
{
    RhoField field(WeightSpec::radial_power(1.0), 10.0);
    Rect const r{-1, -1, 1, 1};
    // mu of the square for density |z|^-1 / 2.
    double const mass = 4 * std::log(1 + std::sqrt(2.0));
    double const inner = pi * 0.5;  // mu of D(0, 1/2)
    double const expect = 10.0 / (2 * pi) * mass;
    double total = 0, near = 0;
    int const trials = 400;
    for (int t = 0; t < trials; ++t)
        for (Complex z : sample_poisson_pp(field, r, 1 / (2 * pi), rng::StreamId{6, std::uint64_t(t)}))
        {
            EXPECT_TRUE(r.contains(z));
            total += 1;
            near += std::abs(z) < 0.5;
        }
    EXPECT_LT(std::abs(total / trials - expect), 4 * std::sqrt(expect / trials));
    double const p = inner / mass;
    EXPECT_LT(std::abs(near / total - p), 4 * std::sqrt(p * (1 - p) / total));
}

TEST(Poisson, UnboundedDensityWithoutExcision)
{
    RhoField field(WeightSpec::radial_power(1.5), 4.0);
    try
    {
        sample_poisson_pp(field, Rect{-1, -1, 1, 1}, 1.0, rng::StreamId{}, PoissonOptions{false});
        FAIL() << "expected UnboundedDensity";
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::UnboundedDensity);
    }
}

TEST(Poisson, TabulatedDensityFollowsProfile)
{
    TabulatedDensity t;
    t.x0 = -1;
    t.y0 = -1;
    t.dx = 1;
    t.dy = 1;
    t.nx = 3;
    t.ny = 3;
    // density 2 + x
    t.values = {1, 2, 3, 1, 2, 3, 1, 2, 3};
    RhoField field(WeightSpec::tabulated(t), 5.0);
    Rect const r{-1, -1, 1, 1};
    double left = 0, right = 0;
    for (std::uint64_t k = 0; k < 200; ++k)
        for (Complex z : sample_poisson_pp(field, r, 1.0, rng::StreamId{2, k}))
            (z.real() < 0 ? left : right) += 1;
    // mass of x<0 half: integral of (2 + x) over [-1,0]x[-1,1] = 3, x>0 half: 5
    double const p = 3.0 / 8.0;
    double const n = left + right;
    EXPECT_NEAR(n / 200, 5.0 * 8.0, 4 * std::sqrt(40.0 / 200));
    EXPECT_LT(std::abs(left / n - p), 4 * std::sqrt(p * (1 - p) / n));
}
