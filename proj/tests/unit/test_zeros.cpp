#include <gtest/gtest.h>

#include <cmath>

#include <gafsim/numerics/special.hpp>
#include <gafsim/zeros.hpp>

#include "companion.hpp"

using namespace gafsim;
using oracle::companion_roots;
using oracle::truncated_series;

namespace
{

std::shared_ptr<KernelModel const> truncated_model()
{
    BasisOptions o;
    o.n_max_override = 60;
    return KernelModel::from_basis(build_basis(2.0, 10.0, 1.6, o));
}

}  // namespace

TEST(Winding, Monomial)
{
    auto f = [](Complex z) { return FnValue{z * z * z, 3.0 * z * z}; };
    EXPECT_EQ(count_zeros_argument(f, Disc{0, 1}, 0.1), 3);
    EXPECT_EQ(count_zeros_argument(f, Rect{-1, -1, 1, 1}, 0.1), 3);
    EXPECT_EQ(count_zeros_argument(f, Disc{2.0, 1}, 0.1), 0);
}

TEST(Winding, NonvanishingExponential)
{
    auto f = [](Complex z) { return FnValue{std::exp(z), std::exp(z)}; };
    EXPECT_EQ(count_zeros_argument(f, Disc{0, 5}, 0.5), 0);
}

TEST(Winding, ZeroOnCircleRetriedWithJitter)
{
    // zero at distance 1e-13 from the unit circle
    Complex const a(1 + 1e-13, 0);
    auto f = [a](Complex z) { return FnValue{z - a, 1.0}; };
    int const n = count_zeros_argument(f, Disc{0, 1}, 0.1);
    EXPECT_TRUE(n == 0 || n == 1);
    auto g = [](Complex z) { return FnValue{z - 1.0, 1.0}; };
    try
    {
        count_zeros_argument(g, Disc{0, 1}, 0.1, {}, 0);
        FAIL() << "expected BoundaryZeroSuspected";
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::BoundaryZeroSuspected);
    }
}

TEST(Locate, QuadraticRoots)
{
    auto f = [](Complex z) { return FnValue{z * z - 1.0, 2.0 * z}; };
    auto zs = locate_zeros(f, Disc{0, 2}, 0.5, ZeroOptions{1e-12});
    ASSERT_EQ(zs.size(), 2u);
    EXPECT_NEAR(zs.zeros[0].real(), -1, 1e-12);
    EXPECT_NEAR(zs.zeros[1].real(), 1, 1e-12);
    EXPECT_NEAR(zs.zeros[0].imag(), 0, 1e-12);
    EXPECT_FALSE(zs.flagged());
}

TEST(Locate, ClusteredRootsSeparated)
{
    Complex const r[3] = {{0.1, 0.1}, {0.1 + 1e-4, 0.1}, {-0.3, 0.2}};
    auto f = [&](Complex z) {
        Complex p = 1, dp = 0;
        for (Complex a : r)
        {
            dp = dp * (z - a) + p;
            p *= z - a;
        }
        return FnValue{p, dp};
    };
    auto zs = locate_zeros(f, Rect{-1, -1, 1, 1}, 0.3, ZeroOptions{1e-13});
    ASSERT_EQ(zs.size(), 3u);
    EXPECT_LT(std::abs(zs.zeros[0] - r[2]), 1e-12);
    EXPECT_LT(std::abs(zs.zeros[1] - r[0]), 1e-12);
    EXPECT_LT(std::abs(zs.zeros[2] - r[1]), 1e-12);
}

TEST(GafZeros, ArgumentCountMatchesCompanionRoots)
{
    auto model = truncated_model();
    int mismatches = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed)
    {
        auto g = sample_basis_gaf(model, rng::StreamId{seed, 0});
        int expect = 0;
        for (Complex z : companion_roots(truncated_series(g), 2.4))
            expect += std::abs(z) < 1.0;
        mismatches += count_zeros_argument(g, Disc{0, 1}) != expect;
    }
    EXPECT_EQ(mismatches, 0);
}

TEST(GafZeros, LocatedZerosMatchCompanionRoots)
{
    auto model = truncated_model();
    for (std::uint64_t seed = 0; seed < 50; ++seed)
    {
        auto g = sample_basis_gaf(model, rng::StreamId{seed, 1});
        auto zs = locate_zeros(g, Disc{0, 1});
        std::vector<Complex> oracle;
        for (Complex z : companion_roots(truncated_series(g), 2.4))
            if (std::abs(z) < 1.0)
                oracle.push_back(z);
        ASSERT_EQ(zs.size(), oracle.size()) << "seed " << seed;
        double hd = 0;
        for (Complex a : zs.zeros)
        {
            double best = HUGE_VAL;
            for (Complex b : oracle)
                best = std::min(best, std::abs(a - b));
            hd = std::max(hd, best);
        }
        for (Complex b : oracle)
        {
            double best = HUGE_VAL;
            for (Complex a : zs.zeros)
                best = std::min(best, std::abs(a - b));
            hd = std::max(hd, best);
        }
        EXPECT_LT(hd, 1e-6) << "seed " << seed;
    }
}

TEST(GafZeros, LocatedCountConservedAndClean)
{
    auto model = KernelModel::from_basis(build_basis(3.0, 12.0, 1.7));
    for (std::uint64_t seed = 0; seed < 200; ++seed)
    {
        auto g = sample_basis_gaf(model, rng::StreamId{seed, 2});
        auto zs = locate_zeros(g, Disc{0, 1});
        EXPECT_EQ(int(zs.size()), count_zeros_argument(g, Disc{0, 1})) << "seed " << seed;
        EXPECT_FALSE(zs.flagged());
        EXPECT_LE(zs.residual_max, 1e-8);
        for (std::size_t i = 0; i < zs.size(); ++i)
        {
            EXPECT_LT(std::abs(zs.zeros[i]), 1.0);
            for (std::size_t j = i + 1; j < zs.size(); ++j)
                EXPECT_GT(std::abs(zs.zeros[i] - zs.zeros[j]), 10 * zs.tol);
        }
    }
}

TEST(GafZeros, CountsAddAcrossSubrectangles)
{
    auto model = KernelModel::from_basis(build_basis(2.0, 15.0, 1.6));
    for (std::uint64_t seed = 0; seed < 20; ++seed)
    {
        auto g = sample_basis_gaf(model, rng::StreamId{seed, 3});
        int const whole = count_zeros_argument(g, Rect{-1, -0.5, 1, 0.5});
        int const left = count_zeros_argument(g, Rect{-1, -0.5, 0.1, 0.5});
        int const right = count_zeros_argument(g, Rect{0.1, -0.5, 1, 0.5});
        EXPECT_EQ(whole, left + right);
    }
}

TEST(GafZeros, FirstIntensityFlat)
{
    double const L = 10;
    auto model = KernelModel::from_basis(build_basis(2.0, L, 1.2));
    std::vector<double> counts;
    for (std::uint64_t seed = 0; seed < 500; ++seed)
        counts.push_back(count_zeros_argument(sample_basis_gaf(model, rng::StreamId{seed, 4}),
                                              Disc{0, 1}));
    auto const m = special::moments(counts);
    EXPECT_LT(std::abs(m.mean - L), 3 * std::sqrt(m.variance / counts.size()));
}

TEST(GafZeros, SeriesDerivativeMatchesFiniteDifference)
{
    auto model = KernelModel::from_basis(build_basis(3.0, 5.0, 1.5));
    auto g = sample_basis_gaf(model, 21);
    rng::StreamEngine eng(rng::StreamId{5, 5});
    double worst = 0;
    for (int k = 0; k < 100; ++k)
    {
        Complex const z(2 * eng.uniform() - 1, 2 * eng.uniform() - 1);
        double const h = 1e-5;
        Complex const fd = (g(z + h) - g(z - h)) / (2 * h);
        worst = std::max(worst, std::abs(fd - g.derivative(z)) / std::abs(g.derivative(z)));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(GafZeros, FrameSampleZerosConserved)
{
    auto basis = build_basis(2.0, 10.0, 3.0);
    RhoField field(WeightSpec::radial_power(2.0), 10.0);
    auto seq = std::make_shared<SamplingSequence const>(
        make_sampling_sequence(field, Rect{-0.6, -0.6, 0.6, 0.6}, 0.4, 1.0));
    auto model = KernelModel::from_frame(basis, seq);
    for (std::uint64_t seed = 0; seed < 10; ++seed)
    {
        auto g = sample_frame_gaf(model, rng::StreamId{seed, 6});
        auto zs = locate_zeros(g, Rect{-0.5, -0.5, 0.5, 0.5});
        EXPECT_EQ(int(zs.size()), count_zeros_argument(g, Rect{-0.5, -0.5, 0.5, 0.5}));
        EXPECT_LE(zs.residual_max, 1e-8);
    }
}

TEST(LinearStatistic, EmptyAndScaled)
{
    ZeroSet zs;
    zs.region = Disc{0, 1};
    TestFunction psi(PolynomialBump{0, 0.5, 2.0});
    EXPECT_EQ(linear_statistic(zs, psi, 10), 0.0);
    zs.zeros = {Complex(0, 0), Complex(0.25, 0), Complex(0.9, 0)};
    double const expect = (2.0 + 2.0 * std::pow(0.75, 3)) / 10;
    EXPECT_NEAR(linear_statistic(zs, psi, 10), expect, 1e-15);
}

TEST(LinearStatistic, SupportOutsideRegionRejected)
{
    ZeroSet zs;
    zs.region = Rect{-1, -1, 1, 1};
    TestFunction psi(PolynomialBump{Complex(0.8, 0), 0.5, 1.0});
    try
    {
        linear_statistic(zs, psi, 1);
        FAIL() << "expected SupportEscapesRegion";
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::SupportEscapesRegion);
    }
}

TEST(LinearStatistic, FlatMeanMatchesClosedForm)
{
    double const L = 40;
    auto model = KernelModel::from_basis(build_basis(2.0, L, 0.8));
    // unit Lebesgue mass
    TestFunction psi(PolynomialBump{0, 0.5, 1.0 / (pi * 0.25 / 4)});
    ASSERT_NEAR(psi.integral(), 1.0, 1e-14);
    std::vector<double> v;
    for (std::uint64_t seed = 0; seed < 500; ++seed)
    {
        auto g = sample_basis_gaf(model, rng::StreamId{seed, 7});
        v.push_back(linear_statistic(locate_zeros(g, Disc{0, 0.5}), psi, L));
    }
    auto const m = special::moments(v);
    EXPECT_LT(std::abs(m.mean - 1 / pi), 3 * std::sqrt(m.variance / v.size()));
}
