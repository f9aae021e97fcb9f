#include <gtest/gtest.h>

#include <cmath>

#include <gafsim/pointprocess.hpp>
#include <gafsim/stats.hpp>

using namespace gafsim;

namespace
{

double fd_laplacian(TestFunction const& psi, Complex z, double h)
{
    return (psi(z + h) + psi(z - h) + psi(z + Complex(0, h)) + psi(z - Complex(0, h))
            - 4 * psi(z))
           / (h * h);
}

// int int Lap psi(z) Lap psi(w) exp(-a|z-w|^2) for a Gaussian bump, by
// Fourier transform.
double gaussian_pair(double h, double w, double a)
{
    double const b = w * w + 1 / (4 * a);
    return 2 * pi * pi * h * h * std::pow(w, 4) / (a * b * b * b);
}

// (1/(16 pi^2 L^2)) sum_n (1/n^2) gaussian_pair(n L) for the flat weight,
// where |Xi|^2 = exp(-L|z-w|^2).
double flat_variance_oracle(double h, double w, double L)
{
    double s = 0;
    for (int n = 200000; n >= 1; --n)
        s += gaussian_pair(h, w, n * L) / (double(n) * n);
    return s / (16 * pi * pi * L * L);
}

double lap_sq_integral(TestFunction const& psi)
{
    double t = 0;
    for_each_support_node(psi, 40, 256, [&](Complex z, double wt) {
        t += wt * psi.laplacian(z) * psi.laplacian(z);
    });
    return t;
}

}  // namespace

TEST(TestFunctionShape, LaplacianMatchesFiniteDifference)
{
    TestFunction const p(PolynomialBump{Complex(0.2, -0.1), 0.7, 1.3});
    TestFunction const g(GaussianBump{Complex(-0.3, 0.4), 0.2, 0.8});
    for (auto const* psi : {&p, &g})
        for (Complex z : {Complex(0.25, 0.05), Complex(-0.2, 0.3), Complex(0.0, 0.0)})
        {
            double const a = psi->laplacian(z);
            if (std::abs(a) < 1e-6)
                continue;
            EXPECT_NEAR(fd_laplacian(*psi, z, 1e-4), a, 1e-6 * std::abs(a) + 1e-7);
        }
}

TEST(TestFunctionShape, MassesAndGradient)
{
    TestFunction const p(PolynomialBump{Complex(0.1, 0), 0.6, 2.0});
    TestFunction const g(GaussianBump{Complex(0, 0.2), 0.15, 1.5});
    for (auto const* psi : {&p, &g})
    {
        double t = 0;
        for_each_support_node(*psi, 20, 128, [&](Complex z, double wt) { t += wt * (*psi)(z); });
        EXPECT_NEAR(t, psi->integral(), 1e-10 * psi->integral());
        Complex const z = psi->center() + Complex(0.07, 0.05);
        double const h = 1e-6;
        double const gx = ((*psi)(z + h) - (*psi)(z - h)) / (2 * h);
        double const gy = ((*psi)(z + Complex(0, h)) - (*psi)(z - Complex(0, h))) / (2 * h);
        EXPECT_NEAR(psi->grad_norm2(z), gx * gx + gy * gy, 1e-6 * psi->grad_norm2(z));
    }
}

TEST(TestFunctionShape, MuIntegralsSingularAndSmooth)
{
    TestFunction const psi(PolynomialBump{0, 0.8, 1.0});
    EXPECT_NEAR(integral_mu(psi, WeightSpec::radial_power(2.0)), 2 * psi.integral(), 1e-12);
    for (double alpha : {1.0, 1.5, 3.0})
    {
        // centred at the origin; s = t^2 removes the s^(alpha-1) cusp
        double direct = 0, direct2 = 0;
        auto const& gl = quad::gauss_legendre(40);
        double const T = std::sqrt(0.8);
        for (std::size_t q = 0; q < gl.nodes.size(); ++q)
        {
            double const t = 0.5 * T * (1 + gl.nodes[q]);
            double const s = t * t;
            double const v = psi(Complex(s, 0));
            double const d = 0.5 * alpha * alpha * 2 * std::pow(t, 2 * alpha - 1) * 2 * pi
                             * 0.5 * T * gl.weights[q];
            direct += v * d;
            direct2 += v * v * d;
        }
        auto const w = WeightSpec::radial_power(alpha);
        EXPECT_NEAR(integral_mu(psi, w), direct, 1e-7 * direct) << alpha;
        EXPECT_NEAR(integral_mu(psi, w, 2), direct2, 1e-7 * direct2) << alpha;
    }
}

TEST(Theory, EdelmanKostlanFlatClosedForm)
{
    TestFunction const psi(PolynomialBump{Complex(0.1, 0.2), 0.5, 1.0});
    for (double L : {5.0, 20.0})
    {
        auto m = KernelModel::from_basis(build_basis(2.0, L, 1.0));
        EXPECT_NEAR(ek_expected(*m, psi), psi.integral() / pi, 1e-6 * psi.integral());
        EXPECT_NEAR(ek_expected(*m, psi.scaled(2.0)), 2 * ek_expected(*m, psi), 1e-12);
    }
    EXPECT_NEAR(mean_limit(psi, WeightSpec::radial_power(2.0)), psi.integral() / pi, 1e-12);
}

TEST(Theory, EdelmanKostlanApproachesLimitLikeOneOverL)
{
    TestFunction const psi(GaussianBump{Complex(0.5, 0.1), 0.12, 1.0});
    auto const w = WeightSpec::radial_power(3.0);
    double const limit = mean_limit(psi, w);
    std::vector<double> diff;
    for (double L : {5.0, 10.0, 20.0, 40.0, 80.0})
    {
        auto m = KernelModel::from_basis(build_basis(w, L, 1.6));
        diff.push_back(std::abs(ek_expected(*m, psi) - limit));
        EXPECT_LT(L * diff.back(), 0.01 * laplacian_l1(psi)) << L;
    }
    EXPECT_LT(diff.back(), 0.25 * diff[2]);
}

TEST(Theory, FlatVarianceMatchesFourierOracle)
{
    double const h = 1.0, w = 0.15;
    TestFunction const psi(GaussianBump{0, w, h});
    for (double L : {10.0, 20.0})
    {
        auto m = KernelModel::from_basis(build_basis(2.0, L, 1.5));
        auto const v = variance_theoretical(*m, psi);
        double const oracle = flat_variance_oracle(h, w, L);
        // trapezoid error from the d^2 log d kink of dilog on the diagonal
        EXPECT_NEAR(v.exact, oracle, 5e-4 * oracle) << L;
        EXPECT_LE(v.max_xi2, 1 + 1e-9);
        // rho_L^2 = 1 / (2 pi L) for this weight
        EXPECT_NEAR(v.surrogate, lap_sq_integral(psi) / (2 * pi * L * L * L),
                    1e-6 * v.surrogate);
    }
}

TEST(Theory, SurrogateScalesAsInverseCube)
{
    TestFunction const psi(PolynomialBump{0, 0.4, 1.0});
    std::vector<double> x, y;
    for (double L : {10.0, 20.0, 40.0, 80.0})
    {
        auto m = KernelModel::from_basis(build_basis(2.0, L, 0.6));
        x.push_back(std::log(L));
        y.push_back(std::log(variance_surrogate(*m, psi)));
    }
    EXPECT_NEAR(special::fit_line(x, y, {}).slope, -3.0, 0.01);
}

TEST(Theory, VarianceRatioTendsToFlatConstant)
{
    // for rho_L much smaller than the bump, exact / surrogate -> zeta(3) / 8
    double const limit = 1.2020569031595942 / 8;
    TestFunction const psi(GaussianBump{Complex(0.1, 0), 0.3, 1.0});
    double prev = 0;
    for (double L : {10.0, 20.0, 40.0})
    {
        auto m = KernelModel::from_basis(build_basis(2.0, L, 2.8));
        double const r = variance_theoretical(*m, psi).ratio();
        EXPECT_GT(r, prev);
        EXPECT_LT(r, limit);
        prev = r;
    }
    EXPECT_GT(prev, 0.8 * limit);
}

TEST(Theory, ZeroLaplacianGivesZeroVariance)
{
    TestFunction const psi(PolynomialBump{0, 0.3, 0.0});
    auto m = KernelModel::from_basis(build_basis(2.0, 10.0, 0.6));
    auto const v = variance_theoretical(*m, psi);
    EXPECT_EQ(v.exact, 0.0);
    EXPECT_EQ(v.surrogate, 0.0);
}

TEST(Theory, FrameCoordinatesReproduceFrameKernel)
{
    auto basis = build_basis(2.0, 10.0, 3.0);
    RhoField field(WeightSpec::radial_power(2.0), 10.0);
    auto seq = std::make_shared<SamplingSequence const>(
        make_sampling_sequence(field, Rect{-0.4, -0.4, 0.4, 0.4}, 0.4, 1.0));
    auto model = KernelModel::from_frame(basis, seq);
    CovarianceCoords const c(*model);
    for (auto [z, w] : {std::pair{Complex(0, 0), Complex(0.1, 0.05)},
                        std::pair{Complex(0.2, -0.1), Complex(0.2, -0.1)},
                        std::pair{Complex(-0.3, 0.2), Complex(-0.1, 0.3)}})
    {
        Complex const got = CovarianceCoords::dot(c.left(z), c.right(w));
        Complex const want = model->normalized(z, w);
        EXPECT_LT(std::abs(got - want), 1e-8 * std::sqrt(model->diag_normalized(z) * model->diag_normalized(w)));
    }
}

TEST(Theory, NormalityIntegralsFlat)
{
    double const R = 0.5;
    TestFunction const psi(PolynomialBump{0, R, 1.0});
    std::vector<double> x, y1, y2, ratio;
    for (double L : {20.0, 40.0, 80.0})
    {
        auto m = KernelModel::from_basis(build_basis(2.0, L, 0.8));
        auto const nc = normality_conditions(*m, psi);
        // sup is at the centre: |Xi| = exp(-L d^2 / 2), dnu = dm / (pi R^2)
        double const one = 2 * (1 - std::exp(-L * R * R / 2)) / (L * R * R);
        double const two = (1 - std::exp(-L * R * R)) / (L * R * R);
        EXPECT_NEAR(nc.sup_integral, one, 0.02 * one);
        EXPECT_NEAR(nc.sup_integral_sq, two, 0.02 * two);
        x.push_back(std::log(L));
        y1.push_back(std::log(nc.sup_integral));
        ratio.push_back(nc.ratio_liminf_proxy);
    }
    EXPECT_NEAR(special::fit_line(x, y1, {}).slope, -1.0, 0.1);
    for (double r : ratio)
        EXPECT_GT(r, 0.5 * ratio.front());
}
