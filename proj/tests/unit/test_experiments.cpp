#include <gtest/gtest.h>

#include <cmath>

#include <gafsim/experiments.hpp>

using namespace gafsim;

namespace
{

ExperimentConfig base_config(ExperimentKind kind)
{
    ExperimentConfig c;
    c.kind = kind;
    c.name = "t";
    c.L_grid = {10, 20};
    c.trials = {60, 60};
    c.region = {-1.2, -1.2, 1.2, 1.2};
    c.psi = TestFunction(PolynomialBump{0, 0.5, 1.0});
    c.master_seed = 99;
    return c;
}

// s int (e^(t psi) - 1) dmu for a centred polynomial bump and the flat weight,
// radial Gauss-Legendre in |z|
double flat_cumulant(double t, double R, double s)
{
    auto const& gl = quad::gauss_legendre(64);
    double acc = 0;
    for (std::size_t q = 0; q < gl.nodes.size(); ++q)
    {
        double const r = 0.5 * R * (1 + gl.nodes[q]);
        double const u = 1 - r * r / (R * R);
        acc += std::expm1(t * u * u * u) * 2 * 2 * pi * r * 0.5 * R * gl.weights[q];
    }
    return s * acc;
}

}  // namespace

TEST(Experiments, ExpectedCountFlatDisc)
{
    for (double L : {5.0, 20.0})
    {
        auto m = KernelModel::from_basis(build_basis(2.0, L, 1.6));
        EXPECT_NEAR(expected_count(*m, Disc{0, 1.0}), L, 1e-6 * L);
        EXPECT_NEAR(expected_count(*m, Disc{Complex(0.3, -0.2), 0.5}), 0.25 * L, 1e-6 * L);
    }
}

TEST(Experiments, ChernoffRateMatchesBruteForce)
{
    double const R = 0.5, s = 1 / (2 * pi);
    TestFunction const psi(PolynomialBump{0, R, 1.0});
    auto const w = WeightSpec::radial_power(2.0);
    double const mean = s * integral_mu(psi, w);
    for (double a : {1.3 * mean, 0.6 * mean, 2.5 * mean})
    {
        double best = 0;
        for (int i = -40000; i <= 40000; ++i)
        {
            double const t = i * 1e-3;
            best = std::max(best, t * a - flat_cumulant(t, R, s));
        }
        EXPECT_NEAR(detail::poisson_chernoff_rate(psi, w, s, a), best, 1e-5 * best + 1e-9) << a;
    }
    EXPECT_EQ(detail::poisson_chernoff_rate(psi, w, s, -0.1), HUGE_VAL);
}

TEST(Experiments, FlaggedTrialsAreDroppedThenAbort)
{
    auto const c = base_config(ExperimentKind::MeanVariance);
    StatReport rep;
    auto const ok = detail::run_trials(c, 100, 10.0, 2, rep, [](std::size_t t) {
        if (t % 25 == 3)
            throw detail::TrialRejected("odd trial");
        return double(t);
    });
    EXPECT_EQ(ok.values.size(), 96u);
    EXPECT_EQ(ok.flagged, 4u);
    ASSERT_EQ(rep.flags.size(), 4u);
    EXPECT_EQ(rep.flags[0].trial, 3u);
    try
    {
        detail::run_trials(c, 100, 10.0, 2, rep, [](std::size_t t) {
            if (t % 10 == 0)
                throw Error(ErrorCode::NewtonDivergence, "boom");
            return 0.0;
        });
        FAIL() << "expected abort";
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::TooManyFlaggedTrials);
    }
}

TEST(Experiments, ReportIndependentOfThreadCount)
{
    auto c = base_config(ExperimentKind::MeanVariance);
    c.count_disc = Disc{0, 0.8};
    RunOptions one, four;
    one.threads = 1;
    four.threads = 4;
    auto const a = run_experiment(c, one).to_json().dump();
    auto const b = run_experiment(c, four).to_json().dump();
    EXPECT_EQ(a, b);
    c.master_seed = 100;
    EXPECT_NE(run_experiment(c, one).to_json().dump(), a);
}

TEST(Experiments, MeanVarianceTheoryColumns)
{
    auto c = base_config(ExperimentKind::MeanVariance);
    c.trials = {300, 300};
    c.count_disc = Disc{0, 1.0};
    auto const r = run_mean_variance_experiment(c);
    double const limit = c.psi->integral() / pi;
    for (double L : c.L_grid)
    {
        auto const* g = r.row("gaf", L);
        ASSERT_NE(g, nullptr);
        EXPECT_NEAR(g->theory_mean, limit, 1e-6 * limit);
        EXPECT_GT(g->theory_var, 0);
        EXPECT_LT(std::abs(g->mean - limit), 4 * std::sqrt(g->var / 300));
        auto const* cnt = r.row("count", L);
        ASSERT_NE(cnt, nullptr);
        EXPECT_NEAR(cnt->theory_mean, L, 1e-5 * L);
        auto const* p = r.row("poisson", L);
        ASSERT_NE(p, nullptr);
        EXPECT_NEAR(p->theory_mean, limit, 1e-9);
    }
    EXPECT_TRUE(r.fits.contains("variance_exponent"));
    EXPECT_EQ(r.config_hash, config_hash(c));
}

TEST(Experiments, PoissonBaselineExactLaws)
{
    auto c = base_config(ExperimentKind::PoissonBaseline);
    c.L_grid = {20};
    c.trials = {4000};
    c.hole = Disc{Complex(0.2, 0), 0.3};
    auto const r = run_poisson_baseline(c);
    auto const* row = r.row("poisson", 20);
    ASSERT_NE(row, nullptr);
    EXPECT_NEAR(row->mean / row->theory_mean, 1, 0.05);
    EXPECT_NEAR(row->var / row->theory_var, 1, 0.1);
    EXPECT_TRUE(r.details[0]["hole"]["within_3_sigma"].get<bool>());
}

TEST(Experiments, NormalityRefusedWithoutLocalFlatness)
{
    auto c = base_config(ExperimentKind::Normality);
    c.weight = WeightSpec::radial_power(4.0);
    try
    {
        run_normality_experiment(c);
        FAIL() << "expected refusal";
    }
    catch (Error const& e)
    {
        EXPECT_EQ(e.code(), ErrorCode::PreconditionFailed);
        EXPECT_NE(std::string(e.what()).find("locally flat"), std::string::npos);
    }
}

TEST(Experiments, HoleExperimentFlatSmall)
{
    auto c = base_config(ExperimentKind::Hole);
    c.psi.reset();
    c.L_grid = {3, 4, 5};
    c.trials = {1500, 1500, 1500};
    c.hole = Disc{0, 0.5};
    auto const r = run_hole_experiment(c);
    EXPECT_GT(r.summary["c_hat"].get<double>(), 0);
    for (auto const& d : r.details)
        EXPECT_TRUE(d["poisson"]["within_3_sigma"].get<bool>()) << d.dump();
    // p decreases along the grid
    EXPECT_GT(r.rows[0].mean, r.rows[2].mean);
}

TEST(Experiments, KernelDiagnosticsFlat)
{
    auto c = base_config(ExperimentKind::KernelDiagnostics);
    c.L_grid = {5, 20};
    c.diag_grid = 8;
    c.region = {-0.8, -0.8, 0.8, 0.8};
    auto const r = run_kernel_diagnostics(c);
    EXPECT_LT(r.summary["closed_form_max_rel_error"].get<double>(), 1e-8);
    EXPECT_TRUE(r.summary["bands_positive"].get<bool>());
    EXPECT_NEAR(r.summary["diag_band"][0].get<double>(), 1 / (2 * pi * pi), 1e-9);
    EXPECT_NEAR(r.summary["laplacian_band"][1].get<double>(), 2 / pi, 1e-4);
    EXPECT_TRUE(r.summary["fast_decay_slopes_negative"].get<bool>());
}
