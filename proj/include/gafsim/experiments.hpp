#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "fock.hpp"
#include "measure.hpp"
#include "numerics/parallel.hpp"
#include "numerics/rng.hpp"
#include "numerics/special.hpp"
#include "pointprocess.hpp"
#include "stats.hpp"
#include "test_function.hpp"
#include "zeros.hpp"

namespace gafsim
{

using ojson = nlohmann::ordered_json;

inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

/// One line of the per-L summary CSV. `series` is gaf, poisson or count.
struct SummaryRow
{
    std::string series;
    double L = 0;
    std::size_t trials = 0;
    std::size_t flagged = 0;
    double mean = nan_value;
    double var = nan_value;
    double theory_mean = nan_value;
    double theory_var = nan_value;
};

/// A point entering a fitted exponent, e.g. (L^2, log p) for holes.
struct FitPoint
{
    std::string series;
    double L = 0;
    double x = 0;
    double y = 0;
    double weight = 1;
    bool used = true;
};

struct TrialFlag
{
    double L = 0;
    std::uint64_t trial = 0;  // stream trial index, trial_offset + t
    std::string reason;
};

struct StatReport
{
    std::string experiment;
    std::string name;
    std::string gaf_form;
    ojson weight;
    std::vector<double> L_grid;
    std::uint64_t master_seed = 0;
    std::uint64_t trial_offset = 0;
    std::string config_hash;
    ojson config;

    std::vector<SummaryRow> rows;
    ojson details = ojson::array();  // one object per L
    ojson fits = ojson::object();
    ojson summary = ojson::object();
    std::vector<FitPoint> fit_points;
    std::vector<TrialFlag> flags;
    std::vector<std::string> notes;

    SummaryRow const* row(std::string const& series, double L) const
    {
        for (auto const& r : rows)
            if (r.series == series && r.L == L)
                return &r;
        return nullptr;
    }

    ojson to_json() const
    {
        ojson j;
        j["schema"] = report_schema;
        j["build"] = build_version;
        j["experiment"] = experiment;
        j["name"] = name;
        j["config_hash"] = config_hash;
        j["seeds"] = {{"master", master_seed},
                      {"trial_offset", trial_offset},
                      {"streams", "trial t at L index k draws from (master, trial_offset + t) "
                                  "tagged k + 1; Poisson draws use tag 65537 + k"}};
        j["weight"] = weight;
        j["gaf_form"] = gaf_form;
        j["L_grid"] = L_grid;
        ojson rs = ojson::array();
        for (auto const& r : rows)
            rs.push_back({{"series", r.series},
                          {"L", r.L},
                          {"trials", r.trials},
                          {"flagged", r.flagged},
                          {"mean", r.mean},
                          {"var", r.var},
                          {"theory_mean", r.theory_mean},
                          {"theory_var", r.theory_var}});
        j["rows"] = rs;
        j["details"] = details;
        j["fits"] = fits;
        j["summary"] = summary;
        ojson fp = ojson::array();
        for (auto const& p : fit_points)
            fp.push_back({{"series", p.series}, {"L", p.L}, {"x", p.x}, {"y", p.y},
                          {"weight", p.weight}, {"used", p.used}});
        j["fit_points"] = fp;
        ojson fl = ojson::array();
        for (auto const& f : flags)
            fl.push_back({{"L", f.L}, {"trial", f.trial}, {"reason", f.reason}});
        j["flags"] = fl;
        j["notes"] = notes;
        j["config"] = config;
        return j;
    }

    void write_summary_csv(std::ostream& os) const
    {
        os << "series,L,trials,flagged,mean,var,theory_mean,theory_var\n";
        for (auto const& r : rows)
            os << r.series << ',' << num(r.L) << ',' << r.trials << ',' << r.flagged << ','
               << num(r.mean) << ',' << num(r.var) << ',' << num(r.theory_mean) << ','
               << num(r.theory_var) << '\n';
    }

    void write_fit_csv(std::ostream& os) const
    {
        os << "series,L,x,y,weight,used\n";
        for (auto const& p : fit_points)
            os << p.series << ',' << num(p.L) << ',' << num(p.x) << ',' << num(p.y) << ','
               << num(p.weight) << ',' << (p.used ? 1 : 0) << '\n';
    }

    // same text as the JSON dump; empty for NaN
    static std::string num(double v)
    {
        if (!std::isfinite(v))
            return "";
        return ojson(v).dump();
    }
};

struct RunOptions
{
    unsigned threads = default_thread_count();
    std::function<void(std::string const&)> log;
};

namespace detail
{

/// Thrown by a trial body to discard the trial with a reason.
struct TrialRejected : std::runtime_error
{
    using std::runtime_error::runtime_error;
};


inline rng::StreamId gaf_stream(ExperimentConfig const& c, std::size_t t, std::size_t k)
{
    return rng::StreamId{c.master_seed, c.trial_offset + t}.with_tag(k + 1);
}

inline rng::StreamId poisson_stream(ExperimentConfig const& c, std::size_t t, std::size_t k)
{
    return rng::StreamId{c.master_seed, c.trial_offset + t}.with_tag(65537 + k);
}

template<class T>
struct TrialBatch
{
    std::vector<T> values;
    std::size_t flagged = 0;
};

/// Runs n trials in parallel. Trials that throw are flagged and dropped;
/// more than 5% flagged aborts the experiment.
template<class F>
auto run_trials(ExperimentConfig const& c, std::size_t n, double L, unsigned threads,
                StatReport& report, F&& body)
{
    using T = std::decay_t<decltype(body(std::size_t(0)))>;
    std::vector<T> v(n);
    std::vector<std::string> reason(n);
    parallel_for(n, threads, [&](std::size_t t) {
        try
        {
            v[t] = body(t);
        }
        catch (Error const& e)
        {
            reason[t] = e.what();
        }
        catch (TrialRejected const& e)
        {
            reason[t] = e.what();
        }
    });
    TrialBatch<T> out;
    std::string first;
    for (std::size_t t = 0; t < n; ++t)
    {
        if (reason[t].empty())
        {
            out.values.push_back(std::move(v[t]));
            continue;
        }
        if (first.empty())
            first = reason[t];
        ++out.flagged;
        report.flags.push_back({L, c.trial_offset + t, reason[t]});
    }
    if (out.flagged * 20 > n)
        throw Error(ErrorCode::TooManyFlaggedTrials,
                    std::to_string(out.flagged) + " of " + std::to_string(n)
                        + " trials flagged at L = " + StatReport::num(L) + "; first: " + first);
    return out;
}

/// The box where zeros are needed: union of the psi support, hole and
/// count disc.
inline Rect work_box(ExperimentConfig const& c)
{
    std::optional<Rect> box;
    auto add = [&](Rect const& r) {
        if (!box)
            box = r;
        else
            box = Rect{std::min(box->x0, r.x0), std::min(box->y0, r.y0), std::max(box->x1, r.x1),
                       std::max(box->y1, r.y1)};
    };
    if (c.psi)
        add(c.psi->support().bounding_box());
    if (c.hole)
        add(c.hole->bounding_box());
    if (c.count_disc)
        add(c.count_disc->bounding_box());
    return box ? *box : c.region;
}

inline std::shared_ptr<KernelModel const> build_model(ExperimentConfig const& c, double L,
                                                      Rect const& work, GafForm form)
{
    if (form == GafForm::Basis)
        return KernelModel::from_basis(build_basis(c.weight, L, 1.02 * work.max_abs() + 0.02));
    RhoField field(c.weight, L);
    auto seq = std::make_shared<SamplingSequence const>(
        make_sampling_sequence(field, c.region, c.frame_delta, c.frame_R));
    double const reach = std::max(seq->window.max_abs(), work.max_abs());
    return KernelModel::from_frame(build_basis(c.weight, L, 1.02 * reach + 0.02), seq);
}

inline GafSample draw(std::shared_ptr<KernelModel const> const& model, rng::StreamId id,
                      Rect const& work)
{
    if (model->form() == GafForm::Basis)
        return sample_basis_gaf(model, id);
    return sample_frame_gaf(model, id, work);
}

inline double linear_statistic_trial(GafSample const& g, TestFunction const& psi)
{
    ZeroSet const zs = locate_zeros(g, Region{psi.support()});
    if (zs.flagged())
        throw TrialRejected("zero finder left " + std::to_string(zs.unresolved)
                            + " unresolved cells");
    return linear_statistic(zs, psi, g.L());
}

inline double poisson_linear_statistic(RhoField const& field, TestFunction const& psi,
                                       double scale, rng::StreamId id)
{
    double total = 0;
    for (Complex z : sample_poisson_pp(field, psi.support().bounding_box(), scale, id))
        total += psi(z);
    return total / field.L();
}

inline std::size_t poisson_count(RhoField const& field, Disc const& d, double scale,
                                 rng::StreamId id)
{
    std::size_t k = 0;
    for (Complex z : sample_poisson_pp(field, d.bounding_box(), scale, id))
        if (d.contains(z))
            ++k;
    return k;
}

inline ojson fit_json(special::LineFit const& f)
{
    return {{"slope", f.slope},
            {"slope_se", f.slope_se},
            {"intercept", f.intercept},
            {"intercept_se", f.intercept_se},
            {"r_squared", f.r_squared}};
}

inline ojson interval_json(special::Interval const& i)
{
    return ojson::array({i.lo, i.hi});
}

inline void log(RunOptions const& o, std::string const& s)
{
    if (o.log)
        o.log(s);
}

inline StatReport start_report(ExperimentConfig const& c)
{
    StatReport r;
    r.experiment = to_string(c.kind);
    r.name = c.name;
    r.gaf_form = to_string(c.form);
    r.weight = ojson(c.weight.to_json());
    r.L_grid = c.L_grid;
    r.master_seed = c.master_seed;
    r.trial_offset = c.trial_offset;
    r.config_hash = config_hash(c);
    r.config = config_to_json(c);
    r.config.erase("output");  // where a report is written does not change it
    return r;
}

/// sup over the psi support of |log(K(z,z) e^(-2 phi_L))|: the constant in
/// the mean-error bound (1/(4 pi L)) sup|log K - 2 phi_L| int |Laplacian psi|.
inline double log_diag_sup(KernelModel const& model, TestFunction const& psi)
{
    double best = 0;
    for_each_support_node(psi, 4, 32, [&](Complex z, double) {
        best = std::max(best, std::abs(std::log(model.diag_normalized(z))));
    });
    return best;
}

/// Chernoff rate of the Poisson linear statistic N = (1/L) sum psi(x),
/// I(a) = sup_t [t a - s int (e^(t psi) - 1) d(mu)], for a on either side
/// of the mean s int psi d(mu). Returns +inf when the level is unreachable.
inline double poisson_chernoff_rate(TestFunction const& psi, WeightSpec const& w, double s,
                                    double a)
{
    std::vector<double> val, dmu;
    auto const [panels, nt] = support_grid(psi, psi.support_radius() / 16.0);
    for_each_support_node(psi, panels, nt, [&](Complex z, double wt) {
        double const v = psi(z);
        if (v == 0.0)
            return;
        val.push_back(v);
        dmu.push_back(wt * w.density(z));
    });
    auto cumulant = [&](double t) {
        double acc = 0;
        for (std::size_t i = 0; i < val.size(); ++i)
            acc += std::expm1(t * val[i]) * dmu[i];
        return s * acc;
    };
    auto slope = [&](double t) {
        double acc = 0;
        for (std::size_t i = 0; i < val.size(); ++i)
            acc += val[i] * std::exp(t * val[i]) * dmu[i];
        return s * acc;
    };
    double const mean = slope(0.0);
    if (a == mean)
        return 0.0;
    double const vmax = *std::max_element(val.begin(), val.end());
    double const vmin = *std::min_element(val.begin(), val.end());
    // for a below the mean the slope tends to 0 (psi >= 0) as t -> -inf
    if (a < mean && vmin >= 0 && a <= 0)
        return HUGE_VAL;
    double lo = 0, hi = 0;
    double step = a > mean ? 1.0 / vmax : -1.0 / std::max(vmax, 1e-300);
    for (int i = 0; i < 200; ++i)
    {
        hi += step;
        if ((a > mean) == (slope(hi) >= a))
            break;
        lo = hi;
        step *= 2;
    }
    for (int i = 0; i < 200; ++i)
    {
        double const mid = 0.5 * (lo + hi);
        ((a > mean) == (slope(mid) < a) ? lo : hi) = mid;
    }
    double const t = 0.5 * (lo + hi);
    return t * a - cumulant(t);
}

/// Binomial estimate with a 95% Wilson interval and a 3-sigma band.
inline ojson proportion_json(std::size_t k, std::size_t n)
{
    double const p = n ? double(k) / n : nan_value;
    ojson j{{"events", k}, {"trials", n}, {"p", p},
            {"ci95", interval_json(special::wilson_interval(k, n, 1.959963984540054))}};
    if (k == 0 && n > 0)
        j["upper_bound_zero_events"] = special::zero_event_upper_bound(n);
    return j;
}

// |x| against log L: weighted slope below zero and the last value under the first
inline ojson shrink_trend(std::vector<double> const& logL, std::vector<double> const& x,
                          std::vector<double> const& se)
{
    std::vector<double> ax, w;
    for (std::size_t k = 0; k < x.size(); ++k)
    {
        ax.push_back(std::abs(x[k]));
        w.push_back(1.0 / (se[k] * se[k]));
    }
    ojson j = fit_json(special::fit_line(logL, ax, w, true));
    j["shrinks"] = x.size() >= 2 && j["slope"].get<double>() < 0 && ax.back() < ax.front();
    return j;
}

}  // namespace detail

//---------------------------------------------------------------------------//
// mean and variance of n(psi, L)
//---------------------------------------------------------------------------//

inline StatReport run_mean_variance_experiment(ExperimentConfig const& c,
                                               RunOptions const& opt = {})
{
    using namespace detail;
    StatReport rep = start_report(c);
    TestFunction const psi = *c.psi;
    Rect const work = work_box(c);
    double const limit = mean_limit(psi, c.weight);
    double const lap_l1 = laplacian_l1(psi);
    double const s = c.intensity_scale;
    double const psi_mu = integral_mu(psi, c.weight);
    double const psi2_mu = integral_mu(psi, c.weight, 2);

    std::vector<double> logL, log_var, var_w, log_exact, log_sur, log_pvar, ratio_gp;
    for (std::size_t k = 0; k < c.L_grid.size(); ++k)
    {
        double const L = c.L_grid[k];
        std::size_t const n = c.trials_at(k);
        log(opt, "L = " + StatReport::num(L) + ": building kernel");
        auto const model = build_model(c, L, work, c.form);
        double const ek = ek_expected(*model, psi, opt.threads);
        auto const vt = variance_theoretical(*model, psi, opt.threads);
        double const bound = log_diag_sup(*model, psi) / (4 * pi * L) * lap_l1;

        log(opt, "L = " + StatReport::num(L) + ": " + std::to_string(n) + " trials");
        auto const batch = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
            GafSample const g = draw(model, gaf_stream(c, t, k), work);
            double const ls = linear_statistic_trial(g, psi);
            double const cnt = c.count_disc ? double(count_zeros_argument(g, *c.count_disc))
                                            : nan_value;
            return std::array<double, 2>{ls, cnt};
        });
        std::vector<double> stat, cnt;
        for (auto const& v : batch.values)
        {
            stat.push_back(v[0]);
            cnt.push_back(v[1]);
        }
        auto const m = special::moments(stat);
        double const se = std::sqrt(m.variance / double(m.count));
        rep.rows.push_back({"gaf", L, n, batch.flagged, m.mean, m.variance, ek, vt.exact});

        ojson d{{"L", L},
                {"trials", n},
                {"flagged", batch.flagged},
                {"mean", m.mean},
                {"mean_se", se},
                {"variance", m.variance},
                {"ek_expected", ek},
                {"mean_limit", limit},
                {"deviation_from_limit", m.mean - limit},
                {"mean_error_bound", bound},
                {"within_bound", std::abs(m.mean - limit) <= bound + 3 * se},
                {"ek_within_3se", std::abs(m.mean - ek) <= 3 * se},
                {"variance_exact", vt.exact},
                {"variance_surrogate", vt.surrogate},
                {"exact_over_surrogate", vt.ratio()},
                {"empirical_over_exact", m.variance / vt.exact},
                {"max_xi2", vt.max_xi2}};

        logL.push_back(std::log(L));
        log_var.push_back(std::log(m.variance));
        var_w.push_back(0.5 * double(m.count - 1));  // var(log s^2) ~ 2 / (n - 1)
        log_exact.push_back(std::log(vt.exact));
        log_sur.push_back(std::log(vt.surrogate));
        rep.fit_points.push_back({"gaf_variance", L, logL.back(), log_var.back(), var_w.back(), true});

        if (c.count_disc)
        {
            auto const mc = special::moments(cnt);
            double const ec = expected_count(*model, *c.count_disc, opt.threads);
            double const cse = std::sqrt(mc.variance / double(mc.count));
            rep.rows.push_back({"count", L, n, batch.flagged, mc.mean, mc.variance, ec, nan_value});
            d["count"] = {{"mean", mc.mean},
                          {"mean_se", cse},
                          {"variance", mc.variance},
                          {"expected", ec},
                          {"within_3se", std::abs(mc.mean - ec) <= 3 * cse}};
        }

        if (c.poisson_baseline)
        {
            RhoField const field(c.weight, L);
            auto const pb = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
                return poisson_linear_statistic(field, psi, s, poisson_stream(c, t, k));
            });
            auto const pm = special::moments(pb.values);
            double const tm = s * psi_mu, tv = s * psi2_mu / L;
            rep.rows.push_back({"poisson", L, n, pb.flagged, pm.mean, pm.variance, tm, tv});
            d["poisson"] = {{"mean", pm.mean},
                            {"variance", pm.variance},
                            {"theory_mean", tm},
                            {"theory_variance", tv},
                            {"mean_rel_error", std::abs(pm.mean / tm - 1)},
                            {"variance_rel_error", std::abs(pm.variance / tv - 1)}};
            d["gaf_over_poisson_variance"] = m.variance / pm.variance;
            log_pvar.push_back(std::log(pm.variance));
            ratio_gp.push_back(m.variance / pm.variance);
        }
        rep.details.push_back(d);
    }

    if (c.L_grid.size() >= 2)
    {
        rep.fits["variance_exponent"] = fit_json(special::fit_line(logL, log_var, var_w, true));
        rep.fits["exact_variance_exponent"] = fit_json(special::fit_line(logL, log_exact));
        rep.fits["surrogate_variance_exponent"] = fit_json(special::fit_line(logL, log_sur));
        if (!log_pvar.empty())
            rep.fits["poisson_variance_exponent"] = fit_json(special::fit_line(logL, log_pvar));
    }
    double rmin = HUGE_VAL, rmax = 0;
    bool all_bound = true;
    for (auto const& d : rep.details)
    {
        rmin = std::min(rmin, d["exact_over_surrogate"].get<double>());
        rmax = std::max(rmax, d["exact_over_surrogate"].get<double>());
        all_bound = all_bound && d["within_bound"].get<bool>();
    }
    rep.summary["mean_limit"] = limit;
    rep.summary["laplacian_l1"] = lap_l1;
    rep.summary["exact_over_surrogate_min"] = rmin;
    rep.summary["exact_over_surrogate_max"] = rmax;
    rep.summary["mean_within_bound_all_L"] = all_bound;
    if (!ratio_gp.empty())
    {
        bool dec = true;
        for (std::size_t k = 1; k < ratio_gp.size(); ++k)
            dec = dec && ratio_gp[k] < ratio_gp[k - 1];
        rep.summary["gaf_over_poisson_variance_decreasing"] = dec;
    }
    return rep;
}

//---------------------------------------------------------------------------//
// hole probability
//---------------------------------------------------------------------------//

inline StatReport run_hole_experiment(ExperimentConfig const& c, RunOptions const& opt = {})
{
    using namespace detail;
    StatReport rep = start_report(c);
    Disc const hole = *c.hole;
    Rect const work = work_box(c);
    double const s = c.intensity_scale;
    double const mu_hole = mu_disc(c.weight, hole.center, hole.radius, 1.0);
    bool const flat = c.weight.is_radial() && c.weight.alpha() == 2.0;
    double const r4 = std::pow(hole.radius, 4);
    double const sharp = std::exp(2.0) / 4.0 * r4;  // flat-weight hole constant

    std::vector<double> xs, ys, ws, Ls, ps;
    std::vector<double> pois_x, pois_y, pois_w;
    for (std::size_t k = 0; k < c.L_grid.size(); ++k)
    {
        double const L = c.L_grid[k];
        std::size_t const n = c.trials_at(k);
        log(opt, "L = " + StatReport::num(L) + ": " + std::to_string(n) + " trials");
        auto const model = build_model(c, L, work, c.form);
        auto const batch = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
            GafSample const g = draw(model, gaf_stream(c, t, k), work);
            return count_zeros_argument(g, hole) == 0 ? 1 : 0;
        });
        std::size_t events = 0;
        for (int v : batch.values)
            events += std::size_t(v);
        std::size_t const used_n = batch.values.size();
        double const p = double(events) / double(used_n);
        double const pred = flat ? std::exp(-sharp * L * L) : nan_value;
        rep.rows.push_back({"gaf", L, n, batch.flagged, p, p * (1 - p) / used_n, pred, nan_value});
        ojson d{{"L", L}, {"L2", L * L}, {"flagged", batch.flagged}};
        d["gaf"] = proportion_json(events, used_n);
        d["predicted_log_p"] = flat ? -sharp * L * L : nan_value;

        bool const use = events >= 10;
        double const logp = events ? std::log(p) : nan_value;
        double const w = events && events < used_n ? used_n * p / (1 - p) : 0.0;
        rep.fit_points.push_back({"gaf_hole", L, L * L, logp, w, use && w > 0});
        if (use && w > 0)
        {
            xs.push_back(L * L);
            ys.push_back(logp);
            ws.push_back(w);
            Ls.push_back(L);
            ps.push_back(p);
        }
        else
            rep.notes.push_back(std::string(to_string(ErrorCode::InsufficientHoles)) + ": L = "
                                + StatReport::num(L) + " has " + std::to_string(events)
                                + " hole events (< 10); dropped from the fit");

        double const pt = std::exp(-s * L * mu_hole);
        d["poisson_theory_p"] = pt;
        if (c.poisson_baseline)
        {
            RhoField const field(c.weight, L);
            auto const pb = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
                return poisson_count(field, hole, s, poisson_stream(c, t, k)) == 0 ? 1 : 0;
            });
            std::size_t pe = 0;
            for (int v : pb.values)
                pe += std::size_t(v);
            std::size_t const pn = pb.values.size();
            double const pp = double(pe) / double(pn);
            double const sigma = std::sqrt(pt * (1 - pt) / pn);
            rep.rows.push_back({"poisson", L, n, pb.flagged, pp, pp * (1 - pp) / pn, pt,
                                pt * (1 - pt) / pn});
            d["poisson"] = proportion_json(pe, pn);
            d["poisson"]["z_score"] = sigma > 0 ? (pp - pt) / sigma : 0.0;
            d["poisson"]["within_3_sigma"] = std::abs(pp - pt) <= 3 * sigma;
            if (pe >= 10 && pe < pn)
            {
                pois_x.push_back(L);
                pois_y.push_back(std::log(pp));
                pois_w.push_back(pn * pp / (1 - pp));
            }
        }
        rep.details.push_back(d);
    }

    if (xs.size() < 2)
        throw Error(ErrorCode::InsufficientHoles,
                    "fewer than two L values observed at least 10 holes; raise trials or "
                    "shrink the hole");
    auto const fit = special::fit_line(xs, ys, ws, true);
    double const c_hat = -fit.slope;
    ojson f = fit_json(fit);
    f["c_hat"] = c_hat;
    f["c_hat_ci95"] = ojson::array({c_hat - 1.96 * fit.slope_se, c_hat + 1.96 * fit.slope_se});
    if (flat)
    {
        f["predicted_c"] = sharp;
        f["c_hat_over_predicted"] = c_hat / sharp;
        f["within_factor_2"] = c_hat >= sharp / 2 && c_hat <= 2 * sharp;
    }
    rep.fits["log_p_vs_L2"] = f;
    std::vector<double> lin_x;
    for (double L : Ls)
        lin_x.push_back(L);
    rep.fits["log_p_vs_L"] = fit_json(special::fit_line(lin_x, ys, ws, true));

    // local quadratic rates between consecutive fitted L
    ojson rates = ojson::array();
    double rmin = HUGE_VAL, rmax = -HUGE_VAL;
    for (std::size_t i = 1; i < xs.size(); ++i)
    {
        double const rate = -(ys[i] - ys[i - 1]) / (xs[i] - xs[i - 1]);
        rates.push_back({{"L_from", Ls[i - 1]}, {"L_to", Ls[i]}, {"rate", rate}});
        rmin = std::min(rmin, rate);
        rmax = std::max(rmax, rate);
    }
    rep.fits["local_rates"] = rates;
    rep.summary["hole_radius"] = hole.radius;
    rep.summary["hole_mu"] = mu_hole;
    rep.summary["L2_r4_range"] = ojson::array({c.L_grid.front() * c.L_grid.front() * r4,
                                               c.L_grid.back() * c.L_grid.back() * r4});
    rep.summary["c_hat"] = c_hat;
    rep.summary["r_squared"] = fit.r_squared;
    rep.summary["local_rate_min_over_max"] = rmax > 0 ? rmin / rmax : nan_value;
    rep.summary["fitted_L_count"] = xs.size();
    if (pois_x.size() >= 2)
    {
        auto const pf = special::fit_line(pois_x, pois_y, pois_w, true);
        ojson pj = fit_json(pf);
        pj["predicted_slope"] = -s * mu_hole;
        rep.fits["poisson_log_p_vs_L"] = pj;
    }
    return rep;
}

//---------------------------------------------------------------------------//
// large deviations of n(psi, L)
//---------------------------------------------------------------------------//

inline StatReport run_large_deviation_experiment(ExperimentConfig const& c,
                                                 RunOptions const& opt = {})
{
    using namespace detail;
    StatReport rep = start_report(c);
    TestFunction const psi = *c.psi;
    Rect const work = work_box(c);
    double const m = mean_limit(psi, c.weight);
    GAFSIM_REQUIRE(m != 0.0, ErrorCode::ConfigError,
                   "psi: mean limit is zero, relative deviations are undefined");
    double const delta = c.deviation_delta;
    double const s = c.intensity_scale;
    double const pm = s * integral_mu(psi, c.weight);
    double const i_up = poisson_chernoff_rate(psi, c.weight, s, pm * (1 + delta));
    double const i_dn = poisson_chernoff_rate(psi, c.weight, s, pm * (1 - delta));
    double const rate = std::min(i_up, i_dn);

    struct Series
    {
        std::vector<double> L, p, w;
        std::vector<double> p_all;
    } gaf, pois;
    for (std::size_t k = 0; k < c.L_grid.size(); ++k)
    {
        double const L = c.L_grid[k];
        std::size_t const n = c.trials_at(k);
        log(opt, "L = " + StatReport::num(L) + ": " + std::to_string(n) + " trials");
        auto const model = build_model(c, L, work, c.form);
        auto const batch = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
            return linear_statistic_trial(draw(model, gaf_stream(c, t, k), work), psi);
        });
        std::size_t ev = 0;
        for (double v : batch.values)
            ev += std::abs(v / m - 1) > delta;
        std::size_t const un = batch.values.size();
        double const p = double(ev) / double(un);
        auto const mo = special::moments(batch.values);
        rep.rows.push_back({"gaf", L, n, batch.flagged, p, p * (1 - p) / un, nan_value, nan_value});
        ojson d{{"L", L}, {"flagged", batch.flagged}, {"statistic_mean", mo.mean},
                {"statistic_variance", mo.variance}};
        d["gaf"] = proportion_json(ev, un);
        gaf.p_all.push_back(p);
        bool const use = ev >= 10 && ev < un;
        rep.fit_points.push_back({"gaf_deviation", L, L, ev ? std::log(p) : nan_value,
                                  use ? un * p / (1 - p) : 0.0, use});
        if (use)
        {
            gaf.L.push_back(L);
            gaf.p.push_back(p);
            gaf.w.push_back(un * p / (1 - p));
        }
        else
            rep.notes.push_back(std::string(to_string(ErrorCode::InsufficientDeviations))
                                + ": L = " + StatReport::num(L) + " has " + std::to_string(ev)
                                + " deviation events (< 10); dropped from the fit");

        double const chern = std::min(1.0, std::exp(-L * i_up) + std::exp(-L * i_dn));
        d["poisson_chernoff_bound"] = chern;
        if (c.poisson_baseline)
        {
            RhoField const field(c.weight, L);
            auto const pb = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
                return poisson_linear_statistic(field, psi, s, poisson_stream(c, t, k));
            });
            std::size_t pe = 0;
            for (double v : pb.values)
                pe += std::abs(v / pm - 1) > delta;
            std::size_t const pn = pb.values.size();
            double const pp = double(pe) / double(pn);
            rep.rows.push_back({"poisson", L, n, pb.flagged, pp, pp * (1 - pp) / pn, chern, nan_value});
            d["poisson"] = proportion_json(pe, pn);
            d["poisson"]["below_chernoff"]
                = special::wilson_interval(pe, pn, 3.0).lo <= chern;
            pois.p_all.push_back(pp);
            bool const puse = pe >= 10 && pe < pn;
            rep.fit_points.push_back({"poisson_deviation", L, L, pe ? std::log(pp) : nan_value,
                                      puse ? pn * pp / (1 - pp) : 0.0, puse});
            if (puse)
            {
                pois.L.push_back(L);
                pois.p.push_back(pp);
                pois.w.push_back(pn * pp / (1 - pp));
            }
        }
        rep.details.push_back(d);
    }

    auto decreasing = [](std::vector<double> const& p) {
        for (std::size_t k = 1; k < p.size(); ++k)
            if (!(p[k] < p[k - 1] || (p[k] == 0 && p[k - 1] == 0)))
                return false;
        return true;
    };
    // log p = b - c L^tau, tau from log(-log p) vs log L
    auto fits = [](Series const& sr) {
        ojson f;
        std::vector<double> x2, x1, y, lx, ly;
        for (std::size_t i = 0; i < sr.L.size(); ++i)
        {
            x2.push_back(sr.L[i] * sr.L[i]);
            x1.push_back(sr.L[i]);
            y.push_back(std::log(sr.p[i]));
            lx.push_back(std::log(sr.L[i]));
            ly.push_back(std::log(-std::log(sr.p[i])));
        }
        f["log_p_vs_L2"] = fit_json(special::fit_line(x2, y, sr.w, true));
        f["log_p_vs_L"] = fit_json(special::fit_line(x1, y, sr.w, true));
        auto const tf = special::fit_line(lx, ly);
        f["tau"] = fit_json(tf);
        return f;
    };
    rep.summary["delta"] = delta;
    rep.summary["mean_limit"] = m;
    rep.summary["gaf_decreasing"] = decreasing(gaf.p_all);
    if (gaf.L.size() >= 2)
    {
        rep.fits["gaf"] = fits(gaf);
        double const tau = rep.fits["gaf"]["tau"]["slope"].get<double>();
        double const se = rep.fits["gaf"]["tau"]["slope_se"].get<double>();
        rep.summary["gaf_tau"] = tau;
        rep.summary["gaf_at_least_quadratic"] = tau + 2 * se >= 2.0;
    }
    rep.summary["poisson_chernoff_rate"] = rate;
    rep.summary["poisson_chernoff_rate_upper"] = i_up;
    rep.summary["poisson_chernoff_rate_lower"] = i_dn;
    if (c.poisson_baseline)
        rep.summary["poisson_decreasing"] = decreasing(pois.p_all);
    if (pois.L.size() >= 2)
    {
        rep.fits["poisson"] = fits(pois);
        rep.summary["poisson_tau"] = rep.fits["poisson"]["tau"]["slope"];
    }
    return rep;
}

//---------------------------------------------------------------------------//
// asymptotic normality
//---------------------------------------------------------------------------//

inline constexpr double flatness_limit = 1.5;
inline constexpr std::size_t normality_min_trials = 2000;

inline void require_local_flatness(ExperimentConfig const& c)
{
    auto const band = local_flatness_scan(c.weight, c.region);
    if (band.width() > flatness_limit)
        throw Error(ErrorCode::PreconditionFailed,
                    "weight " + c.weight.name() + " is not locally flat on the region (flatness band "
                        + StatReport::num(band.min_ratio) + " .. " + StatReport::num(band.max_ratio)
                        + ", width " + StatReport::num(band.width()) + " > 1.5); asymptotic "
                        "normality of linear statistics is only established for locally flat "
                        "measures");
}

inline StatReport run_normality_experiment(ExperimentConfig const& c, RunOptions const& opt = {})
{
    using namespace detail;
    require_local_flatness(c);
    StatReport rep = start_report(c);
    TestFunction const psi = *c.psi;
    Rect const work = work_box(c);
    rep.summary["flatness_band"] = local_flatness_scan(c.weight, c.region).width();

    std::vector<double> skew, kurt, skew_se, kurt_se, logL, sup1, sup2;
    for (std::size_t k = 0; k < c.L_grid.size(); ++k)
    {
        double const L = c.L_grid[k];
        std::size_t n = c.trials_at(k);
        if (k + 1 == c.L_grid.size() && n < normality_min_trials)
        {
            rep.notes.push_back("trials at the largest L raised from " + std::to_string(n)
                                + " to " + std::to_string(normality_min_trials));
            n = normality_min_trials;
        }
        log(opt, "L = " + StatReport::num(L) + ": " + std::to_string(n) + " trials");
        auto const model = build_model(c, L, work, c.form);
        auto const batch = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
            return linear_statistic_trial(draw(model, gaf_stream(c, t, k), work), psi);
        });
        auto const mo = special::moments(batch.values);
        double const sd = std::sqrt(mo.variance);
        std::vector<double> z;
        for (double v : batch.values)
            z.push_back((v - mo.mean) / sd);
        auto const ks = special::ks_test_normal(z);
        double const nn = double(mo.count);
        rep.rows.push_back({"gaf", L, n, batch.flagged, mo.mean, mo.variance,
                            ek_expected(*model, psi, opt.threads), nan_value});
        ojson d{{"L", L},
                {"trials", n},
                {"flagged", batch.flagged},
                {"mean", mo.mean},
                {"variance", mo.variance},
                {"ks_statistic", ks.statistic},
                {"ks_p_value", ks.p_value},
                {"skewness", mo.skewness},
                {"skewness_se", std::sqrt(6.0 / nn)},
                {"excess_kurtosis", mo.excess_kurtosis},
                {"excess_kurtosis_se", std::sqrt(24.0 / nn)}};
        skew.push_back(mo.skewness);
        kurt.push_back(mo.excess_kurtosis);
        skew_se.push_back(std::sqrt(6.0 / nn));
        kurt_se.push_back(std::sqrt(24.0 / nn));
        if (c.normality_conditions)
        {
            auto const nc = normality_conditions(*model, psi, opt.threads);
            d["conditions"] = {{"sup_integral", nc.sup_integral},
                               {"sup_integral_sq", nc.sup_integral_sq},
                               {"ratio_liminf_proxy", nc.ratio_liminf_proxy}};
            logL.push_back(std::log(L));
            sup1.push_back(std::log(nc.sup_integral));
            sup2.push_back(std::log(nc.sup_integral_sq));
        }
        rep.details.push_back(d);
    }
    std::vector<double> grid_logL;
    for (double L : c.L_grid)
        grid_logL.push_back(std::log(L));
    rep.fits["abs_skewness_vs_log_L"] = shrink_trend(grid_logL, skew, skew_se);
    rep.fits["abs_kurtosis_vs_log_L"] = shrink_trend(grid_logL, kurt, kurt_se);
    rep.summary["skewness_shrinks"] = rep.fits["abs_skewness_vs_log_L"]["shrinks"];
    rep.summary["kurtosis_shrinks"] = rep.fits["abs_kurtosis_vs_log_L"]["shrinks"];
    rep.summary["ks_p_value_largest_L"] = rep.details.back()["ks_p_value"];
    if (logL.size() >= 2)
    {
        rep.fits["sup_integral_exponent"] = fit_json(special::fit_line(logL, sup1));
        rep.fits["sup_integral_sq_exponent"] = fit_json(special::fit_line(logL, sup2));
    }
    return rep;
}

//---------------------------------------------------------------------------//
// kernel diagnostics
//---------------------------------------------------------------------------//

inline StatReport run_kernel_diagnostics(ExperimentConfig const& c, RunOptions const& opt = {})
{
    using namespace detail;
    StatReport rep = start_report(c);
    auto const grid = detail::grid_points(c.region, c.diag_grid);
    bool const flat = c.weight.is_radial() && c.weight.alpha() == 2.0;
    std::vector<double> diag_lo, diag_hi, lap_lo, lap_hi, Ls;
    std::vector<std::vector<double>> decay(c.fast_decay.R.size());
    double closed_worst = 0;

    for (double L : c.L_grid)
    {
        log(opt, "L = " + StatReport::num(L));
        auto const model = KernelModel::from_basis(
            build_basis(c.weight, L, 1.02 * c.region.max_abs() + 0.02));
        RhoField const& field = model->rho_field();
        std::vector<double> dg(grid.size()), lp(grid.size());
        parallel_for(grid.size(), opt.threads, [&](std::size_t i) {
            dg[i] = model->diag_normalized(grid[i]);
            double const r = field.rho(grid[i]);
            lp[i] = kernel_log_laplacian(*model, grid[i]) * r * r;
        });
        auto [dl, dh] = std::minmax_element(dg.begin(), dg.end());
        auto [ll, lh] = std::minmax_element(lp.begin(), lp.end());
        ojson d{{"L", L},
                {"diag_band", ojson::array({*dl, *dh})},
                {"laplacian_band", ojson::array({*ll, *lh})},
                {"n_max", model->basis().n_max()},
                {"tail_bound", model->basis().tail_bound()}};
        diag_lo.push_back(*dl);
        diag_hi.push_back(*dh);
        lap_lo.push_back(*ll);
        lap_hi.push_back(*lh);
        Ls.push_back(L);

        if (flat)
        {
            // error relative to the diagonal scale (K(z,z) K(w,w))^(1/2)
            std::vector<double> worst(grid.size());
            parallel_for(grid.size(), opt.threads, [&](std::size_t i) {
                Complex const z = grid[i];
                double e = 0;
                for (Complex w : grid)
                {
                    Complex const got = model->normalized(z, w);
                    Complex const want
                        = std::exp(L * z * std::conj(w) - 0.5 * L * (std::norm(z) + std::norm(w)))
                          / (2 * pi * pi);
                    e = std::max(e, std::abs(got - want) * 2 * pi * pi);
                }
                worst[i] = e;
            });
            double const e = *std::max_element(worst.begin(), worst.end());
            d["closed_form_max_rel_error"] = e;
            closed_worst = std::max(closed_worst, e);
        }

        ojson fd = ojson::array();
        for (std::size_t q = 0; q < c.fast_decay.R.size(); ++q)
        {
            double const v = fast_decay_integral(*model, 0.0, c.fast_decay.r, c.fast_decay.R[q]);
            fd.push_back({{"r", c.fast_decay.r}, {"R", c.fast_decay.R[q]}, {"value", v}});
            decay[q].push_back(v);
        }
        d["fast_decay"] = fd;
        rep.rows.push_back({"kernel", L, 0, 0, *dl, *dh, *ll, *lh});
        rep.details.push_back(d);
    }

    auto spread = [](std::vector<double> const& v) {
        auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return *hi / *lo;
    };
    double const dmin = *std::min_element(diag_lo.begin(), diag_lo.end());
    double const lmin = *std::min_element(lap_lo.begin(), lap_lo.end());
    rep.summary["diag_band"] = ojson::array(
        {dmin, *std::max_element(diag_hi.begin(), diag_hi.end())});
    rep.summary["laplacian_band"] = ojson::array(
        {lmin, *std::max_element(lap_hi.begin(), lap_hi.end())});
    double const du = std::max(spread(diag_lo), spread(diag_hi));
    double const lu = std::max(spread(lap_lo), spread(lap_hi));
    rep.summary["diag_L_spread"] = du;
    rep.summary["laplacian_L_spread"] = lu;
    rep.summary["bands_positive"] = dmin > 0 && lmin > 0;
    rep.summary["bands_L_uniform"] = du <= 2.0 && lu <= 2.0;
    if (flat)
        rep.summary["closed_form_max_rel_error"] = closed_worst;

    if (Ls.size() >= 2)
    {
        ojson fits = ojson::array();
        double prev = 0;
        bool neg = true, grows = true;
        for (std::size_t q = 0; q < decay.size(); ++q)
        {
            std::vector<double> y;
            bool positive = true;
            for (double v : decay[q])
            {
                positive = positive && v > 0;
                y.push_back(std::log(std::max(v, 1e-300)));
                rep.fit_points.push_back({"fast_decay_R" + StatReport::num(c.fast_decay.R[q]),
                                          Ls[y.size() - 1], Ls[y.size() - 1], y.back(), 1.0,
                                          v > 0});
            }
            auto const f = special::fit_line(Ls, y);
            ojson fj = fit_json(f);
            fj["R"] = c.fast_decay.R[q];
            fj["all_positive"] = positive;
            fits.push_back(fj);
            neg = neg && f.slope < 0;
            if (q > 0)
                grows = grows && std::abs(f.slope) > prev;
            prev = std::abs(f.slope);
        }
        rep.fits["fast_decay_log_slope_vs_L"] = fits;
        rep.summary["fast_decay_slopes_negative"] = neg;
        rep.summary["fast_decay_slope_grows_with_R"] = grows;
    }
    return rep;
}

//---------------------------------------------------------------------------//
// Poisson baseline
//---------------------------------------------------------------------------//

inline StatReport run_poisson_baseline(ExperimentConfig const& c, RunOptions const& opt = {})
{
    using namespace detail;
    StatReport rep = start_report(c);
    double const s = c.intensity_scale;
    for (std::size_t k = 0; k < c.L_grid.size(); ++k)
    {
        double const L = c.L_grid[k];
        std::size_t const n = c.trials_at(k);
        log(opt, "L = " + StatReport::num(L) + ": " + std::to_string(n) + " trials");
        RhoField const field(c.weight, L);
        ojson d{{"L", L}};
        if (c.psi)
        {
            TestFunction const psi = *c.psi;
            auto const b = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
                return poisson_linear_statistic(field, psi, s, poisson_stream(c, t, k));
            });
            auto const m = special::moments(b.values);
            double const tm = s * integral_mu(psi, c.weight);
            double const tv = s * integral_mu(psi, c.weight, 2) / L;
            rep.rows.push_back({"poisson", L, n, b.flagged, m.mean, m.variance, tm, tv});
            d["mean"] = m.mean;
            d["variance"] = m.variance;
            d["theory_mean"] = tm;
            d["theory_variance"] = tv;
            d["mean_rel_error"] = std::abs(m.mean / tm - 1);
            d["variance_rel_error"] = std::abs(m.variance / tv - 1);
        }
        if (c.hole)
        {
            Disc const hole = *c.hole;
            auto const b = run_trials(c, n, L, opt.threads, rep, [&](std::size_t t) {
                return poisson_count(field, hole, s, poisson_stream(c, t, k)) == 0 ? 1 : 0;
            });
            std::size_t ev = 0;
            for (int v : b.values)
                ev += std::size_t(v);
            std::size_t const un = b.values.size();
            double const pt = std::exp(-s * L * mu_disc(c.weight, hole.center, hole.radius, 1.0));
            double const p = double(ev) / double(un);
            double const sigma = std::sqrt(pt * (1 - pt) / un);
            rep.rows.push_back({"poisson_hole", L, n, b.flagged, p, p * (1 - p) / un, pt,
                                pt * (1 - pt) / un});
            d["hole"] = proportion_json(ev, un);
            d["hole"]["theory_p"] = pt;
            d["hole"]["within_3_sigma"] = std::abs(p - pt) <= 3 * sigma;
        }
        rep.details.push_back(d);
    }
    return rep;
}

/// Rough wall-clock estimate in seconds: kernel setup and a few trials at
/// the largest L, scaled to the full trial budget. An upper-side estimate
/// since smaller L are cheaper.
inline double estimate_runtime(ExperimentConfig const& c, unsigned threads, int probes = 3)
{
    using clock = std::chrono::steady_clock;
    using namespace detail;
    auto seconds = [](clock::time_point a) {
        return std::chrono::duration<double>(clock::now() - a).count();
    };
    double const L = c.L_grid.back();
    std::size_t const k = c.L_grid.size() - 1;
    Rect const work = work_box(c);
    auto t0 = clock::now();
    if (c.kind == ExperimentKind::KernelDiagnostics)
    {
        auto const model = KernelModel::from_basis(
            build_basis(c.weight, L, 1.02 * c.region.max_abs() + 0.02));
        for (Complex z : detail::grid_points(c.region, 3))
            (void)kernel_log_laplacian(*model, z);
        return seconds(t0) * double(c.L_grid.size()) * c.diag_grid * c.diag_grid / 9.0;
    }
    double setup = 0, per_trial = 0;
    if (c.kind == ExperimentKind::PoissonBaseline)
    {
        RhoField const field(c.weight, L);
        Rect const box = work_box(c);
        for (int t = 0; t < probes; ++t)
            (void)sample_poisson_pp(field, box, c.intensity_scale, poisson_stream(c, t, k));
        per_trial = seconds(t0) / probes;
    }
    else
    {
        auto const model = build_model(c, L, work, c.form);
        if (c.kind == ExperimentKind::MeanVariance)
            (void)variance_theoretical(*model, *c.psi, threads);
        setup = seconds(t0);
        t0 = clock::now();
        for (int t = 0; t < probes; ++t)
        {
            GafSample const g = draw(model, gaf_stream(c, t, k), work);
            if (c.kind == ExperimentKind::Hole)
                (void)count_zeros_argument(g, *c.hole);
            else
                (void)locate_zeros(g, Region{c.psi->support()});
        }
        per_trial = seconds(t0) / probes;
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < c.L_grid.size(); ++i)
    {
        std::size_t n = c.trials_at(i);
        if (c.kind == ExperimentKind::Normality && i == k)
            n = std::max(n, normality_min_trials);
        total += n;
    }
    return setup * double(c.L_grid.size()) + per_trial * double(total) / std::max(1u, threads);
}

inline StatReport run_experiment(ExperimentConfig const& c, RunOptions const& opt = {})
{
    switch (c.kind)
    {
        case ExperimentKind::MeanVariance: return run_mean_variance_experiment(c, opt);
        case ExperimentKind::Hole: return run_hole_experiment(c, opt);
        case ExperimentKind::LargeDeviation: return run_large_deviation_experiment(c, opt);
        case ExperimentKind::Normality: return run_normality_experiment(c, opt);
        case ExperimentKind::KernelDiagnostics: return run_kernel_diagnostics(c, opt);
        case ExperimentKind::PoissonBaseline: return run_poisson_baseline(c, opt);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown experiment");
}

}  // namespace gafsim
