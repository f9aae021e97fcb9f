#pragma once

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "experiments.hpp"

namespace gafsim
{

enum ExitCode : int
{
    exit_ok = 0,
    exit_failure = 1,    // experiment error
    exit_config = 2,     // bad config or refused by validate
};

/// GAFSIM_SEED, when set, replaces the master seed.
inline void apply_seed_override(ExperimentConfig& c, char const* env = std::getenv("GAFSIM_SEED"))
{
    if (!env)
        return;
    std::string_view s(env);
    std::uint64_t v = 0;
    auto const [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty())
        detail::config_error("GAFSIM_SEED", "not an unsigned 64-bit integer: '" + std::string(s) + "'");
    c.master_seed = v;
}

struct ReportFiles
{
    std::filesystem::path json, summary_csv, fit_csv;
};

inline ReportFiles write_report(StatReport const& r, std::filesystem::path const& dir)
{
    std::filesystem::create_directories(dir);
    ReportFiles f{dir / (r.name + ".report.json"), dir / (r.name + ".summary.csv"),
                  dir / (r.name + ".fit.csv")};
    auto open = [](std::filesystem::path const& p) {
        std::ofstream os(p, std::ios::binary);
        GAFSIM_REQUIRE(os.good(), ErrorCode::InvalidArgument, "cannot write " + p.string());
        return os;
    };
    {
        auto os = open(f.json);
        os << r.to_json().dump(2) << '\n';
    }
    {
        auto os = open(f.summary_csv);
        r.write_summary_csv(os);
    }
    if (r.fit_points.empty())
        f.fit_csv.clear();
    else
    {
        auto os = open(f.fit_csv);
        r.write_fit_csv(os);
    }
    return f;
}

inline void print_summary(StatReport const& r, std::ostream& os)
{
    os << r.experiment << " '" << r.name << "'  weight " << r.weight.dump() << "  form "
       << r.gaf_form << "  config " << r.config_hash << "  seed " << r.master_seed << '\n';
    os << std::left << std::setw(13) << "series" << std::right << std::setw(8) << "L"
       << std::setw(9) << "trials" << std::setw(6) << "flag" << std::setw(14) << "mean"
       << std::setw(14) << "var" << std::setw(14) << "theory_mean" << std::setw(14)
       << "theory_var" << '\n';
    auto cell = [&](double v) {
        os << std::setw(14);
        if (std::isfinite(v))
            os << std::setprecision(6) << v;
        else
            os << "-";
    };
    for (auto const& row : r.rows)
    {
        os << std::left << std::setw(13) << row.series << std::right << std::setw(8) << row.L
           << std::setw(9) << row.trials << std::setw(6) << row.flagged;
        cell(row.mean);
        cell(row.var);
        cell(row.theory_mean);
        cell(row.theory_var);
        os << '\n';
    }
    if (!r.fits.empty())
        os << "fits: " << r.fits.dump() << '\n';
    if (!r.summary.empty())
        os << "summary: " << r.summary.dump() << '\n';
    for (auto const& n : r.notes)
        os << "note: " << n << '\n';
    if (!r.flags.empty())
        os << r.flags.size() << " flagged trials (listed in the JSON report)\n";
}

struct Diagnostic
{
    enum Level
    {
        Ok,
        Warning,
        Refused
    } level = Ok;
    std::string message;
};

inline char const* to_string(Diagnostic::Level l)
{
    return l == Diagnostic::Ok ? "ok" : l == Diagnostic::Warning ? "warning" : "refused";
}

/// Checks a parsed config without running it.
inline std::vector<Diagnostic> validate_config(ExperimentConfig const& c, unsigned threads,
                                               bool probe_runtime = true)
{
    std::vector<Diagnostic> out;
    auto num = [](double v) { return StatReport::num(v); };

    if (c.kind == ExperimentKind::Normality)
    {
        auto const band = local_flatness_scan(c.weight, c.region);
        if (band.width() > flatness_limit)
        {
            out.push_back({Diagnostic::Refused,
                           "weight " + c.weight.name() + " is not locally flat on the region "
                           "(flatness band width " + num(band.width())
                           + " > 1.5); the normality experiment requires local flatness"});
            return out;
        }
        out.push_back({Diagnostic::Ok, "local flatness band width " + num(band.width())});
    }

    if (c.kind == ExperimentKind::Hole)
    {
        Disc const h = *c.hole;
        double const m = mu_disc(c.weight, h.center, h.radius, 1.0) / (2 * pi);
        auto predicted = [&](double L) { return -std::exp(2.0) / 4.0 * L * L * m * m; };
        double const top = predicted(c.L_grid.back());
        double const p_top = std::exp(top);
        double const p_low = std::exp(predicted(c.L_grid.front()));
        std::ostringstream msg;
        msg << "predicted log hole probability " << num(predicted(c.L_grid.front())) << " .. "
            << num(top) << " (flat-weight formula)";
        bool const flat = c.weight.is_radial() && c.weight.alpha() == 2.0;
        if (!flat)
            msg << "; only a rough guide for this weight, whose sharp constant is unknown";
        out.push_back({Diagnostic::Ok, msg.str()});
        if (flat)
        {
            if (p_top < 1e-7)
                out.push_back({Diagnostic::Warning,
                               "insufficient trial budget: predicted hole probability " + num(p_top)
                                   + " at L = " + num(c.L_grid.back()) + " needs about "
                                   + num(std::ceil(10 / p_top)) + " trials for 10 events"});
            else if (double(c.trials_at(c.L_grid.size() - 1)) * p_top < 10)
                out.push_back({Diagnostic::Warning,
                               "insufficient trial budget: expected "
                                   + num(c.trials_at(c.L_grid.size() - 1) * p_top)
                                   + " holes at the largest L (< 10)"});
            if (double(c.trials_at(0)) * p_low < 30)
                out.push_back({Diagnostic::Warning, "fewer than 30 holes expected at the smallest L"});
        }
    }

    if (c.kind != ExperimentKind::PoissonBaseline && c.form == GafForm::Frame)
    {
        if (c.L_grid.front() < 4)
            out.push_back({Diagnostic::Warning, "frame windows are wide at small L (rho_L ~ "
                                                    + num(1.0 / std::sqrt(2 * pi * c.L_grid.front()))
                                                    + "); expect large sampling sequences"});
    }

    for (double L : c.L_grid)
        if (L != std::floor(L))
        {
            out.push_back({Diagnostic::Warning, "non-integer L in the grid; almost sure "
                                                "statements hold along integer L"});
            break;
        }

    if (probe_runtime)
    {
        double const t = estimate_runtime(c, threads);
        out.push_back({Diagnostic::Ok, "estimated runtime " + num(std::round(t * 10) / 10)
                                           + " s on " + std::to_string(threads) + " threads"});
    }
    return out;
}

struct CommandOptions
{
    unsigned threads = default_thread_count();
    std::string out_dir;  // empty keeps the config's output.dir
    bool quiet = false;
};

inline int command_run(std::filesystem::path const& config_path, CommandOptions const& o,
                       std::ostream& os = std::cout, std::ostream& err = std::cerr,
                       bool kernel_only = false)
{
    try
    {
        ExperimentConfig c = load_config(config_path);
        apply_seed_override(c);
        if (kernel_only)
        {
            c.kind = ExperimentKind::KernelDiagnostics;
            c.name += "_kernel";
        }
        if (!o.out_dir.empty())
            c.output_dir = o.out_dir;
        RunOptions ro;
        ro.threads = o.threads;
        if (!o.quiet)
            ro.log = [&err](std::string const& s) { err << "  " << s << std::endl; };
        StatReport const r = run_experiment(c, ro);
        auto const files = write_report(r, c.output_dir);
        print_summary(r, os);
        os << "wrote " << files.json.string() << ", " << files.summary_csv.string();
        if (!files.fit_csv.empty())
            os << ", " << files.fit_csv.string();
        os << '\n';
        return exit_ok;
    }
    catch (Error const& e)
    {
        err << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::ConfigError ? exit_config : exit_failure;
    }
    catch (std::exception const& e)
    {
        err << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

inline int command_validate(std::filesystem::path const& config_path, CommandOptions const& o,
                            std::ostream& os = std::cout, std::ostream& err = std::cerr)
{
    try
    {
        ExperimentConfig c = load_config(config_path);
        apply_seed_override(c);
        auto const diags = validate_config(c, o.threads);
        bool refused = false;
        for (auto const& d : diags)
        {
            os << to_string(d.level) << ": " << d.message << '\n';
            refused = refused || d.level == Diagnostic::Refused;
        }
        os << (refused ? "refused" : "ok") << '\n';
        return refused ? exit_config : exit_ok;
    }
    catch (Error const& e)
    {
        err << "error: " << e.what() << '\n';
        return e.code() == ErrorCode::ConfigError ? exit_config : exit_failure;
    }
}

}  // namespace gafsim
