#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "fock.hpp"
#include "measure.hpp"
#include "test_function.hpp"
#include "types.hpp"

namespace gafsim
{

#ifndef GAFSIM_VERSION
#define GAFSIM_VERSION "0.1.0"
#endif

inline constexpr char const* build_version = GAFSIM_VERSION;
inline constexpr char const* report_schema = "gafsim-report/1";

enum class ExperimentKind
{
    MeanVariance,
    Hole,
    LargeDeviation,
    Normality,
    KernelDiagnostics,
    PoissonBaseline,
};

inline constexpr std::pair<ExperimentKind, std::string_view> experiment_names[] = {
    {ExperimentKind::MeanVariance, "mean_variance"},
    {ExperimentKind::Hole, "hole"},
    {ExperimentKind::LargeDeviation, "large_deviation"},
    {ExperimentKind::Normality, "normality"},
    {ExperimentKind::KernelDiagnostics, "kernel_diagnostics"},
    {ExperimentKind::PoissonBaseline, "poisson_baseline"},
};

inline std::string to_string(ExperimentKind k)
{
    for (auto const& [kind, name] : experiment_names)
        if (kind == k)
            return std::string(name);
    return "unknown";
}

struct FastDecaySpec
{
    double r = 0.2;
    std::vector<double> R{0.4, 0.6, 0.8};
};

struct ExperimentConfig
{
    ExperimentKind kind = ExperimentKind::MeanVariance;
    std::string name = "run";
    WeightSpec weight = WeightSpec::radial_power(2.0);
    GafForm form = GafForm::Basis;
    std::vector<double> L_grid;
    std::vector<std::size_t> trials;  // one per L
    Rect region;
    std::optional<TestFunction> psi;
    std::optional<Disc> hole;
    std::optional<Disc> count_disc;
    std::uint64_t master_seed = 1;
    std::uint64_t trial_offset = 0;
    double frame_delta = 0.4;
    double frame_R = 1.0;
    double intensity_scale = 1.0 / (2.0 * pi);
    bool poisson_baseline = true;
    double deviation_delta = 0.2;
    bool normality_conditions = true;
    int diag_grid = 20;
    FastDecaySpec fast_decay;
    std::string output_dir = "out";

    std::size_t trials_at(std::size_t k) const { return trials.at(k); }
};

namespace detail
{

[[noreturn]] inline void config_error(std::string const& field, std::string const& msg)
{
    throw Error(ErrorCode::ConfigError, field + ": " + msg);
}

inline nlohmann::json const& need(nlohmann::json const& j, char const* key,
                                  std::string const& path)
{
    if (!j.is_object() || !j.contains(key))
        config_error(path.empty() ? key : path + "." + key, "missing");
    return j.at(key);
}

template<class T>
T as(nlohmann::json const& j, std::string const& field)
{
    try
    {
        return j.get<T>();
    }
    catch (nlohmann::json::exception const& e)
    {
        config_error(field, std::string("wrong type (") + e.what() + ")");
    }
}

inline double finite(nlohmann::json const& j, std::string const& field)
{
    double const v = as<double>(j, field);
    if (!std::isfinite(v))
        config_error(field, "must be finite");
    return v;
}

inline Complex point(nlohmann::json const& j, std::string const& field)
{
    if (!j.is_array() || j.size() != 2)
        config_error(field, "expected [re, im]");
    return {finite(j[0], field), finite(j[1], field)};
}

inline Disc disc(nlohmann::json const& j, std::string const& field)
{
    Disc d{point(need(j, "center", field), field + ".center"),
           finite(need(j, "radius", field), field + ".radius")};
    if (!(d.radius > 0))
        config_error(field + ".radius", "must be positive");
    return d;
}

inline Rect rect(nlohmann::json const& j, std::string const& field)
{
    Rect r;
    if (j.is_array())
    {
        if (j.size() != 4)
            config_error(field, "expected [x0, y0, x1, y1]");
        r = {finite(j[0], field), finite(j[1], field), finite(j[2], field),
             finite(j[3], field)};
    }
    else
    {
        r = {finite(need(j, "x0", field), field + ".x0"), finite(need(j, "y0", field), field + ".y0"),
             finite(need(j, "x1", field), field + ".x1"), finite(need(j, "y1", field), field + ".y1")};
    }
    if (r.empty())
        config_error(field, "empty rectangle");
    return r;
}

inline TestFunction test_function(nlohmann::json const& j, std::string const& field)
{
    std::string const kind = as<std::string>(need(j, "kind", field), field + ".kind");
    Complex const c = j.contains("center") ? point(j.at("center"), field + ".center") : 0.0;
    double const h = j.contains("height") ? finite(j.at("height"), field + ".height") : 1.0;
    if (kind == "polynomial_bump")
    {
        double const r = finite(need(j, "radius", field), field + ".radius");
        if (!(r > 0))
            config_error(field + ".radius", "must be positive");
        return TestFunction(PolynomialBump{c, r, h});
    }
    if (kind == "gaussian_bump")
    {
        double const w = finite(need(j, "width", field), field + ".width");
        if (!(w > 0))
            config_error(field + ".width", "must be positive");
        return TestFunction(GaussianBump{c, w, h});
    }
    config_error(field + ".kind", "unknown test function '" + kind + "'");
}

inline nlohmann::ordered_json point_json(Complex z)
{
    return nlohmann::ordered_json::array({z.real(), z.imag()});
}

inline nlohmann::ordered_json disc_json(Disc const& d)
{
    return {{"center", point_json(d.center)}, {"radius", d.radius}};
}

}  // namespace detail

/// Radius r making the predicted flat-weight hole exponent
/// (e^2/4) L^2 (mu(D)/2pi)^2 equal `target` at L = L_top.
inline double auto_hole_radius(WeightSpec const& w, Complex center, double L_top,
                               double target = 8.0)
{
    double const mass = 2 * pi * std::sqrt(4 * target) / (std::exp(1.0) * L_top);
    double lo = 0, hi = 1;
    while (mu_disc(w, center, hi, 1.0) < mass)
    {
        hi *= 2;
        GAFSIM_REQUIRE(hi < 1e6, ErrorCode::NoBracket, "weight mass too small for a hole");
    }
    for (int i = 0; i < 200 && hi - lo > 1e-14 * hi; ++i)
    {
        double const mid = 0.5 * (lo + hi);
        (mu_disc(w, center, mid, 1.0) < mass ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Parses and checks a config. Relative paths resolve against base_dir.
inline ExperimentConfig parse_config(nlohmann::json const& j,
                                     std::filesystem::path const& base_dir = {})
{
    using namespace detail;
    if (!j.is_object())
        config_error("config", "top level must be an object");
    ExperimentConfig c;

    std::string const kind = as<std::string>(need(j, "experiment", ""), "experiment");
    bool known = false;
    for (auto const& [k, name] : experiment_names)
        if (name == kind)
        {
            c.kind = k;
            known = true;
        }
    if (!known)
        config_error("experiment", "unknown experiment '" + kind + "'");
    c.name = j.contains("name") ? as<std::string>(j.at("name"), "name") : kind;
    if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos)
        config_error("name", "must be a plain non-empty file stem");

    if (j.contains("weight"))
    {
        nlohmann::json w = j.at("weight");
        if (w.is_object() && w.value("kind", "") == "tabulated" && w.contains("path"))
        {
            std::filesystem::path p = as<std::string>(w.at("path"), "weight.path");
            if (p.is_relative() && !base_dir.empty())
                w["path"] = (base_dir / p).string();
        }
        try
        {
            c.weight = WeightSpec::from_json(w);
        }
        catch (Error const& e)
        {
            config_error("weight", e.what());
        }
        catch (nlohmann::json::exception const& e)
        {
            config_error("weight", e.what());
        }
    }
    bool const needs_basis = c.kind != ExperimentKind::PoissonBaseline;
    if (needs_basis && !c.weight.is_radial()
        && !std::holds_alternative<RealPartSquare>(c.weight.kind()))
        config_error("weight", "GAF experiments need a radial power or Re^2 weight");

    if (j.contains("gaf_form"))
    {
        std::string const f = as<std::string>(j.at("gaf_form"), "gaf_form");
        if (f == "basis")
            c.form = GafForm::Basis;
        else if (f == "frame")
            c.form = GafForm::Frame;
        else
            config_error("gaf_form", "expected 'basis' or 'frame'");
    }

    auto const& grid = need(j, "L_grid", "");
    if (!grid.is_array() || grid.empty())
        config_error("L_grid", "expected a non-empty array");
    for (auto const& v : grid)
    {
        double const L = finite(v, "L_grid");
        if (L < 1)
            config_error("L_grid", "every L must be at least 1");
        if (!c.L_grid.empty() && !(L > c.L_grid.back()))
            config_error("L_grid", "must be strictly increasing");
        c.L_grid.push_back(L);
    }

    if (c.kind != ExperimentKind::KernelDiagnostics)
    {
        auto const& t = need(j, "trials", "");
        auto one = [](nlohmann::json const& v) {
            if (!v.is_number_integer() || v.get<long long>() < 1)
                config_error("trials", "must be integers >= 1");
            return std::size_t(v.get<long long>());
        };
        if (t.is_array())
        {
            if (t.size() != c.L_grid.size())
                config_error("trials", "needs one entry per L");
            for (auto const& v : t)
                c.trials.push_back(one(v));
        }
        else
            c.trials.assign(c.L_grid.size(), one(t));
    }
    else
        c.trials.assign(c.L_grid.size(), 0);

    c.region = rect(need(j, "region", ""), "region");

    if (j.contains("psi"))
        c.psi = test_function(j.at("psi"), "psi");
    if (j.contains("hole"))
    {
        auto const& h = j.at("hole");
        Complex const center = point(need(h, "center", "hole"), "hole.center");
        if (h.contains("radius") && h.at("radius").is_string())
        {
            if (h.at("radius").get<std::string>() != "auto")
                config_error("hole.radius", "expected a number or \"auto\"");
            c.hole = Disc{center, auto_hole_radius(c.weight, center, c.L_grid.back())};
        }
        else
            c.hole = disc(h, "hole");
    }
    if (j.contains("count_disc"))
        c.count_disc = disc(j.at("count_disc"), "count_disc");

    if (j.contains("seeds"))
    {
        auto const& s = j.at("seeds");
        if (s.contains("master"))
            c.master_seed = as<std::uint64_t>(s.at("master"), "seeds.master");
        if (s.contains("trial_offset"))
            c.trial_offset = as<std::uint64_t>(s.at("trial_offset"), "seeds.trial_offset");
    }
    if (j.contains("frame"))
    {
        auto const& f = j.at("frame");
        if (f.contains("delta"))
            c.frame_delta = finite(f.at("delta"), "frame.delta");
        if (f.contains("R"))
            c.frame_R = finite(f.at("R"), "frame.R");
        if (!(c.frame_delta > 0 && c.frame_delta < 1))
            config_error("frame.delta", "must lie in (0, 1)");
        if (!(c.frame_R > 0))
            config_error("frame.R", "must be positive");
    }
    if (j.contains("poisson"))
    {
        auto const& p = j.at("poisson");
        if (p.contains("intensity_scale"))
            c.intensity_scale = finite(p.at("intensity_scale"), "poisson.intensity_scale");
        if (p.contains("baseline"))
            c.poisson_baseline = as<bool>(p.at("baseline"), "poisson.baseline");
        if (!(c.intensity_scale > 0))
            config_error("poisson.intensity_scale", "must be positive");
    }
    if (j.contains("deviation"))
    {
        c.deviation_delta = finite(need(j.at("deviation"), "delta", "deviation"), "deviation.delta");
        if (!(c.deviation_delta > 0))
            config_error("deviation.delta", "must be positive");
    }
    if (j.contains("normality"))
        c.normality_conditions
            = as<bool>(need(j.at("normality"), "conditions", "normality"), "normality.conditions");
    if (j.contains("diagnostics"))
    {
        auto const& d = j.at("diagnostics");
        if (d.contains("grid"))
            c.diag_grid = as<int>(d.at("grid"), "diagnostics.grid");
        if (c.diag_grid < 2)
            config_error("diagnostics.grid", "must be at least 2");
        if (d.contains("fast_decay"))
        {
            auto const& f = d.at("fast_decay");
            c.fast_decay.r = finite(need(f, "r", "diagnostics.fast_decay"), "diagnostics.fast_decay.r");
            c.fast_decay.R.clear();
            for (auto const& v : need(f, "R", "diagnostics.fast_decay"))
                c.fast_decay.R.push_back(finite(v, "diagnostics.fast_decay.R"));
        }
        if (!(c.fast_decay.r > 0) || c.fast_decay.R.empty())
            config_error("diagnostics.fast_decay", "needs r > 0 and at least one R");
        for (double R : c.fast_decay.R)
            if (!(R > c.fast_decay.r))
                config_error("diagnostics.fast_decay.R", "every R must exceed r");
    }
    if (j.contains("output"))
    {
        auto const& o = j.at("output");
        if (o.contains("dir"))
            c.output_dir = as<std::string>(o.at("dir"), "output.dir");
    }

    // experiment-specific requirements
    auto want_psi = [&] {
        if (!c.psi)
            config_error("psi", "required by the " + kind + " experiment");
    };
    switch (c.kind)
    {
        case ExperimentKind::MeanVariance:
        case ExperimentKind::Normality: want_psi(); break;
        case ExperimentKind::LargeDeviation:
            want_psi();
            if (c.form != GafForm::Frame)
                config_error("gaf_form", "large_deviation runs on the frame-form GAF");
            break;
        case ExperimentKind::Hole:
            if (!c.hole)
                config_error("hole", "required by the hole experiment");
            break;
        case ExperimentKind::PoissonBaseline:
            if (!c.psi && !c.hole)
                config_error("psi", "poisson_baseline needs psi or hole");
            break;
        case ExperimentKind::KernelDiagnostics: break;
    }
    if (c.psi && !c.region.contains(c.psi->support().bounding_box()))
        config_error("region", "test function support is not inside the region");
    if (c.hole && !c.region.contains(c.hole->bounding_box()))
        config_error("region", "hole disc is not inside the region");
    if (c.count_disc && !c.region.contains(c.count_disc->bounding_box()))
        config_error("region", "count_disc is not inside the region");
    return c;
}

inline ExperimentConfig load_config(std::filesystem::path const& path)
{
    std::ifstream in(path);
    if (!in)
        detail::config_error("config", "cannot open " + path.string());
    nlohmann::json j;
    try
    {
        in >> j;
    }
    catch (nlohmann::json::parse_error const& e)
    {
        detail::config_error("config", std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j, path.parent_path());
}

/// Canonical form of the effective config; parse_config(config_to_json(c))
/// reproduces c.
inline nlohmann::ordered_json config_to_json(ExperimentConfig const& c)
{
    using detail::disc_json;
    using detail::point_json;
    nlohmann::ordered_json j;
    j["experiment"] = to_string(c.kind);
    j["name"] = c.name;
    j["weight"] = nlohmann::ordered_json(c.weight.to_json());
    j["gaf_form"] = to_string(c.form);
    j["L_grid"] = c.L_grid;
    if (c.kind != ExperimentKind::KernelDiagnostics)
        j["trials"] = c.trials;
    j["region"] = nlohmann::ordered_json::array({c.region.x0, c.region.y0, c.region.x1, c.region.y1});
    if (c.psi)
    {
        nlohmann::ordered_json p{{"kind", c.psi->kind_name()}, {"center", point_json(c.psi->center())}};
        if (auto const* g = c.psi->gaussian())
            p["width"] = g->width;
        else
            p["radius"] = c.psi->polynomial()->radius;
        p["height"] = c.psi->height();
        j["psi"] = p;
    }
    if (c.hole)
        j["hole"] = disc_json(*c.hole);
    if (c.count_disc)
        j["count_disc"] = disc_json(*c.count_disc);
    j["seeds"] = {{"master", c.master_seed}, {"trial_offset", c.trial_offset}};
    j["frame"] = {{"delta", c.frame_delta}, {"R", c.frame_R}};
    j["poisson"] = {{"intensity_scale", c.intensity_scale}, {"baseline", c.poisson_baseline}};
    j["deviation"] = {{"delta", c.deviation_delta}};
    j["normality"] = {{"conditions", c.normality_conditions}};
    j["diagnostics"] = {{"grid", c.diag_grid},
                        {"fast_decay", {{"r", c.fast_decay.r}, {"R", c.fast_decay.R}}}};
    j["output"] = {{"dir", c.output_dir}};
    return j;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s)
    {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

/// Hash of the canonical config, output directory excluded.
inline std::string config_hash(ExperimentConfig const& c)
{
    auto j = config_to_json(c);
    j.erase("output");
    return hex64(fnv1a(j.dump()));
}

}  // namespace gafsim
