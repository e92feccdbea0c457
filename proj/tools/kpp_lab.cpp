// kpp_lab: command-line laboratory for the jump-FKPP equation and its dual
// coordinated branching Brownian motion.
//
// Subcommands: formulas, spde, cbbm, growth, duality, tailbound, lln.
// Every run writes byte-stable artifacts (report.json, *.csv) to --out;
// wall-clock metadata is isolated in meta.json so reruns with the same
// config and seed are byte-identical. Exit code 0 iff all verdicts pass,
// 1 on a failed verdict or runtime error, 2 on usage/config errors.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kpp/analysis.hpp"
#include "kpp/cbbm.hpp"
#include "kpp/io.hpp"
#include "kpp/measure.hpp"
#include "kpp/parallel.hpp"
#include "kpp/random.hpp"
#include "kpp/skeleton.hpp"
#include "kpp/spde.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GrowthOptions {
    std::string mode = "quenched";  // or "annealed"
    double window_lo = -1.0;        // default horizon/3
    double window_hi = -1.0;        // default horizon
    std::size_t seeds = 20;
    double rel_tolerance = 0.10;
    std::size_t min_pass = 18;
};

struct DualityOptions {
    double t = 1.0;
    std::vector<double> x{0.0, 0.5};
};

struct TailOptions {
    std::vector<double> checkpoints{4.0, 8.0, 12.0, 16.0, 20.0};
    double lambda_hi_factor = 1.1;
    double lambda_lo_factor = 0.9;
    std::size_t seeds = 20;
    std::size_t min_monotone = 16;
    double eps_prune = 1e-9;
    double bound_eps = 0.0;
};

struct LlnOptions {
    double eps = 0.0;
    std::size_t seeds = 100;
    double rel_tolerance = 0.05;
    double required_fraction = 0.95;
};

struct FormulaOptions {
    double lambda = 1.0;
    double rbox = 2.0;
    double box_eps = 0.01;
    double p = 1.0;
    double d_eps = 0.0;
    double entropy_eps = 0.1;
    double entropy_p = 0.5;
};

struct LabConfig {
    kpp::ReproductionMeasure measure{1.0, {}};
    double delta = 0.25;
    std::uint64_t seed = 1;
    std::size_t replicas = 1000;
    double horizon = 10.0;

    kpp::SpdeConfig spde;
    double ramp_a = -1.0;
    double ramp_b = 0.0;
    double ramp_smooth = 0.0;

    kpp::CbbmConfig cbbm;
    bool counts_only = true;
    std::vector<double> x0{0.0};

    GrowthOptions growth;
    DualityOptions duality;
    TailOptions tail;
    LlnOptions lln;
    FormulaOptions formulas;
};

double get_num(const json& j, const char* key, double fallback, std::vector<std::string>& bad,
               const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) {
        bad.push_back(where + "." + key + " must be a number");
        return fallback;
    }
    return j[key].get<double>();
}

std::vector<double> get_vec(const json& j, const char* key, std::vector<double> fallback,
                            std::vector<std::string>& bad, const std::string& where) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_array()) {
        bad.push_back(where + "." + key + " must be an array of numbers");
        return fallback;
    }
    std::vector<double> out;
    for (const auto& v : j[key]) {
        if (!v.is_number()) {
            bad.push_back(where + "." + key + " must contain only numbers");
            return fallback;
        }
        out.push_back(v.get<double>());
    }
    return out;
}

LabConfig parse_config(const json& j) {
    std::vector<std::string> bad;
    LabConfig c;

    if (j.contains("measure")) {
        try {
            c.measure = kpp::measure_from_json(j["measure"]);
        } catch (const std::exception& e) {
            bad.push_back(std::string("measure: ") + e.what());
        }
    }
    c.delta = get_num(j, "delta", c.delta, bad, "config");
    if (!(c.delta > 0.0 && c.delta <= 1.0)) bad.push_back("config.delta must lie in (0,1]");
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned())
            bad.push_back("config.seed must be a nonnegative integer");
        else
            c.seed = j["seed"].get<std::uint64_t>();
    }
    c.replicas = static_cast<std::size_t>(
        get_num(j, "replicas", static_cast<double>(c.replicas), bad, "config"));
    if (c.replicas < 1) bad.push_back("config.replicas must be >= 1");
    c.horizon = get_num(j, "horizon", c.horizon, bad, "config");
    if (!(c.horizon > 0.0)) bad.push_back("config.horizon must be > 0");

    if (j.contains("spde")) {
        const json& s = j["spde"];
        c.spde.half_width = get_num(s, "L", c.spde.half_width, bad, "spde");
        c.spde.dx = get_num(s, "dx", c.spde.dx, bad, "spde");
        c.spde.dt_max = get_num(s, "dt_max", c.spde.dt_max, bad, "spde");
        c.spde.front_level = get_num(s, "front_level", c.spde.front_level, bad, "spde");
        c.spde.margin_wavelengths =
            get_num(s, "margin_wavelengths", c.spde.margin_wavelengths, bad, "spde");
        c.spde.record_dt = get_num(s, "record_dt", c.spde.record_dt, bad, "spde");
        c.spde.snapshot_times = get_vec(s, "snapshot_times", {}, bad, "spde");
        const auto ramp = get_vec(s, "ramp", {c.ramp_a, c.ramp_b}, bad, "spde");
        if (ramp.size() == 2) {
            c.ramp_a = ramp[0];
            c.ramp_b = ramp[1];
        } else {
            bad.push_back("spde.ramp must be [a, b]");
        }
        c.ramp_smooth = get_num(s, "ramp_smooth", 0.0, bad, "spde");
    }
    for (const std::string& e : c.spde.validate()) bad.push_back(e);
    if (!(c.ramp_a < c.ramp_b)) bad.push_back("spde.ramp must satisfy a < b");

    if (j.contains("cbbm")) {
        const json& s = j["cbbm"];
        c.cbbm.cap = get_num(s, "cap", c.cbbm.cap, bad, "cbbm");
        c.cbbm.checkpoint_dt = get_num(s, "checkpoint_dt", c.cbbm.checkpoint_dt, bad, "cbbm");
        c.cbbm.gauss_threshold =
            get_num(s, "gauss_threshold", c.cbbm.gauss_threshold, bad, "cbbm");
        c.cbbm.snapshot_times = get_vec(s, "snapshot_times", {}, bad, "cbbm");
        if (s.contains("counts_only")) {
            if (!s["counts_only"].is_boolean())
                bad.push_back("cbbm.counts_only must be a boolean");
            else
                c.counts_only = s["counts_only"].get<bool>();
        }
        c.x0 = get_vec(s, "x0", c.x0, bad, "cbbm");
        if (c.x0.empty()) bad.push_back("cbbm.x0 must contain at least one position");
    }
    for (const std::string& e : c.cbbm.validate()) bad.push_back(e);

    if (j.contains("growth")) {
        const json& s = j["growth"];
        if (s.contains("mode")) {
            if (!s["mode"].is_string())
                bad.push_back("growth.mode must be a string");
            else
                c.growth.mode = s["mode"].get<std::string>();
        }
        if (c.growth.mode != "quenched" && c.growth.mode != "annealed")
            bad.push_back("growth.mode must be \"quenched\" or \"annealed\"");
        const auto w = get_vec(s, "window", {}, bad, "growth");
        if (w.size() == 2) {
            c.growth.window_lo = w[0];
            c.growth.window_hi = w[1];
        } else if (!w.empty()) {
            bad.push_back("growth.window must be [t_lo, t_hi]");
        }
        c.growth.seeds = static_cast<std::size_t>(
            get_num(s, "seeds", static_cast<double>(c.growth.seeds), bad, "growth"));
        c.growth.rel_tolerance =
            get_num(s, "rel_tolerance", c.growth.rel_tolerance, bad, "growth");
        c.growth.min_pass = static_cast<std::size_t>(
            get_num(s, "min_pass", static_cast<double>(c.growth.min_pass), bad, "growth"));
    }
    if (c.growth.window_lo < 0.0) c.growth.window_lo = c.horizon / 3.0;
    if (c.growth.window_hi < 0.0) c.growth.window_hi = c.horizon;
    if (!(c.growth.window_lo < c.growth.window_hi))
        bad.push_back("growth.window must satisfy t_lo < t_hi");

    if (j.contains("duality")) {
        const json& s = j["duality"];
        c.duality.t = get_num(s, "t", c.duality.t, bad, "duality");
        c.duality.x = get_vec(s, "x", c.duality.x, bad, "duality");
        if (c.duality.x.empty() || c.duality.x.size() > 4)
            bad.push_back("duality.x must contain 1..4 points");
        if (!(c.duality.t > 0.0)) bad.push_back("duality.t must be > 0");
    }

    if (j.contains("tailbound")) {
        const json& s = j["tailbound"];
        c.tail.checkpoints = get_vec(s, "checkpoints", c.tail.checkpoints, bad, "tailbound");
        c.tail.lambda_hi_factor =
            get_num(s, "lambda_hi_factor", c.tail.lambda_hi_factor, bad, "tailbound");
        c.tail.lambda_lo_factor =
            get_num(s, "lambda_lo_factor", c.tail.lambda_lo_factor, bad, "tailbound");
        c.tail.seeds = static_cast<std::size_t>(
            get_num(s, "seeds", static_cast<double>(c.tail.seeds), bad, "tailbound"));
        c.tail.min_monotone = static_cast<std::size_t>(get_num(
            s, "min_monotone", static_cast<double>(c.tail.min_monotone), bad, "tailbound"));
        c.tail.eps_prune = get_num(s, "eps_prune", c.tail.eps_prune, bad, "tailbound");
        c.tail.bound_eps = get_num(s, "bound_eps", c.tail.bound_eps, bad, "tailbound");
        if (c.tail.checkpoints.size() < 3)
            bad.push_back("tailbound.checkpoints needs at least 3 entries");
    }

    if (j.contains("lln")) {
        const json& s = j["lln"];
        c.lln.eps = get_num(s, "eps", c.lln.eps, bad, "lln");
        c.lln.seeds = static_cast<std::size_t>(
            get_num(s, "seeds", static_cast<double>(c.lln.seeds), bad, "lln"));
        c.lln.rel_tolerance = get_num(s, "rel_tolerance", c.lln.rel_tolerance, bad, "lln");
        c.lln.required_fraction =
            get_num(s, "required_fraction", c.lln.required_fraction, bad, "lln");
    }

    if (j.contains("formulas")) {
        const json& s = j["formulas"];
        c.formulas.lambda = get_num(s, "lambda", c.formulas.lambda, bad, "formulas");
        c.formulas.rbox = get_num(s, "rbox", c.formulas.rbox, bad, "formulas");
        c.formulas.box_eps = get_num(s, "box_eps", c.formulas.box_eps, bad, "formulas");
        c.formulas.p = get_num(s, "p", c.formulas.p, bad, "formulas");
        c.formulas.d_eps = get_num(s, "d_eps", c.formulas.d_eps, bad, "formulas");
        c.formulas.entropy_eps =
            get_num(s, "entropy_eps", c.formulas.entropy_eps, bad, "formulas");
        c.formulas.entropy_p = get_num(s, "entropy_p", c.formulas.entropy_p, bad, "formulas");
    }

    if (!bad.empty()) {
        std::string msg = "invalid configuration:";
        for (const std::string& b : bad) msg += "\n  - " + b;
        throw ConfigError(msg);
    }
    return c;
}

void write_meta(const fs::path& out, const std::string& command, const LabConfig& c) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char stamp[64];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
    std::ostringstream os;
    os << "{\"command\": \"" << command << "\", \"seed\": " << c.seed
       << ", \"timestamp\": \"" << stamp << "\"}";
    kpp::write_text_file((out / "meta.json").string(), os.str());
}

// ---------------------------------------------------------------------------

int cmd_formulas(const LabConfig& c, const fs::path& out, bool quiet) {
    const kpp::ReproductionMeasure& R = c.measure;
    const FormulaOptions& f = c.formulas;

    const double s = kpp::wave_speed(R);
    const double r = kpp::annealed_rate(R);
    const double cd = kpp::c_delta(R, c.delta);
    const double cl = kpp::c_delta_lower(R, c.delta);
    const double dd = kpp::d_delta_eps(R, c.delta, f.d_eps);
    const double mom = kpp::moment_r(R, 0.0, f.p);
    const double mu = kpp::dirichlet_drift_eigenvalue(f.lambda, f.rbox);
    const double entropy = kpp::bernoulli_rate(f.entropy_eps, f.entropy_p);
    std::optional<double> box;
    try {
        box = kpp::box_size(f.lambda, cl, f.box_eps);
    } catch (const std::domain_error&) {
        box = std::nullopt;  // infeasible lambda: reported as null
    }

    std::vector<std::pair<std::string, std::string>> rows = {
        {"wave_speed_s", kpp::fmt17(s)},
        {"half_s_squared", kpp::fmt17(0.5 * s * s)},
        {"annealed_rate_r", kpp::fmt17(r)},
        {"c_delta", kpp::fmt17(cd)},
        {"c_delta_lower", kpp::fmt17(cl)},
        {"d_delta_eps", kpp::fmt17(dd)},
        {"moment_r_p", kpp::fmt17(mom)},
        {"dirichlet_eigenvalue", kpp::fmt17(mu)},
        {"box_size", box ? kpp::fmt17(*box) : "infeasible"},
        {"bernoulli_rate", kpp::fmt17(entropy)},
    };

    kpp::CsvWriter csv((out / "formulas.csv").string());
    csv.row({"quantity", "value"});
    for (const auto& [k, v] : rows) csv.row({k, v});

    std::ostringstream js;
    js << "{\"measure\": " << kpp::measure_to_json(R) << ", \"delta\": " << kpp::fmt17(c.delta)
       << ", \"wave_speed\": " << kpp::fmt17(s) << ", \"half_s_squared\": "
       << kpp::fmt17(0.5 * s * s) << ", \"annealed_rate\": " << kpp::fmt17(r)
       << ", \"c_delta\": " << kpp::fmt17(cd) << ", \"c_delta_lower\": " << kpp::fmt17(cl)
       << ", \"d_delta_eps\": " << kpp::fmt17(dd) << ", \"moment_r\": " << kpp::fmt17(mom)
       << ", \"dirichlet_eigenvalue\": " << kpp::fmt17(mu) << ", \"box_size\": "
       << (box ? kpp::fmt17(*box) : "null") << ", \"bernoulli_rate\": " << kpp::fmt17(entropy)
       << "}";
    kpp::write_text_file((out / "report.json").string(), js.str());

    if (!quiet) {
        for (const auto& [k, v] : rows) std::cout << k << " = " << v << "\n";
    }
    return 0;
}

int cmd_spde(const LabConfig& c, const fs::path& out, bool quiet) {
    kpp::Field u0 = kpp::initial_ramp(c.spde, c.ramp_a, c.ramp_b, c.ramp_smooth);
    kpp::StreamKey key = kpp::make_key(c.seed);
    kpp::SpdeTrajectory tr =
        kpp::evolve(u0, c.measure, c.delta, c.horizon, std::nullopt, key, c.spde);

    kpp::write_front_series_csv((out / "trajectory.csv").string(), tr.series);
    kpp::write_spde_events_csv((out / "events.csv").string(), tr.events);
    for (std::size_t i = 0; i < tr.snapshots.size(); ++i)
        kpp::write_field_csv((out / ("field_" + std::to_string(i) + ".csv")).string(),
                             tr.snapshots[i].second);

    const double s = kpp::wave_speed(c.measure);
    const double jensen = std::sqrt(2.0 * kpp::annealed_rate(c.measure));
    kpp::SpeedReport rep =
        kpp::fit_front_speed(tr.series, c.growth.window_lo, c.growth.window_hi,
                             c.spde.front_level, s, jensen, c.growth.rel_tolerance);
    std::ostringstream js;
    js << "{\"speed_report\": " << kpp::to_json(rep)
       << ", \"truncated\": " << (tr.truncated ? "true" : "false") << "}";
    kpp::write_text_file((out / "report.json").string(), js.str());

    if (!quiet)
        std::cout << "fitted speed " << kpp::fmt17(rep.speed) << " (target " << kpp::fmt17(s)
                  << ", annealed bound " << kpp::fmt17(jensen) << ")"
                  << (tr.truncated ? " [truncated]" : "") << "\n";
    return (rep.pass && !tr.truncated) ? 0 : 1;
}

int cmd_cbbm(const LabConfig& c, const fs::path& out, bool quiet) {
    kpp::SplitMeasure sm = kpp::split(c.measure, c.delta);
    kpp::StreamKey key = kpp::make_key(c.seed);
    kpp::Skeleton skel = kpp::sample_skeleton(sm, c.horizon, kpp::fork(key, "skeleton"));
    kpp::ParticleSystem ps = c.counts_only ? kpp::ParticleSystem::counts_only(
                                                 static_cast<double>(c.x0.size()))
                                           : kpp::ParticleSystem::at_positions(c.x0);
    kpp::CbbmTrajectory tr = kpp::run(ps, sm, skel, c.horizon, key, c.cbbm);

    kpp::write_cbbm_samples_csv((out / "trajectory.csv").string(), tr.samples);
    kpp::write_skeleton_csv((out / "skeleton.csv").string(), skel);
    if (!tr.snapshots.empty())
        kpp::write_positions_csv((out / "positions.csv").string(), tr.snapshots);

    std::ostringstream js;
    js << "{\"final_count\": " << kpp::fmt17(tr.final_state.count)
       << ", \"cap_exceeded\": " << (tr.cap_exceeded ? "true" : "false")
       << ", \"skeleton_events\": " << skel.size() << "}";
    kpp::write_text_file((out / "report.json").string(), js.str());
    if (!quiet)
        std::cout << "final count " << kpp::fmt17(tr.final_state.count)
                  << (tr.cap_exceeded ? " [cap exceeded]" : "") << "\n";
    return tr.cap_exceeded ? 1 : 0;
}

int cmd_growth(const LabConfig& c, const fs::path& out, bool quiet) {
    kpp::StreamKey key = kpp::make_key(c.seed);
    if (c.growth.mode == "annealed") {
        kpp::AnnealedGrowthReport rep = kpp::annealed_growth_check(
            c.measure, c.delta, c.horizon, c.replicas, key, c.cbbm);
        kpp::write_text_file((out / "report.json").string(),
                             "{\"annealed\": " + kpp::to_json(rep) + "}");
        if (!quiet)
            std::cout << "annealed mean " << kpp::fmt17(rep.mean) << " vs "
                      << kpp::fmt17(rep.target) << " (" << kpp::fmt17(rep.sigmas)
                      << " sigmas)\n";
        return rep.pass ? 0 : 1;
    }

    kpp::SplitMeasure sm = kpp::split(c.measure, c.delta);
    const double target = 0.5 * kpp::wave_speed(c.measure) * kpp::wave_speed(c.measure);
    const double annealed = kpp::annealed_rate(c.measure);
    std::vector<kpp::RateReport> reports(c.growth.seeds);
    kpp::parallel_for(c.growth.seeds, [&](std::size_t seed) {
        kpp::Skeleton skel =
            kpp::sample_skeleton(sm, c.horizon, kpp::fork(key, "skel", seed));
        kpp::CbbmTrajectory tr = kpp::run(kpp::ParticleSystem::counts_only(1.0), sm, skel,
                                          c.horizon, kpp::fork(key, "run", seed), c.cbbm);
        reports[seed] = kpp::fit_growth(tr.samples, c.growth.window_lo, c.growth.window_hi,
                                        target, "s^2/2", c.growth.rel_tolerance);
    });

    kpp::CsvWriter csv((out / "growth_seeds.csv").string());
    csv.row({"seed", "slope", "stderr", "within_tolerance", "gap_below_annealed"});
    std::size_t n_ok = 0;
    std::ostringstream rows;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const kpp::RateReport& r = reports[i];
        const bool gap = r.estimate < annealed - 3.0 * r.stderr_of_fit;
        const bool ok = r.pass && gap;
        n_ok += ok ? 1 : 0;
        csv.row({std::to_string(i), kpp::fmt17(r.estimate), kpp::fmt17(r.stderr_of_fit),
                 r.pass ? "1" : "0", gap ? "1" : "0"});
        if (i) rows << ", ";
        rows << kpp::to_json(r);
    }
    const bool pass = n_ok >= c.growth.min_pass;
    std::ostringstream js;
    js << "{\"mode\": \"quenched\", \"target\": " << kpp::fmt17(target)
       << ", \"annealed_rate\": " << kpp::fmt17(annealed) << ", \"seeds\": " << reports.size()
       << ", \"seeds_passing\": " << n_ok << ", \"min_pass\": " << c.growth.min_pass
       << ", \"pass\": " << (pass ? "true" : "false") << ", \"per_seed\": [" << rows.str()
       << "]}";
    kpp::write_text_file((out / "report.json").string(), js.str());
    if (!quiet)
        std::cout << "quenched growth: " << n_ok << "/" << reports.size()
                  << " seeds within tolerance and below the annealed rate\n";
    return pass ? 0 : 1;
}

int cmd_duality(const LabConfig& c, const fs::path& out, bool quiet) {
    kpp::SpdeConfig cfg = c.spde;
    kpp::DualityReport rep =
        kpp::duality_check(c.measure, c.delta, c.duality.x, kpp::RampSpec{c.ramp_a, c.ramp_b,
                                                                          c.ramp_smooth},
                           c.duality.t, c.replicas, kpp::make_key(c.seed), cfg, c.cbbm);
    kpp::write_text_file((out / "report.json").string(), kpp::to_json(rep));
    if (!quiet)
        std::cout << "duality: lhs " << kpp::fmt17(rep.lhs_mean) << " rhs "
                  << kpp::fmt17(rep.rhs_mean) << " (" << kpp::fmt17(rep.sigmas)
                  << " sigmas)\n";
    return rep.pass ? 0 : 1;
}

int cmd_tailbound(const LabConfig& c, const fs::path& out, bool quiet) {
    const double cd = kpp::c_delta(c.measure, c.delta);
    const double cl = kpp::c_delta_lower(c.measure, c.delta);
    const double lambda_hi = c.tail.lambda_hi_factor * std::sqrt(2.0 * cd);
    const double lambda_lo = c.tail.lambda_lo_factor * std::sqrt(2.0 * cl);
    kpp::StreamKey key = kpp::make_key(c.seed);

    std::vector<kpp::TailSeedReport> seeds(c.tail.seeds);
    for (std::size_t s = 0; s < c.tail.seeds; ++s) {
        seeds[s] = kpp::tail_bound_check(c.measure, c.delta, c.tail.checkpoints.back(),
                                         c.tail.checkpoints, lambda_hi, lambda_lo, c.replicas,
                                         kpp::fork(key, "seed", s), c.tail.bound_eps,
                                         c.tail.eps_prune);
    }

    kpp::CsvWriter csv((out / "tail_curves.csv").string());
    csv.row({"seed", "t", "p_upper", "bound_upper", "p_lower"});
    std::size_t up_ok = 0, lo_ok = 0, bound_ok = 0;
    std::ostringstream rows;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
        const kpp::TailSeedReport& r = seeds[s];
        up_ok += r.upper_monotone ? 1 : 0;
        lo_ok += r.lower_monotone ? 1 : 0;
        bound_ok += r.bound_respected ? 1 : 0;
        for (std::size_t k = 0; k < r.upper.t.size(); ++k)
            csv.row({std::to_string(s), kpp::fmt17(r.upper.t[k]), kpp::fmt17(r.upper.p_hat[k]),
                     kpp::fmt17(r.upper.bound[k]), kpp::fmt17(r.lower.p_hat[k])});
        if (s) rows << ", ";
        rows << kpp::to_json(r);
    }
    const bool pass = up_ok >= c.tail.min_monotone && lo_ok >= c.tail.min_monotone;
    std::ostringstream js;
    js << "{\"lambda_hi\": " << kpp::fmt17(lambda_hi) << ", \"lambda_lo\": "
       << kpp::fmt17(lambda_lo) << ", \"seeds\": " << seeds.size()
       << ", \"upper_monotone_seeds\": " << up_ok << ", \"lower_monotone_seeds\": " << lo_ok
       << ", \"bound_respected_seeds\": " << bound_ok << ", \"min_monotone\": "
       << c.tail.min_monotone << ", \"pass\": " << (pass ? "true" : "false")
       << ", \"per_seed\": [" << rows.str() << "]}";
    kpp::write_text_file((out / "report.json").string(), js.str());
    if (!quiet)
        std::cout << "tail trends: upper " << up_ok << "/" << seeds.size() << ", lower "
                  << lo_ok << "/" << seeds.size() << "\n";
    return pass ? 0 : 1;
}

int cmd_lln(const LabConfig& c, const fs::path& out, bool quiet) {
    kpp::LlnReport rep =
        kpp::lln_check(c.measure, c.delta, c.lln.eps, c.horizon, c.lln.seeds,
                       kpp::make_key(c.seed), c.lln.rel_tolerance, c.lln.required_fraction);
    kpp::CsvWriter csv((out / "lln_ratios.csv").string());
    csv.row({"seed", "ratio"});
    for (std::size_t i = 0; i < rep.ratios.size(); ++i)
        csv.row({std::to_string(i), kpp::fmt17(rep.ratios[i])});
    kpp::write_text_file((out / "report.json").string(), kpp::to_json(rep));
    if (!quiet)
        std::cout << "lln: " << rep.n_within << "/" << rep.ratios.size() << " seeds within "
                  << kpp::fmt17(100.0 * rep.rel_tolerance) << "%\n";
    return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"jump-FKPP / coordinated-BBM laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed_flag = 0;
    bool seed_given = false;
    std::size_t replicas_flag = 0;
    bool quiet = false;

    app.add_option("--config", config_path, "JSON configuration file");
    app.add_option("--out", out_dir, "output directory (created if missing)");
    auto* seed_opt = app.add_option("--seed", seed_flag, "seed override (beats KPP_SEED and config)");
    app.add_option("--replicas", replicas_flag, "replica-count override");
    app.add_flag("--quiet", quiet, "suppress stdout summary lines");

    for (const char* name : {"formulas", "spde", "cbbm", "growth", "duality", "tailbound", "lln"})
        app.add_subcommand(name)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    seed_given = seed_opt->count() > 0;

    try {
        json cfg_json = json::object();
        if (!config_path.empty()) {
            std::ifstream is(config_path);
            if (!is) throw ConfigError("cannot open config file: " + config_path);
            try {
                is >> cfg_json;
            } catch (const std::exception& e) {
                throw ConfigError(std::string("config parse error: ") + e.what());
            }
        }
        LabConfig cfg = parse_config(cfg_json);

        // seed precedence: flag > KPP_SEED > config
        if (const char* env = std::getenv("KPP_SEED"); env && *env && !seed_given) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (end && *end == '\0') cfg.seed = v;
        }
        if (seed_given) cfg.seed = seed_flag;
        if (replicas_flag > 0) cfg.replicas = replicas_flag;

        fs::path out(out_dir);
        fs::create_directories(out);
        const std::string command = app.get_subcommands().front()->get_name();
        write_meta(out, command, cfg);

        if (command == "formulas") return cmd_formulas(cfg, out, quiet);
        if (command == "spde") return cmd_spde(cfg, out, quiet);
        if (command == "cbbm") return cmd_cbbm(cfg, out, quiet);
        if (command == "growth") return cmd_growth(cfg, out, quiet);
        if (command == "duality") return cmd_duality(cfg, out, quiet);
        if (command == "tailbound") return cmd_tailbound(cfg, out, quiet);
        if (command == "lln") return cmd_lln(cfg, out, quiet);
        std::cerr << "unknown subcommand\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "{\"error\": \"config\", \"detail\": " << json(e.what()).dump() << "}\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "{\"error\": \"runtime\", \"detail\": " << json(e.what()).dump() << "}\n";
        return 1;
    }
}
