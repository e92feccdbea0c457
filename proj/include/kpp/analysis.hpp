#pragma once

// Estimators and comparators that turn trajectories into verdicts against
// the closed forms: growth-rate fits, front-speed fits, the quenched
// duality comparison, rightmost-particle tail checks, the event-interval
// martingale diagnostic and the skeleton LLN.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kpp/cbbm.hpp"
#include "kpp/measure.hpp"
#include "kpp/parallel.hpp"
#include "kpp/random.hpp"
#include "kpp/skeleton.hpp"
#include "kpp/spde.hpp"

namespace kpp {

struct MeanStderr {
    double mean = 0.0;
    double stderr_of_mean = 0.0;
    std::size_t n = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
    MeanStderr out;
    out.n = xs.size();
    if (xs.empty()) return out;
    CompensatedSum s;
    for (double x : xs) s.add(x);
    out.mean = s.value() / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        CompensatedSum q;
        for (double x : xs) q.add((x - out.mean) * (x - out.mean));
        out.stderr_of_mean = std::sqrt(q.value() / (static_cast<double>(xs.size()) *
                                                    static_cast<double>(xs.size() - 1)));
    }
    return out;
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_stderr = 0.0;
    std::size_t n = 0;
};

inline LineFit fit_line(const std::vector<double>& t, const std::vector<double>& v) {
    if (t.size() != v.size() || t.size() < 2)
        throw std::invalid_argument("fit_line: need matching series with >= 2 points");
    const double n = static_cast<double>(t.size());
    CompensatedSum st, sv;
    for (double x : t) st.add(x);
    for (double x : v) sv.add(x);
    const double tbar = st.value() / n;
    const double vbar = sv.value() / n;
    CompensatedSum sxx, sxy;
    for (std::size_t i = 0; i < t.size(); ++i) {
        sxx.add((t[i] - tbar) * (t[i] - tbar));
        sxy.add((t[i] - tbar) * (v[i] - vbar));
    }
    if (!(sxx.value() > 0.0)) throw std::invalid_argument("fit_line: degenerate abscissa");
    LineFit f;
    f.n = t.size();
    f.slope = sxy.value() / sxx.value();
    f.intercept = vbar - f.slope * tbar;
    if (t.size() > 2) {
        CompensatedSum rss;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double r = v[i] - (f.intercept + f.slope * t[i]);
            rss.add(r * r);
        }
        f.slope_stderr = std::sqrt(rss.value() / (n - 2.0) / sxx.value());
    }
    return f;
}

// ---------------------------------------------------------------------------

struct RateReport {
    double estimate = 0.0;
    double stderr_of_fit = 0.0;
    double t_lo = 0.0;
    double t_hi = 0.0;
    double target = 0.0;
    std::string target_name;
    double rel_tolerance = 0.0;
    bool pass = false;
};

/// Least-squares slope of log I_t over the window against a named target.
inline RateReport fit_growth(const std::vector<CountSample>& series, double t_lo, double t_hi,
                             double target, std::string target_name, double rel_tolerance) {
    if (!(t_lo < t_hi)) throw std::invalid_argument("fit_growth: need t_lo < t_hi");
    std::vector<double> ts, ls;
    for (const CountSample& s : series) {
        if (s.t < t_lo || s.t > t_hi) continue;
        if (!(s.count > 0.0)) throw std::invalid_argument("fit_growth: nonpositive count");
        ts.push_back(s.t);
        ls.push_back(std::log(s.count));
    }
    if (ts.size() < 10) throw std::invalid_argument("fit_growth: fewer than 10 samples in window");
    const LineFit f = fit_line(ts, ls);
    RateReport r;
    r.estimate = f.slope;
    r.stderr_of_fit = f.slope_stderr;
    r.t_lo = t_lo;
    r.t_hi = t_hi;
    r.target = target;
    r.target_name = std::move(target_name);
    r.rel_tolerance = rel_tolerance;
    r.pass = std::abs(f.slope - target) <= rel_tolerance * std::abs(target);
    return r;
}

struct SpeedReport {
    double speed = 0.0;
    double stderr_of_fit = 0.0;
    double front_level = 0.5;
    double target_speed = 0.0;    // wave speed s of the measure
    double annealed_speed = 0.0;  // sqrt(2 r), the deterministic-rate bound
    std::vector<std::pair<double, double>> speed_by_level;  // (theta, slope)
    bool level_stable = false;
    double rel_tolerance = 0.0;
    bool pass = false;
};

/// Front-speed fit over a window, with slopes at levels 0.25/0.5/0.75 for
/// the level-sensitivity check.
inline SpeedReport fit_front_speed(const std::vector<FrontSample>& series, double t_lo,
                                   double t_hi, double front_level, double target_speed,
                                   double annealed_speed, double rel_tolerance) {
    if (!(t_lo < t_hi)) throw std::invalid_argument("fit_front_speed: need t_lo < t_hi");
    std::vector<double> ts, f_main, f25, f50, f75;
    for (const FrontSample& s : series) {
        if (s.t < t_lo || s.t > t_hi) continue;
        for (double v : {s.front, s.front_q25, s.front_q50, s.front_q75})
            if (!std::isfinite(v))
                throw std::invalid_argument("fit_front_speed: sentinel front inside the window");
        ts.push_back(s.t);
        f_main.push_back(s.front);
        f25.push_back(s.front_q25);
        f50.push_back(s.front_q50);
        f75.push_back(s.front_q75);
    }
    if (ts.size() < 10)
        throw std::invalid_argument("fit_front_speed: fewer than 10 samples in window");
    const LineFit main = fit_line(ts, f_main);
    SpeedReport r;
    r.speed = main.slope;
    r.stderr_of_fit = main.slope_stderr;
    r.front_level = front_level;
    r.target_speed = target_speed;
    r.annealed_speed = annealed_speed;
    r.rel_tolerance = rel_tolerance;
    r.speed_by_level = {{0.25, fit_line(ts, f25).slope},
                        {0.5, fit_line(ts, f50).slope},
                        {0.75, fit_line(ts, f75).slope}};
    double lo = r.speed_by_level[0].second, hi = lo;
    for (const auto& [th, sp] : r.speed_by_level) {
        lo = std::min(lo, sp);
        hi = std::max(hi, sp);
    }
    r.level_stable = (hi - lo) <= std::max(0.05 * std::abs(target_speed),
                                           6.0 * main.slope_stderr);
    r.pass = std::abs(r.speed - target_speed) <= rel_tolerance * std::abs(target_speed);
    return r;
}

// ---------------------------------------------------------------------------

struct DualityReport {
    double lhs_mean = 0.0;  // E^delta prod_i (1 - u_t(x_i))
    double lhs_stderr = 0.0;
    double rhs_mean = 0.0;  // E^delta prod_particles (1 - u_0(C_t))
    double rhs_stderr = 0.0;
    double combined_stderr = 0.0;
    double abs_diff = 0.0;
    double sigmas = 0.0;  // |diff| / combined stderr, 0 when both sides exact
    std::size_t n_spde = 0;
    std::size_t n_spde_effective = 0;  // 1 when the spde side is deterministic
    std::size_t n_cbbm = 0;
    std::size_t skeleton_events = 0;
    bool pass = false;
};

struct RampSpec {
    double a = -1.0;
    double b = 0.0;
    double smooth = 0.0;
};

/// Quenched duality comparison at horizon t: one shared skeleton, the SPDE
/// side averaging prod_i (1-u_t(x_i)), the dual side running CBBMs started
/// at the x points against the reversed skeleton and averaging
/// prod (1-u_0)(particle). Verdict at 3 combined stderr.
inline DualityReport duality_check(const ReproductionMeasure& R, double delta,
                                   const std::vector<double>& x_points, const RampSpec& u0,
                                   double t, std::size_t n_replicas, const StreamKey& key,
                                   const SpdeConfig& spde_cfg, const CbbmConfig& cbbm_cfg,
                                   unsigned max_threads = 0) {
    if (x_points.empty() || x_points.size() > 4)
        throw std::invalid_argument("duality_check: use 1..4 evaluation points");
    const double margin = 5.0;
    for (double x : x_points)
        if (!(x > -spde_cfg.half_width + margin && x < spde_cfg.half_width - margin))
            throw std::invalid_argument("duality_check: x point too close to the boundary");
    if (n_replicas < 1) throw std::invalid_argument("duality_check: need replicas");

    SplitMeasure sm = split(R, delta);
    const Skeleton skel = sample_skeleton(sm, t, fork(key, "skeleton"));
    const Skeleton dual_skel = skel.reversed(t);

    SpdeConfig cfg = spde_cfg;
    cfg.margin_wavelengths = 0.0;  // fixed horizon, no front chasing here
    Field u0_field = initial_ramp(cfg, u0.a, u0.b, u0.smooth);

    DualityReport rep;
    rep.n_spde = n_replicas;
    rep.n_cbbm = n_replicas;
    rep.skeleton_events = skel.size();

    // SPDE side: deterministic given the skeleton unless small atoms exist
    const bool spde_random = !sm.minus.atoms().empty();
    const std::size_t n_spde = spde_random ? n_replicas : 1;
    rep.n_spde_effective = n_spde;
    std::vector<double> lhs(n_spde);
    parallel_for(
        n_spde,
        [&](std::size_t i) {
            SpdeTrajectory tr =
                evolve(u0_field, R, delta, t, skel, fork(key, "spde", i), cfg);
            if (tr.truncated) throw std::runtime_error("duality_check: spde run truncated");
            double prod = 1.0;
            for (double x : x_points) prod *= 1.0 - field_value_at(tr.final_field, x);
            lhs[i] = prod;
        },
        max_threads);

    std::vector<double> rhs(n_replicas);
    parallel_for(
        n_replicas,
        [&](std::size_t i) {
            CbbmTrajectory tr = run(ParticleSystem::at_positions(x_points), sm, dual_skel, t,
                                    fork(key, "cbbm", i), cbbm_cfg);
            if (tr.cap_exceeded)
                throw std::runtime_error(
                    "duality_check: particle cap exceeded before t; lower t or the measure");
            double prod = 1.0;
            for (double x : tr.final_state.positions)
                prod *= 1.0 - ramp_value(x, u0.a, u0.b, u0.smooth);
            rhs[i] = prod;
        },
        max_threads);

    const MeanStderr ml = mean_stderr(lhs);
    const MeanStderr mr = mean_stderr(rhs);
    rep.lhs_mean = ml.mean;
    rep.lhs_stderr = spde_random ? ml.stderr_of_mean : 0.0;
    rep.rhs_mean = mr.mean;
    rep.rhs_stderr = mr.stderr_of_mean;
    rep.combined_stderr = std::sqrt(rep.lhs_stderr * rep.lhs_stderr +
                                    rep.rhs_stderr * rep.rhs_stderr);
    rep.abs_diff = std::abs(rep.lhs_mean - rep.rhs_mean);
    rep.sigmas = rep.combined_stderr > 0.0
                     ? rep.abs_diff / rep.combined_stderr
                     : (rep.abs_diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    rep.pass = rep.combined_stderr > 0.0 ? rep.sigmas <= 3.0 : rep.abs_diff <= 1e-12;
    return rep;
}

// ---------------------------------------------------------------------------

struct TailCurve {
    double lambda = 0.0;
    std::vector<double> t;
    std::vector<double> p_hat;  // empirical P(S_t > lambda t) across replicas
    std::vector<double> bound;  // e^{(c_delta + eps) t - lambda^2 t / 2}
};

struct TailSeedReport {
    TailCurve upper;  // lambda above sqrt(2 c_delta): expect decrease, bound respected
    TailCurve lower;  // lambda below sqrt(2 c_lower): expect increase toward 1
    bool upper_monotone = false;  // weakly decreasing over the last three checkpoints
    bool lower_monotone = false;  // weakly increasing over the last three checkpoints
    bool bound_respected = false;
    double prune_mass = 0.0;
};

inline bool weakly_monotone_tail(const std::vector<double>& v, int k, bool increasing) {
    if (static_cast<int>(v.size()) < k) return false;
    for (std::size_t i = v.size() - k + 1; i < v.size(); ++i) {
        if (increasing && v[i] < v[i - 1] - 1e-12) return false;
        if (!increasing && v[i] > v[i - 1] + 1e-12) return false;
    }
    return true;
}

/// One quenched seed of the rightmost-tail protocol: a fixed skeleton, M
/// dual replicas via the lineage sampler, exceedance curves for the two
/// lambdas, trend verdicts and the many-to-one bound comparison for the
/// upper lambda (from t >= 5/c_delta on).
inline TailSeedReport tail_bound_check(const ReproductionMeasure& R, double delta, double T,
                                       const std::vector<double>& checkpoints,
                                       double lambda_hi, double lambda_lo,
                                       std::size_t n_replicas, const StreamKey& key,
                                       double bound_eps = 0.0, double eps_prune = 1e-9,
                                       unsigned max_threads = 0) {
    SplitMeasure sm = split(R, delta);
    if (!sm.minus.atoms().empty())
        throw std::invalid_argument(
            "tail_bound_check: small part must be r0*delta_0 (drop small atoms first)");
    const double c_up = c_delta(R, delta);
    const Skeleton skel = sample_skeleton(sm, T, fork(key, "skeleton"));
    const double lambda_ref = std::min(lambda_hi, lambda_lo);

    std::vector<std::vector<double>> maxima(n_replicas);
    std::vector<double> prune(n_replicas);
    parallel_for(
        n_replicas,
        [&](std::size_t i) {
            TailSamplerResult r =
                rightmost_checkpoints(0.0, sm.minus.atom_at_zero(), skel, checkpoints,
                                      lambda_ref, fork(key, "tail", i), eps_prune);
            maxima[i] = std::move(r.maxima);
            prune[i] = r.prune_mass;
        },
        max_threads);

    TailSeedReport rep;
    for (double p : prune) rep.prune_mass = std::max(rep.prune_mass, p);
    auto build = [&](double lambda) {
        TailCurve c;
        c.lambda = lambda;
        c.t = checkpoints;
        for (std::size_t k = 0; k < checkpoints.size(); ++k) {
            double hits = 0.0;
            for (std::size_t i = 0; i < n_replicas; ++i)
                hits += (maxima[i][k] > lambda * checkpoints[k]) ? 1.0 : 0.0;
            c.p_hat.push_back(hits / static_cast<double>(n_replicas));
            c.bound.push_back(
                std::exp((c_up + bound_eps) * checkpoints[k] -
                         0.5 * lambda * lambda * checkpoints[k]));
        }
        return c;
    };
    rep.upper = build(lambda_hi);
    rep.lower = build(lambda_lo);
    rep.upper_monotone = weakly_monotone_tail(rep.upper.p_hat, 3, /*increasing=*/false);
    rep.lower_monotone = weakly_monotone_tail(rep.lower.p_hat, 3, /*increasing=*/true);

    rep.bound_respected = true;
    const double t_min = 5.0 / c_up;
    const double se_slack =
        3.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(n_replicas, 1)));
    if (lambda_hi > std::sqrt(2.0 * c_up)) {
        for (std::size_t k = 0; k < checkpoints.size(); ++k) {
            if (checkpoints[k] < t_min) continue;
            if (rep.upper.p_hat[k] > rep.upper.bound[k] + se_slack) rep.bound_respected = false;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------

struct MartingaleRow {
    std::size_t n = 0;
    double mean = 0.0;
    double stderr_of_mean = 0.0;
    double sigmas = 0.0;
    bool pass = false;
};

struct MartingaleReport {
    std::vector<MartingaleRow> rows;
    bool vacuous = false;  // no skeleton events to diagnose
    bool pass = false;
};

/// M_n = e^{-t_n R^-([0,delta])} prod_{j<=n} I_{t_j-}/I_{t_{j-1}} from a
/// trajectory's large-event records; mean-one across replicas per n.
inline std::vector<double> martingale_sequence(const CbbmTrajectory& traj, double minus_mass,
                                               std::size_t n_max, double I0 = 1.0) {
    std::vector<double> m;
    double prod = 1.0;
    double prev_count = I0;
    for (std::size_t j = 0; j < traj.large_events.size() && j < n_max; ++j) {
        const LargeEventRecord& ev = traj.large_events[j];
        prod *= ev.count_before / prev_count;
        prev_count = ev.count_after;
        m.push_back(std::exp(-ev.t * minus_mass) * prod);
    }
    return m;
}

inline MartingaleReport martingale_mean_test(const std::vector<std::vector<double>>& rows,
                                             std::size_t n_max) {
    if (rows.size() < 100)
        throw std::invalid_argument("martingale_mean_test: need at least 100 replicas");
    MartingaleReport rep;
    std::size_t usable = n_max;
    for (const auto& r : rows) usable = std::min(usable, r.size());
    if (usable == 0) {
        rep.vacuous = true;
        rep.pass = true;
        return rep;
    }
    rep.pass = true;
    for (std::size_t n = 1; n <= usable; ++n) {
        std::vector<double> vals;
        vals.reserve(rows.size());
        for (const auto& r : rows) vals.push_back(r[n - 1]);
        const MeanStderr ms = mean_stderr(vals);
        MartingaleRow row;
        row.n = n;
        row.mean = ms.mean;
        row.stderr_of_mean = ms.stderr_of_mean;
        row.sigmas = ms.stderr_of_mean > 0.0 ? std::abs(ms.mean - 1.0) / ms.stderr_of_mean
                                             : (ms.mean == 1.0 ? 0.0 : 1e30);
        row.pass = row.sigmas <= 3.0;
        rep.pass = rep.pass && row.pass;
        rep.rows.push_back(row);
    }
    return rep;
}

// ---------------------------------------------------------------------------

struct LlnReport {
    double target = 0.0;
    double rel_tolerance = 0.0;
    std::vector<double> ratios;  // per-seed (1/T) d(T) / target
    std::size_t n_within = 0;
    double required_fraction = 0.0;
    bool pass = false;
    bool flagged_empty = false;  // empty skeleton against nonempty plus part
};

inline LlnReport lln_check(const ReproductionMeasure& R, double delta, double eps, double T,
                           std::size_t n_seeds, const StreamKey& key, double rel_tolerance = 0.05,
                           double required_fraction = 0.95) {
    SplitMeasure sm = split(R, delta);
    const double target = d_delta_eps(R, delta, eps);
    LlnReport rep;
    rep.target = target;
    rep.rel_tolerance = rel_tolerance;
    rep.required_fraction = required_fraction;
    for (std::size_t s = 0; s < n_seeds; ++s) {
        Skeleton skel = sample_skeleton(sm, T, fork(key, "lln", s));
        if (skel.empty() && !sm.plus.empty() && sm.plus_rate() * T > 50.0)
            rep.flagged_empty = true;
        const double value = skeleton_log_sum(skel, T, eps) / T;
        const double ratio = target != 0.0 ? value / target : (value == 0.0 ? 1.0 : 1e30);
        rep.ratios.push_back(ratio);
        if (std::abs(ratio - 1.0) <= rel_tolerance) ++rep.n_within;
    }
    rep.pass = !rep.flagged_empty &&
               static_cast<double>(rep.n_within) >=
                   required_fraction * static_cast<double>(n_seeds);
    return rep;
}

// ---------------------------------------------------------------------------

/// Annealed mean-growth check: skeleton resampled per replica, sample mean
/// of I_t against I0 e^{r t} at 3 stderr.
struct AnnealedGrowthReport {
    double mean = 0.0;
    double stderr_of_mean = 0.0;
    double target = 0.0;
    double sigmas = 0.0;
    std::size_t n = 0;
    bool pass = false;
};

inline AnnealedGrowthReport annealed_growth_check(const ReproductionMeasure& R, double delta,
                                                  double t, std::size_t n_replicas,
                                                  const StreamKey& key,
                                                  const CbbmConfig& cfg = {},
                                                  unsigned max_threads = 0) {
    SplitMeasure sm = split(R, delta);
    std::vector<double> counts(n_replicas);
    parallel_for(
        n_replicas,
        [&](std::size_t i) {
            Skeleton skel = sample_skeleton(sm, t, fork(key, "skel", i));
            counts[i] = run(ParticleSystem::counts_only(1.0), sm, skel, t,
                            fork(key, "run", i), cfg)
                            .final_state.count;
        },
        max_threads);
    const MeanStderr ms = mean_stderr(counts);
    AnnealedGrowthReport rep;
    rep.mean = ms.mean;
    rep.stderr_of_mean = ms.stderr_of_mean;
    rep.target = std::exp(annealed_rate(R) * t);
    rep.n = n_replicas;
    rep.sigmas = ms.stderr_of_mean > 0.0 ? std::abs(ms.mean - rep.target) / ms.stderr_of_mean
                                         : 1e30;
    rep.pass = rep.sigmas <= 3.0;
    return rep;
}

}  // namespace kpp
