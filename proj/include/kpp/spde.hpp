#pragma once

// Jump-driven FKPP solver on a truncated interval [-L, L]:
//   du = (1/2) u_xx dt + r0 u(1-u) dt + jump events u += y u (1-u),
// with frozen Dirichlet boundary values (1 on the left, 0 on the right for
// invasion profiles). Between events: Strang splitting heat/logistic/heat
// with Crank-Nicolson heat substeps. Jumps are applied atomically at their
// exact times.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kpp/measure.hpp"
#include "kpp/random.hpp"
#include "kpp/skeleton.hpp"

namespace kpp {

struct Field {
    std::vector<double> values;  // clamped to [0,1]
    double dx = 0.0;
    double half_width = 0.0;  // domain is [-half_width, half_width]
    double time = 0.0;

    std::size_t size() const { return values.size(); }
    double x(std::size_t i) const { return -half_width + static_cast<double>(i) * dx; }

    void clamp01() {
        for (double& v : values) v = std::clamp(v, 0.0, 1.0);
    }

    /// Trapezoid mass of the profile.
    double mass() const {
        double m = 0.5 * (values.front() + values.back());
        for (std::size_t i = 1; i + 1 < values.size(); ++i) m += values[i];
        return m * dx;
    }
};

struct SpdeConfig {
    double half_width = 40.0;  // L
    double dx = 0.05;
    double dt_max = 0.0;  // 0 means dx^2, the splitting/monotonicity guard
    double front_level = 0.5;
    double margin_wavelengths = 10.0;
    double record_dt = 0.5;
    std::vector<double> snapshot_times;

    double effective_dt_max() const { return dt_max > 0.0 ? dt_max : dx * dx; }

    std::vector<std::string> validate() const {
        std::vector<std::string> bad;
        if (!(half_width > 0.0)) bad.push_back("spde: L must be > 0");
        if (!(dx > 0.0)) bad.push_back("spde: dx must be > 0");
        if (dx > 0.0 && !(2.0 * half_width / dx >= 2.0)) bad.push_back("spde: grid needs >= 3 points");
        if (dt_max > 0.0 && dx > 0.0 && dt_max > dx * dx + 1e-15)
            bad.push_back("spde: dt_max must not exceed dx^2");
        if (!(front_level > 0.0 && front_level < 1.0))
            bad.push_back("spde: front level must lie in (0,1)");
        if (!(record_dt > 0.0)) bad.push_back("spde: record_dt must be > 0");
        return bad;
    }
};

/// Ramp profile: 1 left of a, 0 right of b, monotone in between. smooth=0
/// is the default linear ramp; smooth=1 blends to a C^1 cosine shoulder.
inline double ramp_value(double x, double a, double b, double smooth = 0.0) {
    if (x <= a) return 1.0;
    if (x >= b) return 0.0;
    const double s = (x - a) / (b - a);
    const double linear = 1.0 - s;
    if (smooth <= 0.0) return linear;
    const double cosine = 0.5 * (1.0 + std::cos(3.141592653589793238462643 * s));
    return (1.0 - smooth) * linear + smooth * cosine;
}

inline Field make_field(const SpdeConfig& cfg) {
    const auto bad = cfg.validate();
    if (!bad.empty()) throw std::invalid_argument(bad.front());
    const std::size_t n = static_cast<std::size_t>(std::llround(2.0 * cfg.half_width / cfg.dx)) + 1;
    Field f;
    f.values.assign(n, 0.0);
    f.dx = cfg.dx;
    f.half_width = cfg.half_width;
    f.time = 0.0;
    return f;
}

inline Field initial_ramp(const SpdeConfig& cfg, double a, double b, double smooth = 0.0) {
    if (!(a < b)) throw std::invalid_argument("initial_ramp: need a < b");
    if (a < -cfg.half_width || b > cfg.half_width)
        throw std::invalid_argument("initial_ramp: ramp outside the domain");
    Field f = make_field(cfg);
    for (std::size_t i = 0; i < f.size(); ++i) f.values[i] = ramp_value(f.x(i), a, b, smooth);
    return f;
}

/// One heat-semigroup step exp(h/2 * Lap): Crank-Nicolson substeps of size
/// at most dt_max (default dx^2, which also keeps every substep monotone),
/// boundary values frozen. Does not advance Field::time; evolve() owns the
/// clock.
inline void heat_step(Field& f, double h, double dt_max = 0.0) {
    if (!(h > 0.0)) throw std::invalid_argument("heat_step: h must be > 0");
    const double guard = dt_max > 0.0 ? dt_max : f.dx * f.dx;
    if (guard > f.dx * f.dx * (1.0 + 1e-12))
        throw std::invalid_argument("heat_step: dt_max exceeds the dx^2 stability guard");
    const std::size_t n = f.size();
    if (n < 3) throw std::invalid_argument("heat_step: grid too small");

    const int substeps = std::max(1, static_cast<int>(std::ceil(h / guard - 1e-12)));
    const double dt = h / substeps;
    const double beta = dt / (4.0 * f.dx * f.dx);
    const std::size_t m = n - 2;  // interior unknowns

    std::vector<double> diag(m), rhs(m);
    std::vector<double>& u = f.values;
    for (int step = 0; step < substeps; ++step) {
        for (std::size_t i = 0; i < m; ++i) {
            rhs[i] = beta * u[i] + (1.0 - 2.0 * beta) * u[i + 1] + beta * u[i + 2];
            diag[i] = 1.0 + 2.0 * beta;
        }
        rhs[0] += beta * u[0];  // frozen boundaries enter the implicit side
        rhs[m - 1] += beta * u[n - 1];
        for (std::size_t i = 1; i < m; ++i) {  // Thomas, sub = sup = -beta
            const double w = beta / diag[i - 1];
            diag[i] -= w * beta;
            rhs[i] += w * rhs[i - 1];
        }
        u[n - 2] = rhs[m - 1] / diag[m - 1];
        for (std::size_t i = m - 1; i-- > 0;) u[i + 1] = (rhs[i] + beta * u[i + 2]) / diag[i];
    }
    f.clamp01();
}

/// Exact logistic flow u -> u e^{rh} / (1 + u(e^{rh}-1)) pointwise.
inline void logistic_step(Field& f, double r, double h) {
    if (r == 0.0 || h == 0.0) return;
    const double g = std::expm1(r * h);  // e^{rh}-1
    for (double& v : f.values) v = (v * (g + 1.0)) / (1.0 + v * g);
    f.clamp01();
}

/// Jump u -> u + y u (1-u); preserves [0,1] and profile monotonicity.
inline void jump_apply(Field& f, double y) {
    if (!(y > 0.0 && y <= 1.0)) throw std::invalid_argument("jump_apply: y must lie in (0,1]");
    for (double& v : f.values) v += y * v * (1.0 - v);
    f.clamp01();
}

/// Rightmost crossing of the front level, linearly interpolated; -inf when
/// the profile is everywhere below the level, +L when everywhere above.
inline double front_position(const Field& f, double level) {
    const std::vector<double>& u = f.values;
    const std::size_t n = u.size();
    std::size_t i = n;
    while (i-- > 0)
        if (u[i] >= level) break;
    if (i == static_cast<std::size_t>(-1)) return -std::numeric_limits<double>::infinity();
    if (i == n - 1) return f.half_width;
    const double x0 = f.x(i);
    const double denom = u[i] - u[i + 1];
    if (denom <= 0.0) return x0;
    return x0 + f.dx * (u[i] - level) / denom;
}

/// Linear interpolation of the profile at an arbitrary point of the domain.
inline double field_value_at(const Field& f, double x) {
    if (!(x >= -f.half_width && x <= f.half_width))
        throw std::invalid_argument("field_value_at: point outside the domain");
    const double s = (x + f.half_width) / f.dx;
    const std::size_t i = std::min(static_cast<std::size_t>(s), f.size() - 2);
    const double frac = s - static_cast<double>(i);
    return f.values[i] * (1.0 - frac) + f.values[i + 1] * frac;
}

struct SpdeEvent {
    double t = 0.0;
    double y = 0.0;
    bool from_skeleton = false;
};

struct FrontSample {
    double t = 0.0;
    double front = 0.0;  // at the configured front level
    double mass = 0.0;
    double front_q25 = 0.0;  // fixed sensitivity levels 0.25 / 0.5 / 0.75
    double front_q50 = 0.0;
    double front_q75 = 0.0;
};

struct SpdeTrajectory {
    std::vector<FrontSample> series;
    std::vector<SpdeEvent> events;
    std::vector<std::pair<double, Field>> snapshots;
    Field final_field;
    bool truncated = false;
    std::string truncation_reason;
};

namespace detail {

/// Advance by `span` in Strang steps heat/logistic/heat of size <= dt_max.
inline void strang_advance(Field& f, double r0, double span, double dt_max) {
    if (span <= 0.0) return;
    const int steps = std::max(1, static_cast<int>(std::ceil(span / dt_max - 1e-12)));
    const double h = span / steps;
    for (int k = 0; k < steps; ++k) {
        heat_step(f, 0.5 * h, dt_max);
        logistic_step(f, r0, h);
        heat_step(f, 0.5 * h, dt_max);
    }
}

}  // namespace detail

/// Evolve the jump-FKPP field to horizon T. Large jumps come from the given
/// skeleton (or one sampled from the key when absent); small-jump atoms of
/// R restricted to (0, delta] fire as an internal Poisson stream. The front
/// must keep margin_wavelengths/s away from the right wall or the run stops
/// early with the truncation flag set.
inline SpdeTrajectory evolve(const Field& u0, const ReproductionMeasure& R, double delta,
                             double T, const std::optional<Skeleton>& skeleton,
                             const StreamKey& key, const SpdeConfig& cfg) {
    if (!(T > 0.0)) throw std::invalid_argument("evolve: horizon must be > 0");
    SplitMeasure sm = split(R, delta);
    Skeleton skel = skeleton ? *skeleton
                             : sample_skeleton(sm, T, fork(key, "spde-skeleton"));
    if (skeleton) {
        if (skel.delta != delta) throw std::invalid_argument("evolve: skeleton delta mismatch");
        if (skel.horizon < T) throw std::invalid_argument("evolve: skeleton horizon too short");
    }

    const double r0 = sm.minus.atom_at_zero();
    const double dt_max = cfg.effective_dt_max();
    const double speed = R.total_mass() > 0.0 ? wave_speed(R) : 1.0;
    const double wall = cfg.half_width - cfg.margin_wavelengths / std::max(speed, 1e-3);

    // small-jump event stream: total rate over minus atoms (zero atom is the
    // continuous logistic part, not an event)
    const std::vector<Atom>& small_atoms = sm.minus.atoms();
    double small_rate = 0.0;
    std::vector<double> small_cdf;
    for (const Atom& a : small_atoms) small_cdf.push_back(small_rate += a.w / a.y);
    Rng small_rng(fork(key, "spde-small"));

    SpdeTrajectory out;
    Field f = u0;
    f.time = 0.0;
    auto make_sample = [&](double at) {
        return FrontSample{at,
                           front_position(f, cfg.front_level),
                           f.mass(),
                           front_position(f, 0.25),
                           front_position(f, 0.5),
                           front_position(f, 0.75)};
    };
    out.series.push_back(make_sample(0.0));

    auto snapshot_due = cfg.snapshot_times;
    std::sort(snapshot_due.begin(), snapshot_due.end());
    snapshot_due.erase(snapshot_due.begin(),
                       std::upper_bound(snapshot_due.begin(), snapshot_due.end(), 0.0));
    std::size_t next_snap = 0;
    std::size_t next_skel = 0;
    double next_small = small_rate > 0.0
                            ? small_rng.exponential(small_rate)
                            : std::numeric_limits<double>::infinity();
    double next_record = cfg.record_dt;
    double t = 0.0;

    auto record = [&](double at) { out.series.push_back(make_sample(at)); };

    while (t < T) {
        double t_next = std::min(T, next_record);
        if (next_skel < skel.size()) t_next = std::min(t_next, skel.points[next_skel].t);
        t_next = std::min(t_next, next_small);
        if (next_snap < snapshot_due.size()) t_next = std::min(t_next, snapshot_due[next_snap]);

        if (t_next > t) detail::strang_advance(f, r0, t_next - t, dt_max);
        f.time = t = t_next;

        if (next_skel < skel.size() && t == skel.points[next_skel].t) {
            jump_apply(f, skel.points[next_skel].y);
            out.events.push_back(SpdeEvent{t, skel.points[next_skel].y, true});
            ++next_skel;
        }
        if (t == next_small) {
            const double u = small_rng.uniform() * small_rate;
            std::size_t i = std::lower_bound(small_cdf.begin(), small_cdf.end(), u) -
                            small_cdf.begin();
            if (i >= small_atoms.size()) i = small_atoms.size() - 1;
            jump_apply(f, small_atoms[i].y);
            out.events.push_back(SpdeEvent{t, small_atoms[i].y, false});
            next_small = t + small_rng.exponential(small_rate);
        }
        if (next_snap < snapshot_due.size() && t == snapshot_due[next_snap]) {
            out.snapshots.emplace_back(t, f);
            ++next_snap;
        }
        if (t == next_record || t == T) {
            record(t);
            while (next_record <= t + 1e-15) next_record += cfg.record_dt;
        }

        const double front = front_position(f, cfg.front_level);
        if (front > wall) {
            out.truncated = true;
            out.truncation_reason = "front within the boundary margin at t=" + std::to_string(t);
            break;
        }
    }

    out.final_field = std::move(f);
    return out;
}

}  // namespace kpp
