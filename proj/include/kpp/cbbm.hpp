#pragma once

// Coordinated branching Brownian motion, conditional on a skeleton of large
// reproduction events. Two state representations: full particle positions
// (rightmost-particle and duality work) and counts-only (Lyapunov work; the
// count law does not depend on the spatial motion).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kpp/measure.hpp"
#include "kpp/random.hpp"
#include "kpp/skeleton.hpp"

namespace kpp {

enum class ParticleMode { positions, counts_only };

struct ParticleSystem {
    ParticleMode mode = ParticleMode::counts_only;
    std::vector<double> positions;  // empty in counts-only mode
    double count = 1.0;             // I_t; exact integer until ~2^53, floating beyond
    double time = 0.0;

    static ParticleSystem at_positions(std::vector<double> x0) {
        if (x0.empty()) throw std::invalid_argument("particle system needs at least one particle");
        ParticleSystem ps;
        ps.mode = ParticleMode::positions;
        ps.count = static_cast<double>(x0.size());
        ps.positions = std::move(x0);
        return ps;
    }

    static ParticleSystem counts_only(double I0) {
        if (!(I0 >= 1.0)) throw std::invalid_argument("particle system needs I0 >= 1");
        ParticleSystem ps;
        ps.mode = ParticleMode::counts_only;
        ps.count = I0;
        return ps;
    }
};

inline double rightmost(const ParticleSystem& ps) {
    if (ps.mode != ParticleMode::positions)
        throw std::logic_error("rightmost: counts-only systems carry no positions");
    return *std::max_element(ps.positions.begin(), ps.positions.end());
}

/// Independent Brownian increments of variance h on every particle.
/// Counts-only: nothing to move, the clock still advances.
inline void diffuse(ParticleSystem& ps, double h, Rng& rng) {
    if (!(h > 0.0)) throw std::invalid_argument("diffuse: h must be > 0");
    if (ps.mode == ParticleMode::positions) {
        const double sd = std::sqrt(h);
        for (double& x : ps.positions) x += sd * rng.gaussian();
    }
    ps.time += h;
}

/// Large reproduction event of impact y: every particle duplicates
/// independently with probability y, offspring co-located with parents.
/// Returns the number of participants.
inline double large_event(ParticleSystem& ps, double y, Rng& rng,
                          double gauss_threshold = 1e9) {
    if (!(y > 0.0 && y <= 1.0)) throw std::invalid_argument("large_event: y must lie in (0,1]");
    if (ps.mode == ParticleMode::positions) {
        const std::size_t n = ps.positions.size();
        ps.positions.reserve(n + n);
        std::size_t added = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng.bernoulli(y)) {
                ps.positions.push_back(ps.positions[i]);
                ++added;
            }
        }
        ps.count = static_cast<double>(ps.positions.size());
        return static_cast<double>(added);
    }
    const double k = binomial_count(rng, ps.count, y, gauss_threshold);
    ps.count += k;
    return k;
}

/// Outcome of the next small-reproduction clock: waiting time plus which
/// atom fires (atom_index < 0 tags the zero-atom, i.e. classical binary
/// branching of one uniformly chosen particle).
struct SmallEventChoice {
    double wait = std::numeric_limits<double>::infinity();
    int atom_index = -1;
};

/// Total visible rate of the small part at population n: the zero atom
/// contributes r0*n; an atom (y,w) fires nonempty participation sets at
/// rate (w/y)(1-(1-y)^n) (empty sets thinned away; identical law).
inline double small_total_rate(const ReproductionMeasure& minus, double n) {
    double rate = minus.atom_at_zero() * n;
    for (const Atom& a : minus.atoms())
        rate += (a.w / a.y) * (-std::expm1(n * std::log1p(-a.y)));
    return rate;
}

inline SmallEventChoice schedule_small_event(const ParticleSystem& ps,
                                             const ReproductionMeasure& minus, Rng& rng) {
    const double n = ps.count;
    const double r0_rate = minus.atom_at_zero() * n;
    double total = r0_rate;
    std::vector<double> cdf;
    cdf.reserve(minus.atoms().size());
    for (const Atom& a : minus.atoms()) {
        total += (a.w / a.y) * (-std::expm1(n * std::log1p(-a.y)));
        cdf.push_back(total);
    }
    if (!(total > 0.0)) return SmallEventChoice{};
    SmallEventChoice ev;
    ev.wait = rng.exponential(total);
    const double u = rng.uniform() * total;
    if (u < r0_rate) {
        ev.atom_index = -1;
    } else {
        ev.atom_index = static_cast<int>(
            std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        if (ev.atom_index >= static_cast<int>(minus.atoms().size()))
            ev.atom_index = static_cast<int>(minus.atoms().size()) - 1;
    }
    return ev;
}

/// Apply a small event. Zero-atom: one uniformly chosen particle splits.
/// Atom y: participation count Binomial(n, y) conditioned nonempty (redraw
/// on zero, matching the thinned rate), participants chosen uniformly.
/// Returns the participation count.
inline double small_event_apply(ParticleSystem& ps, const ReproductionMeasure& minus,
                                int atom_index, Rng& rng, double gauss_threshold = 1e9) {
    if (atom_index < 0) {
        if (ps.mode == ParticleMode::positions) {
            const std::size_t i = static_cast<std::size_t>(rng.below(ps.positions.size()));
            ps.positions.push_back(ps.positions[i]);
            ps.count = static_cast<double>(ps.positions.size());
        } else {
            ps.count += 1.0;
        }
        return 1.0;
    }
    const Atom& a = minus.atoms().at(static_cast<std::size_t>(atom_index));
    double k = 0.0;
    do {
        k = binomial_count(rng, ps.count, a.y, gauss_threshold);
    } while (k == 0.0);
    if (ps.mode == ParticleMode::positions) {
        const std::size_t n = ps.positions.size();
        const std::size_t kk = static_cast<std::size_t>(k);
        // partial Fisher-Yates over an index scratch
        std::vector<std::uint32_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0u);
        for (std::size_t j = 0; j < kk; ++j) {
            const std::size_t r = j + static_cast<std::size_t>(rng.below(n - j));
            std::swap(idx[j], idx[r]);
            ps.positions.push_back(ps.positions[idx[j]]);
        }
        ps.count = static_cast<double>(ps.positions.size());
    } else {
        ps.count += k;
    }
    return k;
}

struct CbbmConfig {
    double cap = 1e6;  // positions mode only
    double checkpoint_dt = 0.1;
    std::vector<double> snapshot_times;
    double gauss_threshold = 1e9;  // binomial -> gaussian switch for counts

    std::vector<std::string> validate() const {
        std::vector<std::string> bad;
        if (!(cap >= 1.0)) bad.push_back("cbbm: cap must be >= 1");
        if (!(checkpoint_dt > 0.0)) bad.push_back("cbbm: checkpoint_dt must be > 0");
        if (!(gauss_threshold > 1.0)) bad.push_back("cbbm: gauss_threshold must be > 1");
        return bad;
    }
};

struct CountSample {
    double t = 0.0;
    double count = 0.0;
    double rightmost = std::numeric_limits<double>::quiet_NaN();  // NaN in counts mode
};

/// One skeleton event as the run saw it; count just before and just after.
struct LargeEventRecord {
    double t = 0.0;
    double y = 0.0;
    double count_before = 0.0;
    double count_after = 0.0;
};

struct CbbmTrajectory {
    std::vector<CountSample> samples;
    std::vector<LargeEventRecord> large_events;
    std::vector<std::pair<double, std::vector<double>>> snapshots;
    ParticleSystem final_state;
    bool cap_exceeded = false;
};

/// Clock state of the event-driven loop: the skeleton cursor plus the
/// state-dependent small-event clock (resampled after every event).
struct EventSchedule {
    std::size_t next_large = 0;
    double next_small_time = std::numeric_limits<double>::infinity();
    int next_small_atom = -1;

    void arm_small(const ParticleSystem& ps, const ReproductionMeasure& minus, Rng& rng) {
        const SmallEventChoice ev = schedule_small_event(ps, minus, rng);
        next_small_time = ps.time + ev.wait;
        next_small_atom = ev.atom_index;
    }
};

/// Run the CBBM to horizon T against a fixed skeleton. Positions mode stops
/// with cap_exceeded (never silently) once the count passes cfg.cap.
inline CbbmTrajectory run(ParticleSystem ps, const SplitMeasure& sm, const Skeleton& skeleton,
                          double T, const StreamKey& key, const CbbmConfig& cfg = {}) {
    if (!(T > 0.0)) throw std::invalid_argument("cbbm::run: horizon must be > 0");
    if (skeleton.horizon < T) throw std::invalid_argument("cbbm::run: skeleton horizon too short");
    {
        const auto bad = cfg.validate();
        if (!bad.empty()) throw std::invalid_argument(bad.front());
    }

    Rng rng(fork(key, "cbbm"));
    const ReproductionMeasure& minus = sm.minus;
    CbbmTrajectory out;
    ps.time = 0.0;

    auto sample = [&]() {
        out.samples.push_back(CountSample{
            ps.time, ps.count,
            ps.mode == ParticleMode::positions
                ? rightmost(ps)
                : std::numeric_limits<double>::quiet_NaN()});
    };
    sample();

    std::vector<double> snaps = cfg.snapshot_times;
    std::sort(snaps.begin(), snaps.end());
    snaps.erase(snaps.begin(), std::upper_bound(snaps.begin(), snaps.end(), 0.0));
    std::size_t next_snap = 0;

    EventSchedule sched;
    sched.arm_small(ps, minus, rng);
    double next_checkpoint = cfg.checkpoint_dt;

    while (ps.time < T) {
        double t_next = std::min(T, next_checkpoint);
        if (sched.next_large < skeleton.size())
            t_next = std::min(t_next, skeleton.points[sched.next_large].t);
        t_next = std::min(t_next, sched.next_small_time);
        if (next_snap < snaps.size()) t_next = std::min(t_next, snaps[next_snap]);

        if (t_next > ps.time) diffuse(ps, t_next - ps.time, rng);
        ps.time = t_next;

        bool population_changed = false;
        if (sched.next_large < skeleton.size() && t_next == skeleton.points[sched.next_large].t) {
            const double y = skeleton.points[sched.next_large].y;
            const double before = ps.count;
            large_event(ps, y, rng, cfg.gauss_threshold);
            out.large_events.push_back(LargeEventRecord{ps.time, y, before, ps.count});
            ++sched.next_large;
            population_changed = true;
        }
        if (t_next == sched.next_small_time) {
            small_event_apply(ps, minus, sched.next_small_atom, rng, cfg.gauss_threshold);
            population_changed = true;
        }
        if (population_changed) sched.arm_small(ps, minus, rng);

        if (next_snap < snaps.size() && t_next == snaps[next_snap]) {
            out.snapshots.emplace_back(ps.time, ps.positions);
            ++next_snap;
        }
        if (t_next == next_checkpoint || ps.time >= T) {
            sample();
            while (next_checkpoint <= ps.time + 1e-15) next_checkpoint += cfg.checkpoint_dt;
        }

        if (ps.mode == ParticleMode::positions && ps.count > cfg.cap) {
            out.cap_exceeded = true;
            break;
        }
    }

    out.final_state = std::move(ps);
    return out;
}

// ---------------------------------------------------------------------------
// Rightmost-particle checkpoint sampler.
//
// Depth-first traversal of the branching lineage tree, pruning a lineage
// only when the quenched many-to-one bound
//     E^delta[#descendants at t_c] * P(B_{t_c - s} > threshold_c - x)
// certifies, for every remaining checkpoint, that its subtree changes the
// exceedance indicators with probability <= eps_prune. The accumulated
// bound is returned, so the sampling error is certified per replica.
// Small part restricted to r0*delta_0 (per-lineage independence is what
// makes the lineage DFS exact).
// ---------------------------------------------------------------------------

struct TailSamplerResult {
    std::vector<double> maxima;  // retained max at each checkpoint, -inf if all pruned
    double prune_mass = 0.0;     // upper bound on P(any indicator misreported)
    std::uint64_t nodes_visited = 0;
};

namespace detail {

inline double gaussian_upper_tail(double z) {
    return 0.5 * std::erfc(z * 0.7071067811865475244);
}

}  // namespace detail

inline TailSamplerResult rightmost_checkpoints(double x0, double r0, const Skeleton& skeleton,
                                               const std::vector<double>& checkpoints,
                                               double lambda_ref, const StreamKey& key,
                                               double eps_prune = 1e-9) {
    if (checkpoints.empty()) throw std::invalid_argument("rightmost_checkpoints: no checkpoints");
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        if (!(checkpoints[i] > 0.0) ||
            (i > 0 && !(checkpoints[i] > checkpoints[i - 1])))
            throw std::invalid_argument("rightmost_checkpoints: checkpoints must increase");
    }
    const double T = checkpoints.back();
    if (skeleton.horizon < T)
        throw std::invalid_argument("rightmost_checkpoints: skeleton horizon too short");

    // merged timeline of skeleton events and checkpoints
    struct Mark {
        double t;
        double y;    // 0 for checkpoints
        int cp_idx;  // -1 for skeleton events
    };
    std::vector<Mark> marks;
    for (const SkeletonPoint& p : skeleton.points)
        if (p.t <= T) marks.push_back(Mark{p.t, p.y, -1});
    for (std::size_t c = 0; c < checkpoints.size(); ++c)
        marks.push_back(Mark{checkpoints[c], 0.0, static_cast<int>(c)});
    std::stable_sort(marks.begin(), marks.end(),
                     [](const Mark& a, const Mark& b) { return a.t < b.t; });

    // log of the quenched expected-offspring factor accumulated up to each mark
    std::vector<double> log_growth(marks.size() + 1, 0.0);
    {
        double acc = 0.0;
        for (std::size_t i = 0; i < marks.size(); ++i) {
            if (marks[i].cp_idx < 0) acc += std::log1p(marks[i].y);
            log_growth[i + 1] = acc;
        }
    }
    // log-growth from mark index i (exclusive) to checkpoint c uses the
    // r0 part continuously in time
    std::vector<std::size_t> cp_mark(checkpoints.size());
    for (std::size_t i = 0; i < marks.size(); ++i)
        if (marks[i].cp_idx >= 0) cp_mark[static_cast<std::size_t>(marks[i].cp_idx)] = i;

    TailSamplerResult res;
    res.maxima.assign(checkpoints.size(), -std::numeric_limits<double>::infinity());

    // Union bound over the checkpoints the subtree can still influence:
    // sum_c E^delta[#descendants at t_c] * P(B > thr_c - x). Prune when the
    // whole sum is <= eps_prune.
    auto relevance = [&](double t, double x, std::size_t i) {
        double q = 0.0;
        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
            if (cp_mark[c] < i) continue;  // already recorded on this lineage
            const double tc = checkpoints[c];
            const double thr = lambda_ref * tc;
            double b;
            if (tc <= t + 1e-14) {
                b = (x > thr) ? 1.0 : 0.0;
            } else {
                const double lg = r0 * (tc - t) + log_growth[cp_mark[c] + 1] - log_growth[i];
                b = std::exp(lg) *
                    detail::gaussian_upper_tail((thr - x) / std::sqrt(tc - t));
            }
            q += b;
            if (q > eps_prune) break;
        }
        return q;
    };

    struct Frame {
        double t;
        double x;
        std::uint32_t next_mark;
    };
    std::vector<Frame> stack;
    stack.push_back(Frame{0.0, x0, 0});
    Rng rng(fork(key, "tail"));

    while (!stack.empty()) {
        Frame fr = stack.back();
        stack.pop_back();
        {
            const double q = relevance(fr.t, fr.x, fr.next_mark);
            if (q <= eps_prune) {
                res.prune_mass += q;
                continue;
            }
        }
        double t = fr.t;
        double x = fr.x;
        std::size_t i = fr.next_mark;
        bool alive = true;
        while (alive) {
            ++res.nodes_visited;
            const double t_mark = (i < marks.size()) ? marks[i].t : T;
            // r0 binary branching inside the segment
            double seg_t = t;
            if (r0 > 0.0) {
                for (;;) {
                    const double tb = seg_t + rng.exponential(r0);
                    if (tb >= t_mark) break;
                    x += std::sqrt(tb - seg_t) * rng.gaussian();
                    seg_t = tb;
                    const double q = relevance(seg_t, x, i);
                    if (q <= eps_prune) {
                        res.prune_mass += q;  // whole subtree from here
                        alive = false;
                        break;
                    }
                    stack.push_back(Frame{seg_t, x, static_cast<std::uint32_t>(i)});
                }
                if (!alive) break;
            }
            if (i >= marks.size()) break;
            if (t_mark > seg_t) x += std::sqrt(t_mark - seg_t) * rng.gaussian();
            t = t_mark;
            if (marks[i].cp_idx >= 0) {
                const std::size_t c = static_cast<std::size_t>(marks[i].cp_idx);
                res.maxima[c] = std::max(res.maxima[c], x);
            } else if (rng.bernoulli(marks[i].y)) {
                stack.push_back(Frame{t, x, static_cast<std::uint32_t>(i + 1)});
            }
            ++i;
            const double q = relevance(t, x, i);
            if (q <= eps_prune) {
                res.prune_mass += q;
                alive = false;
            }
        }
    }
    return res;
}

}  // namespace kpp
