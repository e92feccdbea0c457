#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "kpp/cbbm.hpp"

using namespace kpp;

namespace {

double binom_coeff(int n, int k) {
    return std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0));
}

}  // namespace

TEST_CASE("diffuse moves positions with variance h and keeps the count") {
    const int n = 100000;
    ParticleSystem ps = ParticleSystem::at_positions(std::vector<double>(n, 0.0));
    Rng rng(make_key(100));
    const double h = 0.7;
    diffuse(ps, h, rng);
    CHECK(ps.count == static_cast<double>(n));
    CHECK(ps.time == h);
    double s = 0.0, s2 = 0.0;
    for (double x : ps.positions) {
        s += x;
        s2 += x * x;
    }
    const double var = s2 / n - (s / n) * (s / n);
    CHECK_THAT(var, Catch::Matchers::WithinAbs(h, 3.0 * h * std::sqrt(2.0 / n)));
    CHECK_THROWS_AS(diffuse(ps, 0.0, rng), std::invalid_argument);

    ParticleSystem co = ParticleSystem::counts_only(5.0);
    diffuse(co, 1.0, rng);
    CHECK(co.count == 5.0);
    CHECK(co.time == 1.0);
}

TEST_CASE("large event duplication law") {
    Rng rng(make_key(101));

    // y = 1: exact doubling, offspring co-located with parents
    ParticleSystem ps = ParticleSystem::at_positions({0.5, -1.0, 2.0});
    large_event(ps, 1.0, rng);
    REQUIRE(ps.positions.size() == 6);
    for (int i = 0; i < 3; ++i) CHECK(ps.positions[3 + i] == ps.positions[i]);

    // binomial count in counts-only mode
    ParticleSystem co = ParticleSystem::counts_only(1e4);
    const double added = large_event(co, 0.5, rng);
    CHECK(co.count == 1e4 + added);
    CHECK_THAT(added, Catch::Matchers::WithinAbs(5000.0, 3.0 * std::sqrt(1e4 * 0.25)));

    CHECK_THROWS_AS(large_event(co, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(large_event(co, 1.1, rng), std::invalid_argument);
}

TEST_CASE("small-event thinned rate equals the subset-rate sum") {
    // sum_{k=1}^n C(n,k) y^k (1-y)^{n-k} (1/y) w == (w/y)(1 - (1-y)^n)
    for (int n : {1, 2, 3, 7, 30}) {
        for (double y : {0.05, 0.3, 0.6}) {
            const double w = 0.8;
            double direct = 0.0;
            for (int k = 1; k <= n; ++k)
                direct += binom_coeff(n, k) * std::pow(y, k) * std::pow(1.0 - y, n - k) * w / y;
            ReproductionMeasure minus(0.0, {{y, w}});
            CHECK_THAT(small_total_rate(minus, n), Catch::Matchers::WithinRel(direct, 1e-10));
        }
    }
    // zero atom alone: rate r0 * n
    CHECK_THAT(small_total_rate(ReproductionMeasure(0.7, {}), 13.0),
               Catch::Matchers::WithinRel(0.7 * 13.0, 1e-14));
}

TEST_CASE("small-event scheduling follows the visible rates") {
    Rng rng(make_key(103));

    // pure r0: every event is the zero-atom tag, mean wait 1/(r0 n)
    {
        ParticleSystem ps = ParticleSystem::counts_only(4.0);
        ReproductionMeasure minus(0.5, {});
        double s = 0.0;
        const int reps = 20000;
        for (int i = 0; i < reps; ++i) {
            SmallEventChoice ev = schedule_small_event(ps, minus, rng);
            REQUIRE(ev.atom_index == -1);
            s += ev.wait;
        }
        const double mean = s / reps;  // Exp(2) has mean 0.5, sd 0.5
        CHECK_THAT(mean, Catch::Matchers::WithinAbs(0.5, 3.0 * 0.5 / std::sqrt(reps)));
    }

    // single atom, n = 1: visible rate (w/y)(1-(1-y)) = w = 1.0 here
    {
        ParticleSystem ps = ParticleSystem::counts_only(1.0);
        ReproductionMeasure minus(0.0, {{0.5, 1.0}});
        CHECK_THAT(small_total_rate(minus, 1.0), Catch::Matchers::WithinRel(1.0, 1e-14));
        double s = 0.0;
        const int reps = 20000;
        for (int i = 0; i < reps; ++i) s += schedule_small_event(ps, minus, rng).wait;
        CHECK_THAT(s / reps, Catch::Matchers::WithinAbs(1.0, 3.0 / std::sqrt(reps)));
    }

    // empty small part: infinite wait
    CHECK(schedule_small_event(ParticleSystem::counts_only(3.0),
                               ReproductionMeasure(0.0, {}), rng)
              .wait == std::numeric_limits<double>::infinity());
}

TEST_CASE("small-event application") {
    Rng rng(make_key(104));
    ReproductionMeasure minus(0.3, {{0.5, 1.0}});

    // zero-atom on a single particle: becomes two, co-located
    ParticleSystem ps = ParticleSystem::at_positions({1.25});
    small_event_apply(ps, minus, -1, rng);
    REQUIRE(ps.positions.size() == 2);
    CHECK(ps.positions[1] == 1.25);

    // conditional-nonempty law: n=2, y=0.5 -> P(k=2 | nonempty) = 1/3
    int two = 0;
    const int reps = 30000;
    for (int i = 0; i < reps; ++i) {
        ParticleSystem p2 = ParticleSystem::counts_only(2.0);
        const double k = small_event_apply(p2, minus, 0, rng);
        REQUIRE(k >= 1.0);
        two += (k == 2.0);
    }
    const double f = static_cast<double>(two) / reps;
    CHECK_THAT(f, Catch::Matchers::WithinAbs(1.0 / 3.0, 3.0 * std::sqrt(2.0 / 9.0 / reps)));
}

TEST_CASE("subset-event rates match the generator formula on a small system") {
    // n = 2 particles, one small atom (y, w): specific-subset rate is
    // w y^{k-1} (1-y)^{2-k}; size-k event rate is C(2,k) times that.
    const double y = 0.6, w = 0.8;
    ReproductionMeasure minus(0.0, {{y, w}});
    Rng rng(make_key(105));
    double total_time = 0.0;
    long n1 = 0, n2 = 0;
    const int events = 40000;
    for (int e = 0; e < events; ++e) {
        ParticleSystem ps = ParticleSystem::counts_only(2.0);
        SmallEventChoice ev = schedule_small_event(ps, minus, rng);
        total_time += ev.wait;
        const double k = small_event_apply(ps, minus, ev.atom_index, rng);
        (k == 1.0 ? n1 : n2) += 1;
    }
    const double rate1 = n1 / total_time;
    const double rate2 = n2 / total_time;
    const double want1 = 2.0 * w * (1.0 - y);      // C(2,1) w y^0 (1-y)^1
    const double want2 = w * y;                    // C(2,2) w y^1 (1-y)^0
    CHECK_THAT(rate1, Catch::Matchers::WithinAbs(want1, 3.0 * rate1 / std::sqrt((double)n1)));
    CHECK_THAT(rate2, Catch::Matchers::WithinAbs(want2, 3.0 * rate2 / std::sqrt((double)n2)));
}

TEST_CASE("run: empty measure leaves a single Brownian particle") {
    ReproductionMeasure R(1.0, {});  // placeholder mass; the split drops it below
    SplitMeasure sm = split(ReproductionMeasure(0.0, {}), 0.5);
    Skeleton skel(10.0, 0.5, {});
    CbbmTrajectory tr = run(ParticleSystem::at_positions({0.0}), sm, skel, 10.0, make_key(7));
    CHECK(tr.final_state.count == 1.0);
    for (const auto& s : tr.samples) CHECK(s.count == 1.0);
    CHECK_FALSE(tr.cap_exceeded);
    (void)R;
}

TEST_CASE("run: classical BBM mean count is e^{rt}") {
    const double r = 1.0, T = 2.0;
    SplitMeasure sm = split(ReproductionMeasure(r, {}), 0.5);
    Skeleton skel(T, 0.5, {});
    const int reps = 20000;  // geometric counts are heavy-tailed; keep the SE honest
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < reps; ++i) {
        CbbmTrajectory tr = run(ParticleSystem::counts_only(1.0), sm, skel, T,
                                fork(make_key(55), "rep", i));
        s += tr.final_state.count;
        s2 += tr.final_state.count * tr.final_state.count;
    }
    const double mean = s / reps;
    const double sd = std::sqrt(s2 / reps - mean * mean);
    CHECK_THAT(mean, Catch::Matchers::WithinAbs(std::exp(r * T), 3.0 * sd / std::sqrt((double)reps)));
}

TEST_CASE("run: quenched replay is identical; cap reported") {
    ReproductionMeasure R(0.2, {{0.3, 0.3}, {0.8, 0.7}});
    SplitMeasure sm = split(R, 0.5);
    StreamKey key = make_key(66);
    Skeleton skel = sample_skeleton(sm, 5.0, fork(key, "skel"));

    CbbmTrajectory a = run(ParticleSystem::at_positions({0.0, 1.0}), sm, skel, 5.0, key);
    CbbmTrajectory b = run(ParticleSystem::at_positions({0.0, 1.0}), sm, skel, 5.0, key);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].count == b.samples[i].count);
        CHECK(a.samples[i].rightmost == b.samples[i].rightmost);
    }
    CHECK(a.final_state.positions == b.final_state.positions);

    // tiny cap: flagged, never silent
    CbbmConfig tight;
    tight.cap = 4.0;
    CbbmTrajectory c = run(ParticleSystem::at_positions({0.0}), sm, skel, 5.0, key, tight);
    CHECK(c.cap_exceeded);
    CHECK(c.final_state.count > 4.0);

    // counts-only ignores the cap and keeps going
    CbbmTrajectory d = run(ParticleSystem::counts_only(1.0), sm, skel, 5.0, key, tight);
    CHECK_FALSE(d.cap_exceeded);
}

TEST_CASE("run: counts-only and positions modes share the count law") {
    ReproductionMeasure R(0.4, {{0.2, 0.2}, {0.7, 0.5}});
    SplitMeasure sm = split(R, 0.25);
    const double T = 3.0;
    const int reps = 1500;
    double sp = 0.0, sp2 = 0.0, sc = 0.0, sc2 = 0.0;
    for (int i = 0; i < reps; ++i) {
        Skeleton skel = sample_skeleton(sm, T, fork(make_key(77), "skel", i));
        const double ip = run(ParticleSystem::at_positions({0.0}), sm, skel, T,
                              fork(make_key(78), "p", i))
                              .final_state.count;
        const double ic = run(ParticleSystem::counts_only(1.0), sm, skel, T,
                              fork(make_key(79), "c", i))
                              .final_state.count;
        sp += ip;
        sp2 += ip * ip;
        sc += ic;
        sc2 += ic * ic;
    }
    const double mp = sp / reps, mc = sc / reps;
    const double vp = sp2 / reps - mp * mp, vc = sc2 / reps - mc * mc;
    const double se = std::sqrt((vp + vc) / reps);
    CHECK_THAT(mp - mc, Catch::Matchers::WithinAbs(0.0, 3.0 * se));
}

TEST_CASE("rightmost") {
    ParticleSystem ps = ParticleSystem::at_positions({0.0});
    CHECK(rightmost(ps) == 0.0);
    ParticleSystem tr = ParticleSystem::at_positions({-1.0, 2.5, 0.7});
    CHECK(rightmost(tr) == 2.5);
    for (double& x : tr.positions) x += 3.0;
    CHECK(rightmost(tr) == 5.5);
    tr.positions.push_back(9.0);
    CHECK(rightmost(tr) == 9.0);
    CHECK_THROWS_AS(rightmost(ParticleSystem::counts_only(3.0)), std::logic_error);
}

TEST_CASE("lineage DFS matches brute force on short horizons") {
    // skeleton-driven case (r0 = 0): compare exceedance frequencies and
    // moments of S_t between the DFS sampler and full positions-mode runs
    ReproductionMeasure R(0.0, {{0.5, 1.0}});
    SplitMeasure sm = split(R, 0.25);
    StreamKey skel_key = make_key(900);
    const double T = 6.0;
    Skeleton skel = sample_skeleton(sm, T, skel_key);
    const std::vector<double> cps{3.0, 6.0};
    const double lambda_ref = 0.8;

    // Exceedance indicators are the sampler's certified output: compare
    // P(S_t > lambda t) for several lambdas at or above lambda_ref.
    const std::vector<double> lambdas{0.8, 0.95, 1.1};
    const int reps = 3000;
    double bf_exc[2][3] = {{0, 0, 0}, {0, 0, 0}};
    CbbmConfig cfg;
    cfg.cap = 1e6;
    cfg.checkpoint_dt = 3.0;
    for (int i = 0; i < reps; ++i) {
        CbbmTrajectory tr = run(ParticleSystem::at_positions({0.0}), sm, skel, T,
                                fork(make_key(901), "bf", i), cfg);
        REQUIRE_FALSE(tr.cap_exceeded);
        for (int c = 0; c < 2; ++c) {
            double s = -1e300;
            for (const auto& smp : tr.samples)
                if (std::abs(smp.t - cps[c]) < 1e-9) s = smp.rightmost;
            REQUIRE(s > -1e300);
            for (int l = 0; l < 3; ++l)
                bf_exc[c][l] += (s > lambdas[l] * cps[c]) ? 1.0 : 0.0;
        }
    }

    double dfs_exc[2][3] = {{0, 0, 0}, {0, 0, 0}};
    double prune_total = 0.0;
    for (int i = 0; i < reps; ++i) {
        TailSamplerResult r = rightmost_checkpoints(0.0, 0.0, skel, cps, lambda_ref,
                                                    fork(make_key(902), "dfs", i), 1e-12);
        prune_total += r.prune_mass;
        for (int c = 0; c < 2; ++c)
            for (int l = 0; l < 3; ++l)
                dfs_exc[c][l] += (r.maxima[c] > lambdas[l] * cps[c]) ? 1.0 : 0.0;
    }
    CHECK(prune_total < 1e-4);
    for (int c = 0; c < 2; ++c) {
        for (int l = 0; l < 3; ++l) {
            const double pb = bf_exc[c][l] / reps, pd = dfs_exc[c][l] / reps;
            const double sep = std::sqrt((pb * (1 - pb) + pd * (1 - pd)) / reps);
            INFO("checkpoint " << cps[c] << " lambda " << lambdas[l] << ": bf " << pb
                               << " dfs " << pd);
            CHECK_THAT(pd - pb, Catch::Matchers::WithinAbs(0.0, 4.0 * std::max(sep, 1e-6)));
        }
    }
}

TEST_CASE("lineage DFS matches brute force with continuous branching") {
    // classical BBM case (r0 > 0, empty skeleton)
    const double r0 = 0.5, T = 4.0;
    Skeleton skel(T, 0.5, {});
    SplitMeasure sm = split(ReproductionMeasure(r0, {}), 0.5);
    const std::vector<double> cps{4.0};
    const double lambda_ref = 0.9;

    const int reps = 3000;
    double bf_exc = 0.0;
    for (int i = 0; i < reps; ++i) {
        CbbmTrajectory tr = run(ParticleSystem::at_positions({0.0}), sm, skel, T,
                                fork(make_key(903), "bf", i));
        bf_exc += (rightmost(tr.final_state) > lambda_ref * T) ? 1.0 : 0.0;
    }
    double dfs_exc = 0.0;
    for (int i = 0; i < reps; ++i) {
        TailSamplerResult r = rightmost_checkpoints(0.0, r0, skel, cps, lambda_ref,
                                                    fork(make_key(904), "dfs", i), 1e-10);
        dfs_exc += (r.maxima[0] > lambda_ref * T) ? 1.0 : 0.0;
    }
    const double pb = bf_exc / reps, pd = dfs_exc / reps;
    const double se = std::sqrt((pb * (1 - pb) + pd * (1 - pd)) / reps);
    CHECK_THAT(pd - pb, Catch::Matchers::WithinAbs(0.0, 4.0 * se));
}
