#pragma once

// The skeleton: the marked Poisson point process of large reproduction
// events (impact y > delta), shared between the jump-FKPP solver and its
// quenched dual.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kpp/measure.hpp"
#include "kpp/random.hpp"

namespace kpp {

struct SkeletonPoint {
    double t = 0.0;
    double y = 0.0;
};

/// Ordered marked point set {(t_j, y_j)} on (0, T] x (delta, 1].
struct Skeleton {
    double horizon = 0.0;
    double delta = 1.0;
    std::vector<SkeletonPoint> points;  // strictly increasing in t

    Skeleton() = default;
    Skeleton(double T, double d, std::vector<SkeletonPoint> pts)
        : horizon(T), delta(d), points(std::move(pts)) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto& p = points[i];
            if (!(p.t > 0.0 && p.t <= horizon))
                throw std::invalid_argument("skeleton: event times must lie in (0, T]");
            if (!(p.y > delta && p.y <= 1.0))
                throw std::invalid_argument("skeleton: marks must lie in (delta, 1]");
            if (i > 0 && !(points[i - 1].t < p.t))
                throw std::invalid_argument("skeleton: event times must be strictly increasing");
        }
    }

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    /// Events with t_j <= t.
    std::size_t count_up_to(double t) const {
        return std::upper_bound(points.begin(), points.end(), t,
                                [](double v, const SkeletonPoint& p) { return v < p.t; }) -
               points.begin();
    }

    /// Dual-window view: the quenched dual on [0, t] traverses the event
    /// times backward, seeing (t - t_j, y_j) for each t_j <= t.
    Skeleton reversed(double t) const {
        std::vector<SkeletonPoint> rev;
        const std::size_t n = count_up_to(t);
        rev.reserve(n);
        for (std::size_t j = n; j-- > 0;) {
            const double s = t - points[j].t;
            if (s > 0.0) rev.push_back(SkeletonPoint{s, points[j].y});
        }
        return Skeleton(t, delta, std::move(rev));
    }
};

/// Sample the skeleton of a split measure on [0, T]: a Poisson process of
/// total rate sum_{y>delta} w/y, each event marked y_i with probability
/// proportional to w_i/y_i. Deterministic given the key.
inline Skeleton sample_skeleton(const SplitMeasure& sm, double T, const StreamKey& key) {
    if (!(T > 0.0)) throw std::invalid_argument("sample_skeleton: horizon must be > 0");
    std::vector<SkeletonPoint> pts;
    const double rate = sm.plus_rate();
    if (rate > 0.0) {
        Rng rng(key);
        std::vector<double> cdf;
        cdf.reserve(sm.plus.size());
        double acc = 0.0;
        for (const Atom& a : sm.plus) cdf.push_back(acc += a.w / a.y);
        double t = 0.0;
        for (;;) {
            t += rng.exponential(rate);
            if (t > T) break;
            const double u = rng.uniform() * acc;
            std::size_t i = std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
            if (i >= sm.plus.size()) i = sm.plus.size() - 1;
            pts.push_back(SkeletonPoint{t, sm.plus[i].y});
        }
    }
    return Skeleton(T, sm.delta, std::move(pts));
}

/// Partial log-sum d_{delta,eps}(t) = sum_{t_j <= t} log(1 + y_j + eps);
/// divided by t it converges to d_delta_eps of the measure.
inline double skeleton_log_sum(const Skeleton& s, double t, double eps = 0.0) {
    if (!(eps >= 0.0)) throw std::invalid_argument("skeleton_log_sum: eps must be >= 0");
    double sum = 0.0;
    for (const SkeletonPoint& p : s.points) {
        if (p.t > t) break;
        sum += std::log1p(p.y + eps);
    }
    return sum;
}

}  // namespace kpp
