#pragma once

// Selection-intensity measures on [0,1] and the closed forms derived from
// them: wave speed, quenched/annealed growth rates, split into small/large
// impact parts, and the Dirichlet-box eigenvalue used for survival boxes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kpp {

/// One jump-impact atom: impact y in (0,1] carrying weight w > 0.
struct Atom {
    double y = 0.0;
    double w = 0.0;
};

/// Finite measure r0*delta_0 + sum_i w_i*delta_{y_i} on [0,1].
///
/// The atom at zero is the continuous selection rate; atoms on (0,1] are
/// jump impacts firing at rate w/y each. Immutable after construction.
class ReproductionMeasure {
  public:
    ReproductionMeasure() = default;

    ReproductionMeasure(double atom_at_zero, std::vector<Atom> atoms)
        : r0_(atom_at_zero), atoms_(std::move(atoms)) {
        if (!(r0_ >= 0.0) || !std::isfinite(r0_))
            throw std::invalid_argument("measure: atom_at_zero must be finite and >= 0");
        std::sort(atoms_.begin(), atoms_.end(),
                  [](const Atom& a, const Atom& b) { return a.y < b.y; });
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            const Atom& a = atoms_[i];
            if (!(a.y > 0.0 && a.y <= 1.0) || !std::isfinite(a.y))
                throw std::invalid_argument("measure: atom location must lie in (0,1]");
            if (!(a.w > 0.0) || !std::isfinite(a.w))
                throw std::invalid_argument("measure: atom weight must be finite and > 0");
            if (i > 0 && !(atoms_[i - 1].y < a.y))
                throw std::invalid_argument("measure: atom locations must be pairwise distinct");
        }
    }

    double atom_at_zero() const { return r0_; }
    const std::vector<Atom>& atoms() const { return atoms_; }
    bool has_jump_atoms() const { return !atoms_.empty(); }

    /// Total mass R([0,1]); this is the annealed growth rate.
    double total_mass() const {
        double m = r0_;
        for (const Atom& a : atoms_) m += a.w;
        return m;
    }

    /// Total jump intensity sum w_i / y_i (events per unit time).
    double jump_rate() const {
        double s = 0.0;
        for (const Atom& a : atoms_) s += a.w / a.y;
        return s;
    }

  private:
    double r0_ = 0.0;
    std::vector<Atom> atoms_;  // sorted ascending in y
};

/// Decomposition of a measure at threshold delta: small part on [0, delta]
/// (keeps the zero atom), large part on (delta, 1].
struct SplitMeasure {
    ReproductionMeasure minus;
    std::vector<Atom> plus;
    double delta = 1.0;

    /// Inverse of split(): puts small and large atoms back together.
    ReproductionMeasure recombine() const {
        std::vector<Atom> all = minus.atoms();
        all.insert(all.end(), plus.begin(), plus.end());
        return ReproductionMeasure(minus.atom_at_zero(), std::move(all));
    }

    /// Poisson rate of the large-jump skeleton, sum_{y>delta} w/y.
    double plus_rate() const {
        double s = 0.0;
        for (const Atom& a : plus) s += a.w / a.y;
        return s;
    }
};

inline void check_delta(double delta) {
    if (!(delta > 0.0 && delta <= 1.0))
        throw std::invalid_argument("delta must lie in (0,1]");
}

/// Split at delta: atoms with y <= delta go to the small part (closed
/// interval, so y == delta lands in minus), y > delta to the large part.
inline SplitMeasure split(const ReproductionMeasure& R, double delta) {
    check_delta(delta);
    std::vector<Atom> lo, hi;
    for (const Atom& a : R.atoms()) (a.y <= delta ? lo : hi).push_back(a);
    return SplitMeasure{ReproductionMeasure(R.atom_at_zero(), std::move(lo)),
                        std::move(hi), delta};
}

/// log(1+y)/y with the convention that the value at y = 0 is 1, so the
/// zero atom contributes its full weight.
inline double log1p_over_y(double y) {
    return y == 0.0 ? 1.0 : std::log1p(y) / y;
}

/// Wave speed s with s^2/2 = r0 + sum w_i log(1+y_i)/y_i.
inline double wave_speed(const ReproductionMeasure& R) {
    if (!(R.total_mass() > 0.0))
        throw std::invalid_argument("wave_speed: measure has zero mass (no-invasion regime)");
    double half_s2 = R.atom_at_zero();
    for (const Atom& a : R.atoms()) half_s2 += a.w * log1p_over_y(a.y);
    return std::sqrt(2.0 * half_s2);
}

/// Upper growth-rate constant c_delta = R([0,delta]) + sum_{y>delta} w log(1+y)/y.
inline double c_delta(const ReproductionMeasure& R, double delta) {
    check_delta(delta);
    double c = R.atom_at_zero();
    for (const Atom& a : R.atoms())
        c += (a.y <= delta) ? a.w : a.w * log1p_over_y(a.y);
    return c;
}

/// Lower constant: drops the small atoms entirely, keeping only r0 and the
/// log-moments of the large part. Always <= s^2/2 <= c_delta.
inline double c_delta_lower(const ReproductionMeasure& R, double delta) {
    check_delta(delta);
    double c = R.atom_at_zero();
    for (const Atom& a : R.atoms())
        if (a.y > delta) c += a.w * log1p_over_y(a.y);
    return c;
}

/// Skeleton log-sum rate d_{delta,eps} = sum_{y>delta} w log(1+y+eps)/y.
inline double d_delta_eps(const ReproductionMeasure& R, double delta, double eps = 0.0) {
    check_delta(delta);
    if (!(eps >= 0.0)) throw std::invalid_argument("d_delta_eps: eps must be >= 0");
    double d = 0.0;
    for (const Atom& a : R.atoms())
        if (a.y > delta) d += a.w * std::log1p(a.y + eps) / a.y;
    return d;
}

/// Annealed growth rate r = R([0,1]).
inline double annealed_rate(const ReproductionMeasure& R) { return R.total_mass(); }

/// p-th impact moment over (delta, 1]; at delta = 0 the zero atom enters
/// with its bare weight (same convention as log1p_over_y at y = 0).
inline double moment_r(const ReproductionMeasure& R, double delta, double p) {
    if (!(delta >= 0.0 && delta <= 1.0))
        throw std::invalid_argument("moment_r: delta must lie in [0,1]");
    double m = (delta == 0.0) ? R.atom_at_zero() : 0.0;
    for (const Atom& a : R.atoms())
        if (a.y > delta) m += a.w * std::pow(a.y, p);
    return m;
}

/// Relative entropy of Bernoulli(eps) against Bernoulli(p); the Chernoff
/// rate for the participation-count concentration.
inline double bernoulli_rate(double eps, double p) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("bernoulli_rate: eps in (0,1)");
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("bernoulli_rate: p in (0,1)");
    return eps * std::log(eps / p) + (1.0 - eps) * std::log((1.0 - eps) / (1.0 - p));
}

/// Principal Dirichlet eigenvalue of (1/2)Lap + lambda d/dx on (-R, R):
/// -lambda^2/2 - pi^2/(8 R^2). Tends to -lambda^2/2 as R grows.
inline double dirichlet_drift_eigenvalue(double lambda, double rbox) {
    if (!(rbox > 0.0)) throw std::invalid_argument("dirichlet_drift_eigenvalue: Rbox must be > 0");
    const double pi = std::numbers::pi;
    return -0.5 * lambda * lambda - pi * pi / (8.0 * rbox * rbox);
}

/// Smallest box half-width R with eigenvalue(lambda, R) >= -c_lower + eps,
/// by closed-form inversion of the eigenvalue. Infeasible when the drift
/// alone already exceeds the budget.
inline double box_size(double lambda, double c_lower, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("box_size: eps must be > 0");
    const double budget = c_lower - eps - 0.5 * lambda * lambda;
    if (!(budget > 0.0))
        throw std::domain_error("box_size: infeasible, lambda^2/2 >= c_lower - eps");
    return std::numbers::pi / std::sqrt(8.0 * budget);
}

/// Mass-preserving discretization of a density f on (0,1] into n atoms
/// (one per bin, placed at the bin's mass centroid). Keeps the closed
/// forms exact downstream of the binning.
template <class Density>
ReproductionMeasure discretize_density(double r0, const Density& f, std::size_t n_bins,
                                       std::size_t quad_per_bin = 64) {
    if (n_bins == 0) throw std::invalid_argument("discretize_density: need at least one bin");
    std::vector<Atom> atoms;
    atoms.reserve(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        const double lo = static_cast<double>(b) / n_bins;
        const double hi = static_cast<double>(b + 1) / n_bins;
        const double h = (hi - lo) / quad_per_bin;
        double mass = 0.0, first = 0.0;  // midpoint rule within the bin
        for (std::size_t k = 0; k < quad_per_bin; ++k) {
            const double y = lo + (k + 0.5) * h;
            const double fy = f(y);
            mass += fy * h;
            first += y * fy * h;
        }
        if (mass > 0.0) {
            double y = std::clamp(first / mass, lo + 0.25 * h, hi);
            atoms.push_back(Atom{y, mass});
        }
    }
    return ReproductionMeasure(r0, std::move(atoms));
}

}  // namespace kpp
