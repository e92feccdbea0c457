#pragma once

// Deterministic seedable random streams. A StreamKey names a stream by
// (master seed, purpose tag, replica index); the generator is a splitmix64
// counter walk, so any (key) pair reproduces bit-identical output no matter
// which worker consumes it or in which order replicas run.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string_view>

namespace kpp {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// FNV-1a over the purpose tag; stable across platforms.
inline std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct StreamKey {
    std::uint64_t master_seed = 0;
    std::uint64_t purpose = 0;  // hashed tag
    std::uint64_t index = 0;

    friend bool operator==(const StreamKey&, const StreamKey&) = default;

    /// Mix the three fields into the generator's base state.
    std::uint64_t state() const {
        std::uint64_t s = splitmix64(master_seed ^ 0x6a09e667f3bcc908ULL);
        s = splitmix64(s ^ purpose);
        s = splitmix64(s ^ (index * 0x9e3779b97f4a7c15ULL + 0xbb67ae8584caa73bULL));
        return s;
    }
};

inline StreamKey make_key(std::uint64_t master_seed) { return StreamKey{master_seed, 0, 0}; }

/// Derive a child stream; distinct (purpose, index) pairs give streams that
/// never share state with the parent or with each other.
inline StreamKey fork(const StreamKey& key, std::string_view purpose, std::uint64_t index = 0) {
    return StreamKey{key.state(), hash_tag(purpose), index};
}

/// Counter-mode splitmix64 generator. Copyable value type; a copy replays
/// the stream from the copied position.
class Rng {
  public:
    using result_type = std::uint64_t;

    explicit Rng(const StreamKey& key) : state_(key.state()) {}
    explicit Rng(std::uint64_t raw_seed) : state_(splitmix64(raw_seed)) {}

    std::uint64_t next_u64() { return splitmix64(state_ += 0x9e3779b97f4a7c15ULL); }

    // UniformRandomBitGenerator interface
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<std::uint64_t>::max(); }
    result_type operator()() { return next_u64(); }

    /// Uniform in (0,1); never returns 0 or 1, safe under log().
    double uniform() {
        const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // 128-bit multiply rejection-free scaling (Lemire); bias < 2^-64
        // is irrelevant at Monte Carlo scale.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    double exponential(double rate) {
        if (!(rate > 0.0)) throw std::invalid_argument("exponential: rate must be > 0");
        return -std::log(uniform()) / rate;
    }

    /// Standard normal via Box-Muller; second deviate cached.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    /// Binomial(n, p), exact for any n that fits an int64. Inversion when
    /// n*min(p,1-p) is small, BTPE rejection otherwise.
    std::int64_t binomial(std::int64_t n, double p) {
        if (n < 0) throw std::invalid_argument("binomial: n must be >= 0");
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("binomial: p must lie in [0,1]");
        if (n == 0 || p == 0.0) return 0;
        if (p == 1.0) return n;
        const bool flip = p > 0.5;
        const double q = flip ? 1.0 - p : p;
        const std::int64_t k = (static_cast<double>(n) * q < 14.0) ? binomial_inversion(n, q)
                                                                   : binomial_btpe(n, q);
        return flip ? n - k : k;
    }

  private:
    std::int64_t binomial_inversion(std::int64_t n, double p) {
        // Count exponential spacings of a Bernoulli point process.
        const double log_q = std::log1p(-p);
        std::int64_t k = 0;
        double sum = 0.0;
        for (;;) {
            sum += std::log(uniform()) / static_cast<double>(n - k);
            if (sum < log_q) return k;
            ++k;
            if (k == n) return n;
        }
    }

    // BTPE (Kachitvichyanukul & Schmeiser 1988), valid for n*p >= ~10, p <= 1/2.
    std::int64_t binomial_btpe(std::int64_t n, double p) {
        const double nd = static_cast<double>(n);
        const double q = 1.0 - p;
        const double npq = nd * p * q;
        const double f_m = nd * p + p;
        const std::int64_t m = static_cast<std::int64_t>(f_m);  // mode
        const double p1 = std::floor(2.195 * std::sqrt(npq) - 4.6 * q) + 0.5;
        const double x_m = m + 0.5;
        const double x_l = x_m - p1;
        const double x_r = x_m + p1;
        const double c = 0.134 + 20.5 / (15.3 + m);
        double a = (f_m - x_l) / (f_m - x_l * p);
        const double lambda_l = a * (1.0 + 0.5 * a);
        a = (x_r - f_m) / (x_r * q);
        const double lambda_r = a * (1.0 + 0.5 * a);
        const double p2 = p1 * (1.0 + 2.0 * c);
        const double p3 = p2 + c / lambda_l;
        const double p4 = p3 + c / lambda_r;

        for (;;) {
            const double u = uniform() * p4;
            const double v = uniform();
            std::int64_t y;
            if (u <= p1) {  // triangular central region
                y = static_cast<std::int64_t>(std::floor(x_m - p1 * v + u));
                return y;
            } else if (u <= p2) {  // parallelogram
                const double x = x_l + (u - p1) / c;
                const double vv = v * c + 1.0 - std::abs(m - x + 0.5) / p1;
                if (vv > 1.0 || vv <= 0.0) continue;
                y = static_cast<std::int64_t>(std::floor(x));
                if (accept_btpe(n, p, m, y, vv, npq)) return y;
            } else if (u <= p3) {  // left exponential tail
                y = static_cast<std::int64_t>(std::floor(x_l + std::log(v) / lambda_l));
                if (y < 0) continue;
                const double vv = v * (u - p2) * lambda_l;
                if (accept_btpe(n, p, m, y, vv, npq)) return y;
            } else {  // right exponential tail
                y = static_cast<std::int64_t>(std::floor(x_r - std::log(v) / lambda_r));
                if (y > n) continue;
                const double vv = v * (u - p3) * lambda_r;
                if (accept_btpe(n, p, m, y, vv, npq)) return y;
            }
        }
    }

    bool accept_btpe(std::int64_t n, double p, std::int64_t m, std::int64_t y, double v,
                     double npq) {
        // Quadratic squeeze around the mode, then exact log pmf ratio.
        const double k = std::abs(static_cast<double>(y - m));
        const double log_v = std::log(v);
        if (k <= 0.5 * npq - 1.0) {
            const double rho = (k / npq) * ((k * (k / 3.0 + 0.625) + 1.0 / 6.0) / npq + 0.5);
            const double t = -k * k / (2.0 * npq);
            if (log_v < t - rho) return true;
            if (log_v > t + rho) return false;
        }
        const double nd = static_cast<double>(n);
        const double yd = static_cast<double>(y);
        const double md = static_cast<double>(m);
        const double log_ratio = std::lgamma(md + 1.0) + std::lgamma(nd - md + 1.0) -
                                 std::lgamma(yd + 1.0) - std::lgamma(nd - yd + 1.0) +
                                 (yd - md) * std::log(p / (1.0 - p));
        return log_v <= log_ratio;
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Binomial(n, p) for counts that may exceed integer range: exact below
/// gauss_threshold, Gaussian-approximate above (the count process is then
/// far beyond statistical resolution anyway).
inline double binomial_count(Rng& rng, double n, double p, double gauss_threshold = 1e9) {
    if (!(n >= 0.0)) throw std::invalid_argument("binomial_count: n must be >= 0");
    if (n <= gauss_threshold && n <= 9.007199254740992e15) {
        return static_cast<double>(rng.binomial(static_cast<std::int64_t>(n), p));
    }
    const double mean = n * p;
    const double sd = std::sqrt(n * p * (1.0 - p));
    double k = std::round(rng.gaussian(mean, sd));
    if (k < 0.0) k = 0.0;
    if (k > n) k = n;
    return k;
}

}  // namespace kpp
