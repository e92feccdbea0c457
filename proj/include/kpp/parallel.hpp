#pragma once

// Worker-pool fan-out over replica indices. Results are written into
// index-addressed slots, so the merge is deterministic no matter how the
// chunks are scheduled.

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace kpp {

template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned max_threads = 0) {
    unsigned hw = max_threads ? max_threads : std::thread::hardware_concurrency();
    if (hw < 1) hw = 1;
    const unsigned workers = static_cast<unsigned>(
        std::min<std::size_t>(hw, n > 0 ? n : 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Kahan-compensated sum; associative enough to make indexed reductions
/// reproducible.
class CompensatedSum {
  public:
    void add(double v) {
        const double y = v - c_;
        const double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    double value() const { return s_; }

  private:
    double s_ = 0.0;
    double c_ = 0.0;
};

}  // namespace kpp
