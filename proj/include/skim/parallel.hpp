#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace skim {

// Worker cap from SKIM_THREADS (0 or unset = hardware concurrency).
inline std::size_t worker_count() {
    static const std::size_t cached = [] {
        std::size_t n = 0;
        if (const char* env = std::getenv("SKIM_THREADS")) {
            char* end = nullptr;
            const long v = std::strtol(env, &end, 10);
            if (end != env && v > 0) n = static_cast<std::size_t>(v);
        }
        if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        return n;
    }();
    return cached;
}

// Runs fn(i) for i in [0, n). Each index must be independent; callers get
// determinism by writing to disjoint slots and reducing in a fixed order
// afterwards. The first exception thrown by any worker is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    threads.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([&, t, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace skim
