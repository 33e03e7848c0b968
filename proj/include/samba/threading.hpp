#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace samba {

// SAMBA_THREADS env var, else hardware_concurrency, else 1.
inline unsigned thread_count() {
    static const unsigned n = [] {
        if (const char* env = std::getenv("SAMBA_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<unsigned>(v);
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc ? hc : 1u;
    }();
    return n;
}

// Static contiguous partition of [0, n); each worker owns a disjoint slice of
// the output, so results are identical for any thread count. Callers must not
// write shared state inside `body`.
template <typename F>
void parallel_for(std::size_t n, F&& body) {
    const unsigned workers = thread_count();
    if (workers <= 1 || n < 2048) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = static_cast<std::size_t>(w) * chunk;
        if (lo >= n) break;
        const std::size_t hi = std::min(n, lo + chunk);
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace samba
