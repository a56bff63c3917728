#pragma once

// Deterministic work splitting: fn(i) runs once for every index, each worker
// owning one contiguous range.  Callers store per-index results and reduce
// sequentially afterwards, so output never depends on the worker count.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace lorentz {

template <class Fn>
inline void parallel_for(std::uint64_t n, int workers, Fn&& fn) {
    if (workers < 1) workers = 1;
    const std::uint64_t w = std::min<std::uint64_t>(static_cast<std::uint64_t>(workers), n ? n : 1);
    if (w <= 1) {
        for (std::uint64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(w);
    for (std::uint64_t t = 0; t < w; ++t) {
        const std::uint64_t lo = n * t / w;
        const std::uint64_t hi = n * (t + 1) / w;
        pool.emplace_back([&, lo, hi, t] {
            try {
                for (std::uint64_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace lorentz
