#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace mspotts {

// Global worker count for parallel_for. 0 means hardware_concurrency.
inline int& thread_count() {
    static int count = 0;
    return count;
}

inline void set_thread_count(int n) { thread_count() = n; }

// Runs fn(i) for i in [0, n). Work items must write to disjoint locations;
// the partition is by index only, so results do not depend on the number
// of workers.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    int workers = thread_count() > 0
                      ? thread_count()
                      : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(workers, 1);
    if (workers == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        std::size_t lo = w * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace mspotts
