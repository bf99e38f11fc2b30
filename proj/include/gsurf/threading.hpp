#pragma once

// Deterministic data parallelism. Work items are indexed; each worker owns a
// fixed, thread-count-independent subset of indices and writes only to its
// own outputs, so results never depend on how many threads actually run.
// Reductions are performed serially afterwards, in index order.

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

#include "gsurf/core.hpp"

namespace gsurf {

inline int& thread_count_ref() {
    static int n = static_cast<int>(std::thread::hardware_concurrency());
    return n;
}

inline void set_thread_count(int n) { thread_count_ref() = n < 1 ? 1 : n; }
inline int thread_count() { return thread_count_ref() < 1 ? 1 : thread_count_ref(); }

// Runs fn(i) for i in [0, n). Work is interleaved (worker w takes indices
// w, w + W, w + 2W, ...) purely as a static schedule; fn must not write
// shared state outside slot i.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
    if (n <= 0) return;
    const int workers = std::min(thread_count(), n);
    if (workers <= 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    std::atomic<bool> failed{false};
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += workers) fn(i);
            } catch (...) {
                failed.store(true);
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed.load()) throw Error("parallel_failure", "worker task threw an exception");
}

}  // namespace gsurf
