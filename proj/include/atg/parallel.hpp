#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace atg {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n).  Work items must write to disjoint slots;
// items are striped across threads so the output is independent of the
// thread count.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn &&fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t t = std::min<std::size_t>(threads, n);
    std::vector<std::thread> workers;
    workers.reserve(t);
    for (std::size_t w = 0; w < t; ++w) {
        workers.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += t) fn(i);
        });
    }
    for (auto &th : workers) th.join();
}

}  // namespace atg
