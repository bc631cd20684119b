#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ortk {

inline unsigned resolve_threads(unsigned requested) {
    if (requested != 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/* Run fn(i) for i in [begin, end) across `threads` workers using a static
 * contiguous partition.  The partition depends only on (begin, end, threads)
 * and every worker writes disjoint output slots, so results are bitwise
 * independent of scheduling; with output written per index they are bitwise
 * independent of the thread count as well. */
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, unsigned threads, Fn&& fn) {
    const std::size_t count = end > begin ? end - begin : 0;
    if (count == 0) return;
    threads = resolve_threads(threads);
    if (threads > count) threads = static_cast<unsigned>(count);
    if (threads <= 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = count / threads;
    const std::size_t extra = count % threads;
    std::size_t lo = begin;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t hi = lo + chunk + (t < extra ? 1 : 0);
        pool.emplace_back([&fn, &errors, t, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
        lo = hi;
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace ortk
