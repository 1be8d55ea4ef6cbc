#ifndef CKPTSCOPE_PARALLEL_HPP
#define CKPTSCOPE_PARALLEL_HPP

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace ckptscope {

namespace detail {
inline int& thread_override() {
    static int n = 0;
    return n;
}
}  // namespace detail

/// Force a worker count (0 restores the environment/hardware default).
inline void set_thread_count(int n) { detail::thread_override() = n; }

/// Worker count: explicit override, else CKPTSCOPE_THREADS, else hardware concurrency.
inline int thread_count() {
    if (detail::thread_override() > 0) return detail::thread_override();
    if (const char* env = std::getenv("CKPTSCOPE_THREADS")) {
        try {
            int n = std::stoi(env);
            if (n > 0) return n;
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each task must write disjoint output.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (workers <= 1) {
        if (n > 0) fn(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace ckptscope

#endif  // CKPTSCOPE_PARALLEL_HPP
