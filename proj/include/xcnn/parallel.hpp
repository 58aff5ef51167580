#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace xcnn {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
    static std::atomic<std::size_t> value{0};
    return value;
}
} // namespace detail

/// Worker count used by the kernels. Zero means "not set": fall back to
/// XCNN_THREADS, then to the hardware concurrency.
inline std::size_t num_threads() {
    if (auto n = detail::thread_setting().load(); n > 0) return n;
    if (const char* env = std::getenv("XCNN_THREADS")) {
        try {
            auto v = std::stoul(env);
            if (v > 0) return v;
        } catch (...) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

inline void set_num_threads(std::size_t n) { detail::thread_setting().store(n); }

/// Runs body(i) for every i in [0, count). Each index must write disjoint
/// output; callers that reduce do so afterwards in index order, so results
/// never depend on the worker count.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
    const std::size_t workers = std::min(num_threads(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = t; i < count; i += workers) body(i);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace xcnn
