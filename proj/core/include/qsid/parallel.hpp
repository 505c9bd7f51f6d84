#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace qsid {

/// Worker threads used by parallel stages. Honors QSID_THREADS, else the
/// hardware concurrency. Results never depend on this value.
std::size_t worker_threads();

/// Overrides QSID_THREADS for the current process; 0 restores the default.
void set_worker_threads(std::size_t threads);

namespace detail {
bool& in_parallel_region();
}

/// Runs `body(k)` for k in [0, count). Tasks must write disjoint outputs.
/// Nested calls run serially. If tasks throw, the exception from the lowest
/// task index is rethrown so failures are reproducible.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
    const std::size_t threads = std::min(worker_threads(), count);
    if (threads <= 1 || detail::in_parallel_region()) {
        for (std::size_t k = 0; k < count; ++k) body(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::atomic<bool> failed{false};
    auto worker = [&] {
        detail::in_parallel_region() = true;
        for (;;) {
            const std::size_t k = next.fetch_add(1, std::memory_order_relaxed);
            if (k >= count) break;
            try {
                body(k);
            } catch (...) {
                errors[k] = std::current_exception();
                failed.store(true, std::memory_order_relaxed);
            }
        }
        detail::in_parallel_region() = false;
    };
    {
        std::vector<std::jthread> pool;
        pool.reserve(threads - 1);
        for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
        worker();
    }
    if (failed.load()) {
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
}

}  // namespace qsid
