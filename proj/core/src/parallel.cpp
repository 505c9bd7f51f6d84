#include "qsid/parallel.hpp"

#include <cstdlib>
#include <string>

namespace qsid {
namespace {

std::atomic<std::size_t> g_override{0};

std::size_t from_environment() {
    if (const char* env = std::getenv("QSID_THREADS"); env != nullptr && *env != '\0') {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

}  // namespace

std::size_t worker_threads() {
    const std::size_t forced = g_override.load(std::memory_order_relaxed);
    if (forced != 0) return forced;
    static const std::size_t env = from_environment();
    return env;
}

void set_worker_threads(std::size_t threads) { g_override.store(threads, std::memory_order_relaxed); }

namespace detail {
bool& in_parallel_region() {
    thread_local bool inside = false;
    return inside;
}
}  // namespace detail

}  // namespace qsid
