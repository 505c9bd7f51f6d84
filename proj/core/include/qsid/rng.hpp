#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace qsid {

/// Purpose tags that separate the random streams of different stages.
enum class Stream : std::uint64_t {
    copula_fit = 1,
    copula_sample = 2,
    synthetic_replicate = 3,
    calibration_subsample = 4,
    simulation = 5,
};

using Engine = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed of the stream addressed by `path` under `master`. Streams with
/// different paths are statistically independent and never depend on which
/// thread consumes them.
constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                    std::initializer_list<std::uint64_t> path = {}) {
    std::uint64_t h = mix64(master ^ 0x51D5EEDULL);
    h = mix64(h ^ static_cast<std::uint64_t>(stream));
    for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632BE59BD9B4E019ULL));
    return h;
}

inline Engine make_engine(std::uint64_t master, Stream stream,
                          std::initializer_list<std::uint64_t> path = {}) {
    return Engine(derive_seed(master, stream, path));
}

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Engine& engine) {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, bound), unbiased (bitmask rejection).
inline std::uint64_t uniform_index(Engine& engine, std::uint64_t bound) {
    if (bound <= 1) return 0;
    std::uint64_t mask = bound - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
        const std::uint64_t x = engine() & mask;
        if (x < bound) return x;
    }
}

}  // namespace qsid
