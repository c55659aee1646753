#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace advpatch {

using Rng = std::mt19937_64;

// std::uniform_real_distribution is implementation-defined; these helpers keep
// sampled values identical across standard libraries.

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi]; returns lo exactly when lo == hi.
inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n) by rejection (n > 0).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Mixes a base seed with a path of indices into an independent stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

}  // namespace advpatch
