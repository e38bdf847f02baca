// Deterministic random helpers. All randomness in the project flows through
// these so that a seed pins every artifact bit-for-bit: std::mt19937_64 output
// is fully specified by the standard, and the distribution transforms below
// avoid the implementation-defined std::*_distribution classes.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace goalcap {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent substream: same (seed, tag) always yields the same generator.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t tag = 0) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ tag));
}

// Uniform double in [0, 1), 53 random bits.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n), unbiased via rejection.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

// Box-Muller from our own uniforms; one value per call.
inline double normal01(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[uniform_index(rng, i)]);
    }
}

}  // namespace goalcap
