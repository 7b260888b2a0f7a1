#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace evt {

// All stochastic code draws through the helpers below rather than the
// standard-library distributions, whose output sequences are
// implementation-defined.  The mt19937_64 engine itself is fully specified,
// so results are reproducible across platforms and compilers.
using Rng = std::mt19937_64;

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent child seed for work unit `stream` under a global seed.
// Used to make parallel and sequential execution produce identical output.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

// Uniform on (0,1) with 53-bit resolution; never returns 0 or 1 exactly.
inline double runif(Rng& g) {
    const double u = static_cast<double>(g() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
}

inline double runif(Rng& g, double lo, double hi) {
    return lo + (hi - lo) * runif(g);
}

// Standard normal via Box-Muller.  One variate per call; the cosine twin is
// discarded so the engine state never depends on caller history.
inline double rnorm(Rng& g) {
    constexpr double two_pi = 6.28318530717958647692528676655900577;
    const double u1 = runif(g);
    const double u2 = runif(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

// Uniform integer on [0, n-1] by rejection, unbiased.
inline std::uint64_t rint(Rng& g, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = g();
    } while (x >= limit);
    return x % n;
}

}  // namespace evt
