#pragma once

#include <cstdint>
#include <random>

namespace feel {

/// Deterministic pseudo-random source: std::mt19937_64 seeded with the
/// caller's seed. Bounded draws use rejection sampling and reals use the top
/// 53 bits, so sequences are identical across standard libraries (unlike
/// std::uniform_*_distribution).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    /// Uniform real in [0, 1).
    double uniform();

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mixes a base seed with a stream label so independent streams can be
/// derived from one user-facing --seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// 64-bit FNV-1a, used for deterministic stream labels.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace feel
