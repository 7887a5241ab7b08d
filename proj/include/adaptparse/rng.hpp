#pragma once

#include <cstdint>
#include <vector>

namespace adaptparse {

/// xoshiro256** seeded through splitmix64. Self-contained so that seeded
/// runs produce identical streams on every platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);

    /// Uniform integer in [0, n); n > 0.
    std::uint64_t next_below(std::uint64_t n);

    /// Standard normal via Box-Muller (one draw per call, cached pair).
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::int64_t> permutation(std::int64_t n);

private:
    std::uint64_t state_[4];
    bool has_cached_ = false;
    double cached_ = 0.0;
};

/// Deterministic stream derivation: mixes a label into a seed so that
/// independent consumers (networks, domains, samples) get decoupled streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, const char* label);

}  // namespace adaptparse
