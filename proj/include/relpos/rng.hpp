#pragma once

#include <cstdint>

namespace relpos {

/// Counter-based generator (SplitMix64). Every draw is a pure function of
/// (seed, draw index), so sequences are identical on every platform; the
/// standard <random> distributions are implementation-defined and are not used.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
    std::uint64_t below(std::uint64_t n);
    /// Uniform integer in [lo, hi].
    std::int64_t range(std::int64_t lo, std::int64_t hi);
    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent stream derived from this seed and a salt; does not advance this generator.
    SeededRng fork(std::uint64_t salt) const;

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace relpos
