#pragma once

#include <cstdint>
#include <random>

#include "wmb/numcore/tensor.hpp"

namespace wmb {

/// Seeded generator with platform-independent draws. Uniforms come straight
/// from mt19937_64 bits and normals from Box-Muller, so sequences do not
/// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();

    Matrix normal_matrix(int rows, int cols);
    Matrix uniform_matrix(int rows, int cols, double lo, double hi);

    /// Independent child stream; derived deterministically from this
    /// stream's seed and `stream`, not from its current state.
    Rng derive(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// splitmix64 finalizer, used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace wmb
