#pragma once

#include <cmath>
#include <cstdint>
#include <random>

// Seeded random number generation for the photon pipeline.
//
// Engine: std::mt19937_64 (the 64-bit Mersenne Twister, fully specified by
// the C++ standard, so sequences are identical across platforms). We do NOT
// use the standard <random> distributions -- their output is implementation
// defined -- and instead derive variates from raw engine words with fixed
// arithmetic, so identical seeds give bit-identical event streams everywhere.

namespace penning {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Uniform in [0, 1): top 53 bits of one engine word.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1]: never returns 0, safe for log().
    double uniform_pos() {
        return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;
    }

    // Exponential with given rate (mean 1/rate).
    double exponential(double rate) {
        return -std::log(uniform_pos()) / rate;
    }

    std::uint64_t raw() { return eng_(); }

  private:
    std::mt19937_64 eng_;
};

// Seed for the k-th independent stream derived from a base seed: splitmix64 of
// base + (k+1)*golden, the standard per-stream decorrelation recipe.
// Used by scans so each grid point is reproducible independently of the
// execution order (worker threads, resumed runs).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + (stream + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace penning
