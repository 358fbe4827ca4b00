#pragma once

#include <cstdint>

namespace riskeval {

// SplitMix64 (Steele/Lea/Vigna). Chosen as the project-wide generator because
// the sequence is a pure function of the 64-bit seed on every platform, which
// keeps simulated records and subset selection reproducible across runs and
// reimplementations.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal deviate, Box-Muller cosine branch.
  double next_gaussian();

  // Uniform integer in [0, bound), bound > 0. Widening-multiply reduction.
  std::uint64_t next_below(std::uint64_t bound);

 private:
  std::uint64_t state_;
};

// Stateless derivation of an independent stream for element `index` under
// `seed`; parallel and serial consumers see identical draws.
SplitMix64 derive_stream(std::uint64_t seed, std::uint64_t index);

}  // namespace riskeval
