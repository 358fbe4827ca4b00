#include "riskeval/rng.hpp"

#include <cmath>
#include <numbers>

namespace riskeval {

double SplitMix64::next_gaussian() {
  // Box-Muller, cosine branch; the sine partner is discarded so each
  // deviate consumes exactly two draws.
  const double u1 = next_unit();
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t SplitMix64::next_below(std::uint64_t bound) {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(next()) * bound) >> 64);
}

SplitMix64 derive_stream(std::uint64_t seed, std::uint64_t index) {
  // One scramble round separates the stream keys; the returned generator
  // then walks its own SplitMix64 sequence.
  SplitMix64 mixer(seed + (index + 1) * 0x9E3779B97F4A7C15ull);
  return SplitMix64(mixer.next());
}

}  // namespace riskeval
