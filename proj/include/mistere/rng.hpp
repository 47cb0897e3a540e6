#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace mistere {

/// xoshiro256** (Blackman & Vigna), state seeded through SplitMix64.
///
/// All sampling helpers are implemented here rather than through
/// <random> distributions so that streams are bit-identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via the Marsaglia polar method.
  double normal();
  /// Index drawn from an (unnormalized, nonnegative) weight vector.
  std::size_t categorical(std::span<const double> weights);

  /// Independent child stream; does not disturb this generator's sequence
  /// beyond one draw.
  Rng split() { return Rng(next_u64()); }

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mistere
