#pragma once

#include <array>
#include <cstdint>

namespace xbt {

/// One splitmix64 step from state `x`: a bijective 64-bit mixer.
std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// xoshiro256** seeded through splitmix64. Every derived draw (uniform
/// integers, doubles, normals) is computed here rather than through <random>
/// distributions, so a seed yields the same sequence on every platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, bound); bound must be positive. Unbiased (Lemire).
  std::uint64_t below(std::uint64_t bound) noexcept;
  /// Standard normal via Box-Muller; draws come in cached pairs.
  double normal() noexcept;

 private:
  std::array<std::uint64_t, 4> s_{};
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace xbt
