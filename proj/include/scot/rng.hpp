#pragma once

#include <cstdint>
#include <initializer_list>

namespace scot {

/// PCG32 (XSH-RR, 64-bit state). Single owner; not thread-safe.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0x14057b7ef767814fULL) noexcept;

  /// Seeded from a base seed and a tuple of stream coordinates, e.g.
  /// (seed, epoch, batch, item). Distinct tuples give independent streams.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) noexcept;

  std::uint32_t next_u32() noexcept;
  /// Uniform in [0, bound) without modulo bias. bound must be > 0.
  std::uint32_t bounded(std::uint32_t bound) noexcept;
  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() noexcept;
  /// Uniform in [lo, hi). Throws BadRange unless lo < hi.
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller. Uses two draws per call.
  double normal() noexcept;

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace scot
