#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace glua {

/// splitmix64 step; also used to expand seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// 64-bit FNV-1a, used to derive per-name seed streams.
std::uint64_t fnv1a(std::string_view text);

/// Mixes a base seed with a stream identifier into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

/// xoshiro256** seeded through splitmix64. The distributions below are
/// implemented here rather than via <random> so sequences are identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (no cached second value).
  double normal(double mean = 0.0, double stddev = 1.0);
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace glua
