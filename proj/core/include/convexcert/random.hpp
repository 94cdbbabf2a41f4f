#pragma once

#include <cstdint>
#include <string_view>

namespace convexcert {

/// xoshiro256** seeded through splitmix64. All draws are defined bit-for-bit
/// here so that runs replay identically across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent sub-stream derived from a master seed and a stream name
  /// ("init", "shuffle", "sampler", ...).
  static Rng stream(std::uint64_t master_seed, std::string_view name);

  std::uint64_t next();
  double uniform();                     // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();
  std::uint64_t below(std::uint64_t n);  // [0, n)

 private:
  std::uint64_t s_[4];
};

/// FNV-1a, used for stream names and config hashes.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace convexcert
