#pragma once

#include <cstdint>
#include <random>

namespace gassip {

/// Seedable, splittable generator.
///
/// The engine is std::mt19937_64 (fully specified by the standard) seeded
/// through SplitMix64. Distributions are implemented here rather than with
/// the <random> distribution classes, whose algorithms are
/// implementation-defined, so sequences match across standard libraries:
///   uniform()  = top 53 bits of one engine output scaled by 2^-53
///   normal()   = Box-Muller, cosine branch, two uniforms per draw
///   below(n)   = rejection sampling on 64-bit outputs
///   split(k)   = new generator seeded with splitmix64(seed ^ splitmix64(k))
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace gassip
