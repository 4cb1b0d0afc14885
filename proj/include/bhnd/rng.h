#pragma once

#include <cstdint>
#include <random>

namespace bhnd {

/// Seeded random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Its 64-bit seed is splitmix64(seed ^ splitmix64(stream ^
/// splitmix64(counter))), so independent streams (batch order, dropout,
/// latent draws, ...) can be re-derived from (seed, stream, counter) without
/// replaying earlier draws. Distributions are implemented here rather than
/// taken from <random> because the standard does not pin their algorithms:
///   uniform()  = (next() >> 11) * 2^-53                 in [0, 1)
///   normal()   = Box-Muller on (1 - uniform(), uniform()), both outputs used
///   below(n)   = modulo with rejection of the biased tail in [0, n)
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0);

  std::uint64_t next();
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Stream identifiers used by the training loops.
namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t batch_order = 2;
inline constexpr std::uint64_t dropout = 3;
inline constexpr std::uint64_t latent = 4;
inline constexpr std::uint64_t labeled_mask = 5;
inline constexpr std::uint64_t sample_grid = 6;
}  // namespace streams

}  // namespace bhnd
