#pragma once

#include <array>
#include <cstdint>

namespace ipgo {

// xoshiro256** seeded through splitmix64. The generator and the derived
// distributions are defined here rather than taken from <random> so that a
// seed maps to the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller; caches the second variate.
  double gaussian();

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stateless mixing used to derive independent sub-seeds (e.g. per epoch).
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ipgo
