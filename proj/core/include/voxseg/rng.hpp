#pragma once

#include <array>
#include <cstdint>

namespace voxseg {

// Deterministic generator with explicit stream splitting. xoshiro256++ core
// seeded through splitmix64, so any 64-bit seed gives a well-mixed state.
// All distributions are implemented here rather than via <random> so that
// sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next();

  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n), unbiased via rejection. Requires n >= 1.
  int64_t uniform_int(int64_t n);
  // Standard normal via Box-Muller. Two uniform draws per sample.
  double normal();

  // Independent generator derived from (seed, stream). Does not disturb
  // this generator's state.
  Rng child(uint64_t stream) const;

  uint64_t seed() const { return seed_; }

 private:
  std::array<uint64_t, 4> s_{};
  uint64_t seed_ = 0;
};

}  // namespace voxseg
