#pragma once

#include <cstdint>
#include <random>

namespace mtl {

// Seeded generator with hand-rolled uniform mappings. std::mt19937_64 output
// is pinned by the standard but std::uniform_*_distribution is not; mapping
// the raw stream ourselves keeps identical seeds byte-reproducible across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // exp(uniform(log lo, log hi)); lo, hi > 0.
  double log_uniform(double lo, double hi);

  // Uniform over {0, ..., n-1}; n >= 1.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mtl
