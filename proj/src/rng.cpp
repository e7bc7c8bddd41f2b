#include "mtl/rng.hpp"

#include <cmath>

#include "mtl/error.hpp"

namespace mtl {

double Rng::log_uniform(double lo, double hi) {
  if (!(lo > 0) || !(hi >= lo)) {
    throw DomainError("log_uniform requires 0 < lo <= hi");
  }
  return std::exp(uniform(std::log(lo), std::log(hi)));
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw DomainError("below(0)");
  // Reject draws below 2^64 mod n; the remaining range holds whole cycles.
  std::uint64_t r = (-n) % n;
  std::uint64_t x = gen_();
  while (x < r) x = gen_();
  return x % n;
}

}  // namespace mtl
