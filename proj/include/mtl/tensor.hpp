#pragma once

#include <cstdint>
#include <vector>

namespace mtl {

// On-disk element width. Elements are held as doubles in memory either way;
// an f32 tensor is one whose values survive a round trip through float.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

// Dense row-major numeric array, the container behind every file exchange.
struct Tensor {
  DType dtype = DType::f64;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::uint64_t> shape, DType dtype = DType::f64);
  static Tensor from_values(std::vector<std::uint64_t> shape, std::vector<double> values,
                            DType dtype = DType::f64);

  std::uint64_t numel() const;
  bool all_finite() const;
};

bool same_shape(const Tensor& a, const Tensor& b);

// Throws DimensionError unless product(shape) == data length.
void validate_tensor(const Tensor& t);

}  // namespace mtl
