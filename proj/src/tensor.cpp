#include "mtl/tensor.hpp"

#include <cmath>

#include "mtl/error.hpp"

namespace mtl {

Tensor Tensor::zeros(std::vector<std::uint64_t> shape, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = std::move(shape);
  t.data.assign(t.numel(), 0.0);
  return t;
}

Tensor Tensor::from_values(std::vector<std::uint64_t> shape, std::vector<double> values,
                           DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = std::move(shape);
  t.data = std::move(values);
  validate_tensor(t);
  return t;
}

std::uint64_t Tensor::numel() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) n *= d;
  return n;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void validate_tensor(const Tensor& t) {
  if (t.numel() != t.data.size()) {
    throw DimensionError("tensor data length " + std::to_string(t.data.size()) +
                         " does not match shape product " + std::to_string(t.numel()));
  }
}

}  // namespace mtl
