#pragma once

#include <cstddef>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

enum class LabelKind { categorical, continuous };

// Dense per-pixel labels: class ids (categorical) or real values such as
// depth or disparity (continuous).
struct LabelMap {
  LabelKind kind = LabelKind::categorical;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

// Interprets a [H, W] tensor as a label map. Categorical maps must hold
// non-negative integers.
LabelMap label_map_from_tensor(const Tensor& t, LabelKind kind);

}  // namespace mtl
