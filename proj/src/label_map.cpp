#include "mtl/label_map.hpp"

#include <cmath>
#include <string>

#include "mtl/error.hpp"

namespace mtl {

LabelMap label_map_from_tensor(const Tensor& t, LabelKind kind) {
  validate_tensor(t);
  if (t.shape.size() != 2) {
    throw DimensionError("label map tensor must have shape [H, W], got rank " +
                         std::to_string(t.shape.size()));
  }
  LabelMap map;
  map.kind = kind;
  map.height = static_cast<std::size_t>(t.shape[0]);
  map.width = static_cast<std::size_t>(t.shape[1]);
  map.values = t.data;
  if (kind == LabelKind::categorical) {
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      double v = map.values[i];
      if (!(v >= 0) || v != std::floor(v)) {
        throw DomainError("categorical label at index " + std::to_string(i) +
                          " is not a non-negative integer");
      }
    }
  }
  return map;
}

}  // namespace mtl
