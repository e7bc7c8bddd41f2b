#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>

#include "mtl/tensor.hpp"

namespace mtl {

struct TensorIoOptions {
  // Non-finite elements are refused on both read and write unless set;
  // corrupt dumps should fail fast, not propagate NaNs.
  bool allow_nonfinite = false;
};

// Binary tensor layout, all multi-byte fields little-endian:
//
//   magic    "MTKT"   4 bytes
//   version  u32      currently 1
//   dtype    u8       0 = f32, 1 = f64
//   ndim     u8
//   dims     ndim x u64
//   data     numel x element, IEEE-754
//
// The encoding is byte-stable: the same tensor always serializes to the
// same bytes.
std::size_t write_tensor(const Tensor& t, std::ostream& sink, const TensorIoOptions& opt = {});
Tensor read_tensor(std::istream& source, const TensorIoOptions& opt = {});

std::size_t write_tensor_file(const Tensor& t, const std::string& path,
                              const TensorIoOptions& opt = {});
Tensor read_tensor_file(const std::string& path, const TensorIoOptions& opt = {});

}  // namespace mtl
