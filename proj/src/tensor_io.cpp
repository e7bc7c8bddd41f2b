#include "mtl/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "mtl/error.hpp"

namespace mtl {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'K', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& sink, const char* bytes, std::size_t n, std::size_t& offset) {
  sink.write(bytes, static_cast<std::streamsize>(n));
  if (!sink) {
    throw IoError("write failed at byte offset " + std::to_string(offset));
  }
  offset += n;
}

void put_u32(std::ostream& sink, std::uint32_t v, std::size_t& offset) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  put_bytes(sink, b, 4, offset);
}

void put_u64(std::ostream& sink, std::uint64_t v, std::size_t& offset) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  put_bytes(sink, b, 8, offset);
}

void get_bytes(std::istream& source, char* bytes, std::size_t n, const char* field) {
  source.read(bytes, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(source.gcount()) != n) {
    throw FormatError(std::string("truncated ") + field);
  }
}

std::uint32_t get_u32(std::istream& source, const char* field) {
  char b[4];
  get_bytes(source, b, 4, field);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& source, const char* field) {
  char b[8];
  get_bytes(source, b, 8, field);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

}  // namespace

std::size_t write_tensor(const Tensor& t, std::ostream& sink, const TensorIoOptions& opt) {
  validate_tensor(t);
  if (!opt.allow_nonfinite && !t.all_finite()) {
    throw DomainError("tensor holds non-finite elements; pass allow_nonfinite to keep them");
  }
  if (t.shape.size() > 255) {
    throw DimensionError("tensor rank exceeds the format's u8 ndim field");
  }
  std::size_t offset = 0;
  put_bytes(sink, kMagic, 4, offset);
  put_u32(sink, kVersion, offset);
  char tag[2] = {static_cast<char>(t.dtype), static_cast<char>(t.shape.size())};
  put_bytes(sink, tag, 2, offset);
  for (std::uint64_t d : t.shape) put_u64(sink, d, offset);
  if (t.dtype == DType::f32) {
    for (double v : t.data) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      put_u32(sink, bits, offset);
    }
  } else {
    for (double v : t.data) {
      put_u64(sink, std::bit_cast<std::uint64_t>(v), offset);
    }
  }
  sink.flush();
  if (!sink) {
    throw IoError("write failed at byte offset " + std::to_string(offset));
  }
  return offset;
}

Tensor read_tensor(std::istream& source, const TensorIoOptions& opt) {
  char magic[4];
  get_bytes(source, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad magic");
  }
  std::uint32_t version = get_u32(source, "version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version));
  }
  char tag[2];
  get_bytes(source, tag, 2, "dtype/ndim");
  auto dtype_raw = static_cast<unsigned char>(tag[0]);
  if (dtype_raw > 1) {
    throw FormatError("unsupported dtype " + std::to_string(dtype_raw));
  }
  Tensor t;
  t.dtype = static_cast<DType>(dtype_raw);
  auto ndim = static_cast<std::size_t>(static_cast<unsigned char>(tag[1]));
  t.shape.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i) t.shape[i] = get_u64(source, "dims");
  std::uint64_t n = t.numel();
  t.data.resize(n);
  if (t.dtype == DType::f32) {
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint32_t bits = get_u32(source, "data");
      t.data[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  } else {
    for (std::uint64_t i = 0; i < n; ++i) {
      t.data[i] = std::bit_cast<double>(get_u64(source, "data"));
    }
  }
  if (!opt.allow_nonfinite) {
    for (std::uint64_t i = 0; i < n; ++i) {
      if (!std::isfinite(t.data[i])) {
        throw DomainError("non-finite element at index " + std::to_string(i) +
                          "; pass allow_nonfinite to keep it");
      }
    }
  }
  return t;
}

std::size_t write_tensor_file(const Tensor& t, const std::string& path,
                              const TensorIoOptions& opt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  return write_tensor(t, out, opt);
}

Tensor read_tensor_file(const std::string& path, const TensorIoOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return read_tensor(in, opt);
}

}  // namespace mtl
