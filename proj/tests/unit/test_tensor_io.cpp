#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mtl/error.hpp"
#include "mtl/rng.hpp"
#include "mtl/tensor.hpp"
#include "mtl/tensor_io.hpp"

using mtl::DType;
using mtl::Tensor;

namespace {

std::string dump(const Tensor& t, const mtl::TensorIoOptions& opt = {}) {
  std::ostringstream os(std::ios::binary);
  mtl::write_tensor(t, os, opt);
  return os.str();
}

Tensor load(const std::string& bytes, const mtl::TensorIoOptions& opt = {}) {
  std::istringstream is(bytes, std::ios::binary);
  return mtl::read_tensor(is, opt);
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.data.size() == 6);
  CHECK(t.all_finite());

  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0, 2.0, 3.0}), mtl::DimensionError);

  Tensor scalar = Tensor::zeros({});
  CHECK(scalar.numel() == 1);
}

TEST_CASE("round trip preserves bytes and values") {
  mtl::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint64_t> shape;
    std::uint64_t count = 1;
    auto rank = rng.below(4);
    for (std::uint64_t d = 0; d < rank; ++d) {
      std::uint64_t dim = rng.below(4) + 1;
      shape.push_back(dim);
      count *= dim;
    }
    std::vector<double> values;
    for (std::uint64_t i = 0; i < count; ++i) values.push_back(rng.uniform(-10.0, 10.0));
    Tensor t = Tensor::from_values(shape, values);

    std::string bytes = dump(t);
    Tensor back = load(bytes);
    CHECK(back.shape == t.shape);
    CHECK(back.dtype == t.dtype);
    CHECK(back.data == t.data);
    // Byte stability: writing the reread tensor reproduces the dump.
    CHECK(dump(back) == bytes);
  }
}

TEST_CASE("f32 round trip goes through float precision") {
  Tensor t = Tensor::from_values({3}, {1.0, 0.1, -2.5}, DType::f32);
  Tensor back = load(dump(t));
  CHECK(back.dtype == DType::f32);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.data[i] == static_cast<double>(static_cast<float>(t.data[i])));
  }
}

TEST_CASE("scalar f32 layout is pinned") {
  Tensor t = Tensor::from_values({}, {1.0}, DType::f32);
  std::string bytes = dump(t);
  // magic + version + dtype + ndim + payload
  REQUIRE(bytes.size() == 4 + 4 + 1 + 1 + 4);
  CHECK(bytes.substr(0, 4) == "MTKT");
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  CHECK(u[4] == 1);  // version LE
  CHECK(u[5] == 0);
  CHECK(u[6] == 0);
  CHECK(u[7] == 0);
  CHECK(u[8] == 0);  // dtype f32
  CHECK(u[9] == 0);  // ndim
  CHECK(u[10] == 0x00);  // 1.0f little-endian
  CHECK(u[11] == 0x00);
  CHECK(u[12] == 0x80);
  CHECK(u[13] == 0x3F);
}

TEST_CASE("2x2 f32 file is 42 bytes") {
  Tensor t = Tensor::from_values({2, 2}, {1, 2, 3, 4}, DType::f32);
  CHECK(dump(t).size() == 42);
}

TEST_CASE("read failures name the offending field") {
  Tensor t = Tensor::from_values({2}, {1.0, 2.0});
  std::string good = dump(t);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(load(bad_magic), doctest::Contains("bad magic"), mtl::FormatError);

  std::string bad_version = good;
  bad_version[4] = 9;
  CHECK_THROWS_WITH_AS(load(bad_version), doctest::Contains("unsupported version"),
                       mtl::FormatError);

  std::string bad_dtype = good;
  bad_dtype[8] = 7;
  CHECK_THROWS_WITH_AS(load(bad_dtype), doctest::Contains("unsupported dtype"), mtl::FormatError);

  CHECK_THROWS_WITH_AS(load(good.substr(0, 2)), doctest::Contains("magic"), mtl::FormatError);
  CHECK_THROWS_WITH_AS(load(good.substr(0, 12)), doctest::Contains("truncated"), mtl::FormatError);
  CHECK_THROWS_WITH_AS(load(good.substr(0, good.size() - 3)), doctest::Contains("truncated"),
                       mtl::FormatError);
}

TEST_CASE("non-finite elements are rejected both ways") {
  Tensor t = Tensor::from_values({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(dump(t), mtl::DomainError);

  mtl::TensorIoOptions allow;
  allow.allow_nonfinite = true;
  std::string bytes = dump(t, allow);

  CHECK_THROWS_WITH_AS(load(bytes), doctest::Contains("non-finite"), mtl::DomainError);
  Tensor back = load(bytes, allow);
  CHECK(std::isnan(back.data[1]));
}

TEST_CASE("file variants report unopenable paths") {
  CHECK_THROWS_AS(mtl::read_tensor_file("/nonexistent/dir/x.mtkt"), mtl::IoError);
  Tensor t = Tensor::from_values({1}, {4.0});
  CHECK_THROWS_AS(mtl::write_tensor_file(t, "/nonexistent/dir/x.mtkt"), mtl::IoError);
}
