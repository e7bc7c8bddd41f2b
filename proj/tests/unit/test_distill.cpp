#include <doctest.h>

#include <cmath>
#include <vector>

#include "mtl/distill.hpp"
#include "mtl/error.hpp"
#include "mtl/rng.hpp"
#include "support/oracles.hpp"

using namespace mtl::distill;

namespace {

FeatureMap random_map(std::size_t c, std::size_t h, std::size_t w, mtl::Rng& rng) {
  FeatureMap f = FeatureMap::zeros(c, h, w);
  for (double& v : f.data) v = rng.uniform(-2.0, 2.0);
  return f;
}

void randomize_conv(ConvMap& conv, mtl::Rng& rng, double span = 1.0) {
  for (double& v : conv.weight) v = rng.uniform(-span, span);
  for (double& v : conv.bias) v = rng.uniform(-span, span);
}

void check_maps_close(const FeatureMap& got, const FeatureMap& want, double tol) {
  REQUIRE(got.channels == want.channels);
  REQUIRE(got.height == want.height);
  REQUIRE(got.width == want.width);
  for (std::size_t i = 0; i < got.data.size(); ++i) {
    CHECK(std::abs(got.data[i] - want.data[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("feature map plumbing") {
  CHECK_THROWS_AS(FeatureMap::zeros(0, 2, 2), mtl::DimensionError);
  CHECK_THROWS_AS(FeatureMap::zeros(1, 2, 0), mtl::DimensionError);

  mtl::Tensor t = mtl::Tensor::from_values({2, 1, 2}, {1, 2, 3, 4});
  FeatureMap f = FeatureMap::from_tensor(t);
  CHECK(f.at(0, 0, 1) == 2.0);
  CHECK(f.at(1, 0, 0) == 3.0);
  CHECK(f.to_tensor().data == t.data);
  CHECK(f.to_tensor().shape == t.shape);
  CHECK_THROWS_AS(FeatureMap::from_tensor(mtl::Tensor::from_values({4}, {1, 2, 3, 4})),
                  mtl::DimensionError);
}

TEST_CASE("pointwise convolutions") {
  mtl::Rng rng(54);
  FeatureMap f = random_map(2, 3, 3, rng);
  FeatureMap same = apply_conv(ConvMap::identity(2), f);
  CHECK(same.data == f.data);

  ConvMap biased = ConvMap::zero(2, 2, 1);
  biased.bias = {1.5, -2.0};
  FeatureMap flat = apply_conv(biased, f);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(flat.data[i] == 1.5);
    CHECK(flat.data[9 + i] == -2.0);
  }

  // 2 -> 1 mixing: out = 2a - b.
  ConvMap mix = ConvMap::zero(1, 2, 1);
  mix.weight = {2.0, -1.0};
  FeatureMap mixed = apply_conv(mix, f);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(mixed.data[i] == 2.0 * f.data[i] - f.data[9 + i]);
  }
}

TEST_CASE("padded convolution fixture") {
  FeatureMap f = FeatureMap::zeros(1, 2, 2);
  f.data = {1, 2, 3, 4};
  ConvMap box = ConvMap::zero(1, 1, 3);
  box.weight.assign(9, 1.0);
  FeatureMap out = apply_conv(box, f);
  // Every 3x3 window catches all four pixels; the padding contributes zeros.
  for (double v : out.data) CHECK(v == 10.0);
}

TEST_CASE("convolution matches the zero-padded reference") {
  mtl::Rng rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    std::size_t ci = 1 + rng.below(3);
    std::size_t co = 1 + rng.below(3);
    std::size_t h = 1 + rng.below(4);
    std::size_t w = 1 + rng.below(4);
    std::size_t k = rng.below(2) == 0 ? 1 : 3;
    FeatureMap f = random_map(ci, h, w, rng);
    ConvMap conv = ConvMap::zero(co, ci, k);
    randomize_conv(conv, rng);
    check_maps_close(apply_conv(conv, f), oracle::conv_reference(conv, f), 1e-12);
  }
}

TEST_CASE("convolution input checks") {
  FeatureMap f = FeatureMap::zeros(2, 2, 2);
  CHECK_THROWS_AS(ConvMap::zero(1, 1, 2), mtl::DimensionError);
  CHECK_THROWS_AS(ConvMap::zero(0, 1, 1), mtl::DimensionError);
  CHECK_THROWS_AS(apply_conv(ConvMap::zero(1, 3, 1), f), mtl::DimensionError);
  ConvMap short_weights = ConvMap::zero(1, 2, 1);
  short_weights.weight.pop_back();
  CHECK_THROWS_AS(apply_conv(short_weights, f), mtl::DimensionError);
  ConvMap bad_bias = ConvMap::zero(1, 2, 1);
  bad_bias.bias.clear();
  CHECK_THROWS_AS(apply_conv(bad_bias, f), mtl::DimensionError);
}

TEST_CASE("zero attention mixes half of the other task in") {
  mtl::Rng rng(56);
  FeatureMap f1 = random_map(1, 2, 3, rng);
  FeatureMap f2 = random_map(1, 2, 3, rng);
  TaskFeatureStack out = padnet_distill({f1, f2}, AttentionParams::zeros(2, 1));
  REQUIRE(out.size() == 2);
  for (std::size_t i = 0; i < f1.data.size(); ++i) {
    CHECK(out[0].data[i] == f1.data[i] + 0.5 * f2.data[i]);
    CHECK(out[1].data[i] == f2.data[i] + 0.5 * f1.data[i]);
  }
}

TEST_CASE("zero transforms silence all cross-task messages") {
  mtl::Rng rng(57);
  TaskFeatureStack stack{random_map(2, 3, 2, rng), random_map(2, 3, 2, rng),
                         random_map(2, 3, 2, rng)};
  AttentionParams params = AttentionParams::zeros(3, 2, 1, true);
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t l = 0; l < 3; ++l) {
      if (k != l) randomize_conv(params.at(k, l).mask, rng);
    }
  }
  TaskFeatureStack out = padnet_distill(stack, params);
  for (std::size_t t = 0; t < 3; ++t) CHECK(out[t].data == stack[t].data);
}

TEST_CASE("distillation matches the per-pixel reference") {
  mtl::Rng rng(58);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t n = 2 + rng.below(2);
    std::size_t c = 1 + rng.below(2);
    std::size_t h = 1 + rng.below(4);
    std::size_t w = 1 + rng.below(4);
    bool with_transform = rng.below(2) == 1;
    std::size_t kernel = rng.below(2) == 0 ? 1 : 3;
    TaskFeatureStack stack;
    for (std::size_t t = 0; t < n; ++t) stack.push_back(random_map(c, h, w, rng));
    AttentionParams params = AttentionParams::zeros(n, c, kernel, with_transform);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t l = 0; l < n; ++l) {
        if (k == l) continue;
        randomize_conv(params.at(k, l).mask, rng);
        if (with_transform) randomize_conv(*params.at(k, l).transform, rng);
      }
    }
    TaskFeatureStack got = padnet_distill(stack, params);
    TaskFeatureStack want = oracle::padnet_reference(stack, params);
    REQUIRE(got.size() == want.size());
    for (std::size_t t = 0; t < n; ++t) check_maps_close(got[t], want[t], 1e-12);
  }
}

TEST_CASE("distillation input checks") {
  mtl::Rng rng(59);
  FeatureMap f = random_map(1, 2, 2, rng);
  CHECK_THROWS_AS(padnet_distill({f}, AttentionParams::zeros(2, 1)), mtl::DimensionError);
  CHECK_THROWS_AS(padnet_distill({f, random_map(1, 3, 2, rng)}, AttentionParams::zeros(2, 1)),
                  mtl::DimensionError);
  CHECK_THROWS_AS(padnet_distill({f, f, f}, AttentionParams::zeros(2, 1)),
                  mtl::DimensionError);
  AttentionParams widening = AttentionParams::zeros(2, 1);
  widening.at(0, 1).mask = ConvMap::zero(2, 1, 1);
  CHECK_THROWS_WITH_AS(padnet_distill({f, f}, widening),
                       doctest::Contains("preserve the channel count"), mtl::DimensionError);
  CHECK_THROWS_AS(AttentionParams::zeros(1, 1), mtl::DimensionError);
}

TEST_CASE("multi-scale distillation runs each scale independently") {
  mtl::Rng rng(60);
  std::vector<TaskFeatureStack> stacks;
  std::vector<AttentionParams> params;
  for (std::size_t s = 0; s < 2; ++s) {
    std::size_t h = 2 + s;
    TaskFeatureStack stack{random_map(1, h, 2, rng), random_map(1, h, 2, rng)};
    AttentionParams p = AttentionParams::zeros(2, 1);
    randomize_conv(p.at(0, 1).mask, rng);
    randomize_conv(p.at(1, 0).mask, rng);
    stacks.push_back(stack);
    params.push_back(p);
  }
  auto got = mtinet_distill(stacks, params);
  REQUIRE(got.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    TaskFeatureStack want = padnet_distill(stacks[s], params[s]);
    for (std::size_t t = 0; t < 2; ++t) CHECK(got[s][t].data == want[t].data);
  }
  CHECK_THROWS_AS(mtinet_distill({}, {}), mtl::DimensionError);
  CHECK_THROWS_AS(mtinet_distill(stacks, {params[0]}), mtl::DimensionError);
}

TEST_CASE("flat logits attend uniformly") {
  mtl::Rng rng(61);
  FeatureMap f1 = random_map(1, 2, 2, rng);
  FeatureMap f2 = random_map(1, 2, 2, rng);
  HarmonizeParams params;
  params.mix = ConvMap::zero(2, 2, 1);
  params.reduce = ConvMap::zero(1, 2, 1);
  params.reduce.weight = {1.0, 1.0};
  HarmonizeResult r = feature_harmonize({f1, f2}, params);
  REQUIRE(r.attention.size() == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(r.attention[0].data[i] == 0.5);
    CHECK(r.attention[1].data[i] == 0.5);
    CHECK(r.fused.data[i] == doctest::Approx(0.5 * f1.data[i] + 0.5 * f2.data[i])
                                 .epsilon(1e-15));
  }
}

TEST_CASE("attention is a distribution over tasks") {
  mtl::Rng rng(62);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 2 + rng.below(2);
    std::size_t c = 1 + rng.below(2);
    TaskFeatureStack stack;
    for (std::size_t t = 0; t < n; ++t) stack.push_back(random_map(c, 3, 3, rng));
    HarmonizeParams params;
    params.mix = ConvMap::zero(n * c, n * c, 1);
    params.reduce = ConvMap::zero(c, n * c, 1);
    randomize_conv(params.mix, rng, 2.0);
    randomize_conv(params.reduce, rng);
    HarmonizeResult r = feature_harmonize(stack, params);
    for (std::size_t i = 0; i < c * 9; ++i) {
      double sum = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        double a = r.attention[t].data[i];
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        sum += a;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("harmonization matches the naive reference") {
  mtl::Rng rng(63);
  for (int trial = 0; trial < 15; ++trial) {
    std::size_t n = 2 + rng.below(2);
    std::size_t c = 1 + rng.below(2);
    std::size_t h = 1 + rng.below(4);
    std::size_t w = 1 + rng.below(4);
    std::size_t kernel = rng.below(2) == 0 ? 1 : 3;
    TaskFeatureStack stack;
    for (std::size_t t = 0; t < n; ++t) stack.push_back(random_map(c, h, w, rng));
    HarmonizeParams params;
    params.mix = ConvMap::zero(n * c, n * c, kernel);
    params.reduce = ConvMap::zero(c, n * c, kernel);
    randomize_conv(params.mix, rng);
    randomize_conv(params.reduce, rng);
    HarmonizeResult got = feature_harmonize(stack, params);
    HarmonizeResult want = oracle::harmonize_reference(stack, params);
    check_maps_close(got.fused, want.fused, 1e-12);
    for (std::size_t t = 0; t < n; ++t) {
      check_maps_close(got.attention[t], want.attention[t], 1e-12);
    }
  }
}

TEST_CASE("harmonization input checks") {
  mtl::Rng rng(64);
  TaskFeatureStack stack{random_map(1, 2, 2, rng), random_map(1, 2, 2, rng)};
  HarmonizeParams bad_mix;
  bad_mix.mix = ConvMap::zero(1, 2, 1);  // drops logit channels
  bad_mix.reduce = ConvMap::zero(1, 2, 1);
  CHECK_THROWS_AS(feature_harmonize(stack, bad_mix), mtl::DimensionError);
  HarmonizeParams bad_reduce;
  bad_reduce.mix = ConvMap::zero(2, 2, 1);
  bad_reduce.reduce = ConvMap::zero(2, 2, 1);  // keeps the concatenated width
  CHECK_THROWS_AS(feature_harmonize(stack, bad_reduce), mtl::DimensionError);
  HarmonizeParams ok;
  ok.mix = ConvMap::zero(2, 2, 1);
  ok.reduce = ConvMap::zero(1, 2, 1);
  CHECK_THROWS_AS(feature_harmonize({stack[0]}, ok), mtl::DimensionError);
}

TEST_CASE("zero squeeze gates halve the feature") {
  mtl::Rng rng(65);
  FeatureMap f = random_map(2, 3, 3, rng);
  SqueezeMlp mlp;
  mlp.layers.push_back({2, 2, std::vector<double>(4, 0.0), {0.0, 0.0}});
  SeResult r = se_gate(f, mlp);
  CHECK(r.gates == std::vector<double>{0.5, 0.5});
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(r.gated.data[i] == 0.5 * f.data[i]);
}

TEST_CASE("squeeze gate fixture") {
  FeatureMap f = FeatureMap::zeros(1, 2, 2);
  f.data = {2.0, 2.0, 2.0, 2.0};  // pooled value 2
  SqueezeMlp mlp;
  mlp.layers.push_back({1, 1, {1.0}, {0.0}});
  SeResult r = se_gate(f, mlp);
  double want = 1.0 / (1.0 + std::exp(-2.0));
  CHECK(r.gates[0] == doctest::Approx(want).epsilon(1e-15));
  CHECK(r.gated.data[0] == doctest::Approx(2.0 * want).epsilon(1e-15));

  // The hidden ReLU clamps -2 to 0, so the second layer sees a zero.
  SqueezeMlp two;
  two.layers.push_back({1, 1, {-1.0}, {0.0}});
  two.layers.push_back({1, 1, {5.0}, {0.0}});
  CHECK(se_gate(f, two).gates[0] == 0.5);
}

TEST_CASE("squeeze gates match the reference and stay in (0,1)") {
  mtl::Rng rng(66);
  for (int trial = 0; trial < 15; ++trial) {
    std::size_t c = 2 + rng.below(3);
    std::size_t hidden = 1 + rng.below(3);
    FeatureMap f = random_map(c, 1 + rng.below(4), 1 + rng.below(4), rng);
    SqueezeMlp mlp;
    mlp.layers.push_back({hidden, c, {}, {}});
    mlp.layers.push_back({c, hidden, {}, {}});
    for (DenseLayer& layer : mlp.layers) {
      layer.weight.assign(layer.out * layer.in, 0.0);
      layer.bias.assign(layer.out, 0.0);
      for (double& v : layer.weight) v = rng.uniform(-1.5, 1.5);
      for (double& v : layer.bias) v = rng.uniform(-1.5, 1.5);
    }
    SeResult got = se_gate(f, mlp);
    SeResult want = oracle::se_reference(f, mlp);
    check_maps_close(got.gated, want.gated, 1e-12);
    for (std::size_t ch = 0; ch < c; ++ch) {
      CHECK(std::abs(got.gates[ch] - want.gates[ch]) <= 1e-12);
      CHECK(got.gates[ch] > 0.0);
      CHECK(got.gates[ch] < 1.0);
    }
  }
}

TEST_CASE("squeeze gate input checks") {
  mtl::Rng rng(67);
  FeatureMap f = random_map(2, 2, 2, rng);
  CHECK_THROWS_AS(se_gate(f, SqueezeMlp{}), mtl::DimensionError);
  SqueezeMlp narrow;
  narrow.layers.push_back({2, 3, std::vector<double>(6, 0.0), {0.0, 0.0}});
  CHECK_THROWS_AS(se_gate(f, narrow), mtl::DimensionError);
  SqueezeMlp shrinking;
  shrinking.layers.push_back({1, 2, {0.0, 0.0}, {0.0}});
  CHECK_THROWS_AS(se_gate(f, shrinking), mtl::DimensionError);
  SqueezeMlp mismatched;
  mismatched.layers.push_back({3, 2, std::vector<double>(6, 0.0), {0.0, 0.0, 0.0}});
  mismatched.layers.push_back({2, 2, std::vector<double>(4, 0.0), {0.0, 0.0}});
  CHECK_THROWS_AS(se_gate(f, mismatched), mtl::DimensionError);
  SqueezeMlp short_weights;
  short_weights.layers.push_back({2, 2, {0.0, 0.0, 0.0}, {0.0, 0.0}});
  CHECK_THROWS_AS(se_gate(f, short_weights), mtl::DimensionError);
}
