#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl::distill {

struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // [c][y][x]

  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }

  static FeatureMap zeros(std::size_t channels, std::size_t height, std::size_t width);
  static FeatureMap from_tensor(const Tensor& t);  // shape [C, H, W]
  Tensor to_tensor() const;
};

// Per-pixel linear map: kernel 1 is pointwise; odd kernels > 1 use zero
// padding so the spatial size is preserved.
struct ConvMap {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 1;
  std::vector<double> weight;  // [out][in][ky][kx]
  std::vector<double> bias;    // [out]

  static ConvMap identity(std::size_t channels);
  static ConvMap zero(std::size_t out_channels, std::size_t in_channels, std::size_t kernel = 1);
};

FeatureMap apply_conv(const ConvMap& conv, const FeatureMap& input);

// One feature map per task, all sharing C, H, W.
using TaskFeatureStack = std::vector<FeatureMap>;

struct PairAttention {
  ConvMap mask;                       // pre-sigmoid attention logits
  std::optional<ConvMap> transform;   // message transform of the per-scale form
};

// Parameters per ordered task pair (k, l), k != l; the (k, k) slots are unused.
struct AttentionParams {
  std::size_t tasks = 0;
  std::vector<PairAttention> pairs;  // row-major (k, l)

  const PairAttention& at(std::size_t k, std::size_t l) const { return pairs[k * tasks + l]; }
  PairAttention& at(std::size_t k, std::size_t l) { return pairs[k * tasks + l]; }
  static AttentionParams zeros(std::size_t tasks, std::size_t channels, std::size_t kernel = 1,
                               bool with_transform = false);
};

// out_k = in_k + sum over l != k of sigmoid(mask_kl(in_l)) * in_l.
TaskFeatureStack padnet_distill(const TaskFeatureStack& stack, const AttentionParams& params);

// Per-scale variant with a transformed message:
// out_{k,s} = in_{k,s} + sum over l != k of sigmoid(mask(in_{l,s})) *
// transform(in_{l,s}); scales are processed independently. transform
// defaults to identity when absent, which reduces to padnet_distill.
std::vector<TaskFeatureStack> mtinet_distill(const std::vector<TaskFeatureStack>& stacks,
                                             const std::vector<AttentionParams>& params);

struct HarmonizeParams {
  ConvMap mix;     // N*C -> N*C logits map, ReLU applied after
  ConvMap reduce;  // N*C -> C final fusion
};

struct HarmonizeResult {
  FeatureMap fused;                   // C x H x W
  std::vector<FeatureMap> attention;  // per task; sums to 1 across tasks everywhere
};

// Concatenate task maps, per-pixel mix + ReLU, softmax across tasks per
// (channel, pixel), weight each task map by its attention, reduce N*C -> C.
HarmonizeResult feature_harmonize(const TaskFeatureStack& stack, const HarmonizeParams& params);

struct DenseLayer {
  std::size_t out = 0;
  std::size_t in = 0;
  std::vector<double> weight;  // [out][in]
  std::vector<double> bias;    // [out]
};

// Squeeze-excitation MLP: ReLU between layers, sigmoid after the last. One
// layer is a plain C -> C map; two layers give the bottleneck form.
struct SqueezeMlp {
  std::vector<DenseLayer> layers;
};

struct SeResult {
  FeatureMap gated;
  std::vector<double> gates;  // per channel, strictly in (0,1)
};

// gates = sigmoid(mlp(global average pool)); output channel c is the input
// channel scaled by gates[c]. The residual add, when wanted, is composed by
// the caller.
SeResult se_gate(const FeatureMap& feature, const SqueezeMlp& mlp);

}  // namespace mtl::distill
