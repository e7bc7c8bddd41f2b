#include "mtl/distill.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtl/error.hpp"

namespace mtl::distill {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_stack(const TaskFeatureStack& stack, const char* what) {
  if (stack.size() < 2) throw DimensionError(std::string(what) + " needs at least two tasks");
  for (std::size_t i = 1; i < stack.size(); ++i) {
    if (stack[i].channels != stack[0].channels || stack[i].height != stack[0].height ||
        stack[i].width != stack[0].width) {
      throw DimensionError("task feature maps differ in shape");
    }
  }
}

void check_conv_shape(const ConvMap& conv, std::size_t in_channels, const char* what) {
  if (conv.in_channels != in_channels) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(in_channels) +
                         " input channels, got " + std::to_string(conv.in_channels));
  }
}

FeatureMap concat_channels(const TaskFeatureStack& stack) {
  FeatureMap out = FeatureMap::zeros(stack.size() * stack[0].channels, stack[0].height,
                                     stack[0].width);
  std::size_t plane = stack[0].channels * stack[0].height * stack[0].width;
  for (std::size_t t = 0; t < stack.size(); ++t) {
    std::copy(stack[t].data.begin(), stack[t].data.end(), out.data.begin() + t * plane);
  }
  return out;
}

}  // namespace

FeatureMap FeatureMap::zeros(std::size_t channels, std::size_t height, std::size_t width) {
  if (channels == 0 || height == 0 || width == 0) {
    throw DimensionError("feature map dimensions must be positive");
  }
  FeatureMap f;
  f.channels = channels;
  f.height = height;
  f.width = width;
  f.data.assign(channels * height * width, 0.0);
  return f;
}

FeatureMap FeatureMap::from_tensor(const Tensor& t) {
  if (t.shape.size() != 3) throw DimensionError("feature tensor must have shape [C, H, W]");
  FeatureMap f = zeros(static_cast<std::size_t>(t.shape[0]), static_cast<std::size_t>(t.shape[1]),
                       static_cast<std::size_t>(t.shape[2]));
  f.data = t.data;
  return f;
}

Tensor FeatureMap::to_tensor() const {
  return Tensor::from_values({channels, height, width}, data);
}

ConvMap ConvMap::identity(std::size_t channels) {
  ConvMap c = zero(channels, channels, 1);
  for (std::size_t i = 0; i < channels; ++i) c.weight[i * channels + i] = 1.0;
  return c;
}

ConvMap ConvMap::zero(std::size_t out_channels, std::size_t in_channels, std::size_t kernel) {
  if (out_channels == 0 || in_channels == 0) {
    throw DimensionError("conv channel counts must be positive");
  }
  if (kernel == 0 || kernel % 2 == 0) throw DimensionError("kernel size must be odd");
  ConvMap c;
  c.out_channels = out_channels;
  c.in_channels = in_channels;
  c.kernel = kernel;
  c.weight.assign(out_channels * in_channels * kernel * kernel, 0.0);
  c.bias.assign(out_channels, 0.0);
  return c;
}

FeatureMap apply_conv(const ConvMap& conv, const FeatureMap& input) {
  if (conv.kernel == 0 || conv.kernel % 2 == 0) {
    throw DimensionError("kernel size must be odd");
  }
  check_conv_shape(conv, input.channels, "conv");
  if (conv.weight.size() != conv.out_channels * conv.in_channels * conv.kernel * conv.kernel) {
    throw DimensionError("conv weight size mismatch");
  }
  if (conv.bias.size() != conv.out_channels) throw DimensionError("conv bias size mismatch");

  FeatureMap out = FeatureMap::zeros(conv.out_channels, input.height, input.width);
  auto h = static_cast<std::int64_t>(input.height);
  auto w = static_cast<std::int64_t>(input.width);
  auto half = static_cast<std::int64_t>(conv.kernel / 2);
  std::size_t k = conv.kernel;
  for (std::size_t oc = 0; oc < conv.out_channels; ++oc) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = conv.bias[oc];
        for (std::size_t ic = 0; ic < conv.in_channels; ++ic) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            std::int64_t sy = y + static_cast<std::int64_t>(ky) - half;
            if (sy < 0 || sy >= h) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              std::int64_t sx = x + static_cast<std::int64_t>(kx) - half;
              if (sx < 0 || sx >= w) continue;
              acc += conv.weight[((oc * conv.in_channels + ic) * k + ky) * k + kx] *
                     input.at(ic, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          }
        }
        out.at(oc, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
      }
    }
  }
  return out;
}

AttentionParams AttentionParams::zeros(std::size_t tasks, std::size_t channels,
                                       std::size_t kernel, bool with_transform) {
  if (tasks < 2) throw DimensionError("attention needs at least two tasks");
  AttentionParams p;
  p.tasks = tasks;
  p.pairs.resize(tasks * tasks);
  for (std::size_t k = 0; k < tasks; ++k) {
    for (std::size_t l = 0; l < tasks; ++l) {
      if (k == l) continue;
      p.at(k, l).mask = ConvMap::zero(channels, channels, kernel);
      if (with_transform) p.at(k, l).transform = ConvMap::zero(channels, channels, kernel);
    }
  }
  return p;
}

TaskFeatureStack padnet_distill(const TaskFeatureStack& stack, const AttentionParams& params) {
  check_stack(stack, "distillation");
  if (params.tasks != stack.size()) {
    throw DimensionError("attention parameters cover a different task count");
  }
  std::size_t n = stack.size();
  TaskFeatureStack out = stack;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t l = 0; l < n; ++l) {
      if (l == k) continue;
      const PairAttention& pair = params.at(k, l);
      check_conv_shape(pair.mask, stack[l].channels, "attention mask");
      FeatureMap logits = apply_conv(pair.mask, stack[l]);
      if (logits.channels != stack[l].channels) {
        throw DimensionError("attention mask must preserve the channel count");
      }
      FeatureMap message = pair.transform ? apply_conv(*pair.transform, stack[l]) : stack[l];
      if (message.channels != stack[l].channels) {
        throw DimensionError("transform must preserve the channel count");
      }
      for (std::size_t i = 0; i < message.data.size(); ++i) {
        out[k].data[i] += sigmoid(logits.data[i]) * message.data[i];
      }
    }
  }
  return out;
}

std::vector<TaskFeatureStack> mtinet_distill(const std::vector<TaskFeatureStack>& stacks,
                                             const std::vector<AttentionParams>& params) {
  if (stacks.empty()) throw DimensionError("no scales");
  if (params.size() != stacks.size()) {
    throw DimensionError("one parameter set per scale required");
  }
  std::vector<TaskFeatureStack> out;
  out.reserve(stacks.size());
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    out.push_back(padnet_distill(stacks[s], params[s]));
  }
  return out;
}

HarmonizeResult feature_harmonize(const TaskFeatureStack& stack, const HarmonizeParams& params) {
  check_stack(stack, "harmonization");
  std::size_t n = stack.size();
  std::size_t c = stack[0].channels;
  FeatureMap cat = concat_channels(stack);
  check_conv_shape(params.mix, n * c, "mix");
  if (params.mix.out_channels != n * c) {
    throw DimensionError("mix must emit one logit channel per task channel");
  }
  FeatureMap logits = apply_conv(params.mix, cat);
  for (double& v : logits.data) v = std::max(0.0, v);

  HarmonizeResult result;
  result.attention.assign(n, FeatureMap::zeros(c, stack[0].height, stack[0].width));
  std::size_t plane = c * stack[0].height * stack[0].width;
  for (std::size_t i = 0; i < plane; ++i) {
    double top = logits.data[i];
    for (std::size_t t = 1; t < n; ++t) top = std::max(top, logits.data[t * plane + i]);
    double denom = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      double e = std::exp(logits.data[t * plane + i] - top);
      result.attention[t].data[i] = e;
      denom += e;
    }
    for (std::size_t t = 0; t < n; ++t) result.attention[t].data[i] /= denom;
  }

  FeatureMap attended = FeatureMap::zeros(n * c, stack[0].height, stack[0].width);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < plane; ++i) {
      attended.data[t * plane + i] = result.attention[t].data[i] * stack[t].data[i];
    }
  }
  check_conv_shape(params.reduce, n * c, "reduce");
  if (params.reduce.out_channels != c) {
    throw DimensionError("reduce must emit the per-task channel count");
  }
  result.fused = apply_conv(params.reduce, attended);
  return result;
}

SeResult se_gate(const FeatureMap& feature, const SqueezeMlp& mlp) {
  if (mlp.layers.empty()) throw DimensionError("squeeze MLP has no layers");
  std::size_t c = feature.channels;
  if (mlp.layers.front().in != c) throw DimensionError("squeeze MLP input width mismatch");
  if (mlp.layers.back().out != c) throw DimensionError("squeeze MLP output width mismatch");

  std::vector<double> v(c, 0.0);
  double scale = 1.0 / static_cast<double>(feature.height * feature.width);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t y = 0; y < feature.height; ++y) {
      for (std::size_t x = 0; x < feature.width; ++x) s += feature.at(ch, y, x);
    }
    v[ch] = s * scale;
  }

  for (std::size_t li = 0; li < mlp.layers.size(); ++li) {
    const DenseLayer& layer = mlp.layers[li];
    if (layer.in != v.size()) throw DimensionError("squeeze MLP layer width mismatch");
    if (layer.weight.size() != layer.out * layer.in || layer.bias.size() != layer.out) {
      throw DimensionError("squeeze MLP layer parameter size mismatch");
    }
    std::vector<double> next(layer.out, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) s += layer.weight[o * layer.in + i] * v[i];
      next[o] = s;
    }
    bool last = li + 1 == mlp.layers.size();
    for (double& x : next) x = last ? sigmoid(x) : std::max(0.0, x);
    v = std::move(next);
  }

  SeResult r;
  r.gates = v;
  r.gated = feature;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < feature.height; ++y) {
      for (std::size_t x = 0; x < feature.width; ++x) {
        r.gated.at(ch, y, x) = feature.at(ch, y, x) * v[ch];
      }
    }
  }
  return r;
}

}  // namespace mtl::distill
