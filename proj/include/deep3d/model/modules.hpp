#pragma once

// Building blocks around the backbones: the shallow spatial path, channel
// attention refinement, and the three-way feature fusion.

#include <string>
#include <vector>

#include <torch/torch.h>

#include "deep3d/error.hpp"
#include "deep3d/model/resnet.hpp"

namespace deep3d::model {

struct NormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

inline torch::nn::BatchNorm2d make_bn(int64_t channels, const NormOptions& n) {
  return torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(channels).momentum(n.momentum).eps(n.eps));
}

/// Batch norm that falls back to running statistics when training on a single
/// value per channel (e.g. a pooled batch of one), where batch statistics are undefined.
inline torch::Tensor batch_norm_safe(torch::nn::BatchNorm2d& bn, const torch::Tensor& x) {
  if (bn->is_training() && x.size(0) * x.size(2) * x.size(3) == 1) {
    return torch::nn::functional::batch_norm(
        x, bn->running_mean, bn->running_var,
        torch::nn::functional::BatchNormFuncOptions().weight(bn->weight).bias(bn->bias).training(false).eps(
            bn->options.eps()));
  }
  return bn(x);
}

class ConvBnReluImpl : public torch::nn::Module {
public:
  ConvBnReluImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding, const NormOptions& n = {}) {
    conv = register_module("conv", torch::nn::Conv2d(conv_options(in, out, kernel, stride, padding)));
    bn = register_module("bn", make_bn(out, n));
  }
  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(bn(conv(x))); }

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(ConvBnRelu);

/// Output size of one convolution along an axis.
constexpr int64_t conv_out(int64_t n, int64_t kernel, int64_t stride, int64_t padding) {
  return (n + 2 * padding - kernel) / stride + 1;
}

/// Three stride-2 conv-bn-relu layers: 7x7 (configurable padding), then two 3x3.
class SpatialPathImpl : public torch::nn::Module {
public:
  static constexpr int64_t kInChannels = 4;

  explicit SpatialPathImpl(int64_t first_padding, int64_t out_channels = 256, const NormOptions& n = {})
      : first_padding_(first_padding), out_channels_(out_channels) {
    layer1 = register_module("layer1", ConvBnRelu(kInChannels, 64, 7, 2, first_padding, n));
    layer2 = register_module("layer2", ConvBnRelu(64, 128, 3, 2, 1, n));
    layer3 = register_module("layer3", ConvBnRelu(128, out_channels, 3, 2, 1, n));
  }

  /// {height, width} produced for an input of the given size.
  std::pair<int64_t, int64_t> output_size(int64_t height, int64_t width) const {
    auto along = [&](int64_t n) { return conv_out(conv_out(conv_out(n, 7, 2, first_padding_), 3, 2, 1), 3, 2, 1); };
    return {along(height), along(width)};
  }

  int64_t out_channels() const noexcept { return out_channels_; }

  torch::Tensor forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != kInChannels) {
      throw ShapeError("spatial path expects a 4-channel (N, 4, H, W) input");
    }
    return layer3(layer2(layer1(x)));
  }

  ConvBnRelu layer1{nullptr}, layer2{nullptr}, layer3{nullptr};

private:
  int64_t first_padding_;
  int64_t out_channels_;
};
TORCH_MODULE(SpatialPath);

/// Channel attention: pooled descriptor -> 1x1 conv -> bn -> sigmoid, multiplied back.
class AttentionRefinementImpl : public torch::nn::Module {
public:
  explicit AttentionRefinementImpl(int64_t channels, const NormOptions& n = {}) {
    conv = register_module("conv", torch::nn::Conv2d(conv_options(channels, channels, 1, 1, 0, true)));
    bn = register_module("bn", make_bn(channels, n));
  }

  torch::Tensor gate(const torch::Tensor& x) {
    auto w = torch::adaptive_avg_pool2d(x, {1, 1});
    return torch::sigmoid(batch_norm_safe(bn, conv(w)));
  }

  torch::Tensor forward(const torch::Tensor& x) { return x * gate(x); }

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(AttentionRefinement);

/// Concatenate the three streams, project with conv-bn-relu, then reweight
/// channels squeeze-excite style with a residual add.
class FeatureFusionImpl : public torch::nn::Module {
public:
  FeatureFusionImpl(int64_t in_channels, int64_t out_channels = 256, const NormOptions& n = {})
      : in_channels_(in_channels) {
    project = register_module("project", ConvBnRelu(in_channels, out_channels, 1, 1, 0, n));
    squeeze = register_module("squeeze", torch::nn::Conv2d(conv_options(out_channels, out_channels, 1, 1, 0, true)));
    excite = register_module("excite", torch::nn::Conv2d(conv_options(out_channels, out_channels, 1, 1, 0, true)));
  }

  torch::Tensor forward(const torch::Tensor& spatial, const torch::Tensor& context, const torch::Tensor& threed) {
    for (const auto* t : {&context, &threed}) {
      if (t->size(0) != spatial.size(0) || t->size(2) != spatial.size(2) || t->size(3) != spatial.size(3)) {
        throw ShapeError("feature fusion inputs differ in batch or spatial size");
      }
    }
    auto x = torch::cat({spatial, context, threed}, 1);
    if (x.size(1) != in_channels_) {
      throw ShapeError("feature fusion expects " + std::to_string(in_channels_) + " concatenated channels, got " +
                       std::to_string(x.size(1)));
    }
    x = project(x);
    auto w = torch::adaptive_avg_pool2d(x, {1, 1});
    w = torch::sigmoid(excite(torch::relu(squeeze(w))));
    return x * w + x;
  }

  ConvBnRelu project{nullptr};
  torch::nn::Conv2d squeeze{nullptr}, excite{nullptr};

private:
  int64_t in_channels_;
};
TORCH_MODULE(FeatureFusion);

}  // namespace deep3d::model
