#pragma once

// Residual backbones (18/34 basic blocks, 50/101/152 bottlenecks) with a
// configurable stem width so the same network serves RGB and single-channel input.
// Parameter names follow the torchvision layout (conv1, bn1, layer1.0.conv1, ...).

#include <array>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deep3d/error.hpp"

namespace deep3d::model {

inline torch::nn::Conv2dOptions conv_options(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1,
                                             int64_t padding = 0, bool bias = false) {
  return torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias);
}

struct BlockLayout {
  bool bottleneck = false;
  std::array<int, 4> blocks{};
};

inline BlockLayout block_layout(int depth) {
  switch (depth) {
    case 18: return {false, {2, 2, 2, 2}};
    case 34: return {false, {3, 4, 6, 3}};
    case 50: return {true, {3, 4, 6, 3}};
    case 101: return {true, {3, 4, 23, 3}};
    case 152: return {true, {3, 8, 36, 3}};
    default: throw ConfigError("unsupported backbone depth " + std::to_string(depth), "backbone_depth");
  }
}

inline constexpr std::array<int, 5> kSupportedDepths = {18, 34, 50, 101, 152};

/// Channel count of stage 3 (1/16) and stage 4 (1/32).
inline std::pair<int64_t, int64_t> stage_channels(int depth) {
  const int64_t expansion = block_layout(depth).bottleneck ? 4 : 1;
  return {256 * expansion, 512 * expansion};
}

class BasicBlockImpl : public torch::nn::Module {
public:
  static constexpr int64_t kExpansion = 1;

  BasicBlockImpl(int64_t in, int64_t planes, int64_t stride) {
    conv1 = register_module("conv1", torch::nn::Conv2d(conv_options(in, planes, 3, stride, 1)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", torch::nn::Conv2d(conv_options(planes, planes, 3, 1, 1)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(planes));
    if (stride != 1 || in != planes) {
      downsample = register_module(
          "downsample", torch::nn::Sequential(torch::nn::Conv2d(conv_options(in, planes, 1, stride)),
                                              torch::nn::BatchNorm2d(planes)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = bn2(conv2(out));
    return torch::relu(out + (downsample ? downsample->forward(x) : x));
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

class BottleneckImpl : public torch::nn::Module {
public:
  static constexpr int64_t kExpansion = 4;

  BottleneckImpl(int64_t in, int64_t planes, int64_t stride) {
    const int64_t out = planes * kExpansion;
    conv1 = register_module("conv1", torch::nn::Conv2d(conv_options(in, planes, 1)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", torch::nn::Conv2d(conv_options(planes, planes, 3, stride, 1)));
    bn2 = register_module("bn2", torch::nn::BatchNorm2d(planes));
    conv3 = register_module("conv3", torch::nn::Conv2d(conv_options(planes, out, 1)));
    bn3 = register_module("bn3", torch::nn::BatchNorm2d(out));
    if (stride != 1 || in != out) {
      downsample = register_module(
          "downsample",
          torch::nn::Sequential(torch::nn::Conv2d(conv_options(in, out, 1, stride)), torch::nn::BatchNorm2d(out)));
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto out = torch::relu(bn1(conv1(x)));
    out = torch::relu(bn2(conv2(out)));
    out = bn3(conv3(out));
    return torch::relu(out + (downsample ? downsample->forward(x) : x));
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(Bottleneck);

struct BackboneFeatures {
  torch::Tensor f16;   // stage 3, 1/16 resolution
  torch::Tensor f32;   // stage 4, 1/32 resolution
  torch::Tensor tail;  // global average pool of f32, shape (N, C, 1, 1)
};

class ResNetBackboneImpl : public torch::nn::Module {
public:
  ResNetBackboneImpl(int depth, int64_t in_channels) : depth_(depth), in_channels_(in_channels) {
    const BlockLayout layout = block_layout(depth);
    conv1 = register_module("conv1", torch::nn::Conv2d(conv_options(in_channels, 64, 7, 2, 3)));
    bn1 = register_module("bn1", torch::nn::BatchNorm2d(64));
    int64_t channels = 64;
    const std::array<int64_t, 4> planes = {64, 128, 256, 512};
    for (int s = 0; s < 4; ++s) {
      torch::nn::Sequential stage;
      for (int b = 0; b < layout.blocks[s]; ++b) {
        const int64_t stride = (b == 0 && s > 0) ? 2 : 1;
        if (layout.bottleneck) {
          stage->push_back(Bottleneck(channels, planes[s], stride));
          channels = planes[s] * BottleneckImpl::kExpansion;
        } else {
          stage->push_back(BasicBlock(channels, planes[s], stride));
          channels = planes[s];
        }
      }
      layers[s] = register_module("layer" + std::to_string(s + 1), stage);
    }
  }

  int depth() const noexcept { return depth_; }
  int64_t in_channels() const noexcept { return in_channels_; }

  /// Stem output: conv1 -> bn1 -> relu, before max pooling.
  torch::Tensor stem(const torch::Tensor& x) { return torch::relu(bn1(conv1(x))); }

  BackboneFeatures forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != in_channels_) {
      throw ShapeError("backbone expects " + std::to_string(in_channels_) + " input channels");
    }
    auto y = torch::max_pool2d(stem(x), 3, 2, 1);
    y = layers[0]->forward(y);
    y = layers[1]->forward(y);
    BackboneFeatures f;
    f.f16 = layers[2]->forward(y);
    f.f32 = layers[3]->forward(f.f16);
    f.tail = torch::adaptive_avg_pool2d(f.f32, {1, 1});
    return f;
  }

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr};
  std::array<torch::nn::Sequential, 4> layers{nullptr, nullptr, nullptr, nullptr};

private:
  int depth_;
  int64_t in_channels_;
};
TORCH_MODULE(ResNetBackbone);

}  // namespace deep3d::model
