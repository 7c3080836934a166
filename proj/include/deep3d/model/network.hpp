#pragma once

// The full three-branch segmentation network: spatial path on RGB + 3D, a
// residual context path on RGB, a twin residual path on the 3D channel, ARM
// refinement per branch, three-way fusion and a 1x1 classifier.

#include <algorithm>
#include <string>

#include <torch/torch.h>

#include "deep3d/error.hpp"
#include "deep3d/json_fields.hpp"
#include "deep3d/model/modules.hpp"
#include "deep3d/model/resnet.hpp"

namespace deep3d::model {

enum class ThreeDSource { elvdiff, disparity };

inline std::string to_string(ThreeDSource s) { return s == ThreeDSource::elvdiff ? "elvdiff" : "disparity"; }

inline ThreeDSource parse_threed_source(const std::string& s) {
  if (s == "elvdiff") return ThreeDSource::elvdiff;
  if (s == "disparity") return ThreeDSource::disparity;
  throw ConfigError("threed_source must be 'elvdiff' or 'disparity', got '" + s + "'", "threed_source");
}

struct NetworkConfig {
  int backbone_depth = 18;
  int num_classes = 2;
  int first_layer_padding = 2;
  ThreeDSource threed_source = ThreeDSource::elvdiff;
  bool pretrained_context = false;
  bool pretrained_threed = false;
  std::string pretrained_weights;  // archive with torchvision-named backbone tensors
  bool auxiliary_heads = false;
  int spatial_channels = 256;
  int fusion_channels = 256;
  NormOptions norm;
  bool check_finite = true;  // throw NumericError when a branch emits NaN/Inf

  void validate() const {
    if (std::find(kSupportedDepths.begin(), kSupportedDepths.end(), backbone_depth) == kSupportedDepths.end()) {
      throw ConfigError("backbone_depth must be one of 18, 34, 50, 101, 152; got " + std::to_string(backbone_depth),
                        "backbone_depth");
    }
    if (num_classes <= 0) throw ConfigError("num_classes must be positive", "num_classes");
    if (first_layer_padding != 1 && first_layer_padding != 2) {
      throw ConfigError("first_layer_padding must be 1 or 2", "first_layer_padding");
    }
    if (spatial_channels <= 0) throw ConfigError("spatial_channels must be positive", "spatial_channels");
    if (fusion_channels <= 0) throw ConfigError("fusion_channels must be positive", "fusion_channels");
    if (!(norm.momentum > 0 && norm.momentum <= 1)) throw ConfigError("bn_momentum must be in (0, 1]", "bn_momentum");
    if (!(norm.eps > 0)) throw ConfigError("bn_eps must be positive", "bn_eps");
    if ((pretrained_context || pretrained_threed) && pretrained_weights.empty()) {
      throw ConfigError("pretrained backbones requested but pretrained_weights is empty", "pretrained_weights");
    }
  }
};

/// Padding of the first spatial-path layer that gives exact /8 shapes: 1 for
/// 1242x375 perspective KITTI frames, 2 otherwise.
inline int recommended_first_padding(int width, int height) { return (width == 1242 && height == 375) ? 1 : 2; }

inline Json to_json(const NetworkConfig& c) {
  return Json{{"backbone_depth", c.backbone_depth},
              {"num_classes", c.num_classes},
              {"first_layer_padding", c.first_layer_padding},
              {"threed_source", to_string(c.threed_source)},
              {"pretrained_context", c.pretrained_context},
              {"pretrained_threed", c.pretrained_threed},
              {"pretrained_weights", c.pretrained_weights},
              {"auxiliary_heads", c.auxiliary_heads},
              {"spatial_channels", c.spatial_channels},
              {"fusion_channels", c.fusion_channels},
              {"bn_momentum", c.norm.momentum},
              {"bn_eps", c.norm.eps},
              {"check_finite", c.check_finite}};
}

inline NetworkConfig network_config_from_json(FieldReader r) {
  NetworkConfig c;
  c.backbone_depth = r.get("backbone_depth", c.backbone_depth);
  c.num_classes = r.get("num_classes", c.num_classes);
  c.first_layer_padding = r.get("first_layer_padding", c.first_layer_padding);
  c.threed_source = parse_threed_source(r.get<std::string>("threed_source", to_string(c.threed_source)));
  c.pretrained_context = r.get("pretrained_context", c.pretrained_context);
  c.pretrained_threed = r.get("pretrained_threed", c.pretrained_threed);
  c.pretrained_weights = r.get("pretrained_weights", c.pretrained_weights);
  c.auxiliary_heads = r.get("auxiliary_heads", c.auxiliary_heads);
  c.spatial_channels = r.get("spatial_channels", c.spatial_channels);
  c.fusion_channels = r.get("fusion_channels", c.fusion_channels);
  c.norm.momentum = r.get("bn_momentum", c.norm.momentum);
  c.norm.eps = r.get("bn_eps", c.norm.eps);
  c.check_finite = r.get("check_finite", c.check_finite);
  r.finish();
  return c;
}

struct NetworkOutput {
  torch::Tensor scores;  // (N, classes, H, W)
  torch::Tensor aux16;   // auxiliary heads, undefined unless enabled
  torch::Tensor aux32;
};

/// Backbone plus its two ARMs; emits the stream entering the fusion at the requested size.
class BranchImpl : public torch::nn::Module {
public:
  BranchImpl(int depth, int64_t in_channels, const NormOptions& n) {
    backbone = register_module("backbone", ResNetBackbone(depth, in_channels));
    const auto [c16, c32] = stage_channels(depth);
    arm16 = register_module("arm16", AttentionRefinement(c16, n));
    arm32 = register_module("arm32", AttentionRefinement(c32, n));
    channels_ = c16 + c32;
  }

  int64_t out_channels() const noexcept { return channels_; }

  struct Refined {
    torch::Tensor r16, r32;
  };

  Refined refine(const torch::Tensor& x) {
    const BackboneFeatures f = backbone(x);
    return {arm16(f.f16), arm32(f.f32) * f.tail};
  }

  torch::Tensor stream(const Refined& r, torch::IntArrayRef size) {
    return torch::cat({upsample(r.r16, size), upsample(r.r32, size)}, 1);
  }

  static torch::Tensor upsample(const torch::Tensor& x, torch::IntArrayRef size) {
    return torch::nn::functional::interpolate(x, torch::nn::functional::InterpolateFuncOptions()
                                                     .size(std::vector<int64_t>(size.begin(), size.end()))
                                                     .mode(torch::kBilinear)
                                                     .align_corners(false));
  }

  ResNetBackbone backbone{nullptr};
  AttentionRefinement arm16{nullptr}, arm32{nullptr};

private:
  int64_t channels_ = 0;
};
TORCH_MODULE(Branch);

class ThreeDeepNetImpl : public torch::nn::Module {
public:
  static constexpr int64_t kMinSide = 32;

  explicit ThreeDeepNetImpl(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    spatial = register_module("spatial", SpatialPath(cfg_.first_layer_padding, cfg_.spatial_channels, cfg_.norm));
    context = register_module("context", Branch(cfg_.backbone_depth, 3, cfg_.norm));
    threed = register_module("threed", Branch(cfg_.backbone_depth, 1, cfg_.norm));
    fusion = register_module(
        "fusion", FeatureFusion(cfg_.spatial_channels + context->out_channels() + threed->out_channels(),
                                cfg_.fusion_channels, cfg_.norm));
    head = register_module("head", torch::nn::Conv2d(conv_options(cfg_.fusion_channels, cfg_.num_classes, 1, 1, 0, true)));
    if (cfg_.auxiliary_heads) {
      const auto [c16, c32] = stage_channels(cfg_.backbone_depth);
      aux_head16 = register_module("aux_head16", torch::nn::Conv2d(conv_options(c16, cfg_.num_classes, 1, 1, 0, true)));
      aux_head32 = register_module("aux_head32", torch::nn::Conv2d(conv_options(c32, cfg_.num_classes, 1, 1, 0, true)));
    }
  }

  const NetworkConfig& config() const noexcept { return cfg_; }

  NetworkOutput forward(const torch::Tensor& rgb, const torch::Tensor& threed_in) {
    validate_inputs(rgb, threed_in);
    const std::vector<int64_t> full = {rgb.size(2), rgb.size(3)};

    auto sp = spatial(torch::cat({rgb, threed_in}, 1));
    check(sp, "spatial path");
    const std::vector<int64_t> eighth = {sp.size(2), sp.size(3)};

    const auto ctx = context->refine(rgb);
    const auto t3d = threed->refine(threed_in);
    check(ctx.r32, "context path");
    check(t3d.r32, "three-dimensional path");

    auto fused = fusion(sp, context->stream(ctx, eighth), threed->stream(t3d, eighth));
    check(fused, "feature fusion");

    NetworkOutput out;
    out.scores = BranchImpl::upsample(head(fused), full);
    if (cfg_.auxiliary_heads) {
      out.aux16 = BranchImpl::upsample(aux_head16(ctx.r16), full);
      out.aux32 = BranchImpl::upsample(aux_head32(ctx.r32), full);
    }
    return out;
  }

  /// Enables or disables gradients for both residual backbones.
  void set_backbones_trainable(bool trainable) {
    for (auto& p : context->backbone->parameters()) p.set_requires_grad(trainable);
    for (auto& p : threed->backbone->parameters()) p.set_requires_grad(trainable);
  }

  SpatialPath spatial{nullptr};
  Branch context{nullptr}, threed{nullptr};
  FeatureFusion fusion{nullptr};
  torch::nn::Conv2d head{nullptr}, aux_head16{nullptr}, aux_head32{nullptr};

private:
  void validate_inputs(const torch::Tensor& rgb, const torch::Tensor& t) const {
    if (rgb.dim() != 4 || rgb.size(1) != 3) throw ShapeError("rgb input must be (N, 3, H, W)");
    if (t.dim() != 4 || t.size(1) != 1) throw ShapeError("3D input must be (N, 1, H, W)");
    if (rgb.size(0) != t.size(0) || rgb.size(2) != t.size(2) || rgb.size(3) != t.size(3)) {
      throw ShapeError("rgb and 3D inputs must share batch and spatial size");
    }
    if (rgb.size(2) < kMinSide || rgb.size(3) < kMinSide) {
      throw ShapeError("input sides must be at least " + std::to_string(kMinSide) + " pixels");
    }
  }

  void check(const torch::Tensor& t, const char* where) const {
    if (cfg_.check_finite && !torch::isfinite(t).all().item<bool>()) {
      throw NumericError(std::string("non-finite activations after ") + where);
    }
  }

  NetworkConfig cfg_;
};
TORCH_MODULE(ThreeDeepNet);

inline int64_t count_trainable_parameters(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) {
    if (p.requires_grad()) n += p.numel();
  }
  return n;
}

/// 1-channel stem from a 3-channel one: kernels summed over input channels, so a
/// gray image fed to the new stem matches the same image replicated to RGB.
inline torch::Tensor collapse_stem(const torch::Tensor& rgb_weight) {
  if (rgb_weight.dim() != 4 || rgb_weight.size(1) != 3) throw ShapeError("stem weight must be (out, 3, k, k)");
  return rgb_weight.sum(1, true);
}

/// Copies every tensor of `src` into `dst` by name, collapsing the stem when
/// `dst` has one input channel.
inline void copy_backbone(const ResNetBackbone& src, ResNetBackbone& dst) {
  torch::NoGradGuard guard;
  auto dst_params = dst->named_parameters(true);
  auto dst_buffers = dst->named_buffers(true);
  auto assign = [&](const std::string& name, const torch::Tensor& value, torch::OrderedDict<std::string, torch::Tensor>& into) {
    torch::Tensor* target = into.find(name);
    if (!target) throw FormatError("backbone tensor '" + name + "' has no counterpart");
    torch::Tensor v = value;
    if (name == "conv1.weight" && target->size(1) == 1 && v.size(1) == 3) v = collapse_stem(v);
    if (!target->sizes().equals(v.sizes())) throw ShapeError("backbone tensor '" + name + "' differs in shape");
    target->copy_(v);
  };
  for (const auto& kv : src->named_parameters(true)) assign(kv.key(), kv.value(), dst_params);
  for (const auto& kv : src->named_buffers(true)) assign(kv.key(), kv.value(), dst_buffers);
}

/// Loads torchvision-named tensors (conv1.weight, layer1.0.bn1.running_mean, ...)
/// from a libtorch archive into a backbone; fc.* entries are ignored.
inline void load_backbone_archive(ResNetBackbone& dst, const std::string& path) {
  ResNetBackbone rgb(dst->depth(), 3);
  torch::serialize::InputArchive archive;
  archive.load_from(path);
  torch::NoGradGuard guard;
  for (auto& kv : rgb->named_parameters(true)) archive.read(kv.key(), kv.value());
  for (auto& kv : rgb->named_buffers(true)) archive.read(kv.key(), kv.value(), true);
  copy_backbone(rgb, dst);
}

/// Initializes the requested backbones from the configured pretrained archive.
inline void load_pretrained(ThreeDeepNet& net) {
  const NetworkConfig& c = net->config();
  if (c.pretrained_context) load_backbone_archive(net->context->backbone, c.pretrained_weights);
  if (c.pretrained_threed) load_backbone_archive(net->threed->backbone, c.pretrained_weights);
}

}  // namespace deep3d::model
