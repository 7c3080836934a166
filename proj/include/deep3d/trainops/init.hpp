#pragma once

// Fan-in Kaiming initialization for rectifier networks, driven by an explicit seed.

#include <cmath>
#include <cstdint>
#include <set>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace deep3d::trainops {

inline int64_t fan_in(const torch::Tensor& w) {
  int64_t f = w.size(1);
  for (int64_t d = 2; d < w.dim(); ++d) f *= w.size(d);
  return f;
}

/// Normal with variance 2 / fan_in.
inline void kaiming_fill(torch::Tensor& w, at::Generator& gen) {
  torch::NoGradGuard guard;
  w.normal_(0.0, std::sqrt(2.0 / static_cast<double>(fan_in(w))), gen);
}

/// Initializes every conv of `root` (weights Kaiming, biases 0) and resets
/// batch-norm affine terms to (1, 0). Modules listed in `skip` (and their
/// children) keep their current values, e.g. pretrained backbones.
inline void kaiming_init(torch::nn::Module& root, uint64_t seed, const std::set<const torch::nn::Module*>& skip = {}) {
  at::Generator gen = at::detail::createCPUGenerator(seed);
  torch::NoGradGuard guard;
  std::set<const torch::nn::Module*> skipped;
  // modules() is a pre-order walk, so a skipped parent is seen before its children.
  for (const auto& m : root.modules(true)) {
    for (const auto& child : m->children()) {
      if (skip.count(m.get()) || skipped.count(m.get())) skipped.insert(child.get());
    }
    if (skip.count(m.get()) || skipped.count(m.get())) continue;
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      kaiming_fill(conv->weight, gen);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* bn = m->as<torch::nn::BatchNorm2d>()) {
      if (bn->weight.defined()) bn->weight.fill_(1.0);
      if (bn->bias.defined()) bn->bias.zero_();
    }
  }
}

}  // namespace deep3d::trainops
