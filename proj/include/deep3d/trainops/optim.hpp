#pragma once

// Optimizers behind one interface: SGD and Adam from libtorch, and averaged SGD
// implemented here (libtorch's C++ API does not ship it).

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deep3d/error.hpp"

namespace deep3d::trainops {

enum class OptimizerKind { sgd, adam, asgd };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "asgd") return OptimizerKind::asgd;
  throw ConfigError("optimizer must be sgd, adam or asgd; got '" + s + "'", "optimizer");
}

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : k == OptimizerKind::adam ? "adam" : "asgd";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::asgd;
  double lr = 0.02;
  double momentum = 0.9;  // sgd
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double asgd_lambd = 1e-4, asgd_alpha = 0.75, asgd_t0 = 1e6;
};

class Optimizer {
public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  virtual void zero_grad() = 0;
  virtual void set_lr(double lr) = 0;
  virtual void save(torch::serialize::OutputArchive& out) const = 0;
  virtual void load(torch::serialize::InputArchive& in) = 0;
};

/// Adapter over a libtorch optimizer whose options expose lr().
template <class TorchOpt, class Options>
class TorchOptimizer final : public Optimizer {
public:
  TorchOptimizer(std::vector<torch::Tensor> params, Options opts) : impl_(std::move(params), opts) {}
  void step() override { impl_.step(); }
  void zero_grad() override { impl_.zero_grad(); }
  void set_lr(double lr) override {
    for (auto& g : impl_.param_groups()) static_cast<Options&>(g.options()).lr(lr);
  }
  void save(torch::serialize::OutputArchive& out) const override { impl_.save(out); }
  void load(torch::serialize::InputArchive& in) override { impl_.load(in); }

private:
  TorchOpt impl_;
};

/// Averaged SGD: decayed step size eta = lr / (1 + lambd * lr * t)^alpha, weight
/// shrinkage by (1 - lambd * eta), and a running average `ax` of the iterates
/// that starts once t exceeds t0.
class Asgd final : public Optimizer {
public:
  Asgd(std::vector<torch::Tensor> params, const OptimizerConfig& c) : params_(std::move(params)), cfg_(c) {
    state_.resize(params_.size());
  }

  void step() override {
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.grad().defined()) continue;
      State& s = state_[i];
      if (!s.ax.defined()) s.ax = torch::zeros_like(p);
      // eta is derived from the current lr so schedules take effect on the same step.
      const double eta = cfg_.lr / std::pow(1.0 + cfg_.asgd_lambd * cfg_.lr * static_cast<double>(s.step), cfg_.asgd_alpha);
      s.step += 1;
      auto grad = p.grad();
      if (cfg_.weight_decay != 0.0) grad = grad + cfg_.weight_decay * p;
      p.mul_(1.0 - cfg_.asgd_lambd * eta);
      p.add_(grad, -eta);
      const double mu = 1.0 / std::max(1.0, static_cast<double>(s.step) - cfg_.asgd_t0);
      if (mu != 1.0) {
        s.ax.add_((p - s.ax) * mu);
      } else {
        s.ax.copy_(p);
      }
    }
  }

  void zero_grad() override {
    for (auto& p : params_) {
      if (p.grad().defined()) p.mutable_grad().reset();
    }
  }

  void set_lr(double lr) override { cfg_.lr = lr; }

  /// Running average of the iterates, aligned with the parameter list.
  std::vector<torch::Tensor> averaged() const {
    std::vector<torch::Tensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(state_[i].ax.defined() ? state_[i].ax : params_[i]);
    return out;
  }

  int64_t steps(std::size_t i) const { return state_.at(i).step; }

  void save(torch::serialize::OutputArchive& out) const override {
    out.write("kind", c10::IValue(std::string("asgd")));
    out.write("size", c10::IValue(static_cast<int64_t>(params_.size())));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string k = std::to_string(i);
      out.write("step." + k, c10::IValue(state_[i].step));
      if (state_[i].ax.defined()) out.write("ax." + k, state_[i].ax, true);
    }
  }

  void load(torch::serialize::InputArchive& in) override {
    c10::IValue v;
    in.read("size", v);
    if (static_cast<std::size_t>(v.toInt()) != params_.size()) {
      throw FormatError("optimizer state holds " + std::to_string(v.toInt()) + " tensors, model has " +
                        std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const std::string k = std::to_string(i);
      in.read("step." + k, v);
      state_[i].step = v.toInt();
      torch::Tensor ax;
      if (in.try_read("ax." + k, ax, true)) state_[i].ax = ax.clone();
    }
  }

private:
  struct State {
    int64_t step = 0;
    torch::Tensor ax;
  };
  std::vector<torch::Tensor> params_;
  OptimizerConfig cfg_;
  std::vector<State> state_;
};

inline std::unique_ptr<Optimizer> make_optimizer(std::vector<torch::Tensor> params, const OptimizerConfig& c) {
  if (!(c.lr >= 0)) throw ConfigError("learning rate must be non-negative", "base_lr");
  switch (c.kind) {
    case OptimizerKind::sgd:
      return std::make_unique<TorchOptimizer<torch::optim::SGD, torch::optim::SGDOptions>>(
          std::move(params), torch::optim::SGDOptions(c.lr).momentum(c.momentum).weight_decay(c.weight_decay));
    case OptimizerKind::adam:
      return std::make_unique<TorchOptimizer<torch::optim::Adam, torch::optim::AdamOptions>>(
          std::move(params), torch::optim::AdamOptions(c.lr)
                                 .betas({c.beta1, c.beta2})
                                 .eps(c.adam_eps)
                                 .weight_decay(c.weight_decay));
    case OptimizerKind::asgd:
      return std::make_unique<Asgd>(std::move(params), c);
  }
  throw ConfigError("unknown optimizer", "optimizer");
}

}  // namespace deep3d::trainops
