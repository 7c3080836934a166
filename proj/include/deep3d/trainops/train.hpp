#pragma once

// Training loop: full minibatches drawn from a per-epoch shuffle, per-pixel
// cross-entropy with an ignore label, per-epoch validation, JSONL metric log,
// best/last checkpoints and exact resume.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <ATen/autocast_mode.h>
#include <torch/torch.h>

#include "deep3d/error.hpp"
#include "deep3d/json_fields.hpp"
#include "deep3d/metrics.hpp"
#include "deep3d/model/checkpoint.hpp"
#include "deep3d/model/network.hpp"
#include "deep3d/trainops/augment.hpp"
#include "deep3d/trainops/init.hpp"
#include "deep3d/trainops/optim.hpp"
#include "deep3d/trainops/schedule.hpp"

namespace deep3d::trainops {

/// Random access to aligned samples; implementations may load lazily.
class SampleSource {
public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Sample get(std::size_t i) const = 0;
};

class InMemorySource final : public SampleSource {
public:
  explicit InMemorySource(std::vector<Sample> samples) : samples_(std::move(samples)) {
    for (const auto& s : samples_) check_aligned(s);
  }
  std::size_t size() const override { return samples_.size(); }
  Sample get(std::size_t i) const override { return samples_.at(i); }

private:
  std::vector<Sample> samples_;
};

/// Subset view by index list.
class SubsetSource final : public SampleSource {
public:
  SubsetSource(const SampleSource& base, std::vector<std::size_t> idx) : base_(base), idx_(std::move(idx)) {}
  std::size_t size() const override { return idx_.size(); }
  Sample get(std::size_t i) const override { return base_.get(idx_.at(i)); }

private:
  const SampleSource& base_;
  std::vector<std::size_t> idx_;
};

// ImageNet channel statistics the context backbone expects.
inline constexpr std::array<float, 3> kRgbMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kRgbStd = {0.229f, 0.224f, 0.225f};

struct TensorBatch {
  torch::Tensor rgb;     // (N, 3, H, W), normalized
  torch::Tensor threed;  // (N, 1, H, W)
  torch::Tensor label;   // (N, H, W) int64
};

inline torch::Tensor mat_to_chw(const cv::Mat& m) {
  cv::Mat c = m.isContinuous() ? m : m.clone();
  auto t = torch::from_blob(c.data, {c.rows, c.cols, c.channels()}, torch::kFloat32);
  return t.permute({2, 0, 1}).clone();
}

inline TensorBatch to_batch(const std::vector<Sample>& samples) {
  std::vector<torch::Tensor> rgb, t3d, lab;
  const auto mean = torch::tensor(std::vector<float>(kRgbMean.begin(), kRgbMean.end())).view({3, 1, 1});
  const auto stdv = torch::tensor(std::vector<float>(kRgbStd.begin(), kRgbStd.end())).view({3, 1, 1});
  for (const auto& s : samples) {
    check_aligned(s);
    rgb.push_back((mat_to_chw(s.rgb) - mean) / stdv);
    t3d.push_back(mat_to_chw(s.threed));
    cv::Mat l = s.label.isContinuous() ? s.label : s.label.clone();
    lab.push_back(torch::from_blob(l.data, {l.rows, l.cols}, torch::kUInt8).to(torch::kLong));
  }
  return {torch::stack(rgb), torch::stack(t3d), torch::stack(lab)};
}

enum class ValMetric { maxf, miou };

inline ValMetric parse_metric(const std::string& s) {
  if (s == "maxf") return ValMetric::maxf;
  if (s == "miou") return ValMetric::miou;
  throw ConfigError("metric must be 'maxf' or 'miou'", "metric");
}

inline std::string to_string(ValMetric m) { return m == ValMetric::maxf ? "maxf" : "miou"; }

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::asgd;
  double base_lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 0.0;
  ScheduleKind schedule = ScheduleKind::poly;
  double poly_power = 0.9;
  double cyc_lower = 0.0001;
  double cyc_upper = 0.25;
  int64_t cyc_step_size = 0;  // 0: two epochs per half cycle
  int minibatch = 4;
  int epochs = 40;
  int64_t max_iters = 0;  // 0: epochs * iterations per epoch
  int ignore_index = 255;
  uint64_t seed = 0;
  bool reduced_precision = false;
  int freeze_backbone_epochs = 0;
  double aux_weight = 1.0;
  ValMetric metric = ValMetric::maxf;
  AugmentConfig augment;

  void validate() const {
    if (!(base_lr >= 0)) throw ConfigError("base_lr must be non-negative", "train.base_lr");
    if (!(poly_power > 0)) throw ConfigError("poly_power must be positive", "train.poly_power");
    if (!(cyc_lower < cyc_upper)) throw ConfigError("cyc_lower must be below cyc_upper", "train.cyc_lower");
    if (cyc_step_size < 0) throw ConfigError("cyc_step_size must be non-negative", "train.cyc_step_size");
    if (minibatch <= 0) throw ConfigError("minibatch must be positive", "train.minibatch");
    if (epochs <= 0 && max_iters <= 0) throw ConfigError("epochs or max_iters must be positive", "train.epochs");
    if (max_iters < 0) throw ConfigError("max_iters must be non-negative", "train.max_iters");
    if (ignore_index < 0 || ignore_index > 255) throw ConfigError("ignore_index must be a byte", "train.ignore_index");
    if (freeze_backbone_epochs < 0) throw ConfigError("freeze_backbone_epochs must be non-negative", "train.freeze_backbone_epochs");
    augment.validate();
  }
};

inline TrainConfig train_config_from_json(FieldReader r) {
  TrainConfig c;
  c.optimizer = parse_optimizer(r.get<std::string>("optimizer", to_string(c.optimizer)));
  c.base_lr = r.get("base_lr", c.base_lr);
  c.momentum = r.get("momentum", c.momentum);
  c.weight_decay = r.get("weight_decay", c.weight_decay);
  c.schedule = parse_schedule(r.get<std::string>("schedule", to_string(c.schedule)));
  c.poly_power = r.get("poly_power", c.poly_power);
  c.cyc_lower = r.get("cyc_lower", c.cyc_lower);
  c.cyc_upper = r.get("cyc_upper", c.cyc_upper);
  c.cyc_step_size = r.get("cyc_step_size", c.cyc_step_size);
  c.minibatch = r.get("minibatch", c.minibatch);
  c.epochs = r.get("epochs", c.epochs);
  c.max_iters = r.get("max_iters", c.max_iters);
  c.ignore_index = r.get("ignore_index", c.ignore_index);
  c.seed = r.get("seed", c.seed);
  c.reduced_precision = r.get("reduced_precision", c.reduced_precision);
  c.freeze_backbone_epochs = r.get("freeze_backbone_epochs", c.freeze_backbone_epochs);
  c.aux_weight = r.get("aux_weight", c.aux_weight);
  c.metric = parse_metric(r.get<std::string>("metric", to_string(c.metric)));
  c.augment = augment_config_from_json(r.child("augment"));
  r.finish();
  c.validate();
  return c;
}

inline Json to_json(const TrainConfig& c) {
  return {{"optimizer", to_string(c.optimizer)},
          {"base_lr", c.base_lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"schedule", to_string(c.schedule)},
          {"poly_power", c.poly_power},
          {"cyc_lower", c.cyc_lower},
          {"cyc_upper", c.cyc_upper},
          {"cyc_step_size", c.cyc_step_size},
          {"minibatch", c.minibatch},
          {"epochs", c.epochs},
          {"max_iters", c.max_iters},
          {"ignore_index", c.ignore_index},
          {"seed", c.seed},
          {"reduced_precision", c.reduced_precision},
          {"freeze_backbone_epochs", c.freeze_backbone_epochs},
          {"aux_weight", c.aux_weight},
          {"metric", to_string(c.metric)},
          {"augment", to_json(c.augment)}};
}

/// Mean per-pixel cross-entropy over non-ignored pixels; 0 when every pixel is ignored.
inline torch::Tensor segmentation_loss(const torch::Tensor& scores, const torch::Tensor& label, int ignore_index) {
  const auto valid = label.ne(ignore_index);
  if (valid.sum().item<int64_t>() == 0) return (scores * 0).sum();
  namespace F = torch::nn::functional;
  return F::cross_entropy(scores.to(torch::kFloat32), label, F::CrossEntropyFuncOptions().ignore_index(ignore_index));
}

/// Enables CPU bf16 autocast for its lifetime.
class ReducedPrecisionScope {
public:
  explicit ReducedPrecisionScope(bool on) : on_(on) {
    if (on_) {
      prev_enabled_ = at::autocast::is_autocast_enabled(at::kCPU);
      prev_dtype_ = at::autocast::get_autocast_dtype(at::kCPU);
      at::autocast::set_autocast_dtype(at::kCPU, at::kBFloat16);
      at::autocast::set_autocast_enabled(at::kCPU, true);
    }
  }
  ~ReducedPrecisionScope() {
    if (on_) {
      at::autocast::set_autocast_enabled(at::kCPU, prev_enabled_);
      at::autocast::set_autocast_dtype(at::kCPU, prev_dtype_);
      at::autocast::clear_cache();
    }
  }
  ReducedPrecisionScope(const ReducedPrecisionScope&) = delete;
  ReducedPrecisionScope& operator=(const ReducedPrecisionScope&) = delete;

private:
  bool on_;
  bool prev_enabled_ = false;
  at::ScalarType prev_dtype_ = at::kBFloat16;
};

struct EvalSummary {
  double pixel_accuracy = 0;  // percent over non-ignored pixels
  double miou = 0;            // percent
  double maxf = 0;            // percent; road class 1 vs rest
  std::size_t images = 0;
};

/// Inference-mode pass over a source. Road scoring is only computed for two-class models.
inline EvalSummary evaluate(model::ThreeDeepNet& net, const SampleSource& src, int ignore_index = 255,
                            bool reduced_precision = false) {
  torch::NoGradGuard guard;
  const bool was_training = net->is_training();
  net->eval();
  const int classes = net->config().num_classes;
  metrics::ConfusionMatrix cm(classes);
  std::optional<metrics::RoadAccumulator> road;
  if (classes == 2) road.emplace(metrics::uniform_thresholds());
  bool any_road = false;
  EvalSummary out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto b = to_batch({src.get(i)});
    torch::Tensor scores;
    {
      ReducedPrecisionScope rp(reduced_precision);
      scores = net(b.rgb, b.threed).scores.to(torch::kFloat32);
    }
    const auto pred = scores.argmax(1).to(torch::kInt32).contiguous();
    auto gt = b.label.to(torch::kInt32).contiguous();
    const auto n = static_cast<std::size_t>(gt.numel());
    std::vector<int> g(gt.data_ptr<int>(), gt.data_ptr<int>() + n), p(pred.data_ptr<int>(), pred.data_ptr<int>() + n);
    metrics::confusion_update(cm, std::span<const int>(p), std::span<const int>(g), ignore_index);
    if (road) {
      const auto prob = torch::softmax(scores, 1).select(1, 1).contiguous();
      std::vector<float> score(prob.data_ptr<float>(), prob.data_ptr<float>() + n);
      std::vector<uint8_t> is_road(n), valid(n);
      for (std::size_t k = 0; k < n; ++k) {
        valid[k] = g[k] != ignore_index;
        is_road[k] = g[k] == 1;
        any_road = any_road || (valid[k] && is_road[k]);
      }
      road->add(score, is_road, valid);
    }
    ++out.images;
  }
  out.pixel_accuracy = metrics::pixel_accuracy(cm);
  out.miou = metrics::miou(cm).mean;
  if (road && any_road) out.maxf = road->report().max_f;
  if (was_training) net->train();
  return out;
}

struct EpochRecord {
  int64_t epoch = 0;  // 1-based count of completed epochs
  int64_t iteration = 0;
  double lr = 0;
  double loss = 0;
  double train_pixel_accuracy = 0;
  std::optional<double> val_metric;
  double wall_time_s = 0;
  int64_t nan_batches = 0;
  bool frozen_backbones = false;
};

struct TrainOutputs {
  std::filesystem::path run_dir;  // metrics.jsonl and checkpoints/ go here
  bool resume = false;
  Json config_snapshot = Json::object();  // stored inside checkpoints
};

struct TrainHooks {
  /// Called after each logged epoch; returning false stops training early.
  std::function<bool(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int64_t epochs_completed = 0;
  int64_t iterations = 0;
  double best_metric = -1;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
};

inline std::mt19937_64 epoch_engine(uint64_t seed, int64_t epoch, uint32_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(epoch),
                    stream};
  return std::mt19937_64(seq);
}

/// Minibatch schedule for one epoch: a shuffle, wrapped so every batch is full.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int minibatch, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t mb = static_cast<std::size_t>(minibatch);
  const std::size_t batches = (n + mb - 1) / mb;
  std::vector<std::vector<std::size_t>> out(batches);
  for (std::size_t b = 0; b < batches; ++b)
    for (std::size_t k = 0; k < mb; ++k) out[b].push_back(order[(b * mb + k) % n]);
  return out;
}

inline Json to_json(const EpochRecord& r, std::size_t train_size, std::size_t val_size, const TrainConfig& c) {
  Json j = {{"epoch", r.epoch},
            {"iteration", r.iteration},
            {"train_size", train_size},
            {"val_size", val_size},
            {"minibatch", c.minibatch},
            {"lr", r.lr},
            {"loss", std::isfinite(r.loss) ? Json(r.loss) : Json(nullptr)},
            {"train_pixel_accuracy", r.train_pixel_accuracy},
            {"metric", to_string(c.metric)},
            {"val_metric", r.val_metric ? Json(*r.val_metric) : Json(nullptr)},
            {"nan_batches", r.nan_batches},
            {"frozen_backbones", r.frozen_backbones}};
  return j;
}

inline TrainResult train(model::ThreeDeepNet& net, const SampleSource& train_set, const SampleSource* val_set,
                         const TrainConfig& cfg, const TrainOutputs& out, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw DatasetError("training set is empty");
  namespace fs = std::filesystem;
  const fs::path ckpt_dir = out.run_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  TrainResult result;
  result.log_path = out.run_dir / "metrics.jsonl";
  result.last_checkpoint = ckpt_dir / "last.ckpt";
  result.best_checkpoint = ckpt_dir / "best.ckpt";

  const int64_t per_epoch = static_cast<int64_t>((train_set.size() + cfg.minibatch - 1) / cfg.minibatch);
  const int64_t total_iters = cfg.max_iters > 0 ? cfg.max_iters : per_epoch * cfg.epochs;
  const int64_t total_epochs = (total_iters + per_epoch - 1) / per_epoch;

  LrSchedule sched{cfg.schedule, cfg.base_lr, cfg.poly_power, cfg.cyc_lower, cfg.cyc_upper,
                   cfg.cyc_step_size > 0 ? cfg.cyc_step_size : 2 * per_epoch, total_iters};

  OptimizerConfig oc;
  oc.kind = cfg.optimizer;
  oc.lr = sched.at(0);
  oc.momentum = cfg.momentum;
  oc.weight_decay = cfg.weight_decay;
  // Frozen tensors keep an undefined grad, which every optimizer here skips.
  auto opt = make_optimizer(net->parameters(), oc);

  int64_t start_epoch = 0;
  int64_t iteration = 0;
  double best = -1;
  if (out.resume && fs::exists(result.last_checkpoint)) {
    const auto meta = model::load_checkpoint(result.last_checkpoint, *net,
                                             [&](torch::serialize::InputArchive& a) { opt->load(a); });
    start_epoch = meta.epoch;
    iteration = meta.iteration;
    best = meta.extra.value("best_metric", -1.0);
  } else if (!out.resume) {
    std::ofstream(result.log_path, std::ios::trunc);
  }
  result.best_metric = best;
  std::ofstream log(result.log_path, std::ios::app);

  auto save = [&](const fs::path& p, int64_t epoch) {
    model::CheckpointMeta meta;
    meta.config = out.config_snapshot;
    meta.epoch = epoch;
    meta.iteration = iteration;
    meta.seed = cfg.seed;
    meta.extra = {{"best_metric", best}};
    model::save_checkpoint(p, *net, meta, [&](torch::serialize::OutputArchive& a) { opt->save(a); });
  };

  net->train();
  for (int64_t epoch = start_epoch; epoch < total_epochs && iteration < total_iters; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool frozen = epoch < cfg.freeze_backbone_epochs;
    net->set_backbones_trainable(!frozen);
    // Determinism across resume: the torch RNG and the shuffle both derive from (seed, epoch).
    torch::manual_seed(cfg.seed * 1000003ULL + static_cast<uint64_t>(epoch));
    auto shuffle_rng = epoch_engine(cfg.seed, epoch, 0);
    const auto batches = epoch_batches(train_set.size(), cfg.minibatch, shuffle_rng);

    EpochRecord rec;
    rec.frozen_backbones = frozen;
    double loss_sum = 0;
    int64_t loss_count = 0, correct = 0, counted = 0;
    int64_t ran = 0;
    for (std::size_t b = 0; b < batches.size() && iteration < total_iters; ++b) {
      const double lr = sched.at(iteration);
      opt->set_lr(lr);
      rec.lr = lr;
      std::vector<Sample> samples;
      for (std::size_t k = 0; k < batches[b].size(); ++k) {
        auto aug_rng = epoch_engine(cfg.seed, epoch, static_cast<uint32_t>(1 + b * batches[b].size() + k));
        samples.push_back(augment(train_set.get(batches[b][k]), cfg.augment, aug_rng));
      }
      const auto batch = to_batch(samples);
      opt->zero_grad();
      torch::Tensor loss;
      model::NetworkOutput o;
      {
        ReducedPrecisionScope rp(cfg.reduced_precision);
        o = net(batch.rgb, batch.threed);
      }
      loss = segmentation_loss(o.scores, batch.label, cfg.ignore_index);
      if (o.aux16.defined()) {
        loss = loss + cfg.aux_weight * (segmentation_loss(o.aux16, batch.label, cfg.ignore_index) +
                                        segmentation_loss(o.aux32, batch.label, cfg.ignore_index));
      }
      ++ran;
      ++iteration;
      const double lv = loss.item<double>();
      if (!std::isfinite(lv)) {
        ++rec.nan_batches;
        continue;
      }
      loss.backward();
      opt->step();
      loss_sum += lv;
      ++loss_count;
      {
        torch::NoGradGuard ng;
        const auto valid = batch.label.ne(cfg.ignore_index);
        correct += (o.scores.argmax(1).eq(batch.label) & valid).sum().item<int64_t>();
        counted += valid.sum().item<int64_t>();
      }
    }
    if (ran > 0 && rec.nan_batches == ran) {
      throw NumericError("loss was non-finite for every batch of epoch " + std::to_string(epoch + 1));
    }
    rec.epoch = epoch + 1;
    rec.iteration = iteration;
    rec.loss = loss_count ? loss_sum / static_cast<double>(loss_count) : std::nan("");
    rec.train_pixel_accuracy = counted ? 100.0 * static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    double score = rec.train_pixel_accuracy;
    if (val_set && val_set->size() > 0) {
      const auto ev = evaluate(net, *val_set, cfg.ignore_index, cfg.reduced_precision);
      rec.val_metric = cfg.metric == ValMetric::maxf ? ev.maxf : ev.miou;
      score = *rec.val_metric;
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (score > best) {
      best = score;
      save(result.best_checkpoint, rec.epoch);
    }
    save(result.last_checkpoint, rec.epoch);
    log << to_json(rec, train_set.size(), val_set ? val_set->size() : 0, cfg).dump() << "\n" << std::flush;
    result.history.push_back(rec);
    result.epochs_completed = rec.epoch;
    if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
  }
  net->set_backbones_trainable(true);
  result.iterations = iteration;
  result.best_metric = best;
  if (result.epochs_completed == 0) result.epochs_completed = start_epoch;
  return result;
}

}  // namespace deep3d::trainops
