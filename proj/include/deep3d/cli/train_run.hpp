#pragma once

// `train`: a run directory holds manifest.json, config.json, metrics.jsonl,
// checkpoints/ and, with cross-validation, cv_plan.json.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>

#include "deep3d/cli/common.hpp"
#include "deep3d/cli/manifest.hpp"
#include "deep3d/trainops/cross_validation.hpp"
#include "deep3d/trainops/init.hpp"

namespace deep3d::cli {

struct TrainRunOptions {
  RunConfig config;
  fs::path run_dir;
  bool resume = false;
  std::optional<uint64_t> seed;  // overrides train.seed
  int stop_after_epochs = 0;     // end this session after N epochs (0: run to completion)
};

struct TrainRunResult {
  trainops::TrainResult train;
  double final_train_pixel_accuracy = 0;
  fs::path manifest;
};

inline Json dataset_identity(const pipeline::DataConfig& d, const std::vector<datasets::SampleRecord>& recs) {
  const auto fp = pipeline::fingerprint(recs, d.root);
  return {{"root", d.root.string()}, {"records", recs.size()}, {"files", fp.files}, {"hash", fp.hash}};
}

inline void write_json(const fs::path& p, const Json& j) {
  std::ofstream out(p, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw Error("cannot write '" + p.string() + "'");
}

inline TrainRunResult run_train(TrainRunOptions o, std::ostream& log) {
  RunConfig& cfg = o.config;
  if (o.seed) cfg.train.seed = *o.seed;
  cfg.validate();
  if (o.run_dir.empty()) throw ConfigError("an output run directory is required", "out");
  const bool has_manifest = fs::exists(o.run_dir / kManifestName);
  if (has_manifest && !o.resume) {
    throw ConfigError("'" + o.run_dir.string() + "' already holds a run; pass --resume to continue it", "out");
  }
  if (o.resume && !has_manifest) throw ConfigError("nothing to resume in '" + o.run_dir.string() + "'", "resume");

  const auto recs = pipeline::index_records(cfg.dataset);
  if (recs.empty()) throw DatasetError("dataset at '" + cfg.dataset.root.string() + "' has no samples");
  check_class_count(cfg.network, cfg.dataset);

  const Json snapshot = to_json(cfg);
  auto manifest = RunManifest::open_or_create(o.run_dir, snapshot, cfg.train.seed, dataset_identity(cfg.dataset, recs));
  write_json(o.run_dir / "config.json", snapshot);
  std::vector<fs::path> artifacts{"config.json"};

  std::vector<datasets::SampleRecord> train_recs = recs, val_recs;
  if (cfg.cv.enabled) {
    std::vector<std::string> ids;
    for (const auto& r : recs) ids.push_back(r.id);
    const auto plan = trainops::monte_carlo_split(ids, cfg.cv.holdout, cfg.cv.iterations, cfg.cv.seed);
    write_json(o.run_dir / "cv_plan.json", trainops::to_json(plan));
    artifacts.emplace_back("cv_plan.json");
    const auto& split = plan.splits.at(cfg.cv.fold);
    const std::set<std::string> val(split.val_ids.begin(), split.val_ids.end());
    train_recs.clear();
    for (const auto& r : recs) (val.count(r.id) ? val_recs : train_recs).push_back(r);
  }
  const pipeline::RecordSource train_set(train_recs, cfg.dataset);
  const pipeline::RecordSource val_set(val_recs, cfg.dataset);

  manifest.begin_session("train", o.resume);
  const auto t0 = std::chrono::steady_clock::now();
  TrainRunResult out;
  out.manifest = manifest.path();
  try {
    model::ThreeDeepNet net(cfg.network);
    std::set<const torch::nn::Module*> keep;
    if (cfg.network.pretrained_context) keep.insert(net->context->backbone.get());
    if (cfg.network.pretrained_threed) keep.insert(net->threed->backbone.get());
    trainops::kaiming_init(*net, cfg.train.seed, keep);
    model::load_pretrained(net);

    trainops::TrainHooks hooks;
    int session_epochs = 0;
    hooks.on_epoch = [&](const trainops::EpochRecord& r) {
      ++session_epochs;
      log << "epoch " << r.epoch << " iter " << r.iteration << " lr " << r.lr << " loss " << r.loss << " train_acc "
          << std::fixed << std::setprecision(2) << r.train_pixel_accuracy << "%";
      if (r.val_metric) log << " val_" << trainops::to_string(cfg.train.metric) << " " << *r.val_metric;
      log << std::defaultfloat << "\n";
      return o.stop_after_epochs <= 0 || session_epochs < o.stop_after_epochs;
    };
    out.train = trainops::train(net, train_set, val_recs.empty() ? nullptr : &val_set, cfg.train,
                                {o.run_dir, o.resume, snapshot}, hooks);
    // Eval-mode accuracy on the training images, without augmentation.
    out.final_train_pixel_accuracy =
        trainops::evaluate(net, train_set, cfg.train.ignore_index, cfg.train.reduced_precision).pixel_accuracy;
  } catch (const std::exception& e) {
    manifest.end_session("failed", artifacts, {{"error", e.what()}});
    throw;
  }
  log << "final train pixel accuracy " << std::fixed << std::setprecision(2) << out.final_train_pixel_accuracy
      << "%\n" << std::defaultfloat;

  artifacts.emplace_back("metrics.jsonl");
  artifacts.emplace_back("checkpoints/last.ckpt");
  if (fs::exists(out.train.best_checkpoint)) artifacts.emplace_back("checkpoints/best.ckpt");
  const int64_t per_epoch = (static_cast<int64_t>(train_recs.size()) + cfg.train.minibatch - 1) / cfg.train.minibatch;
  const int64_t planned = cfg.train.max_iters > 0 ? cfg.train.max_iters : per_epoch * cfg.train.epochs;
  manifest.end_session(
      out.train.iterations >= planned ? "completed" : "stopped", artifacts,
      {{"epochs_completed", out.train.epochs_completed},
       {"iterations", out.train.iterations},
       {"best_metric", out.train.best_metric},
       {"final_train_pixel_accuracy", out.final_train_pixel_accuracy},
       {"train_images", train_recs.size()},
       {"val_images", val_recs.size()},
       {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
  return out;
}

}  // namespace deep3d::cli
