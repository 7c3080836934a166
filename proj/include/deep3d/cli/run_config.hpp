#pragma once

// Run configuration: one JSON document with a schema version and the
// dataset / network / train / cv sections. Unknown keys are rejected.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "deep3d/error.hpp"
#include "deep3d/json_fields.hpp"
#include "deep3d/model/network.hpp"
#include "deep3d/pipeline.hpp"
#include "deep3d/trainops/train.hpp"

namespace deep3d::cli {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;
/// Overrides dataset.root from any config or checkpoint.
inline constexpr const char* kDatasetRootEnv = "DEEP3D_DATASET_ROOT";

struct CvConfig {
  bool enabled = false;
  int iterations = 10;
  int holdout = 30;
  uint64_t seed = 0;
  int fold = 0;  // which split of the plan this run trains on

  void validate() const {
    if (!enabled) return;
    if (iterations <= 0) throw ConfigError("cv.iterations must be positive", "cv.iterations");
    if (holdout <= 0) throw ConfigError("cv.holdout must be positive", "cv.holdout");
    if (fold < 0 || fold >= iterations) throw ConfigError("cv.fold must be in [0, iterations)", "cv.fold");
  }
};

struct RunConfig {
  pipeline::DataConfig dataset;
  model::NetworkConfig network;
  trainops::TrainConfig train;
  CvConfig cv;

  void validate() const {
    network.validate();
    dataset.validate();
    train.validate();
    cv.validate();
  }
};

inline Json to_json(const CvConfig& c) {
  return {{"enabled", c.enabled}, {"iterations", c.iterations}, {"holdout", c.holdout}, {"seed", c.seed}, {"fold", c.fold}};
}

inline Json to_json(const RunConfig& c) {
  return {{"schema_version", kSchemaVersion},
          {"dataset", pipeline::to_json(c.dataset)},
          {"network", model::to_json(c.network)},
          {"train", trainops::to_json(c.train)},
          {"cv", to_json(c.cv)}};
}

inline fs::path resolve_against(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

inline void apply_root_override(RunConfig& c) {
  if (const char* env = std::getenv(kDatasetRootEnv); env && *env) c.dataset.root = env;
}

/// Relative dataset paths are taken relative to `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const Json& j, const fs::path& base_dir = {}) {
  FieldReader r(j);
  const int version = r.require<int>("schema_version");
  if (version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(version) + "; expected " +
                          std::to_string(kSchemaVersion),
                      "schema_version");
  }
  RunConfig c;
  c.network = model::network_config_from_json(r.child("network"));
  c.dataset = pipeline::data_config_from_json(r.child("dataset"), c.network.threed_source);
  c.dataset.root = resolve_against(c.dataset.root, base_dir);
  c.dataset.cache_dir = resolve_against(c.dataset.cache_dir, base_dir);
  c.train = trainops::train_config_from_json(r.child("train"));
  {
    FieldReader cv = r.child("cv");
    c.cv.enabled = cv.get("enabled", c.cv.enabled);
    c.cv.iterations = cv.get("iterations", c.cv.iterations);
    c.cv.holdout = cv.get("holdout", c.cv.holdout);
    c.cv.seed = cv.get("seed", c.cv.seed);
    c.cv.fold = cv.get("fold", c.cv.fold);
    cv.finish();
  }
  r.finish();
  return c;
}

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'", "config");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what(), "config");
  }
}

/// Parses, applies the dataset-root environment override and validates.
inline RunConfig load_run_config(const fs::path& path) {
  RunConfig c = run_config_from_json(read_json_file(path), fs::absolute(path).parent_path());
  apply_root_override(c);
  c.validate();
  return c;
}

}  // namespace deep3d::cli
