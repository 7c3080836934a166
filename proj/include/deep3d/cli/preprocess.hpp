#pragma once

// Offline derivation of the 3D channel (and bird's-eye views) for a dataset.
// Outputs are skipped when newer than their inputs and produced with the
// same parameters; per-file failures are collected, not fatal.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "deep3d/cli/common.hpp"
#include "deep3d/io.hpp"
#include "deep3d/pipeline.hpp"

namespace deep3d::cli {

enum class PreprocessMode { elvdiff, disparity, bev };

inline PreprocessMode parse_preprocess_mode(const std::string& s) {
  if (s == "elvdiff") return PreprocessMode::elvdiff;
  if (s == "disparity") return PreprocessMode::disparity;
  if (s == "bev") return PreprocessMode::bev;
  throw ConfigError("mode must be elvdiff, disparity or bev; got '" + s + "'", "mode");
}

inline std::string to_string(PreprocessMode m) {
  switch (m) {
    case PreprocessMode::elvdiff: return "elvdiff";
    case PreprocessMode::disparity: return "disparity";
    default: return "bev";
  }
}

struct PreprocessOptions {
  pipeline::DataConfig data;
  PreprocessMode mode = PreprocessMode::elvdiff;
  fs::path out;
  bool force = false;
  int workers = 0;  // 0: one per hardware thread
};

struct FileFailure {
  std::string id;
  std::string message;
};

struct PreprocessSummary {
  fs::path dir;
  std::size_t total = 0;
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::vector<FileFailure> failures;
};

inline constexpr const char* kParamsFile = ".params.json";

namespace detail {

inline fs::file_time_type newest(const std::vector<fs::path>& ps) {
  auto t = fs::file_time_type::min();
  for (const auto& p : ps) t = std::max(t, fs::last_write_time(p));
  return t;
}

inline bool up_to_date(const std::vector<fs::path>& outputs, const std::vector<fs::path>& inputs) {
  for (const auto& o : outputs) {
    if (!fs::exists(o) || fs::last_write_time(o) < newest(inputs)) return false;
  }
  return true;
}

/// Writes through a temporary name so an interrupted run never leaves a plausible output.
inline void write_atomic(const fs::path& path, const cv::Mat& img) {
  const fs::path tmp = path.parent_path() / (path.stem().string() + ".partial.png");
  io::write_png(tmp, img);
  fs::rename(tmp, path);
}

inline Json mode_params(const PreprocessOptions& o) {
  const Json data = pipeline::to_json(o.data);
  switch (o.mode) {
    case PreprocessMode::elvdiff: return {{"mode", "elvdiff"}, {"elevation", data["elevation"]}};
    case PreprocessMode::disparity: return {{"mode", "disparity"}, {"completion_iters", o.data.completion_iters}};
    default: return {{"mode", "bev"}, {"elevation", data["elevation"]}, {"bev", data["bev"]}};
  }
}

}  // namespace detail

inline fs::path preprocess_dir(const PreprocessOptions& o) {
  if (o.mode == PreprocessMode::bev) return pipeline::bev_cache_dir(o.out, o.data.bev);
  return o.out / (o.mode == PreprocessMode::elvdiff ? "elvdiff" : "disparity");
}

/// Output files one record produces, in the layout the data pipeline reads back.
inline std::vector<fs::path> preprocess_outputs(const PreprocessOptions& o, const datasets::SampleRecord& r) {
  const fs::path dir = preprocess_dir(o);
  const std::string name = r.id + ".png";
  if (o.mode != PreprocessMode::bev) return {dir / name};
  return {dir / "image_2" / name, dir / "threed" / name, dir / "label" / name};
}

inline void preprocess_one(const PreprocessOptions& o, const datasets::SampleRecord& r) {
  const auto outs = preprocess_outputs(o, r);
  switch (o.mode) {
    case PreprocessMode::elvdiff: {
      const auto img = pipeline::compute_elvdiff(r, o.data.elevation, pipeline::image_size_of(r.rgb_path));
      detail::write_atomic(outs[0], img.pixels);
      break;
    }
    case PreprocessMode::disparity:
      detail::write_atomic(outs[0], pipeline::compute_disparity_u8(r, o.data.completion_iters));
      break;
    case PreprocessMode::bev: {
      if (!r.calib_path) throw DatasetError("no calibration file");
      pipeline::DataConfig d = o.data;
      d.cache_dir = o.out;  // reuse elvdiff images produced earlier into the same tree
      const cv::Mat bgr = io::read_image(r.rgb_path, cv::IMREAD_COLOR);
      const auto p = pipeline::to_bev(bgr, pipeline::threed_channel(r, d, {bgr.cols, bgr.rows}),
                                      pipeline::label_plane(r, d.kind, bgr.size()), read_kitti_calib(*r.calib_path),
                                      d.bev);
      detail::write_atomic(outs[0], p.bgr);
      detail::write_atomic(outs[1], p.threed);
      detail::write_atomic(outs[2], p.label);
      break;
    }
  }
}

inline std::vector<fs::path> preprocess_inputs(const datasets::SampleRecord& r, PreprocessMode m) {
  std::vector<fs::path> in{r.threed_path};
  if (m != PreprocessMode::disparity) {
    in.push_back(r.rgb_path);
    if (r.calib_path) in.push_back(*r.calib_path);
  }
  if (m == PreprocessMode::bev && r.label_path) in.push_back(*r.label_path);
  return in;
}

inline PreprocessSummary run_preprocess(const PreprocessOptions& o, std::ostream& log) {
  if (o.out.empty()) throw ConfigError("an output directory is required", "out");
  if (o.mode == PreprocessMode::disparity && o.data.kind != pipeline::DatasetKind::cityscapes) {
    throw ConfigError("disparity preprocessing needs a Cityscapes dataset", "mode");
  }
  if (o.mode != PreprocessMode::disparity && o.data.kind != pipeline::DatasetKind::kitti_road) {
    throw ConfigError(to_string(o.mode) + " preprocessing needs a KITTI road dataset", "mode");
  }
  o.data.elevation.validate();
  o.data.bev.validate();
  const auto recs = pipeline::index_records(o.data);

  PreprocessSummary s;
  s.dir = preprocess_dir(o);
  s.total = recs.size();
  fs::create_directories(s.dir);

  // A parameter change invalidates every output in the directory.
  const Json params = detail::mode_params(o);
  bool force = o.force;
  {
    std::ifstream in(s.dir / kParamsFile);
    Json old;
    if (!in || !(in >> old) || old != params) force = true;
  }
  { std::ofstream(s.dir / kParamsFile, std::ios::trunc) << params.dump(2) << "\n"; }

  enum class Status { written, skipped, failed };
  std::vector<Status> status(recs.size(), Status::skipped);
  std::vector<std::string> errors(recs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < recs.size();) {
      try {
        if (!force && detail::up_to_date(preprocess_outputs(o, recs[i]), preprocess_inputs(recs[i], o.mode))) continue;
        preprocess_one(o, recs[i]);
        status[i] = Status::written;
      } catch (const std::exception& e) {
        status[i] = Status::failed;
        errors[i] = e.what();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_workers = std::min<std::size_t>(o.workers > 0 ? o.workers : hw, std::max<std::size_t>(1, recs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (status[i] == Status::written) ++s.written;
    if (status[i] == Status::skipped) ++s.skipped;
    if (status[i] == Status::failed) s.failures.push_back({recs[i].id, errors[i]});
  }
  log << "preprocess " << to_string(o.mode) << ": " << s.total << " records, " << s.written << " written, "
      << s.skipped << " up to date, " << s.failures.size() << " failed -> " << s.dir.string() << "\n";
  for (const auto& f : s.failures) log << "  FAILED " << f.id << ": " << f.message << "\n";
  return s;
}

}  // namespace deep3d::cli
