#pragma once

// From dataset records to aligned training samples: RGB, the normalized 3D
// channel (elvdiff from LiDAR or completed disparity), and train-id labels,
// optionally re-projected to bird's-eye view and resized.

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "deep3d/datasets.hpp"
#include "deep3d/disparity.hpp"
#include "deep3d/error.hpp"
#include "deep3d/geometry3d.hpp"
#include "deep3d/hash.hpp"
#include "deep3d/io.hpp"
#include "deep3d/json_fields.hpp"
#include "deep3d/model/network.hpp"
#include "deep3d/trainops/train.hpp"

namespace deep3d::pipeline {

namespace fs = std::filesystem;
using model::ThreeDSource;

enum class DatasetKind { kitti_road, cityscapes };
enum class View { perspective, bev };

inline DatasetKind parse_kind(const std::string& s) {
  if (s == "kitti_road") return DatasetKind::kitti_road;
  if (s == "cityscapes") return DatasetKind::cityscapes;
  throw ConfigError("dataset.kind must be 'kitti_road' or 'cityscapes'", "dataset.kind");
}
inline std::string to_string(DatasetKind k) { return k == DatasetKind::kitti_road ? "kitti_road" : "cityscapes"; }

inline View parse_view(const std::string& s) {
  if (s == "perspective") return View::perspective;
  if (s == "bev") return View::bev;
  throw ConfigError("dataset.view must be 'perspective' or 'bev'", "dataset.view");
}
inline std::string to_string(View v) { return v == View::perspective ? "perspective" : "bev"; }

struct DataConfig {
  DatasetKind kind = DatasetKind::kitti_road;
  fs::path root;
  std::string split = "training";
  std::string city;
  ThreeDSource threed_source = ThreeDSource::elvdiff;
  int width = 0;  // resize target; 0 keeps the native size
  int height = 0;
  View view = View::perspective;
  datasets::BevConfig bev;
  fs::path cache_dir;  // preprocess output root; consulted before recomputing
  ElevationFilterConfig elevation;
  int completion_iters = 100;

  void validate() const {
    if (root.empty()) throw ConfigError("dataset.root is empty", "dataset.root");
    if ((width == 0) != (height == 0) || width < 0 || height < 0) {
      throw ConfigError("dataset.width and dataset.height must both be positive or both 0", "dataset.width");
    }
    if (kind == DatasetKind::kitti_road && threed_source != ThreeDSource::elvdiff) {
      throw ConfigError("KITTI road provides LiDAR only; threed_source must be elvdiff", "network.threed_source");
    }
    if (kind == DatasetKind::cityscapes && threed_source != ThreeDSource::disparity) {
      throw ConfigError("Cityscapes provides stereo only; threed_source must be disparity", "network.threed_source");
    }
    if (kind == DatasetKind::cityscapes && view == View::bev) {
      throw ConfigError("bird's-eye view needs KITTI calibration", "dataset.view");
    }
    if (completion_iters < 0) throw ConfigError("completion_iters must be non-negative", "dataset.completion_iters");
    elevation.validate();
    bev.validate();
  }
};

inline Interval interval_from(FieldReader& r, const std::string& key, Interval fallback) {
  auto v = r.get<std::vector<double>>(key, {fallback.min, fallback.max});
  if (v.size() != 2) throw ConfigError("'" + r.path(key) + "' must be [min, max]", r.path(key));
  return {v[0], v[1]};
}

inline DataConfig data_config_from_json(FieldReader r, ThreeDSource source) {
  DataConfig c;
  c.threed_source = source;
  c.kind = parse_kind(r.get<std::string>("kind", to_string(c.kind)));
  c.root = r.get<std::string>("root", "");
  c.split = r.get<std::string>("split", c.kind == DatasetKind::kitti_road ? "training" : "train");
  c.city = r.get<std::string>("city", "");
  c.width = r.get("width", c.width);
  c.height = r.get("height", c.height);
  c.view = parse_view(r.get<std::string>("view", to_string(c.view)));
  c.cache_dir = r.get<std::string>("cache_dir", "");
  c.completion_iters = r.get("completion_iters", c.completion_iters);
  {
    FieldReader b = r.child("bev");
    c.bev.width = b.get("width", c.bev.width);
    c.bev.height = b.get("height", c.bev.height);
    c.bev.lateral = interval_from(b, "lateral", c.bev.lateral);
    c.bev.longitudinal = interval_from(b, "longitudinal", c.bev.longitudinal);
    c.bev.camera_height = b.get("camera_height", c.bev.camera_height);
    b.finish();
  }
  {
    FieldReader e = r.child("elevation");
    c.elevation.fov_h = interval_from(e, "fov_h", c.elevation.fov_h);
    c.elevation.fov_v = interval_from(e, "fov_v", c.elevation.fov_v);
    c.elevation.x_range = interval_from(e, "x_range", c.elevation.x_range);
    c.elevation.y_range = interval_from(e, "y_range", c.elevation.y_range);
    c.elevation.z_range = interval_from(e, "z_range", c.elevation.z_range);
    c.elevation.dilation_kernel = e.get("dilation_kernel", c.elevation.dilation_kernel);
    e.finish();
  }
  r.finish();
  return c;
}

inline Json to_json(const DataConfig& c) {
  auto iv = [](const Interval& i) { return Json::array({i.min, i.max}); };
  return {{"kind", to_string(c.kind)},
          {"root", c.root.string()},
          {"split", c.split},
          {"city", c.city},
          {"width", c.width},
          {"height", c.height},
          {"view", to_string(c.view)},
          {"cache_dir", c.cache_dir.string()},
          {"completion_iters", c.completion_iters},
          {"bev",
           {{"width", c.bev.width},
            {"height", c.bev.height},
            {"lateral", iv(c.bev.lateral)},
            {"longitudinal", iv(c.bev.longitudinal)},
            {"camera_height", c.bev.camera_height}}},
          {"elevation",
           {{"fov_h", iv(c.elevation.fov_h)},
            {"fov_v", iv(c.elevation.fov_v)},
            {"x_range", iv(c.elevation.x_range)},
            {"y_range", iv(c.elevation.y_range)},
            {"z_range", iv(c.elevation.z_range)},
            {"dilation_kernel", c.elevation.dilation_kernel}}}};
}

inline std::vector<datasets::SampleRecord> index_records(const DataConfig& c) {
  if (!fs::exists(c.root)) throw DatasetError("dataset root '" + c.root.string() + "' does not exist");
  return c.kind == DatasetKind::kitti_road ? datasets::index_kitti_road(c.root, c.split)
                                           : datasets::index_cityscapes(c.root, c.split, c.city);
}

/// File count plus a hash of the index (ids, relative paths, sizes).
struct DatasetFingerprint {
  std::size_t files = 0;
  std::string hash;
};

inline DatasetFingerprint fingerprint(const std::vector<datasets::SampleRecord>& recs, const fs::path& root) {
  DatasetFingerprint f;
  Fnv1a h;
  auto add = [&](const fs::path& p) {
    h.update(fs::relative(p, root).generic_string());
    h.update(static_cast<std::uint64_t>(fs::file_size(p)));
    ++f.files;
  };
  for (const auto& r : recs) {
    h.update(r.id);
    add(r.rgb_path);
    add(r.threed_path);
    if (r.label_path) add(*r.label_path);
    if (r.calib_path) add(*r.calib_path);
  }
  f.hash = h.hex();
  return f;
}

// ---- 3D channel --------------------------------------------------------------

inline std::string cache_subdir(ThreeDSource s) { return to_string(s); }

inline fs::path bev_cache_dir(const fs::path& cache_root, const datasets::BevConfig& bev) {
  return cache_root / ("bev_" + fnv1a_hex(bev.fingerprint()));
}

inline ImageSize image_size_of(const fs::path& rgb_path) {
  const cv::Mat img = io::read_image(rgb_path, cv::IMREAD_COLOR);
  return {img.cols, img.rows};
}

/// Elevation image for a KITTI record, computed from the scan and calibration.
inline ElevationPatternImage compute_elvdiff(const datasets::SampleRecord& r, const ElevationFilterConfig& cfg,
                                             ImageSize dims) {
  if (!r.calib_path) throw DatasetError("record '" + r.id + "' has no calibration");
  const PointCloud cloud = read_velodyne(r.threed_path);
  const Calibration calib = read_kitti_calib(*r.calib_path);
  return generate_elvdiff(cloud, calib, cfg, dims);
}

/// Completed, normalized disparity encoded as 8 bits for the cache.
inline cv::Mat1b compute_disparity_u8(const datasets::SampleRecord& r, int completion_iters) {
  const auto raw = io::read_image(r.threed_path, cv::IMREAD_UNCHANGED);
  const auto done = complete_disparity(decode_cityscapes_disparity(raw), completion_iters);
  return to_u8(to_network_channel(done.map));
}

/// Normalized 3D channel in [0, 1] at the record's native resolution.
inline cv::Mat1f threed_channel(const datasets::SampleRecord& r, const DataConfig& c, ImageSize dims) {
  if (!c.cache_dir.empty()) {
    const fs::path cached = c.cache_dir / cache_subdir(c.threed_source) / (r.id + ".png");
    if (fs::exists(cached)) {
      const cv::Mat img = io::read_image(cached, cv::IMREAD_GRAYSCALE);
      if (img.cols != dims.width || img.rows != dims.height) {
        throw DatasetError("cached 3D image '" + cached.string() + "' does not match the RGB size");
      }
      // elvdiff is cached as the raw elevation image, disparity as the already normalized channel.
      if (c.threed_source == ThreeDSource::elvdiff) return to_network_channel(ElevationPatternImage(cv::Mat1b(img)));
      cv::Mat1f out;
      img.convertTo(out, CV_32F, 1.0 / 255.0);
      return out;
    }
  }
  if (c.threed_source == ThreeDSource::elvdiff) return to_network_channel(compute_elvdiff(r, c.elevation, dims));
  const auto raw = io::read_image(r.threed_path, cv::IMREAD_UNCHANGED);
  const auto done = complete_disparity(decode_cityscapes_disparity(raw), c.completion_iters);
  return to_network_channel(done.map);
}

inline cv::Mat1b label_plane(const datasets::SampleRecord& r, DatasetKind kind, cv::Size size) {
  if (!r.label_path) return cv::Mat1b(size, trainops::kIgnoreIndex);
  if (kind == DatasetKind::kitti_road) {
    return datasets::road_train_labels(datasets::kitti_gt_to_binary(io::read_image(*r.label_path, cv::IMREAD_COLOR)));
  }
  return datasets::encode_cityscapes_labels(io::read_image(*r.label_path, cv::IMREAD_GRAYSCALE));
}

inline cv::Mat rgb_float(const cv::Mat& bgr) {
  cv::Mat rgb, f;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  return f;
}

/// RGB (BGR 8-bit), 3D channel (8-bit) and label re-projected to bird's-eye view.
struct BevPlanes {
  cv::Mat bgr;
  cv::Mat1b threed;
  cv::Mat1b label;
};

inline BevPlanes to_bev(const cv::Mat& bgr, const cv::Mat1f& threed, const cv::Mat1b& label, const Calibration& calib,
                        const datasets::BevConfig& bev) {
  using datasets::Interpolation;
  BevPlanes out;
  out.bgr = datasets::bev_transform(bgr, calib, bev, Interpolation::bilinear).image;
  cv::Mat1b t8;
  threed.convertTo(t8, CV_8U, 255.0);
  out.threed = datasets::bev_transform(t8, calib, bev, Interpolation::bilinear).image;
  const auto lab = datasets::bev_transform(label, calib, bev, Interpolation::nearest, trainops::kIgnoreIndex);
  out.label = lab.image;
  out.label.setTo(trainops::kIgnoreIndex, lab.valid == 0);
  return out;
}

inline trainops::Sample load_sample(const datasets::SampleRecord& r, const DataConfig& c) {
  cv::Mat bgr = io::read_image(r.rgb_path, cv::IMREAD_COLOR);
  const ImageSize dims{bgr.cols, bgr.rows};
  trainops::Sample s;
  if (c.view == View::bev) {
    if (!r.calib_path) throw DatasetError("record '" + r.id + "' has no calibration for bird's-eye view");
    const fs::path cache = c.cache_dir.empty() ? fs::path() : bev_cache_dir(c.cache_dir, c.bev);
    const fs::path cr = cache / "image_2" / (r.id + ".png");
    const fs::path ct = cache / "threed" / (r.id + ".png");
    const fs::path cl = cache / "label" / (r.id + ".png");
    BevPlanes p;
    if (!cache.empty() && fs::exists(cr) && fs::exists(ct) && fs::exists(cl)) {
      p = {io::read_image(cr, cv::IMREAD_COLOR), io::read_image(ct, cv::IMREAD_GRAYSCALE),
           io::read_image(cl, cv::IMREAD_GRAYSCALE)};
    } else {
      p = to_bev(bgr, threed_channel(r, c, dims), label_plane(r, c.kind, bgr.size()), read_kitti_calib(*r.calib_path),
                 c.bev);
    }
    s.rgb = rgb_float(p.bgr);
    p.threed.convertTo(s.threed, CV_32F, 1.0 / 255.0);
    s.label = p.label;
  } else {
    s.rgb = rgb_float(bgr);
    s.threed = threed_channel(r, c, dims);
    s.label = label_plane(r, c.kind, bgr.size());
  }
  if (c.width > 0 && (s.rgb.cols != c.width || s.rgb.rows != c.height)) {
    const cv::Size size(c.width, c.height);
    cv::resize(s.rgb, s.rgb, size, 0, 0, cv::INTER_LINEAR);
    cv::resize(s.threed, s.threed, size, 0, 0, cv::INTER_LINEAR);
    cv::resize(s.label, s.label, size, 0, 0, cv::INTER_NEAREST);
  }
  return s;
}

/// Lazily loaded records; loaded samples are kept when `memoize` is set.
class RecordSource final : public trainops::SampleSource {
public:
  RecordSource(std::vector<datasets::SampleRecord> recs, DataConfig cfg, bool memoize = true)
      : recs_(std::move(recs)), cfg_(std::move(cfg)), memoize_(memoize), cache_(recs_.size()) {}

  std::size_t size() const override { return recs_.size(); }

  trainops::Sample get(std::size_t i) const override {
    std::lock_guard lock(mu_);
    if (cache_.at(i)) return *cache_[i];
    trainops::Sample s = load_sample(recs_.at(i), cfg_);
    if (memoize_) cache_[i] = s;
    return s;
  }

  const datasets::SampleRecord& record(std::size_t i) const { return recs_.at(i); }
  const std::vector<datasets::SampleRecord>& records() const noexcept { return recs_; }

private:
  std::vector<datasets::SampleRecord> recs_;
  DataConfig cfg_;
  bool memoize_;
  mutable std::mutex mu_;
  mutable std::vector<std::optional<trainops::Sample>> cache_;
};

}  // namespace deep3d::pipeline
