#pragma once

// KITTI road and Cityscapes indexing, label encodings, and the bird's-eye-view
// (inverse perspective) resampling used by the road protocol.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "deep3d/cityscapes_labels.inc"
#include "deep3d/error.hpp"
#include "deep3d/geometry3d.hpp"

namespace deep3d::datasets {

namespace fs = std::filesystem;

enum class Category { um, umm, uu, cityscapes };

inline std::string to_string(Category c) {
  switch (c) {
    case Category::um: return "um";
    case Category::umm: return "umm";
    case Category::uu: return "uu";
    case Category::cityscapes: return "cityscapes";
  }
  return "?";
}

struct SampleRecord {
  std::string id;
  fs::path rgb_path;
  fs::path threed_path;  // velodyne .bin (KITTI) or 16-bit disparity png (Cityscapes)
  std::optional<fs::path> label_path;
  std::optional<fs::path> calib_path;
  Category category = Category::cityscapes;
};

namespace detail {

inline std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& suffix) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) {
    return out;
  }
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() >= suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline void require(const fs::path& p, const std::string& id, const char* what) {
  if (!fs::exists(p)) {
    throw DatasetError("frame " + id + ": missing " + what + " (" + p.string() + ")");
  }
}

}  // namespace detail

inline Category parse_kitti_category(const std::string& id) {
  const std::string prefix = id.substr(0, id.find('_'));
  if (prefix == "um") return Category::um;
  if (prefix == "umm") return Category::umm;
  if (prefix == "uu") return Category::uu;
  throw DatasetError("unknown KITTI road category in frame id " + id);
}

/// One record per frame of `root/<split>/image_2`, ordered by id. Ground truth is
/// required for the training split and skipped for testing.
inline std::vector<SampleRecord> index_kitti_road(const fs::path& root, const std::string& split = "training") {
  if (!fs::exists(root)) {
    throw DatasetError("dataset root does not exist: " + root.string());
  }
  const fs::path base = root / split;
  std::vector<SampleRecord> out;
  for (const fs::path& img : detail::sorted_files(base / "image_2", ".png")) {
    SampleRecord r;
    r.id = img.stem().string();
    r.category = parse_kitti_category(r.id);
    r.rgb_path = img;
    r.threed_path = base / "velodyne" / (r.id + ".bin");
    r.calib_path = base / "calib" / (r.id + ".txt");
    detail::require(r.threed_path, r.id, "velodyne scan");
    detail::require(*r.calib_path, r.id, "calibration");
    if (split == "training") {
      const auto us = r.id.find('_');
      const fs::path gt = base / "gt_image_2" / (r.id.substr(0, us) + "_road" + r.id.substr(us) + ".png");
      detail::require(gt, r.id, "road ground truth");
      r.label_path = gt;
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Pairs leftImg8bit, disparity and gtFine labelIds files per frame; `city` filters one city.
inline std::vector<SampleRecord> index_cityscapes(const fs::path& root, const std::string& split,
                                                 const std::string& city = {}) {
  const fs::path images = root / "leftImg8bit" / split;
  if (!fs::is_directory(images)) {
    throw DatasetError("missing Cityscapes image tree: " + images.string());
  }
  std::vector<fs::path> cities;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_directory() && (city.empty() || e.path().filename() == city)) {
      cities.push_back(e.path());
    }
  }
  std::sort(cities.begin(), cities.end());
  const std::string suffix = "_leftImg8bit.png";
  std::vector<SampleRecord> out;
  for (const fs::path& cdir : cities) {
    const std::string cname = cdir.filename().string();
    for (const fs::path& img : detail::sorted_files(cdir, suffix)) {
      const std::string name = img.filename().string();
      SampleRecord r;
      r.id = name.substr(0, name.size() - suffix.size());
      r.category = Category::cityscapes;
      r.rgb_path = img;
      r.threed_path = root / "disparity" / split / cname / (r.id + "_disparity.png");
      detail::require(r.threed_path, r.id, "disparity map");
      const fs::path gt = root / "gtFine" / split / cname / (r.id + "_gtFine_labelIds.png");
      if (split != "test") {
        detail::require(gt, r.id, "fine labels");
        r.label_path = gt;
      } else if (fs::exists(gt)) {
        r.label_path = gt;
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

// Cityscapes labels --------------------------------------------------------

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct CityscapesLabelTable {
  std::array<int, 256> id_to_train{};  // -1 for ids outside the official space
  std::vector<std::string> train_names;
  std::vector<int> train_to_id;

  static const CityscapesLabelTable& get() {
    static const CityscapesLabelTable table = parse(data::kCityscapesLabelTable);
    return table;
  }

  static CityscapesLabelTable parse(std::string_view csv) {
    CityscapesLabelTable t;
    t.id_to_train.fill(-1);
    std::istringstream in{std::string(csv)};
    std::string line;
    std::vector<std::pair<int, std::string>> train;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') {
        continue;
      }
      const auto a = line.find(',');
      const auto b = line.find(',', a + 1);
      if (a == std::string::npos || b == std::string::npos) {
        throw FormatError("malformed label table line: " + line);
      }
      const int id = std::stoi(line.substr(a + 1, b - a - 1));
      const int train_id = std::stoi(line.substr(b + 1));
      if (id < 0 || id > 255) {
        continue;
      }
      t.id_to_train[id] = train_id;
      if (train_id != kIgnoreLabel) {
        train.emplace_back(train_id, line.substr(0, a));
        if (static_cast<int>(t.train_to_id.size()) <= train_id) {
          t.train_to_id.resize(train_id + 1, -1);
        }
        t.train_to_id[train_id] = id;
      }
    }
    std::sort(train.begin(), train.end());
    for (auto& [tid, name] : train) {
      t.train_names.push_back(name);
    }
    return t;
  }
};

/// Official id -> trainId; non-training classes become 255. Unknown ids are an error.
inline cv::Mat1b encode_cityscapes_labels(const cv::Mat& raw) {
  if (raw.type() != CV_8UC1) {
    throw FormatError("cityscapes labelIds must be 8-bit single channel");
  }
  const auto& table = CityscapesLabelTable::get();
  cv::Mat1b out(raw.rows, raw.cols);
  for (int r = 0; r < raw.rows; ++r) {
    const auto* src = raw.ptr<std::uint8_t>(r);
    for (int c = 0; c < raw.cols; ++c) {
      const int t = table.id_to_train[src[c]];
      if (t < 0) {
        throw FormatError("unknown cityscapes label id " + std::to_string(src[c]));
      }
      out(r, c) = static_cast<std::uint8_t>(t);
    }
  }
  return out;
}

// KITTI ground truth -------------------------------------------------------

struct RoadGroundTruth {
  cv::Mat1b road;   // 1 = road
  cv::Mat1b valid;  // 1 = inside the evaluation area
};

/// Decodes a BGR gt_image_2 frame: road from the blue channel, evaluation area from red.
inline RoadGroundTruth kitti_gt_to_binary(const cv::Mat& gt_bgr) {
  if (gt_bgr.channels() != 3 || gt_bgr.depth() != CV_8U) {
    throw FormatError("KITTI road ground truth must be an 8-bit 3-channel image");
  }
  RoadGroundTruth g{cv::Mat1b(gt_bgr.size()), cv::Mat1b(gt_bgr.size())};
  for (int r = 0; r < gt_bgr.rows; ++r) {
    const auto* px = gt_bgr.ptr<cv::Vec3b>(r);
    for (int c = 0; c < gt_bgr.cols; ++c) {
      g.road(r, c) = px[c][0] > 0 ? 1 : 0;
      g.valid(r, c) = px[c][2] > 0 ? 1 : 0;
    }
  }
  return g;
}

/// Training labels for the two-class road task: 1 road, 0 background, 255 outside the valid area.
inline cv::Mat1b road_train_labels(const RoadGroundTruth& g) {
  cv::Mat1b out(g.road.size());
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      out(r, c) = g.valid(r, c) ? g.road(r, c) : kIgnoreLabel;
    }
  }
  return out;
}

// Bird's-eye view ----------------------------------------------------------

/// Metric window on the road plane, in rectified camera coordinates (x right, y down, z forward).
struct BevConfig {
  int width = 400;   // lateral pixels
  int height = 800;  // longitudinal pixels, far range at the top row
  Interval lateral{-10.0, 10.0};
  Interval longitudinal{6.0, 46.0};
  double camera_height = 1.65;  // road plane at y = +camera_height

  void validate() const {
    if (width <= 0 || height <= 0) {
      throw ConfigError("BEV output dimensions must be positive", "bev");
    }
    if (!(lateral.length() > 0.0) || !(longitudinal.length() > 0.0)) {
      throw ConfigError("BEV metric extents must be positive", "bev");
    }
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os << width << 'x' << height << ':' << lateral.min << ',' << lateral.max << ':' << longitudinal.min << ','
       << longitudinal.max << ':' << camera_height;
    return os.str();
  }
};

/// Homography from BEV pixel (col, row, 1) to source image homogeneous coordinates.
inline Eigen::Matrix3d bev_homography(const Calibration& calib, const BevConfig& cfg) {
  cfg.validate();
  const double lat_res = cfg.lateral.length() / cfg.width;
  const double lon_res = cfg.longitudinal.length() / cfg.height;
  Eigen::Matrix<double, 4, 3> plane;
  plane << lat_res, 0, cfg.lateral.min + 0.5 * lat_res,
           0, 0, cfg.camera_height,
           0, -lon_res, cfg.longitudinal.max - 0.5 * lon_res,
           0, 0, 1;
  const Eigen::Matrix3d h = calib.P * plane;
  if (!std::isfinite(h.determinant()) || std::abs(h.determinant()) < 1e-12) {
    throw ConfigError("degenerate BEV homography", "bev");
  }
  return h;
}

enum class Interpolation { bilinear, nearest };

struct BevImage {
  cv::Mat image;
  cv::Mat1b valid;  // 1 where the BEV pixel sees the source image
};

/// Inverse perspective mapping: every BEV pixel is a ground-plane point sampled from the
/// source image. Pixels that fall outside the source get `fill` and valid = 0.
inline BevImage bev_transform(const cv::Mat& src, const Calibration& calib, const BevConfig& cfg,
                              Interpolation interp, double fill = 0.0) {
  const Eigen::Matrix3d h = bev_homography(calib, cfg);
  cv::Mat1f mapx(cfg.height, cfg.width);
  cv::Mat1f mapy(cfg.height, cfg.width);
  BevImage out;
  out.valid = cv::Mat1b(cfg.height, cfg.width, uchar{0});
  const double max_u = interp == Interpolation::nearest ? src.cols - 0.5 : src.cols - 1.0;
  const double max_v = interp == Interpolation::nearest ? src.rows - 0.5 : src.rows - 1.0;
  for (int r = 0; r < cfg.height; ++r) {
    for (int c = 0; c < cfg.width; ++c) {
      const Eigen::Vector3d q = h * Eigen::Vector3d(c, r, 1.0);
      float u = -1.0f;
      float v = -1.0f;
      if (q.z() > 0.0) {
        const double uu = q.x() / q.z();
        const double vv = q.y() / q.z();
        if (uu >= 0.0 && vv >= 0.0 && uu < max_u && vv < max_v) {
          u = static_cast<float>(uu);
          v = static_cast<float>(vv);
          out.valid(r, c) = 1;
        }
      }
      // Invalid pixels are pointed far outside so the constant border applies.
      mapx(r, c) = out.valid(r, c) ? u : -10.0f;
      mapy(r, c) = out.valid(r, c) ? v : -10.0f;
    }
  }
  cv::remap(src, out.image, mapx, mapy, interp == Interpolation::nearest ? cv::INTER_NEAREST : cv::INTER_LINEAR,
            cv::BORDER_CONSTANT, cv::Scalar::all(fill));
  return out;
}

/// Maps a rectified-camera ground point (x lateral, z forward) to fractional BEV (col, row).
inline Eigen::Vector2d ground_to_bev(double x, double z, const BevConfig& cfg) {
  const double lat_res = cfg.lateral.length() / cfg.width;
  const double lon_res = cfg.longitudinal.length() / cfg.height;
  return {(x - cfg.lateral.min) / lat_res - 0.5, (cfg.longitudinal.max - z) / lon_res - 0.5};
}

}  // namespace deep3d::datasets
