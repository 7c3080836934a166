#pragma once

// Elevation pattern images: LiDAR points filtered by range and field of view,
// projected into the camera, encoded by normalized height, then dilated.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "deep3d/error.hpp"

namespace deep3d {

struct Point3 {
  double x = 0.0;  // forward, meters
  double y = 0.0;  // left
  double z = 0.0;  // up
};

struct PointCloud {
  std::vector<Point3> points;
  std::vector<float> reflectance;  // empty or one entry per point

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
};

struct Interval {
  double min = 0.0;
  double max = 0.0;

  constexpr bool contains(double v) const noexcept { return v >= min && v <= max; }
  constexpr double length() const noexcept { return max - min; }
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

/// Camera calibration in KITTI convention: LiDAR -> camera -> rectified -> pixels.
struct Calibration {
  Eigen::Matrix<double, 3, 4> P = Eigen::Matrix<double, 3, 4>::Zero();
  Eigen::Matrix4d R_rect = Eigen::Matrix4d::Identity();
  Eigen::Matrix4d T_velo_to_cam = Eigen::Matrix4d::Identity();

  /// Full LiDAR-to-pixel chain P * R_rect * T_velo_to_cam.
  Eigen::Matrix<double, 3, 4> chain() const { return P * R_rect * T_velo_to_cam; }

  void validate(double tol = 1e-6) const {
    auto orthonormal = [tol](const Eigen::Matrix3d& r) {
      return ((r * r.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol;
    };
    if (!orthonormal(R_rect.topLeftCorner<3, 3>())) {
      throw ConfigError("R_rect rotation block is not orthonormal", "R0_rect");
    }
    if (!orthonormal(T_velo_to_cam.topLeftCorner<3, 3>())) {
      throw ConfigError("Tr_velo_to_cam rotation block is not orthonormal", "Tr_velo_to_cam");
    }
    if (P(0, 0) == 0.0 || P(1, 1) == 0.0) {
      throw ConfigError("projection matrix has a zero focal entry", "P2");
    }
    if (std::abs(chain().leftCols<3>().determinant()) < 1e-12) {
      throw ConfigError("calibration chain is singular", "P2");
    }
  }

  /// Pinhole camera with identity extrinsics and rectification.
  static Calibration pinhole(double fx, double fy, double cx, double cy) {
    Calibration c;
    c.P << fx, 0, cx, 0, 0, fy, cy, 0, 0, 0, 1, 0;
    return c;
  }
};

struct ElevationFilterConfig {
  Interval fov_h{-60.0, 60.0};  // azimuth atan2(y, x), degrees
  Interval fov_v{-13.9, 2.9};   // elevation atan2(z, hypot(x, y)), degrees
  Interval x_range{0.0, 80.0};
  Interval y_range{-60.0, 60.0};
  Interval z_range{-2.1, 2.9};
  int dilation_kernel = 9;

  void validate() const {
    auto check = [](const Interval& i, const char* name) {
      if (!(i.min < i.max)) {
        throw ConfigError(std::string("interval must satisfy min < max: ") + name, name);
      }
    };
    check(fov_h, "fov_h");
    check(fov_v, "fov_v");
    check(x_range, "x_range");
    check(y_range, "y_range");
    check(z_range, "z_range");
    if (dilation_kernel < 1 || dilation_kernel % 2 == 0) {
      throw ConfigError("dilation_kernel must be odd and >= 1", "dilation_kernel");
    }
  }
};

/// Single-channel 8-bit image of normalized point elevations ("elvdiff").
struct ElevationPatternImage {
  cv::Mat1b pixels;

  ElevationPatternImage() = default;
  explicit ElevationPatternImage(ImageSize dims) : pixels(dims.height, dims.width, uchar{0}) {}
  explicit ElevationPatternImage(cv::Mat1b p) : pixels(std::move(p)) {}

  int width() const noexcept { return pixels.cols; }
  int height() const noexcept { return pixels.rows; }
  std::uint8_t at(int row, int col) const { return pixels(row, col); }
};

struct ProjectedPoint {
  double u = 0.0;  // column, pixels
  double v = 0.0;  // row, pixels
  double z = 0.0;  // LiDAR elevation, meters
};

namespace detail {
inline double degrees(double rad) { return rad * 180.0 / std::numbers::pi; }
}  // namespace detail

inline bool passes_filter(const Point3& p, const ElevationFilterConfig& cfg) {
  if (!cfg.x_range.contains(p.x) || !cfg.y_range.contains(p.y) || !cfg.z_range.contains(p.z)) {
    return false;
  }
  const double azimuth = detail::degrees(std::atan2(p.y, p.x));
  const double elevation = detail::degrees(std::atan2(p.z, std::hypot(p.x, p.y)));
  return cfg.fov_h.contains(azimuth) && cfg.fov_v.contains(elevation);
}

/// Keeps the points inside every closed range and both fields of view, in input order.
inline PointCloud filter_points(const PointCloud& cloud, const ElevationFilterConfig& cfg) {
  cfg.validate();
  PointCloud out;
  const bool with_reflectance = cloud.reflectance.size() == cloud.points.size();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (passes_filter(cloud.points[i], cfg)) {
      out.points.push_back(cloud.points[i]);
      if (with_reflectance) {
        out.reflectance.push_back(cloud.reflectance[i]);
      }
    }
  }
  return out;
}

/// Linear map of z onto [0, 255]; real-valued, rounding happens at rasterization.
inline double normalize_elevation(double z, const Interval& z_range) {
  if (z_range.max == z_range.min) {
    throw ConfigError("degenerate z_range", "z_range");
  }
  return (z - z_range.min) / (z_range.max - z_range.min) * 255.0;
}

/// Projects through P * R_rect * T_velo_to_cam. Points behind the camera or outside
/// [0, W) x [0, H) are dropped; the returned z is the original LiDAR elevation.
inline std::vector<ProjectedPoint> project_points(const PointCloud& cloud, const Calibration& calib,
                                                  ImageSize dims) {
  calib.validate();
  const Eigen::Matrix<double, 3, 4> m = calib.chain();
  // Depth in the rectified camera frame decides front/back.
  const Eigen::Matrix4d cam = calib.R_rect * calib.T_velo_to_cam;
  std::vector<ProjectedPoint> out;
  out.reserve(cloud.size());
  for (const Point3& p : cloud.points) {
    const Eigen::Vector4d h(p.x, p.y, p.z, 1.0);
    const double depth = cam.row(2).dot(h);
    if (depth <= 0.0) {
      continue;
    }
    const Eigen::Vector3d q = m * h;
    if (q.z() <= 0.0) {
      continue;
    }
    const double u = q.x() / q.z();
    const double v = q.y() / q.z();
    if (u < 0.0 || v < 0.0 || u >= dims.width || v >= dims.height) {
      continue;
    }
    out.push_back({u, v, p.z});
  }
  return out;
}

/// Writes round(normalized z) at (round(v), round(u)); collisions keep the maximum.
inline ElevationPatternImage rasterize(const std::vector<ProjectedPoint>& points,
                                       const ElevationFilterConfig& cfg, ImageSize dims) {
  ElevationPatternImage img(dims);
  for (const ProjectedPoint& p : points) {
    // u < W can still round up to W.
    const long col = std::min<long>(std::lround(p.u), dims.width - 1);
    const long row = std::min<long>(std::lround(p.v), dims.height - 1);
    if (col < 0 || row < 0) {
      continue;
    }
    const long value = std::clamp<long>(std::lround(normalize_elevation(p.z, cfg.z_range)), 0, 255);
    uchar& px = img.pixels(static_cast<int>(row), static_cast<int>(col));
    px = std::max<uchar>(px, static_cast<uchar>(value));
  }
  return img;
}

/// Grayscale dilation with a centered kernel x kernel square; windows are clipped at borders.
inline ElevationPatternImage dilate(const ElevationPatternImage& img, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("dilation kernel must be odd and >= 1", "dilation_kernel");
  }
  if (kernel == 1 || img.pixels.empty()) {
    return ElevationPatternImage(img.pixels.clone());
  }
  cv::Mat1b out;
  const cv::Mat element = cv::getStructuringElement(cv::MORPH_RECT, {kernel, kernel});
  cv::dilate(img.pixels, out, element, {-1, -1}, 1, cv::BORDER_CONSTANT,
             cv::morphologyDefaultBorderValue());
  return ElevationPatternImage(out);
}

/// filter_points -> project_points -> rasterize -> dilate.
inline ElevationPatternImage generate_elvdiff(const PointCloud& cloud, const Calibration& calib,
                                              const ElevationFilterConfig& cfg, ImageSize dims) {
  cfg.validate();
  const PointCloud kept = filter_points(cloud, cfg);
  const auto projected = project_points(kept, calib, dims);
  return dilate(rasterize(projected, cfg, dims), cfg.dilation_kernel);
}

// KITTI file formats --------------------------------------------------------

/// Velodyne scan: little-endian float32 (x, y, z, reflectance) records, no header.
inline PointCloud read_velodyne(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open velodyne file: " + path.string());
  }
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw FormatError("velodyne file size is not a multiple of 16 bytes: " + path.string());
  }
  static_assert(sizeof(float) == 4);
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.reserve(n);
  cloud.reflectance.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    float rec[4];
    std::memcpy(rec, bytes.data() + i * 16, 16);
    if constexpr (std::endian::native == std::endian::big) {
      for (float& f : rec) {
        std::uint32_t b;
        std::memcpy(&b, &f, 4);
        b = __builtin_bswap32(b);
        std::memcpy(&f, &b, 4);
      }
    }
    if (!std::isfinite(rec[0]) || !std::isfinite(rec[1]) || !std::isfinite(rec[2])) {
      throw FormatError("non-finite coordinate in velodyne file: " + path.string());
    }
    cloud.points.push_back({rec[0], rec[1], rec[2]});
    cloud.reflectance.push_back(rec[3]);
  }
  return cloud;
}

inline void write_velodyne(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw FormatError("cannot write velodyne file: " + path.string());
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    const float r = i < cloud.reflectance.size() ? cloud.reflectance[i] : 0.0f;
    const float rec[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                          static_cast<float>(p.z), r};
    out.write(reinterpret_cast<const char*>(rec), sizeof rec);
  }
}

/// Parses "key: v0 v1 ..." lines into a map of row-major float lists.
inline std::map<std::string, std::vector<double>> parse_calib_text(std::istream& in) {
  std::map<std::string, std::vector<double>> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      continue;
    }
    std::string key = line.substr(0, colon);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t\r") + 1);
    std::istringstream values(line.substr(colon + 1));
    std::vector<double> vals;
    double v;
    while (values >> v) {
      vals.push_back(v);
    }
    kv[key] = std::move(vals);
  }
  return kv;
}

/// Reads P2, R0_rect and Tr_velo_to_cam from a KITTI calib file.
inline Calibration read_kitti_calib(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw FormatError("cannot open calibration file: " + path.string());
  }
  const auto kv = parse_calib_text(in);
  auto get = [&](const std::string& key, std::size_t n) -> const std::vector<double>& {
    const auto it = kv.find(key);
    if (it == kv.end() || it->second.size() != n) {
      throw FormatError("calibration key " + key + " missing or malformed in " + path.string());
    }
    return it->second;
  };
  Calibration c;
  const auto& p = get("P2", 12);
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) {
      c.P(r, k) = p[r * 4 + k];
    }
  }
  const auto& r0 = get("R0_rect", 9);
  c.R_rect.setIdentity();
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) {
      c.R_rect(r, k) = r0[r * 3 + k];
    }
  }
  const auto& tr = get("Tr_velo_to_cam", 12);
  c.T_velo_to_cam.setIdentity();
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) {
      c.T_velo_to_cam(r, k) = tr[r * 4 + k];
    }
  }
  return c;
}

inline std::string format_kitti_calib(const Calibration& c) {
  std::ostringstream os;
  os.precision(12);
  os << "P2:";
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) {
      os << ' ' << c.P(r, k);
    }
  }
  os << "\nR0_rect:";
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) {
      os << ' ' << c.R_rect(r, k);
    }
  }
  os << "\nTr_velo_to_cam:";
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 4; ++k) {
      os << ' ' << c.T_velo_to_cam(r, k);
    }
  }
  os << '\n';
  return os.str();
}

}  // namespace deep3d
