#pragma once

// Synthetic KITTI-road scenes: a flat road between two building facades, rendered
// consistently into a camera image, a road ground-truth image and a 64-beam scan.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "deep3d/geometry3d.hpp"
#include "deep3d/io.hpp"

namespace deep3d::fixtures {

namespace fs = std::filesystem;

/// Calibration of the KITTI 2011_09_26 drives (camera 2).
inline Calibration kitti_calibration() {
  Calibration c;
  c.P << 7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01,
         0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01,
         0.0, 0.0, 1.0, 2.745884e-03;
  c.R_rect.setIdentity();
  c.R_rect.topLeftCorner<3, 3>() << 9.999239e-01, 9.837760e-03, -7.445048e-03,
                                    -9.869795e-03, 9.999421e-01, -4.278459e-03,
                                    7.402527e-03, 4.351614e-03, 9.999631e-01;
  c.T_velo_to_cam.setIdentity();
  c.T_velo_to_cam.topRows<3>() << 7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03,
                                  1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02,
                                  9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01;
  return c;
}

struct Scene {
  double sensor_height = 1.73;  // LiDAR above the road, meters
  double road_half_width = 3.5;
  double lateral_offset = 0.0;  // road centre in LiDAR y
  double wall_distance = 9.0;   // facades at y = offset +/- wall_distance
  double wall_height = 6.0;
};

enum class Surface { none, road, sidewalk, wall };

struct Hit {
  Surface surface = Surface::none;
  Eigen::Vector3d point;
};

/// Ray cast in the LiDAR frame from `origin` along `dir`.
inline Hit cast(const Scene& s, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double max_range = 120.0) {
  Hit best;
  double t_best = max_range;
  if (dir.z() < 0.0) {
    const double t = (-s.sensor_height - origin.z()) / dir.z();
    if (t > 0.0 && t < t_best) {
      t_best = t;
      const Eigen::Vector3d p = origin + t * dir;
      best.point = p;
      best.surface = std::abs(p.y() - s.lateral_offset) <= s.road_half_width ? Surface::road : Surface::sidewalk;
    }
  }
  for (double side : {-1.0, 1.0}) {
    const double wall_y = s.lateral_offset + side * s.wall_distance;
    if (dir.y() * side <= 0.0) {
      continue;
    }
    const double t = (wall_y - origin.y()) / dir.y();
    if (t > 0.0 && t < t_best) {
      const Eigen::Vector3d p = origin + t * dir;
      if (p.z() >= -s.sensor_height && p.z() <= s.wall_height - s.sensor_height && p.x() > 0.0) {
        t_best = t;
        best.point = p;
        best.surface = Surface::wall;
      }
    }
  }
  return best;
}

/// 64 beams from -24.8 to +2 degrees, full revolution at 0.2 degree steps.
inline PointCloud simulate_scan(const Scene& s, std::uint64_t seed, int azimuth_steps = 1800) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.01);
  PointCloud cloud;
  const double deg = std::numbers::pi / 180.0;
  for (int beam = 0; beam < 64; ++beam) {
    const double elev = (-24.8 + beam * (26.8 / 63.0)) * deg;
    for (int a = 0; a < azimuth_steps; ++a) {
      const double az = (-180.0 + a * 360.0 / azimuth_steps) * deg;
      const Eigen::Vector3d dir(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az), std::sin(elev));
      const Hit h = cast(s, Eigen::Vector3d::Zero(), dir);
      if (h.surface == Surface::none) {
        continue;
      }
      cloud.points.push_back({h.point.x() + noise(rng), h.point.y() + noise(rng), h.point.z() + noise(rng)});
      cloud.reflectance.push_back(0.3f);
    }
  }
  return cloud;
}

/// Calibration scaled to a smaller sensor resolution.
inline Calibration scaled_calibration(int width, int height) {
  Calibration c = kitti_calibration();
  const double sx = width / 1242.0;
  const double sy = height / 375.0;
  c.P.row(0) *= sx;
  c.P.row(1) *= sy;
  return c;
}

struct RenderedFrame {
  cv::Mat3b rgb;      // BGR
  cv::Mat3b gt_bgr;   // KITTI gt_image_2 encoding
  cv::Mat1b surface;  // Surface per pixel
};

/// Renders the scene through `calib` by casting a ray per pixel.
inline RenderedFrame render(const Scene& s, const Calibration& calib, int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 6.0);
  const Eigen::Matrix4d cam_from_velo = calib.R_rect * calib.T_velo_to_cam;
  const Eigen::Matrix4d velo_from_cam = cam_from_velo.inverse();
  const Eigen::Matrix3d k = calib.P.leftCols<3>();
  // P = K [I | t]; the camera centre in rectified coordinates is -K^-1 p4.
  const Eigen::Vector3d centre_rect = -k.inverse() * calib.P.col(3);
  const Eigen::Vector3d origin = (velo_from_cam * centre_rect.homogeneous()).head<3>();
  RenderedFrame f{cv::Mat3b(height, width), cv::Mat3b(height, width), cv::Mat1b(height, width)};
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const Eigen::Vector3d ray_rect = k.inverse() * Eigen::Vector3d(u, v, 1.0);
      const Eigen::Vector3d dir = (velo_from_cam.topLeftCorner<3, 3>() * ray_rect).normalized();
      const Hit h = cast(s, origin, dir);
      cv::Vec3d color;
      switch (h.surface) {
        case Surface::road: color = {90, 90, 95}; break;
        case Surface::sidewalk: color = {60, 140, 170}; break;
        case Surface::wall: color = {40, 60, 150}; break;
        case Surface::none: color = {230, 180, 120}; break;
      }
      cv::Vec3b px;
      for (int ch = 0; ch < 3; ++ch) {
        px[ch] = cv::saturate_cast<uchar>(color[ch] + noise(rng));
      }
      f.rgb(v, u) = px;
      f.surface(v, u) = static_cast<uchar>(h.surface);
      const bool valid = v >= height / 8;
      const bool road = h.surface == Surface::road;
      f.gt_bgr(v, u) = cv::Vec3b(valid && road ? 255 : 0, 0, valid ? 255 : 0);
    }
  }
  return f;
}

inline Scene scene_for_frame(int index) {
  Scene s;
  s.road_half_width = 3.0 + 0.5 * (index % 3);
  s.lateral_offset = -1.0 + 0.5 * index;
  s.wall_distance = 8.0 + index;
  return s;
}

struct MiniDataset {
  fs::path root;
  std::vector<std::string> ids;
  int width = 0;
  int height = 0;
};

/// Writes a KITTI-road-layout dataset with `frames` frames under `root/training`.
inline MiniDataset write_mini_kitti(const fs::path& root, int width = 256, int height = 128, int frames = 5) {
  static const char* kIds[] = {"um_000000", "um_000001", "umm_000000", "umm_000001", "uu_000000",
                               "uu_000001", "um_000002", "umm_000002"};
  MiniDataset ds{root, {}, width, height};
  const fs::path base = root / "training";
  for (const char* dir : {"image_2", "gt_image_2", "calib", "velodyne"}) {
    fs::create_directories(base / dir);
  }
  const Calibration calib = scaled_calibration(width, height);
  for (int i = 0; i < frames; ++i) {
    const std::string id = kIds[i % 8];
    const Scene s = scene_for_frame(i);
    const RenderedFrame f = render(s, calib, width, height, 100 + i);
    io::write_png(base / "image_2" / (id + ".png"), f.rgb);
    const auto us = id.find('_');
    io::write_png(base / "gt_image_2" / (id.substr(0, us) + "_road" + id.substr(us) + ".png"), f.gt_bgr);
    std::ofstream(base / "calib" / (id + ".txt")) << format_kitti_calib(calib);
    write_velodyne(base / "velodyne" / (id + ".bin"), simulate_scan(s, 200 + i, 900));
    ds.ids.push_back(id);
  }
  return ds;
}

}  // namespace deep3d::fixtures
