#pragma once

// Paired augmentation of (rgb, 3D channel, label). Geometric transforms move all
// three planes with the same parameters (bilinear for images, nearest for labels,
// ignore fill outside the source); photometric ones touch RGB only.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "deep3d/error.hpp"
#include "deep3d/json_fields.hpp"

namespace deep3d::trainops {

inline constexpr uchar kIgnoreIndex = 255;

/// rgb: CV_32FC3 in [0, 1]; threed: CV_32FC1 in [0, 1]; label: CV_8UC1.
struct Sample {
  cv::Mat rgb;
  cv::Mat threed;
  cv::Mat label;
};

struct AugmentConfig {
  bool enabled = true;
  double p_mirror = 0.5, p_crop = 0.5, p_rotate = 0.5, p_shear = 0.5, p_affine = 0.5, p_perspective = 0.5;
  double p_salt_pepper = 0.5, p_poisson = 0.5, p_speckle = 0.5, p_blur = 0.5, p_color_cast = 0.5, p_jitter = 0.5;

  double rotate_max_deg = 10.0;
  double shear_max = 0.1;
  double affine_scale_min = 0.9, affine_scale_max = 1.1, affine_translate = 0.05;
  double perspective_jitter = 0.05;  // corner displacement as a fraction of the side
  double crop_min_scale = 0.75;      // random crop side fraction, resized back
  int crop_width = 0, crop_height = 0;  // fixed crop in pixels when nonzero
  double salt_pepper_amount = 0.01;
  double poisson_peak = 255.0;
  double speckle_sigma = 0.1;
  int blur_max_kernel = 5;
  double color_cast_max = 0.08;
  double jitter_brightness = 0.2, jitter_contrast = 0.2, jitter_saturation = 0.2;

  static AugmentConfig none() {
    AugmentConfig c;
    c.enabled = false;
    return c;
  }

  void validate() const {
    for (double p : {p_mirror, p_crop, p_rotate, p_shear, p_affine, p_perspective, p_salt_pepper, p_poisson, p_speckle,
                     p_blur, p_color_cast, p_jitter}) {
      if (!(p >= 0 && p <= 1)) throw ConfigError("augmentation probabilities must lie in [0, 1]", "augment");
    }
    if (!(crop_min_scale > 0 && crop_min_scale <= 1)) throw ConfigError("crop_min_scale must be in (0, 1]", "augment.crop_min_scale");
    if (crop_width < 0 || crop_height < 0) throw ConfigError("crop size must be non-negative", "augment.crop_width");
    if (!(affine_scale_min > 0 && affine_scale_min <= affine_scale_max)) {
      throw ConfigError("affine scale range is empty", "augment.affine_scale_min");
    }
    if (blur_max_kernel < 1) throw ConfigError("blur_max_kernel must be >= 1", "augment.blur_max_kernel");
  }
};

inline AugmentConfig augment_config_from_json(FieldReader r) {
  AugmentConfig c;
#define DEEP3D_AUG_FIELD(name) c.name = r.get(#name, c.name)
  DEEP3D_AUG_FIELD(enabled);
  DEEP3D_AUG_FIELD(p_mirror);
  DEEP3D_AUG_FIELD(p_crop);
  DEEP3D_AUG_FIELD(p_rotate);
  DEEP3D_AUG_FIELD(p_shear);
  DEEP3D_AUG_FIELD(p_affine);
  DEEP3D_AUG_FIELD(p_perspective);
  DEEP3D_AUG_FIELD(p_salt_pepper);
  DEEP3D_AUG_FIELD(p_poisson);
  DEEP3D_AUG_FIELD(p_speckle);
  DEEP3D_AUG_FIELD(p_blur);
  DEEP3D_AUG_FIELD(p_color_cast);
  DEEP3D_AUG_FIELD(p_jitter);
  DEEP3D_AUG_FIELD(rotate_max_deg);
  DEEP3D_AUG_FIELD(shear_max);
  DEEP3D_AUG_FIELD(affine_scale_min);
  DEEP3D_AUG_FIELD(affine_scale_max);
  DEEP3D_AUG_FIELD(affine_translate);
  DEEP3D_AUG_FIELD(perspective_jitter);
  DEEP3D_AUG_FIELD(crop_min_scale);
  DEEP3D_AUG_FIELD(crop_width);
  DEEP3D_AUG_FIELD(crop_height);
  DEEP3D_AUG_FIELD(salt_pepper_amount);
  DEEP3D_AUG_FIELD(poisson_peak);
  DEEP3D_AUG_FIELD(speckle_sigma);
  DEEP3D_AUG_FIELD(blur_max_kernel);
  DEEP3D_AUG_FIELD(color_cast_max);
  DEEP3D_AUG_FIELD(jitter_brightness);
  DEEP3D_AUG_FIELD(jitter_contrast);
  DEEP3D_AUG_FIELD(jitter_saturation);
#undef DEEP3D_AUG_FIELD
  r.finish();
  c.validate();
  return c;
}

inline Json to_json(const AugmentConfig& c) {
  return {{"enabled", c.enabled},
          {"p_mirror", c.p_mirror},
          {"p_crop", c.p_crop},
          {"p_rotate", c.p_rotate},
          {"p_shear", c.p_shear},
          {"p_affine", c.p_affine},
          {"p_perspective", c.p_perspective},
          {"p_salt_pepper", c.p_salt_pepper},
          {"p_poisson", c.p_poisson},
          {"p_speckle", c.p_speckle},
          {"p_blur", c.p_blur},
          {"p_color_cast", c.p_color_cast},
          {"p_jitter", c.p_jitter},
          {"rotate_max_deg", c.rotate_max_deg},
          {"shear_max", c.shear_max},
          {"affine_scale_min", c.affine_scale_min},
          {"affine_scale_max", c.affine_scale_max},
          {"affine_translate", c.affine_translate},
          {"perspective_jitter", c.perspective_jitter},
          {"crop_min_scale", c.crop_min_scale},
          {"crop_width", c.crop_width},
          {"crop_height", c.crop_height},
          {"salt_pepper_amount", c.salt_pepper_amount},
          {"poisson_peak", c.poisson_peak},
          {"speckle_sigma", c.speckle_sigma},
          {"blur_max_kernel", c.blur_max_kernel},
          {"color_cast_max", c.color_cast_max},
          {"jitter_brightness", c.jitter_brightness},
          {"jitter_contrast", c.jitter_contrast},
          {"jitter_saturation", c.jitter_saturation}};
}

inline void check_aligned(const Sample& s) {
  if (s.rgb.size() != s.threed.size() || s.rgb.size() != s.label.size()) {
    throw ShapeError("rgb, 3D channel and label must share their size");
  }
  if (s.rgb.type() != CV_32FC3 || s.threed.type() != CV_32FC1 || s.label.type() != CV_8UC1) {
    throw FormatError("sample planes must be CV_32FC3, CV_32FC1 and CV_8UC1");
  }
}

// ---- geometric ---------------------------------------------------------------

/// Applies one 3x3 homography (dst <- src) to every plane.
inline Sample warp(const Sample& s, const cv::Matx33d& h) {
  Sample out;
  const cv::Size size = s.rgb.size();
  const cv::Mat m(h);
  cv::warpPerspective(s.rgb, out.rgb, m, size, cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  cv::warpPerspective(s.threed, out.threed, m, size, cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  cv::warpPerspective(s.label, out.label, m, size, cv::INTER_NEAREST, cv::BORDER_CONSTANT,
                      cv::Scalar::all(kIgnoreIndex));
  return out;
}

inline cv::Matx33d lift(const cv::Mat& affine2x3) {
  cv::Matx33d h = cv::Matx33d::eye();
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) h(r, c) = affine2x3.at<double>(r, c);
  return h;
}

inline Sample mirror(const Sample& s) {
  Sample out;
  cv::flip(s.rgb, out.rgb, 1);
  cv::flip(s.threed, out.threed, 1);
  cv::flip(s.label, out.label, 1);
  return out;
}

/// Counter-clockwise rotation (as displayed, y pointing down) about ((W-1)/2, (H-1)/2).
inline Sample rotate(const Sample& s, double degrees) {
  const cv::Point2f centre((s.rgb.cols - 1) / 2.0f, (s.rgb.rows - 1) / 2.0f);
  return warp(s, lift(cv::getRotationMatrix2D(centre, degrees, 1.0)));
}

/// Horizontal shear x' = x + k (y - cy).
inline Sample shear(const Sample& s, double k) {
  const double cy = (s.rgb.rows - 1) / 2.0;
  cv::Matx33d h = cv::Matx33d::eye();
  h(0, 1) = k;
  h(0, 2) = -k * cy;
  return warp(s, h);
}

inline Sample scale_translate(const Sample& s, double scale, double tx, double ty) {
  const double cx = (s.rgb.cols - 1) / 2.0, cy = (s.rgb.rows - 1) / 2.0;
  cv::Matx33d h(scale, 0, cx - scale * cx + tx, 0, scale, cy - scale * cy + ty, 0, 0, 1);
  return warp(s, h);
}

/// Moves the four image corners by the given offsets (tl, tr, br, bl).
inline Sample perspective(const Sample& s, const std::array<cv::Point2f, 4>& offsets) {
  const float w = static_cast<float>(s.rgb.cols - 1), hgt = static_cast<float>(s.rgb.rows - 1);
  const cv::Point2f src[4] = {{0, 0}, {w, 0}, {w, hgt}, {0, hgt}};
  cv::Point2f dst[4];
  for (int i = 0; i < 4; ++i) dst[i] = src[i] + offsets[static_cast<std::size_t>(i)];
  cv::Matx33d h = cv::getPerspectiveTransform(src, dst);
  return warp(s, h);
}

/// Cuts `roi` and resizes it back to the original size.
inline Sample crop(const Sample& s, const cv::Rect& roi) {
  if (roi.width > s.rgb.cols || roi.height > s.rgb.rows) throw ShapeError("crop larger than image");
  if ((roi & cv::Rect(0, 0, s.rgb.cols, s.rgb.rows)) != roi || roi.area() == 0) {
    throw ShapeError("crop window outside the image");
  }
  Sample out;
  const cv::Size size = s.rgb.size();
  cv::resize(s.rgb(roi), out.rgb, size, 0, 0, cv::INTER_LINEAR);
  cv::resize(s.threed(roi), out.threed, size, 0, 0, cv::INTER_LINEAR);
  cv::resize(s.label(roi), out.label, size, 0, 0, cv::INTER_NEAREST);
  return out;
}

// ---- photometric (RGB only) ----------------------------------------------------

template <class Rng>
void salt_and_pepper(cv::Mat& rgb, double amount, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < rgb.rows; ++r) {
    auto* row = rgb.ptr<cv::Vec3f>(r);
    for (int c = 0; c < rgb.cols; ++c) {
      const double x = u(rng);
      if (x < amount / 2) {
        row[c] = cv::Vec3f(0, 0, 0);
      } else if (x < amount) {
        row[c] = cv::Vec3f(1, 1, 1);
      }
    }
  }
}

template <class Rng>
void poisson_noise(cv::Mat& rgb, double peak, Rng& rng) {
  auto* p = rgb.ptr<float>();
  const std::size_t n = rgb.total() * 3;
  for (std::size_t i = 0; i < n; ++i) {
    std::poisson_distribution<int> d(std::max(0.0, p[i] * peak));
    p[i] = static_cast<float>(d(rng) / peak);
  }
}

template <class Rng>
void speckle_noise(cv::Mat& rgb, double sigma, Rng& rng) {
  std::normal_distribution<float> n(0.0f, static_cast<float>(sigma));
  auto* p = rgb.ptr<float>();
  const std::size_t count = rgb.total() * 3;
  for (std::size_t i = 0; i < count; ++i) p[i] += p[i] * n(rng);
}

inline void blur(cv::Mat& rgb, int kernel) {
  if (kernel >= 3) cv::GaussianBlur(rgb, rgb, cv::Size(kernel | 1, kernel | 1), 0);
}

inline void color_cast(cv::Mat& rgb, const cv::Vec3f& shift) { rgb += cv::Scalar(shift[0], shift[1], shift[2]); }

inline void color_jitter(cv::Mat& rgb, double brightness, double contrast, double saturation) {
  rgb *= brightness;
  const double mean = cv::mean(rgb).val[0] / 3 + cv::mean(rgb).val[1] / 3 + cv::mean(rgb).val[2] / 3;
  rgb = (rgb - cv::Scalar::all(mean)) * contrast + cv::Scalar::all(mean);
  cv::Mat gray;
  cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
  cv::Mat gray3;
  cv::cvtColor(gray, gray3, cv::COLOR_GRAY2RGB);
  rgb = rgb * saturation + gray3 * (1.0 - saturation);
}

inline void clamp_unit(cv::Mat& m) {
  cv::max(m, 0.0, m);
  cv::min(m, 1.0, m);
}

/// Random composition of all transforms, each with its own probability.
template <class Rng>
Sample augment(const Sample& in, const AugmentConfig& c, Rng& rng) {
  check_aligned(in);
  Sample s{in.rgb.clone(), in.threed.clone(), in.label.clone()};
  if (!c.enabled) return s;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto hit = [&](double p) { return p > 0 && u(rng) < p; };
  auto sym = [&](double m) { return (2 * u(rng) - 1) * m; };
  const int w = s.rgb.cols, h = s.rgb.rows;

  if (hit(c.p_mirror)) s = mirror(s);
  if (hit(c.p_crop)) {
    int cw = c.crop_width, ch = c.crop_height;
    if (cw == 0 || ch == 0) {
      const double f = c.crop_min_scale + (1 - c.crop_min_scale) * u(rng);
      cw = std::max(1, static_cast<int>(std::lround(w * f)));
      ch = std::max(1, static_cast<int>(std::lround(h * f)));
    }
    if (cw > w || ch > h) throw ShapeError("crop larger than image");
    std::uniform_int_distribution<int> ox(0, w - cw), oy(0, h - ch);
    s = crop(s, cv::Rect(ox(rng), oy(rng), cw, ch));
  }
  if (hit(c.p_rotate)) s = rotate(s, sym(c.rotate_max_deg));
  if (hit(c.p_shear)) s = shear(s, sym(c.shear_max));
  if (hit(c.p_affine)) {
    const double scale = c.affine_scale_min + (c.affine_scale_max - c.affine_scale_min) * u(rng);
    s = scale_translate(s, scale, sym(c.affine_translate) * w, sym(c.affine_translate) * h);
  }
  if (hit(c.p_perspective)) {
    std::array<cv::Point2f, 4> off;
    for (auto& o : off) {
      o = cv::Point2f(static_cast<float>(sym(c.perspective_jitter) * w), static_cast<float>(sym(c.perspective_jitter) * h));
    }
    s = perspective(s, off);
  }

  if (hit(c.p_salt_pepper)) salt_and_pepper(s.rgb, c.salt_pepper_amount, rng);
  if (hit(c.p_poisson)) poisson_noise(s.rgb, c.poisson_peak, rng);
  if (hit(c.p_speckle)) speckle_noise(s.rgb, c.speckle_sigma, rng);
  if (hit(c.p_blur)) {
    std::uniform_int_distribution<int> k(1, std::max(1, c.blur_max_kernel));
    blur(s.rgb, k(rng));
  }
  if (hit(c.p_color_cast)) {
    color_cast(s.rgb, cv::Vec3f(static_cast<float>(sym(c.color_cast_max)), static_cast<float>(sym(c.color_cast_max)),
                                static_cast<float>(sym(c.color_cast_max))));
  }
  if (hit(c.p_jitter)) {
    color_jitter(s.rgb, 1 + sym(c.jitter_brightness), 1 + sym(c.jitter_contrast), 1 + sym(c.jitter_saturation));
  }
  clamp_unit(s.rgb);
  clamp_unit(s.threed);
  return s;
}

}  // namespace deep3d::trainops
