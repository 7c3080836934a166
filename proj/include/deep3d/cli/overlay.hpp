#pragma once

// Prediction overlays. With ground truth, road pixels are coded TP green,
// FP blue, FN red; without it each class gets a fixed palette color.

#include <array>
#include <cstdint>

#include <opencv2/core.hpp>

#include "deep3d/error.hpp"

namespace deep3d::cli {

enum Outcome : std::uint8_t { kBackground = 0, kTruePositive = 1, kFalsePositive = 2, kFalseNegative = 3 };

/// Per-pixel outcome for the positive class. Ignored ground truth (255) and true negatives are background.
inline cv::Mat1b outcome_map(const cv::Mat1b& pred, const cv::Mat1b& gt, int positive = 1, int ignore = 255) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground truth differ in size");
  cv::Mat1b out(pred.size(), kBackground);
  for (int r = 0; r < pred.rows; ++r) {
    for (int c = 0; c < pred.cols; ++c) {
      const int g = gt(r, c);
      if (g == ignore) continue;
      const bool p = pred(r, c) == positive;
      const bool t = g == positive;
      out(r, c) = p && t ? kTruePositive : p ? kFalsePositive : t ? kFalseNegative : kBackground;
    }
  }
  return out;
}

// BGR
inline const cv::Vec3b kGreen{0, 255, 0};
inline const cv::Vec3b kBlue{255, 0, 0};
inline const cv::Vec3b kRed{0, 0, 255};

inline cv::Vec3b outcome_color(std::uint8_t o) {
  switch (o) {
    case kTruePositive: return kGreen;
    case kFalsePositive: return kBlue;
    case kFalseNegative: return kRed;
    default: return {0, 0, 0};
  }
}

/// Cityscapes train-id colors (RGB); classes past 19 cycle through a hashed color.
inline cv::Vec3b class_color_bgr(int k) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 19> kRgb = {{
      {128, 64, 128}, {244, 35, 232}, {70, 70, 70},   {102, 102, 156}, {190, 153, 153}, {153, 153, 153}, {250, 170, 30},
      {220, 220, 0},  {107, 142, 35}, {152, 251, 152}, {70, 130, 180}, {220, 20, 60},   {255, 0, 0},     {0, 0, 142},
      {0, 0, 70},     {0, 60, 100},   {0, 80, 100},   {0, 0, 230},     {119, 11, 32},
  }};
  if (k >= 0 && k < 19) return {kRgb[k][2], kRgb[k][1], kRgb[k][0]};
  const auto h = static_cast<std::uint32_t>(k) * 2654435761u;
  return {static_cast<uchar>(h >> 8), static_cast<uchar>(h >> 16), static_cast<uchar>(h >> 24)};
}

inline cv::Vec3b blend(const cv::Vec3b& a, const cv::Vec3b& b, double alpha) {
  cv::Vec3b o;
  for (int i = 0; i < 3; ++i) o[i] = cv::saturate_cast<uchar>((1 - alpha) * a[i] + alpha * b[i]);
  return o;
}

/// Background pixels keep the image color; coded pixels are blended with their outcome color.
inline cv::Mat3b outcome_overlay(const cv::Mat3b& bgr, const cv::Mat1b& outcome, double alpha = 0.5) {
  if (bgr.size() != outcome.size()) throw ShapeError("image and outcome map differ in size");
  cv::Mat3b out = bgr.clone();
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      if (outcome(r, c) != kBackground) out(r, c) = blend(out(r, c), outcome_color(outcome(r, c)), alpha);
    }
  }
  return out;
}

/// Plain class coloring. In the binary road setup class 0 is left uncolored.
inline cv::Mat3b class_overlay(const cv::Mat3b& bgr, const cv::Mat1b& pred, int num_classes, double alpha = 0.5) {
  if (bgr.size() != pred.size()) throw ShapeError("image and prediction differ in size");
  cv::Mat3b out = bgr.clone();
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      const int k = pred(r, c);
      if (num_classes == 2) {
        if (k == 1) out(r, c) = blend(out(r, c), class_color_bgr(0), alpha);
      } else {
        out(r, c) = blend(out(r, c), class_color_bgr(k), alpha);
      }
    }
  }
  return out;
}

}  // namespace deep3d::cli
