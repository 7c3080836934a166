#pragma once

// Stereo disparity as the single-channel 3D input: decoding of the Cityscapes
// 16-bit storage, iterative hole completion, and normalization to [0, 1].

#include <algorithm>
#include <limits>
#include <vector>

#include <opencv2/core.hpp>

#include "deep3d/error.hpp"
#include "deep3d/geometry3d.hpp"

namespace deep3d {

struct DisparityMap {
  cv::Mat1f values;  // pixels of horizontal shift; 0 where invalid
  cv::Mat1b valid;   // 1 where the value is meaningful

  DisparityMap() = default;
  DisparityMap(int height, int width) : values(height, width, 0.0f), valid(height, width, uchar{0}) {}
  DisparityMap(cv::Mat1f v, cv::Mat1b m) : values(std::move(v)), valid(std::move(m)) {}

  int width() const noexcept { return values.cols; }
  int height() const noexcept { return values.rows; }
  std::size_t valid_count() const { return static_cast<std::size_t>(cv::countNonZero(valid)); }
};

/// Cityscapes convention: p > 0 encodes (p - 1) / 256, p == 0 marks an invalid pixel.
inline DisparityMap decode_cityscapes_disparity(const cv::Mat& raw) {
  if (raw.depth() != CV_16U || raw.channels() != 1) {
    throw FormatError("cityscapes disparity must be a 16-bit single-channel image");
  }
  DisparityMap d(raw.rows, raw.cols);
  for (int r = 0; r < raw.rows; ++r) {
    const auto* src = raw.ptr<std::uint16_t>(r);
    for (int c = 0; c < raw.cols; ++c) {
      if (src[c] > 0) {
        d.values(r, c) = static_cast<float>((src[c] - 1) / 256.0);
        d.valid(r, c) = 1;
      }
    }
  }
  return d;
}

struct CompletionResult {
  DisparityMap map;
  int iterations = 0;
  bool all_invalid = false;  // input carried no valid pixel; map is all zero
};

namespace detail {
/// Median of a small sample; even counts average the two middle values.
inline float small_median(std::vector<float>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5f * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

/// Fills holes with the median of valid 3x3 neighbours, one synchronous sweep per
/// iteration, until no pixel changes or `max_iters` sweeps have run.
inline CompletionResult complete_disparity(const DisparityMap& d, int max_iters) {
  CompletionResult result;
  result.map.values = d.values.clone();
  result.map.valid = d.valid.clone();
  if (d.valid_count() == 0) {
    result.map.values.setTo(0.0f);
    result.all_invalid = true;
    return result;
  }
  const int h = d.height();
  const int w = d.width();
  std::vector<float> neighbours;
  neighbours.reserve(8);
  for (int it = 0; it < max_iters; ++it) {
    DisparityMap next{result.map.values.clone(), result.map.valid.clone()};
    bool changed = false;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (result.map.valid(r, c)) {
          continue;
        }
        neighbours.clear();
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr;
            const int cc = c + dc;
            if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= h || cc >= w) {
              continue;
            }
            if (result.map.valid(rr, cc)) {
              neighbours.push_back(result.map.values(rr, cc));
            }
          }
        }
        if (!neighbours.empty()) {
          next.values(r, c) = detail::small_median(neighbours);
          next.valid(r, c) = 1;
          changed = true;
        }
      }
    }
    if (!changed) {
      break;
    }
    result.map = std::move(next);
    result.iterations = it + 1;
  }
  return result;
}

/// Min-max normalization over valid pixels; invalid pixels and constant maps give 0.
inline cv::Mat1f to_network_channel(const DisparityMap& d) {
  cv::Mat1f out(d.height(), d.width(), 0.0f);
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (int r = 0; r < d.height(); ++r) {
    for (int c = 0; c < d.width(); ++c) {
      if (d.valid(r, c)) {
        lo = std::min(lo, d.values(r, c));
        hi = std::max(hi, d.values(r, c));
      }
    }
  }
  if (!(hi > lo)) {
    return out;
  }
  const float scale = 1.0f / (hi - lo);
  for (int r = 0; r < d.height(); ++r) {
    for (int c = 0; c < d.width(); ++c) {
      if (d.valid(r, c)) {
        out(r, c) = std::clamp((d.values(r, c) - lo) * scale, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

/// An elevation image viewed as a fully valid map of intensities.
inline DisparityMap as_disparity_map(const ElevationPatternImage& img) {
  DisparityMap d(img.height(), img.width());
  img.pixels.convertTo(d.values, CV_32F);
  d.valid.setTo(1);
  return d;
}

inline cv::Mat1f to_network_channel(const ElevationPatternImage& img) {
  return to_network_channel(as_disparity_map(img));
}

/// 8-bit cache encoding of a normalized channel.
inline cv::Mat1b to_u8(const cv::Mat1f& channel) {
  cv::Mat1b out;
  channel.convertTo(out, CV_8U, 255.0);
  return out;
}

}  // namespace deep3d
