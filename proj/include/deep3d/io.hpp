#pragma once

#include <filesystem>
#include <string>

#include <opencv2/imgcodecs.hpp>

#include "deep3d/error.hpp"

namespace deep3d::io {

namespace fs = std::filesystem;

/// Reads an image without any conversion; throws FormatError if unreadable.
inline cv::Mat read_image(const fs::path& path, int flags = cv::IMREAD_UNCHANGED) {
  cv::Mat img = cv::imread(path.string(), flags);
  if (img.empty()) {
    throw FormatError("cannot decode image: " + path.string());
  }
  return img;
}

inline void write_png(const fs::path& path, const cv::Mat& img) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  if (!cv::imwrite(path.string(), img)) {
    throw FormatError("cannot write image: " + path.string());
  }
}

}  // namespace deep3d::io
