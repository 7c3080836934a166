#pragma once

// `predict`: per-class 16-bit score maps, argmax labels and an overlay.
// Layout under the output directory:
//   scores/<id>/class_<k>.png  labels/<id>.png  overlay/<id>.png  road/<id>.png (two classes)
// road/ and labels/ are the formats `eval --predictions` reads.

#include <cmath>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "deep3d/cli/common.hpp"
#include "deep3d/cli/overlay.hpp"
#include "deep3d/io.hpp"

namespace deep3d::cli {

struct PredictOptions {
  fs::path checkpoint;
  std::optional<RunConfig> config;  // overrides the dataset stored in the checkpoint
  fs::path out;
  std::vector<std::string> ids;  // dataset mode: restrict to these ids (empty = all)
  bool use_gt = true;            // code the overlay TP/FP/FN when labels exist
  // Single-image mode: an RGB image plus an 8-bit 3D channel image, optional train-id labels.
  std::optional<fs::path> rgb;
  std::optional<fs::path> threed;
  std::optional<fs::path> gt;
};

struct PredictedImage {
  std::string id;
  std::vector<fs::path> scores;
  fs::path labels;
  fs::path overlay;
  bool coded = false;  // overlay uses TP/FP/FN colors
};

/// Probability to 16 bits; decoding and renormalizing each pixel recovers the softmax.
inline cv::Mat1w encode_score(const cv::Mat1f& p) {
  cv::Mat1w out;
  p.convertTo(out, CV_16U, 65535.0);
  return out;
}

inline PredictedImage write_prediction(const std::string& id, const torch::Tensor& probs, const trainops::Sample& s,
                                       bool has_gt, const fs::path& out) {
  PredictedImage r;
  r.id = id;
  const int64_t k = probs.size(0);
  for (int64_t c = 0; c < k; ++c) {
    const fs::path p = out / "scores" / id / ("class_" + std::to_string(c) + ".png");
    io::write_png(p, encode_score(channel_mat(probs, c)));
    r.scores.push_back(p);
  }
  if (k == 2) io::write_png(out / "road" / (id + ".png"), encode_score(channel_mat(probs, 1)));
  const cv::Mat1b pred = argmax_labels(probs);
  r.labels = out / "labels" / (id + ".png");
  io::write_png(r.labels, pred);
  const cv::Mat3b base = display_bgr(s.rgb);
  r.coded = has_gt && k == 2;
  const cv::Mat3b overlay =
      r.coded ? outcome_overlay(base, outcome_map(pred, s.label)) : class_overlay(base, pred, static_cast<int>(k));
  r.overlay = out / "overlay" / (id + ".png");
  io::write_png(r.overlay, overlay);
  return r;
}

inline trainops::Sample single_image_sample(const PredictOptions& o) {
  trainops::Sample s;
  s.rgb = pipeline::rgb_float(io::read_image(*o.rgb, cv::IMREAD_COLOR));
  const cv::Mat t = io::read_image(*o.threed, cv::IMREAD_GRAYSCALE);
  if (t.size() != s.rgb.size()) throw ShapeError("3D image and RGB image differ in size");
  t.convertTo(s.threed, CV_32F, 1.0 / 255.0);
  if (o.gt) {
    s.label = io::read_image(*o.gt, cv::IMREAD_GRAYSCALE);
    if (s.label.size() != s.rgb.size()) throw ShapeError("label image and RGB image differ in size");
  } else {
    s.label = cv::Mat1b(s.rgb.size(), trainops::kIgnoreIndex);
  }
  return s;
}

inline std::vector<PredictedImage> run_predict(const PredictOptions& o, std::ostream& log) {
  if (o.out.empty()) throw ConfigError("an output directory is required", "out");
  if (o.rgb.has_value() != o.threed.has_value()) throw ConfigError("--rgb and --threed go together", "threed");
  LoadedModel m = load_model(o.checkpoint);
  std::vector<PredictedImage> done;
  if (o.rgb) {
    const auto s = single_image_sample(o);
    done.push_back(write_prediction(o.rgb->stem().string(), class_probabilities(m.net, s), s, o.gt.has_value(), o.out));
  } else {
    const pipeline::DataConfig data = o.config ? o.config->dataset : m.config.dataset;
    check_class_count(m.net->config(), data);
    const std::set<std::string> wanted(o.ids.begin(), o.ids.end());
    for (const auto& rec : pipeline::index_records(data)) {
      if (!wanted.empty() && !wanted.count(rec.id)) continue;
      const auto s = pipeline::load_sample(rec, data);
      const bool gt = o.use_gt && rec.label_path.has_value();
      done.push_back(write_prediction(rec.id, class_probabilities(m.net, s), s, gt, o.out));
    }
    if (!wanted.empty() && done.size() != wanted.size()) throw DatasetError("some requested ids are not in the dataset");
  }
  log << "predict: " << done.size() << " images -> " << o.out.string() << "\n";
  return done;
}

}  // namespace deep3d::cli
