#pragma once

// `eval`: road mode reports UM / UMM / UU rows and the pooled URBAN row;
// miou mode reports one row per class and the mean. Scores come from a
// checkpoint or from a directory of precomputed predictions.

#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "deep3d/cli/common.hpp"
#include "deep3d/metrics.hpp"

namespace deep3d::cli {

enum class EvalMode { road, miou };

inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "road") return EvalMode::road;
  if (s == "miou") return EvalMode::miou;
  throw ConfigError("eval mode must be road or miou; got '" + s + "'", "mode");
}

struct EvalOptions {
  std::optional<fs::path> checkpoint;
  std::optional<RunConfig> config;  // dataset (and class count) when not taken from the checkpoint
  std::optional<EvalMode> mode;     // default: road for two classes, miou otherwise
  std::optional<fs::path> predictions;  // <id>.png: road probability (8/16-bit) or train-id labels
  bool bev_after = false;  // predict in perspective, then warp score and label to bird's-eye view
  metrics::Aggregation aggregation = metrics::Aggregation::dataset;
  fs::path out;
};

namespace detail {

inline cv::Mat1f read_probability(const fs::path& p, cv::Size expect) {
  const cv::Mat raw = io::read_image(p, cv::IMREAD_UNCHANGED);
  if (raw.channels() != 1) throw FormatError("prediction '" + p.string() + "' is not single-channel");
  double scale = 0;
  if (raw.depth() == CV_8U) scale = 1.0 / 255.0;
  else if (raw.depth() == CV_16U) scale = 1.0 / 65535.0;
  else throw FormatError("prediction '" + p.string() + "' must be 8- or 16-bit");
  if (raw.size() != expect) throw ShapeError("prediction '" + p.string() + "' does not match the label size");
  cv::Mat1f f;
  raw.convertTo(f, CV_32F, scale);
  return f;
}

inline Json nullable(double v, bool ok) { return ok ? Json(v) : Json(nullptr); }

inline Json road_row(const std::string& name, const metrics::RoadEvaluator& e) {
  const bool ok = e.images() > 0;
  const auto r = ok ? e.report() : metrics::RoadScoreReport{};
  return {{"name", name},     {"images", e.images()},     {"MaxF", nullable(r.max_f, ok)},
          {"AP", nullable(r.ap, ok)}, {"PRE", nullable(r.precision, ok)}, {"REC", nullable(r.recall, ok)},
          {"FPR", nullable(r.fpr, ok)}, {"FNR", nullable(r.fnr, ok)}};
}

inline std::string cell(const Json& v) {
  if (v.is_null()) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v.get<double>();
  return os.str();
}

}  // namespace detail

/// Human-readable table for a report produced by run_eval.
inline std::string format_report(const Json& report) {
  std::ostringstream os;
  if (report["mode"] == "road") {
    os << std::left << std::setw(8) << "" << std::right;
    for (const char* h : {"MaxF", "AP", "PRE", "REC", "FPR", "FNR"}) os << std::setw(9) << h;
    os << std::setw(8) << "images" << "\n";
    for (const auto& row : report["rows"]) {
      os << std::left << std::setw(8) << row["name"].get<std::string>() << std::right;
      for (const char* h : {"MaxF", "AP", "PRE", "REC", "FPR", "FNR"}) os << std::setw(9) << detail::cell(row[h]);
      os << std::setw(8) << row["images"].get<std::size_t>() << "\n";
    }
  } else {
    for (const auto& row : report["rows"]) {
      os << std::left << std::setw(16) << row["name"].get<std::string>() << std::right << std::setw(9)
         << detail::cell(row["IoU"]) << "\n";
    }
    os << std::left << std::setw(16) << "mean" << std::right << std::setw(9) << detail::cell(report["mIoU"]) << "\n";
    os << std::left << std::setw(16) << "pixel accuracy" << std::right << std::setw(9)
       << detail::cell(report["pixel_accuracy"]) << "\n";
  }
  return os.str();
}

inline Json run_eval(const EvalOptions& o, std::ostream& log) {
  if (!o.checkpoint && !o.predictions) throw ConfigError("eval needs a checkpoint or a predictions directory", "checkpoint");
  std::optional<LoadedModel> loaded;
  if (o.checkpoint) loaded = load_model(*o.checkpoint);
  if (!o.config && !loaded) throw ConfigError("eval from predictions needs a config for the dataset", "config");
  const RunConfig cfg = o.config ? *o.config : loaded->config;
  const pipeline::DataConfig& data = cfg.dataset;
  const int classes = loaded ? loaded->net->config().num_classes : cfg.network.num_classes;
  if (classes != dataset_classes(data.kind)) {
    throw ShapeError("model predicts " + std::to_string(classes) + " classes but the " + pipeline::to_string(data.kind) +
                     " labels have " + std::to_string(dataset_classes(data.kind)));
  }
  const EvalMode mode = o.mode ? *o.mode : (classes == 2 ? EvalMode::road : EvalMode::miou);
  if (mode == EvalMode::road && classes != 2) throw ShapeError("road mode needs a two-class model");
  if (o.bev_after && (mode != EvalMode::road || data.view != pipeline::View::perspective)) {
    throw ConfigError("bev_after needs road mode on a perspective-view dataset", "bev_after");
  }
  if (o.out.empty()) throw ConfigError("an output directory is required", "out");

  const auto recs = pipeline::index_records(data);
  const auto thresholds = metrics::uniform_thresholds();
  std::map<datasets::Category, metrics::RoadEvaluator> per_cat;
  for (auto c : {datasets::Category::um, datasets::Category::umm, datasets::Category::uu}) {
    per_cat.emplace(c, metrics::RoadEvaluator(thresholds, o.aggregation));
  }
  metrics::RoadEvaluator urban(thresholds, o.aggregation);
  metrics::ConfusionMatrix cm(classes);
  std::size_t images = 0;

  for (const auto& rec : recs) {
    if (!rec.label_path) continue;
    const trainops::Sample s = pipeline::load_sample(rec, data);
    cv::Mat1b label = s.label;
    const fs::path pred_file = o.predictions ? *o.predictions / (rec.id + ".png") : fs::path();
    if (o.predictions && !fs::exists(pred_file)) throw DatasetError("no prediction for '" + rec.id + "'");
    if (mode == EvalMode::miou) {
      cv::Mat1b pred;
      if (o.predictions) {
        pred = io::read_image(pred_file, cv::IMREAD_GRAYSCALE);
        if (pred.size() != label.size()) throw ShapeError("prediction '" + pred_file.string() + "' size mismatch");
      } else {
        pred = argmax_labels(class_probabilities(loaded->net, s));
      }
      metrics::confusion_update<uint8_t>(cm, {pred.ptr(), pred.total()}, {label.ptr(), label.total()},
                                         cfg.train.ignore_index);
    } else {
      cv::Mat1f prob = o.predictions ? detail::read_probability(pred_file, label.size())
                                     : channel_mat(class_probabilities(loaded->net, s), 1);
      if (o.bev_after) {
        // Calibration refers to the native image, so go back to it before warping.
        const cv::Mat bgr = io::read_image(rec.rgb_path, cv::IMREAD_COLOR);
        if (prob.size() != bgr.size()) cv::resize(prob, prob, bgr.size(), 0, 0, cv::INTER_LINEAR);
        const Calibration calib = read_kitti_calib(rec.calib_path.value());
        prob = datasets::bev_transform(prob, calib, data.bev, datasets::Interpolation::bilinear).image;
        const auto lb = datasets::bev_transform(pipeline::label_plane(rec, data.kind, bgr.size()), calib, data.bev,
                                                datasets::Interpolation::nearest, 255);
        label = lb.image;
        label.setTo(255, lb.valid == 0);
      }
      cv::Mat1b gt = label == 1, valid = label != 255;
      gt /= 255;
      valid /= 255;
      const std::span<const float> sp(prob.ptr<float>(), prob.total());
      const std::span<const uint8_t> gp(gt.ptr(), gt.total()), vp(valid.ptr(), valid.total());
      urban.add(sp, gp, vp);
      if (auto it = per_cat.find(rec.category); it != per_cat.end()) it->second.add(sp, gp, vp);
    }
    ++images;
  }
  if (images == 0) throw DatasetError("no labelled samples to evaluate");

  Json report = {{"mode", mode == EvalMode::road ? "road" : "miou"},
                 {"images", images},
                 {"dataset", pipeline::to_json(data)},
                 {"source", o.predictions ? "predictions:" + o.predictions->string()
                                          : "checkpoint:" + o.checkpoint->string()},
                 {"rows", Json::array()}};
  if (mode == EvalMode::road) {
    report["bev_after"] = o.bev_after;
    report["aggregation"] = o.aggregation == metrics::Aggregation::dataset ? "dataset" : "image_mean";
    report["rows"].push_back(detail::road_row("UM", per_cat.at(datasets::Category::um)));
    report["rows"].push_back(detail::road_row("UMM", per_cat.at(datasets::Category::umm)));
    report["rows"].push_back(detail::road_row("UU", per_cat.at(datasets::Category::uu)));
    report["rows"].push_back(detail::road_row("URBAN", urban));
  } else {
    const auto iou = metrics::miou(cm);
    const auto names = class_names(data.kind, classes);
    for (int k = 0; k < classes; ++k) {
      const double v = iou.per_class[k];
      report["rows"].push_back({{"name", names[k]}, {"IoU", detail::nullable(v, std::isfinite(v))}});
    }
    report["mIoU"] = iou.mean;
    report["pixel_accuracy"] = metrics::pixel_accuracy(cm);
  }

  fs::create_directories(o.out);
  {
    std::ofstream j(o.out / "report.json", std::ios::trunc);
    j << report.dump(2) << "\n";
  }
  const std::string table = format_report(report);
  {
    std::ofstream t(o.out / "report.txt", std::ios::trunc);
    t << table;
  }
  log << table;
  return report;
}

}  // namespace deep3d::cli
