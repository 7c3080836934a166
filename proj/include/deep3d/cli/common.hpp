#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "deep3d/cli/run_config.hpp"
#include "deep3d/model/checkpoint.hpp"
#include "deep3d/model/network.hpp"
#include "deep3d/trainops/train.hpp"

namespace deep3d::cli {

enum ExitCode : int { kExitOk = 0, kExitValidation = 1, kExitPartial = 2 };

/// Number of classes a dataset kind is labelled with.
inline int dataset_classes(pipeline::DatasetKind k) {
  return k == pipeline::DatasetKind::kitti_road ? 2
                                                : static_cast<int>(datasets::CityscapesLabelTable::get().train_names.size());
}

inline std::vector<std::string> class_names(pipeline::DatasetKind k, int num_classes) {
  if (k == pipeline::DatasetKind::cityscapes && num_classes == dataset_classes(k)) {
    return datasets::CityscapesLabelTable::get().train_names;
  }
  if (num_classes == 2) return {"background", "road"};
  std::vector<std::string> out;
  for (int i = 0; i < num_classes; ++i) out.push_back("class_" + std::to_string(i));
  return out;
}

inline void check_class_count(const model::NetworkConfig& net, const pipeline::DataConfig& data) {
  const int want = dataset_classes(data.kind);
  if (net.num_classes != want) {
    throw ShapeError("network predicts " + std::to_string(net.num_classes) + " classes but the " +
                     pipeline::to_string(data.kind) + " labels have " + std::to_string(want));
  }
}

struct LoadedModel {
  RunConfig config;
  model::ThreeDeepNet net{nullptr};
  model::CheckpointMeta meta;
};

/// Rebuilds the network from the config snapshot stored in the checkpoint.
inline LoadedModel load_model(const fs::path& checkpoint) {
  LoadedModel m;
  m.meta = model::read_checkpoint_meta(checkpoint);
  m.config = run_config_from_json(m.meta.config);
  apply_root_override(m.config);
  m.net = model::ThreeDeepNet(m.config.network);
  model::load_checkpoint(checkpoint, *m.net);
  m.net->eval();
  return m;
}

/// Softmax class probabilities, (K, H, W) float.
inline torch::Tensor class_probabilities(model::ThreeDeepNet& net, const trainops::Sample& s) {
  torch::NoGradGuard guard;
  net->eval();
  const auto b = trainops::to_batch({s});
  return torch::softmax(net(b.rgb, b.threed).scores, 1)[0].to(torch::kFloat32).contiguous();
}

inline cv::Mat1f channel_mat(const torch::Tensor& chw, int64_t k) {
  const auto c = chw[k].contiguous();
  return cv::Mat1f(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), const_cast<float*>(c.data_ptr<float>()))
      .clone();
}

inline cv::Mat1b argmax_labels(const torch::Tensor& chw) {
  const auto a = chw.argmax(0).to(torch::kUInt8).contiguous();
  return cv::Mat1b(static_cast<int>(a.size(0)), static_cast<int>(a.size(1)), a.data_ptr<uint8_t>()).clone();
}

/// Float RGB in [0, 1] back to 8-bit BGR for display.
inline cv::Mat3b display_bgr(const cv::Mat& rgb) {
  cv::Mat u8, bgr;
  rgb.convertTo(u8, CV_8UC3, 255.0);
  cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace deep3d::cli
