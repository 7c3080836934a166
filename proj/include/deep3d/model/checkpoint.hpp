#pragma once

// Self-describing checkpoint archive: run config, hierarchical parameter and
// buffer names, optimizer state, epoch/iteration counters and the seed.

#include <filesystem>
#include <functional>
#include <string>

#include <torch/torch.h>

#include "deep3d/error.hpp"
#include "deep3d/json_fields.hpp"

namespace deep3d::model {

inline constexpr const char* kCheckpointFormat = "deep3d-checkpoint-1";

struct CheckpointMeta {
  Json config = Json::object();
  int64_t epoch = 0;  // completed epochs
  int64_t iteration = 0;
  uint64_t seed = 0;
  Json extra = Json::object();
};

using ArchiveWriter = std::function<void(torch::serialize::OutputArchive&)>;
using ArchiveReader = std::function<void(torch::serialize::InputArchive&)>;

inline void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& model,
                            const CheckpointMeta& meta, const ArchiveWriter& write_optimizer = {}) {
  torch::serialize::OutputArchive root;
  root.write("format", c10::IValue(std::string(kCheckpointFormat)));
  root.write("config", c10::IValue(meta.config.dump()));
  root.write("extra", c10::IValue(meta.extra.dump()));
  root.write("epoch", c10::IValue(meta.epoch));
  root.write("iteration", c10::IValue(meta.iteration));
  root.write("seed", c10::IValue(static_cast<int64_t>(meta.seed)));

  torch::serialize::OutputArchive tensors;
  for (const auto& kv : model.named_parameters(true)) tensors.write(kv.key(), kv.value());
  for (const auto& kv : model.named_buffers(true)) tensors.write(kv.key(), kv.value(), true);
  root.write("model", tensors);

  torch::serialize::OutputArchive opt;
  if (write_optimizer) write_optimizer(opt);
  root.write("optimizer", opt);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted save never clobbers the previous checkpoint.
  const auto tmp = path.string() + ".tmp";
  root.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

namespace detail {
inline CheckpointMeta read_meta(torch::serialize::InputArchive& root, const std::string& where) {
  c10::IValue v;
  if (!root.try_read("format", v) || !v.isString() || v.toStringRef() != kCheckpointFormat) {
    throw FormatError("'" + where + "' is not a checkpoint of this library");
  }
  CheckpointMeta m;
  root.read("config", v);
  m.config = Json::parse(v.toStringRef());
  root.read("extra", v);
  m.extra = Json::parse(v.toStringRef());
  root.read("epoch", v);
  m.epoch = v.toInt();
  root.read("iteration", v);
  m.iteration = v.toInt();
  root.read("seed", v);
  m.seed = static_cast<uint64_t>(v.toInt());
  return m;
}

inline torch::serialize::InputArchive open_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("checkpoint '" + path.string() + "' does not exist");
  torch::serialize::InputArchive root;
  try {
    root.load_from(path.string());
  } catch (const c10::Error& e) {
    throw FormatError("cannot read checkpoint '" + path.string() + "'");
  }
  return root;
}
}  // namespace detail

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  auto root = detail::open_archive(path);
  return detail::read_meta(root, path.string());
}

/// Restores parameters and buffers by name; every model tensor must be present.
inline CheckpointMeta load_checkpoint(const std::filesystem::path& path, torch::nn::Module& model,
                                      const ArchiveReader& read_optimizer = {}) {
  auto root = detail::open_archive(path);
  CheckpointMeta meta = detail::read_meta(root, path.string());
  torch::serialize::InputArchive tensors;
  root.read("model", tensors);
  torch::NoGradGuard guard;
  auto load_into = [&](const std::string& name, torch::Tensor& dst, bool buffer) {
    torch::Tensor src;
    if (!tensors.try_read(name, src, buffer)) throw FormatError("checkpoint lacks tensor '" + name + "'");
    if (!src.sizes().equals(dst.sizes())) throw ShapeError("checkpoint tensor '" + name + "' differs in shape");
    dst.copy_(src);
  };
  for (auto& kv : model.named_parameters(true)) load_into(kv.key(), kv.value(), false);
  for (auto& kv : model.named_buffers(true)) load_into(kv.key(), kv.value(), true);
  if (read_optimizer) {
    torch::serialize::InputArchive opt;
    root.read("optimizer", opt);
    read_optimizer(opt);
  }
  return meta;
}

}  // namespace deep3d::model
