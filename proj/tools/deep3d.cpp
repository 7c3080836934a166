// deep3d: preprocess, train, eval, predict, split, param-count.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deep3d/cli/evaluate.hpp"
#include "deep3d/cli/predict.hpp"
#include "deep3d/cli/preprocess.hpp"
#include "deep3d/cli/train_run.hpp"

namespace {

using namespace deep3d;
using namespace deep3d::cli;

struct DataFlags {
  std::string config;
  std::string root;
  std::string kind = "kitti_road";
  std::string split;
  std::string city;

  void add(CLI::App* app) {
    app->add_option("--config", config, "run config (its dataset section is used)");
    app->add_option("--root", root, "dataset root; overrides the config and " + std::string(kDatasetRootEnv));
    app->add_option("--dataset", kind, "kitti_road or cityscapes, when no config is given");
    app->add_option("--split", split, "dataset split");
    app->add_option("--city", city, "Cityscapes city filter");
  }

  pipeline::DataConfig resolve() const {
    pipeline::DataConfig d;
    if (!config.empty()) {
      d = load_run_config(config).dataset;
    } else {
      d.kind = pipeline::parse_kind(kind);
      d.threed_source = d.kind == pipeline::DatasetKind::kitti_road ? model::ThreeDSource::elvdiff
                                                                    : model::ThreeDSource::disparity;
      d.split = d.kind == pipeline::DatasetKind::kitti_road ? "training" : "train";
      if (const char* env = std::getenv(kDatasetRootEnv); env && *env) d.root = env;
    }
    if (!root.empty()) d.root = root;
    if (!split.empty()) d.split = split;
    if (!city.empty()) d.city = city;
    if (d.root.empty()) throw ConfigError("no dataset root: pass --root, --config or set " + std::string(kDatasetRootEnv), "root");
    return d;
  }
};

std::optional<RunConfig> optional_config(const std::string& path, const std::string& root) {
  if (path.empty()) {
    if (!root.empty()) throw ConfigError("--root needs --config here; the checkpoint root is overridden by " +
                                             std::string(kDatasetRootEnv),
                                         "root");
    return std::nullopt;
  }
  RunConfig c = load_run_config(path);
  if (!root.empty()) c.dataset.root = root;
  return c;
}

int report_error(const std::exception& e) {
  std::cerr << "error: " << e.what();
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e); ce && !ce->field().empty()) {
    std::cerr << " [field: " << ce->field() << "]";
  }
  std::cerr << "\n";
  return kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Road and scene segmentation from RGB plus a 3D channel"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DEEP3D_VERSION);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "derive 3D-channel images or bird's-eye views");
  DataFlags pre_data;
  pre_data.add(pre);
  std::string pre_mode = "elvdiff", pre_out;
  bool pre_force = false;
  int pre_workers = 0;
  pre->add_option("--mode", pre_mode, "elvdiff, disparity or bev");
  pre->add_option("--out", pre_out, "output root")->required();
  pre->add_flag("--force", pre_force, "rewrite up-to-date outputs");
  pre->add_option("--workers", pre_workers, "worker threads (0: all cores)");

  // train
  auto* tr = app.add_subcommand("train", "train a network into a run directory");
  std::string tr_config, tr_out;
  std::optional<uint64_t> tr_seed;
  bool tr_resume = false;
  int tr_stop_after = 0;
  tr->add_option("--config", tr_config, "run config")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--seed", tr_seed, "overrides train.seed");
  tr->add_flag("--resume", tr_resume, "continue from the run's last checkpoint");
  tr->add_option("--stop-after", tr_stop_after, "end this session after N epochs; continue later with --resume");

  // eval
  auto* ev = app.add_subcommand("eval", "score a checkpoint or saved predictions");
  std::string ev_ckpt, ev_config, ev_mode, ev_pred, ev_out, ev_root;
  bool ev_bev = false, ev_image_mean = false;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  ev->add_option("--config", ev_config, "run config whose dataset is evaluated");
  ev->add_option("--root", ev_root, "dataset root (with --config)");
  ev->add_option("--mode", ev_mode, "road or miou");
  ev->add_option("--predictions", ev_pred, "directory of <id>.png predictions instead of running the network");
  ev->add_flag("--bev-after", ev_bev, "warp perspective scores and labels to bird's-eye view before scoring");
  ev->add_flag("--image-mean", ev_image_mean, "average road metrics per image instead of pooling counts");
  ev->add_option("--out", ev_out, "report directory")->required();

  // predict
  auto* pr = app.add_subcommand("predict", "write score maps and overlays");
  std::string pr_ckpt, pr_config, pr_out, pr_rgb, pr_threed, pr_gt, pr_root;
  std::vector<std::string> pr_ids;
  bool pr_no_gt = false;
  pr->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
  pr->add_option("--config", pr_config, "run config whose dataset is used");
  pr->add_option("--root", pr_root, "dataset root (with --config)");
  pr->add_option("--out", pr_out, "output directory")->required();
  pr->add_option("--ids", pr_ids, "only these sample ids");
  pr->add_flag("--no-gt", pr_no_gt, "plain class overlay even when labels exist");
  pr->add_option("--rgb", pr_rgb, "single image mode: RGB image");
  pr->add_option("--threed", pr_threed, "single image mode: 8-bit 3D channel image");
  pr->add_option("--gt", pr_gt, "single image mode: train-id label image");

  // split
  auto* sp = app.add_subcommand("split", "emit a Monte Carlo cross-validation plan");
  DataFlags sp_data;
  sp_data.add(sp);
  int sp_holdout = 30, sp_iterations = 10;
  uint64_t sp_seed = 0;
  std::string sp_out;
  sp->add_option("--holdout", sp_holdout, "validation images per split");
  sp->add_option("--iterations", sp_iterations, "number of splits");
  sp->add_option("--seed", sp_seed, "plan seed");
  sp->add_option("--out", sp_out, "plan file (JSON)")->required();

  // param-count
  auto* pc = app.add_subcommand("param-count", "trainable parameters per network part");
  std::string pc_config;
  int pc_depth = 18, pc_classes = 2;
  pc->add_option("--config", pc_config, "run config (its network section is used)");
  pc->add_option("--depth", pc_depth, "backbone depth when no config is given");
  pc->add_option("--classes", pc_classes, "classes when no config is given");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*pre) {
      PreprocessOptions o;
      o.data = pre_data.resolve();
      o.mode = parse_preprocess_mode(pre_mode);
      o.out = pre_out;
      o.force = pre_force;
      o.workers = pre_workers;
      const auto s = run_preprocess(o, std::cout);
      return s.failures.empty() ? kExitOk : kExitPartial;
    }
    if (*tr) {
      TrainRunOptions o;
      o.config = load_run_config(tr_config);
      o.run_dir = tr_out;
      o.resume = tr_resume;
      o.seed = tr_seed;
      o.stop_after_epochs = tr_stop_after;
      run_train(std::move(o), std::cout);
      return kExitOk;
    }
    if (*ev) {
      EvalOptions o;
      if (!ev_ckpt.empty()) o.checkpoint = fs::path(ev_ckpt);
      o.config = optional_config(ev_config, ev_root);
      if (!ev_mode.empty()) o.mode = parse_eval_mode(ev_mode);
      if (!ev_pred.empty()) o.predictions = fs::path(ev_pred);
      o.bev_after = ev_bev;
      o.aggregation = ev_image_mean ? metrics::Aggregation::image_mean : metrics::Aggregation::dataset;
      o.out = ev_out;
      run_eval(o, std::cout);
      return kExitOk;
    }
    if (*pr) {
      PredictOptions o;
      o.checkpoint = pr_ckpt;
      o.config = optional_config(pr_config, pr_root);
      o.out = pr_out;
      o.ids = pr_ids;
      o.use_gt = !pr_no_gt;
      if (!pr_rgb.empty()) o.rgb = fs::path(pr_rgb);
      if (!pr_threed.empty()) o.threed = fs::path(pr_threed);
      if (!pr_gt.empty()) o.gt = fs::path(pr_gt);
      run_predict(o, std::cout);
      return kExitOk;
    }
    if (*sp) {
      std::vector<std::string> ids;
      for (const auto& r : pipeline::index_records(sp_data.resolve())) ids.push_back(r.id);
      const auto plan = trainops::monte_carlo_split(ids, sp_holdout, sp_iterations, sp_seed);
      const fs::path out(sp_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      write_json(out, trainops::to_json(plan));
      std::cout << "split: " << plan.splits.size() << " splits of " << ids.size() - sp_holdout << " train / "
                << sp_holdout << " val -> " << out.string() << "\n";
      return kExitOk;
    }
    if (*pc) {
      model::NetworkConfig n;
      if (!pc_config.empty()) {
        n = load_run_config(pc_config).network;
      } else {
        n.backbone_depth = pc_depth;
        n.num_classes = pc_classes;
      }
      model::ThreeDeepNet net(n);
      const auto count = [](const torch::nn::Module& m) { return model::count_trainable_parameters(m); };
      std::cout << "backbone_depth " << n.backbone_depth << "\n"
                << "spatial " << count(*net->spatial) << "\n"
                << "context " << count(*net->context) << "\n"
                << "threed " << count(*net->threed) << "\n"
                << "fusion " << count(*net->fusion) << "\n"
                << "total " << count(*net) << "\n";
      return kExitOk;
    }
  } catch (const std::exception& e) {
    return report_error(e);
  }
  return kExitValidation;
}
