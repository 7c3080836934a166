#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <sys/wait.h>

#include "deep3d/cli/evaluate.hpp"
#include "deep3d/cli/predict.hpp"
#include "deep3d/cli/preprocess.hpp"
#include "deep3d/cli/train_run.hpp"
#include "fixtures/synthetic_kitti.hpp"

using namespace deep3d;
using namespace deep3d::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("deep3d_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Json toy_json(const fs::path& root) {
  return {{"schema_version", 1},
          {"dataset", {{"kind", "kitti_road"}, {"root", root.string()}, {"width", 64}, {"height", 32}}},
          {"network", {{"backbone_depth", 18}, {"num_classes", 2}, {"spatial_channels", 32}, {"fusion_channels", 32}}},
          {"train", {{"epochs", 2}, {"minibatch", 2}, {"base_lr", 0.01}, {"seed", 4}}}};
}

RunConfig toy_config(const fs::path& root) {
  RunConfig c = run_config_from_json(toy_json(root));
  c.validate();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Json read_json(const fs::path& p) {
  std::ifstream in(p);
  return Json::parse(in);
}

const fixtures::MiniDataset& mini_kitti() {
  static const auto ds = fixtures::write_mini_kitti(fresh("kitti"), 128, 64, 5);
  return ds;
}

// One short training run shared by the eval and predict tests.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path d = fresh("shared_run");
    std::ostringstream log;
    run_train({toy_config(mini_kitti().root), d}, log);
    return d;
  }();
  return dir;
}

pipeline::DataConfig kitti_data(const fs::path& root) {
  pipeline::DataConfig d;
  d.root = root;
  return d;
}

// Cityscapes-layout tree with random label ids and a disparity map with holes.
fs::path write_mini_cityscapes(const fs::path& root, int frames = 3) {
  std::mt19937 rng(9);
  const int ids[] = {0, 7, 8, 11, 17, 21, 23, 24, 26};
  std::uniform_int_distribution<int> pick(0, 8), disp(0, 4000), px(0, 255);
  for (int i = 0; i < frames; ++i) {
    const std::string stem = "aachen_000000_" + std::to_string(100000 + i);
    cv::Mat3b rgb(32, 64);
    cv::Mat1b lab(32, 64);
    cv::Mat1w d(32, 64);
    for (int r = 0; r < 32; ++r) {
      for (int c = 0; c < 64; ++c) {
        rgb(r, c) = {static_cast<uchar>(px(rng)), static_cast<uchar>(px(rng)), static_cast<uchar>(px(rng))};
        lab(r, c) = static_cast<uchar>(ids[pick(rng)]);
        const int v = disp(rng);
        d(r, c) = static_cast<ushort>(v < 800 ? 0 : v);
      }
    }
    io::write_png(root / "leftImg8bit" / "val" / "aachen" / (stem + "_leftImg8bit.png"), rgb);
    io::write_png(root / "gtFine" / "val" / "aachen" / (stem + "_gtFine_labelIds.png"), lab);
    io::write_png(root / "disparity" / "val" / "aachen" / (stem + "_disparity.png"), d);
  }
  return root;
}

bool same_mat(const cv::Mat& a, const cv::Mat& b) {
  return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0;
}

}  // namespace

// ---- config ----------------------------------------------------------------

TEST(RunConfig, UnknownKeyIsNamed) {
  Json j = toy_json("/data");
  j["train"]["minibatc"] = 2;
  try {
    run_config_from_json(j);
    FAIL() << "accepted an unknown key";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "train.minibatc");
  }
  j = toy_json("/data");
  j["dataset"]["bev"]["widht"] = 3;
  try {
    run_config_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "dataset.bev.widht");
  }
}

TEST(RunConfig, BadBackboneDepthNamesField) {
  Json j = toy_json("/data");
  j["network"]["backbone_depth"] = 42;
  try {
    run_config_from_json(j).validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "backbone_depth");
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
}

TEST(RunConfig, SchemaVersionIsRequiredAndChecked) {
  Json j = toy_json("/data");
  j.erase("schema_version");
  EXPECT_THROW(run_config_from_json(j), ConfigError);
  j["schema_version"] = 2;
  EXPECT_THROW(run_config_from_json(j), ConfigError);
}

TEST(RunConfig, RelativeRootAndEnvironmentOverride) {
  const fs::path dir = fresh("cfg_paths");
  Json j = toy_json("data");
  j["dataset"]["cache_dir"] = "cache";
  std::ofstream(dir / "c.json") << j.dump();
  auto c = load_run_config(dir / "c.json");
  EXPECT_EQ(c.dataset.root, (dir / "data").lexically_normal());
  EXPECT_EQ(c.dataset.cache_dir, (dir / "cache").lexically_normal());
  ::setenv(kDatasetRootEnv, "/elsewhere", 1);
  c = load_run_config(dir / "c.json");
  ::unsetenv(kDatasetRootEnv);
  EXPECT_EQ(c.dataset.root, "/elsewhere");
}

TEST(RunConfig, JsonRoundTrip) {
  Json j = toy_json("/data");
  j["cv"] = {{"enabled", true}, {"holdout", 2}, {"iterations", 3}, {"seed", 5}, {"fold", 1}};
  j["train"]["augment"] = {{"p_mirror", 0.25}};
  const Json once = to_json(run_config_from_json(j));
  EXPECT_EQ(to_json(run_config_from_json(once)), once);
}

TEST(RunConfig, SourceMustMatchDataset) {
  Json j = toy_json("/data");
  j["network"]["threed_source"] = "disparity";
  try {
    run_config_from_json(j).validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "network.threed_source");
  }
}

// ---- preprocess --------------------------------------------------------------

TEST(Preprocess, WritesOncePerSampleAndIsIdempotent) {
  const auto ds = fixtures::write_mini_kitti(fresh("pre_idem"), 64, 32, 5);
  PreprocessOptions o;
  o.data = kitti_data(ds.root);
  o.out = fresh("pre_idem_out");
  std::ostringstream log;
  auto s = run_preprocess(o, log);
  EXPECT_EQ(s.written, 5u);
  EXPECT_TRUE(s.failures.empty());
  for (const auto& id : ds.ids) EXPECT_TRUE(fs::exists(o.out / "elvdiff" / (id + ".png"))) << id;

  s = run_preprocess(o, log);
  EXPECT_EQ(s.written, 0u);
  EXPECT_EQ(s.skipped, 5u);

  // A newer input invalidates only its own output.
  const fs::path scan = ds.root / "training" / "velodyne" / "umm_000000.bin";
  const fs::path stale = o.out / "elvdiff" / "umm_000000.png";
  fs::last_write_time(stale, fs::last_write_time(scan) - std::chrono::seconds(30));
  s = run_preprocess(o, log);
  EXPECT_EQ(s.written, 1u);

  o.force = true;
  EXPECT_EQ(run_preprocess(o, log).written, 5u);
  o.force = false;
  o.data.elevation.dilation_kernel = 5;  // parameter change rewrites everything
  EXPECT_EQ(run_preprocess(o, log).written, 5u);
  EXPECT_EQ(run_preprocess(o, log).written, 0u);
}

TEST(Preprocess, CorruptScanIsListedAndOthersSucceed) {
  const auto ds = fixtures::write_mini_kitti(fresh("pre_corrupt"), 64, 32, 5);
  std::ofstream(ds.root / "training" / "velodyne" / "uu_000000.bin", std::ios::trunc) << "garbage";
  PreprocessOptions o;
  o.data = kitti_data(ds.root);
  o.out = fresh("pre_corrupt_out");
  std::ostringstream log;
  const auto s = run_preprocess(o, log);
  ASSERT_EQ(s.failures.size(), 1u);
  EXPECT_EQ(s.failures[0].id, "uu_000000");
  EXPECT_EQ(s.written, 4u);
  EXPECT_NE(log.str().find("FAILED uu_000000"), std::string::npos);
}

TEST(Preprocess, CachedChannelMatchesDirectComputation) {
  const auto& ds = mini_kitti();
  PreprocessOptions o;
  o.data = kitti_data(ds.root);
  o.out = fresh("pre_cache_out");
  std::ostringstream log;
  run_preprocess(o, log);
  auto cached = o.data;
  cached.cache_dir = o.out;
  for (const auto& rec : pipeline::index_records(o.data)) {
    const auto a = pipeline::load_sample(rec, o.data);
    const auto b = pipeline::load_sample(rec, cached);
    EXPECT_TRUE(same_mat(a.threed, b.threed)) << rec.id;
    EXPECT_TRUE(same_mat(a.rgb, b.rgb));
    EXPECT_TRUE(same_mat(a.label, b.label));
  }
}

TEST(Preprocess, BevTreeMatchesOnTheFlyProjection) {
  const auto& ds = mini_kitti();
  PreprocessOptions o;
  o.data = kitti_data(ds.root);
  o.data.view = pipeline::View::bev;
  o.data.bev.width = 40;
  o.data.bev.height = 80;
  o.mode = PreprocessMode::bev;
  o.out = fresh("pre_bev_out");
  std::ostringstream log;
  const auto s = run_preprocess(o, log);
  EXPECT_EQ(s.written, 5u);
  EXPECT_EQ(s.dir, pipeline::bev_cache_dir(o.out, o.data.bev));
  auto cached = o.data;
  cached.cache_dir = o.out;
  const auto rec = pipeline::index_records(o.data).front();
  const auto a = pipeline::load_sample(rec, o.data);
  const auto b = pipeline::load_sample(rec, cached);
  EXPECT_EQ(a.rgb.size(), cv::Size(40, 80));
  EXPECT_TRUE(same_mat(a.rgb, b.rgb));
  EXPECT_TRUE(same_mat(a.threed, b.threed));
  EXPECT_TRUE(same_mat(a.label, b.label));
  // A different BEV grid goes to a different directory.
  auto other = o;
  other.data.bev.width = 20;
  EXPECT_NE(preprocess_dir(other), s.dir);
}

TEST(Preprocess, DisparityModeOnCityscapes) {
  const fs::path root = write_mini_cityscapes(fresh("cs_pre"));
  PreprocessOptions o;
  o.data.kind = pipeline::DatasetKind::cityscapes;
  o.data.threed_source = model::ThreeDSource::disparity;
  o.data.root = root;
  o.data.split = "val";
  o.mode = PreprocessMode::disparity;
  o.out = fresh("cs_pre_out");
  std::ostringstream log;
  EXPECT_EQ(run_preprocess(o, log).written, 3u);
  auto cached = o.data;
  cached.cache_dir = o.out;
  const auto rec = pipeline::index_records(o.data).front();
  const cv::Mat1f a = pipeline::load_sample(rec, o.data).threed, b = pipeline::load_sample(rec, cached).threed;
  EXPECT_LE(cv::norm(a, b, cv::NORM_INF), 0.5 / 255 + 1e-6);  // 8-bit cache quantization

  o.mode = PreprocessMode::elvdiff;
  EXPECT_THROW(run_preprocess(o, log), ConfigError);
}

// ---- manifest ------------------------------------------------------------------

TEST(Manifest, RefusesADifferentConfigOrSeed) {
  const fs::path dir = fresh("manifest");
  const Json ds = {{"hash", "abc"}};
  auto m = RunManifest::open_or_create(dir, {{"a", 1}}, 3, ds);
  m.begin_session("train", false);
  m.end_session("completed", {}, {});
  EXPECT_THROW(RunManifest::open_or_create(dir, {{"a", 2}}, 3, ds), ConfigError);
  EXPECT_THROW(RunManifest::open_or_create(dir, {{"a", 1}}, 4, ds), ConfigError);
  EXPECT_THROW(RunManifest::open_or_create(dir, {{"a", 1}}, 3, {{"hash", "changed"}}), DatasetError);
  auto again = RunManifest::open_or_create(dir, {{"a", 1}}, 3, ds);
  EXPECT_EQ(again.json()["sessions"].size(), 1u);
}

// ---- train ---------------------------------------------------------------------

TEST(TrainCommand, RunDirectoryContract) {
  const fs::path dir = trained_run();
  const auto m = RunManifest::load(dir);
  const Json& j = m.json();
  EXPECT_EQ(j["format"], kManifestFormat);
  EXPECT_EQ(j["seed"], 4);
  EXPECT_EQ(j["dataset"]["records"], 5);
  EXPECT_EQ(j["dataset"]["files"], 20);
  EXPECT_EQ(j["config"], read_json(dir / "config.json"));
  ASSERT_EQ(j["sessions"].size(), 1u);
  const Json& s = j["sessions"][0];
  EXPECT_EQ(s["status"], "completed");
  EXPECT_FALSE(s["finished"].is_null());
  EXPECT_TRUE(s["summary"]["final_train_pixel_accuracy"].is_number());
  EXPECT_TRUE(m.missing_artifacts().empty());
  std::vector<std::string> names;
  for (const auto& a : s["artifacts"]) names.push_back(a);
  for (const char* want : {"config.json", "metrics.jsonl", "checkpoints/last.ckpt", "checkpoints/best.ckpt"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
  }
  std::istringstream lines(slurp(dir / "metrics.jsonl"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) EXPECT_EQ(Json::parse(line)["epoch"], ++n);
  EXPECT_EQ(n, 2);
}

TEST(TrainCommand, LogsTheFinalTrainAccuracy) {
  std::ostringstream log;
  TrainRunOptions o{toy_config(mini_kitti().root), fresh("acc_log")};
  o.config.train.epochs = 1;
  const auto r = run_train(o, log);
  EXPECT_NE(log.str().find("final train pixel accuracy"), std::string::npos);
  EXPECT_GE(r.final_train_pixel_accuracy, 0.0);
  EXPECT_LE(r.final_train_pixel_accuracy, 100.0);
}

TEST(TrainCommand, IdenticalManifestsGiveIdenticalLogs) {
  std::ostringstream log;
  const fs::path a = fresh("same_a"), b = fresh("same_b");
  run_train({toy_config(mini_kitti().root), a}, log);
  run_train({toy_config(mini_kitti().root), b}, log);
  EXPECT_EQ(RunManifest::load(a).json()["config"], RunManifest::load(b).json()["config"]);
  EXPECT_EQ(slurp(a / "metrics.jsonl"), slurp(b / "metrics.jsonl"));
}

TEST(TrainCommand, ExistingRunNeedsResume) {
  std::ostringstream log;
  TrainRunOptions o{toy_config(mini_kitti().root), trained_run()};
  EXPECT_THROW(run_train(o, log), ConfigError);
  o.run_dir = fresh("nothing_here");
  o.resume = true;
  EXPECT_THROW(run_train(o, log), ConfigError);
}

TEST(TrainCommand, StopAndResumeContinuesTheEpochCounter) {
  std::ostringstream log;
  const fs::path dir = fresh("resume");
  TrainRunOptions o{toy_config(mini_kitti().root), dir};
  o.config.train.epochs = 3;
  o.stop_after_epochs = 1;
  run_train(o, log);
  const Json first = RunManifest::load(dir).json()["sessions"][0];
  EXPECT_EQ(first["status"], "stopped");

  o.stop_after_epochs = 0;
  o.resume = true;
  const auto r = run_train(o, log);
  EXPECT_EQ(r.train.history.front().epoch, 2);
  const Json m = RunManifest::load(dir).json();
  ASSERT_EQ(m["sessions"].size(), 2u);
  EXPECT_EQ(m["sessions"][0], first);  // earlier sessions are never rewritten
  EXPECT_EQ(m["sessions"][1]["status"], "completed");
  EXPECT_TRUE(m["sessions"][1]["resumed"].get<bool>());
  std::istringstream lines(slurp(dir / "metrics.jsonl"));
  std::string line;
  std::vector<int> epochs;
  while (std::getline(lines, line)) epochs.push_back(Json::parse(line)["epoch"]);
  EXPECT_EQ(epochs, (std::vector<int>{1, 2, 3}));

  // Resuming with a changed config is refused.
  o.config.train.base_lr = 0.5;
  EXPECT_THROW(run_train(o, log), ConfigError);
}

TEST(TrainCommand, CrossValidationHoldsOutTheFold) {
  std::ostringstream log;
  const fs::path dir = fresh("cv");
  TrainRunOptions o{toy_config(mini_kitti().root), dir};
  o.config.train.epochs = 1;
  o.config.cv = {true, 3, 2, 11, 1};
  run_train(o, log);
  const Json plan = read_json(dir / "cv_plan.json");
  EXPECT_EQ(plan["splits"].size(), 3u);
  const Json rec = Json::parse(slurp(dir / "metrics.jsonl"));
  EXPECT_EQ(rec["train_size"], 3);
  EXPECT_EQ(rec["val_size"], 2);
  EXPECT_TRUE(rec["val_metric"].is_number());
}

// ---- eval ----------------------------------------------------------------------

TEST(EvalCommand, OraclePredictionsScorePerfectly) {
  const auto& ds = mini_kitti();
  const RunConfig cfg = toy_config(ds.root);
  const fs::path pred = fresh("oracle_pred");
  for (const auto& rec : pipeline::index_records(cfg.dataset)) {
    const cv::Mat1b label = pipeline::load_sample(rec, cfg.dataset).label;
    cv::Mat1b road = label == 1;
    io::write_png(pred / (rec.id + ".png"), road);
  }
  EvalOptions o;
  o.config = cfg;
  o.predictions = pred;
  o.out = fresh("oracle_eval");
  std::ostringstream log;
  const Json rep = run_eval(o, log);
  ASSERT_EQ(rep["rows"].size(), 4u);
  const std::vector<std::string> names = {"UM", "UMM", "UU", "URBAN"};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(rep["rows"][i]["name"], names[i]);
    EXPECT_DOUBLE_EQ(rep["rows"][i]["MaxF"].get<double>(), 100.0);
  }
  EXPECT_EQ(rep["rows"][3]["images"], 5);
  EXPECT_EQ(read_json(o.out / "report.json"), rep);
  EXPECT_NE(slurp(o.out / "report.txt").find("URBAN"), std::string::npos);

  o.mode = EvalMode::miou;
  pred.string();
  const fs::path labels = fresh("oracle_labels");
  for (const auto& rec : pipeline::index_records(cfg.dataset)) {
    io::write_png(labels / (rec.id + ".png"), pipeline::load_sample(rec, cfg.dataset).label);
  }
  o.predictions = labels;
  EXPECT_DOUBLE_EQ(run_eval(o, log)["mIoU"].get<double>(), 100.0);
}

TEST(EvalCommand, CheckpointRoadReportAndBevAfter) {
  EvalOptions o;
  o.checkpoint = trained_run() / "checkpoints" / "last.ckpt";
  o.out = fresh("ckpt_eval");
  std::ostringstream log;
  const Json rep = run_eval(o, log);
  EXPECT_EQ(rep["mode"], "road");
  for (const auto& row : rep["rows"]) {
    for (const char* k : {"MaxF", "AP", "PRE", "REC", "FPR", "FNR"}) {
      ASSERT_TRUE(row[k].is_number()) << k;
      EXPECT_GE(row[k].get<double>(), 0.0);
      EXPECT_LE(row[k].get<double>(), 100.0);
    }
  }
  EXPECT_NEAR(rep["rows"][3]["REC"].get<double>() + rep["rows"][3]["FNR"].get<double>(), 100.0, 1e-9);

  RunConfig cfg = toy_config(mini_kitti().root);
  cfg.dataset.bev.width = 40;
  cfg.dataset.bev.height = 80;
  o.config = cfg;
  o.bev_after = true;
  const Json bev = run_eval(o, log);
  EXPECT_TRUE(bev["bev_after"].get<bool>());
  EXPECT_EQ(bev["rows"].size(), 4u);
}

TEST(EvalCommand, ClassCountMismatchIsRejected) {
  RunConfig cfg = toy_config(mini_kitti().root);
  cfg.network.num_classes = 3;
  EvalOptions o;
  o.config = cfg;
  o.predictions = fresh("empty_pred");
  o.out = fresh("mismatch_eval");
  std::ostringstream log;
  EXPECT_THROW(run_eval(o, log), ShapeError);
}

TEST(EvalCommand, MiouModeListsNineteenClassesAndTheMean) {
  const fs::path root = write_mini_cityscapes(fresh("cs_eval"));
  RunConfig cfg;
  cfg.network.num_classes = 19;
  cfg.network.threed_source = model::ThreeDSource::disparity;
  cfg.dataset.kind = pipeline::DatasetKind::cityscapes;
  cfg.dataset.threed_source = model::ThreeDSource::disparity;
  cfg.dataset.root = root;
  cfg.dataset.split = "val";
  const fs::path pred = fresh("cs_pred");
  for (const auto& rec : pipeline::index_records(cfg.dataset)) {
    io::write_png(pred / (rec.id + ".png"), pipeline::load_sample(rec, cfg.dataset).label);
  }
  EvalOptions o;
  o.config = cfg;
  o.predictions = pred;
  o.out = fresh("cs_eval_out");
  std::ostringstream log;
  const Json rep = run_eval(o, log);
  EXPECT_EQ(rep["mode"], "miou");
  ASSERT_EQ(rep["rows"].size(), 19u);
  EXPECT_EQ(rep["rows"][0]["name"], "road");
  EXPECT_DOUBLE_EQ(rep["rows"][0]["IoU"].get<double>(), 100.0);
  EXPECT_TRUE(rep["rows"][18]["IoU"].is_null());  // bicycle never occurs
  EXPECT_DOUBLE_EQ(rep["mIoU"].get<double>(), 100.0);
  EXPECT_NE(slurp(o.out / "report.txt").find("mean"), std::string::npos);
}

// ---- predict and overlays ----------------------------------------------------------

TEST(Overlay, PerfectPredictionIsGreenAndBackgroundOnly) {
  cv::Mat1b gt(8, 8, uchar{0});
  gt(cv::Rect(2, 2, 4, 4)).setTo(1);
  gt.row(0).setTo(255);
  const cv::Mat1b codes = outcome_map(gt.clone().setTo(0, gt == 255), gt);
  const cv::Mat3b base(8, 8, cv::Vec3b(10, 20, 30));
  const cv::Mat3b ov = outcome_overlay(base, codes);
  const cv::Vec3b green = blend(base(0, 0), kGreen, 0.5);
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      EXPECT_TRUE(codes(r, c) == kBackground || codes(r, c) == kTruePositive);
      EXPECT_TRUE(ov(r, c) == base(r, c) || ov(r, c) == green);
    }
  }
  EXPECT_EQ(cv::countNonZero(codes == kTruePositive), 16);
}

TEST(Overlay, ColorConvention) {
  const cv::Mat1b pred = (cv::Mat1b(1, 4) << 1, 1, 0, 0);
  const cv::Mat1b gt = (cv::Mat1b(1, 4) << 1, 0, 1, 0);
  const cv::Mat1b codes = outcome_map(pred, gt);
  EXPECT_EQ(codes(0, 0), kTruePositive);
  EXPECT_EQ(codes(0, 1), kFalsePositive);
  EXPECT_EQ(codes(0, 2), kFalseNegative);
  EXPECT_EQ(codes(0, 3), kBackground);
  const cv::Mat3b ov = outcome_overlay(cv::Mat3b(1, 4, cv::Vec3b(0, 0, 0)), codes, 1.0);
  EXPECT_EQ(ov(0, 0), cv::Vec3b(0, 255, 0));  // BGR green
  EXPECT_EQ(ov(0, 1), cv::Vec3b(255, 0, 0));  // blue
  EXPECT_EQ(ov(0, 2), cv::Vec3b(0, 0, 255));  // red
  EXPECT_EQ(ov(0, 3), cv::Vec3b(0, 0, 0));
}

TEST(PredictCommand, ScoreMapsFormADistribution) {
  PredictOptions o;
  o.checkpoint = trained_run() / "checkpoints" / "last.ckpt";
  o.out = fresh("predict");
  o.ids = {"um_000000", "uu_000000"};
  std::ostringstream log;
  const auto done = run_predict(o, log);
  ASSERT_EQ(done.size(), 2u);
  auto m = load_model(o.checkpoint);
  const auto rec = pipeline::index_records(m.config.dataset).front();
  const auto probs = class_probabilities(m.net, pipeline::load_sample(rec, m.config.dataset));
  const auto& p = done[0];
  EXPECT_TRUE(p.coded);
  ASSERT_EQ(p.scores.size(), 2u);
  cv::Mat1f a, b;
  io::read_image(p.scores[0]).convertTo(a, CV_32F, 1.0 / 65535);
  io::read_image(p.scores[1]).convertTo(b, CV_32F, 1.0 / 65535);
  const cv::Mat1f sum = a + b;
  EXPECT_LE(cv::norm(sum, cv::Mat1f(sum.size(), 1.0f), cv::NORM_INF), 1.5 / 65535);
  const cv::Mat1f renorm = b / sum;
  EXPECT_LE(cv::norm(renorm, channel_mat(probs, 1), cv::NORM_INF), 1e-4);
  EXPECT_TRUE(fs::exists(o.out / "road" / "um_000000.png"));
  EXPECT_TRUE(fs::exists(p.overlay));

  o.use_gt = false;
  o.out = fresh("predict_nogt");
  const auto plain = run_predict(o, log);
  EXPECT_FALSE(plain[0].coded);
  const cv::Mat3b want = class_overlay(display_bgr(pipeline::load_sample(rec, m.config.dataset).rgb),
                                       argmax_labels(probs), 2);
  EXPECT_TRUE(same_mat(io::read_image(plain[0].overlay, cv::IMREAD_COLOR), want));
}

TEST(PredictCommand, SingleImageModeChecksShapes) {
  const fs::path dir = fresh("single");
  io::write_png(dir / "rgb.png", cv::Mat3b(64, 128, cv::Vec3b(50, 60, 70)));
  io::write_png(dir / "threed.png", cv::Mat1b(64, 128, uchar{9}));
  io::write_png(dir / "small.png", cv::Mat1b(32, 32, uchar{9}));
  PredictOptions o;
  o.checkpoint = trained_run() / "checkpoints" / "last.ckpt";
  o.out = dir / "out";
  o.rgb = dir / "rgb.png";
  o.threed = dir / "threed.png";
  std::ostringstream log;
  const auto done = run_predict(o, log);
  ASSERT_EQ(done.size(), 1u);
  EXPECT_EQ(done[0].id, "rgb");
  EXPECT_EQ(io::read_image(done[0].overlay).size(), cv::Size(128, 64));
  o.threed = dir / "small.png";
  EXPECT_THROW(run_predict(o, log), ShapeError);
}

// ---- the binary ------------------------------------------------------------------

namespace {

int run_cli(const std::string& args, std::string* output = nullptr) {
  const fs::path log = fs::temp_directory_path() / "deep3d_cli_binary.log";
  const std::string cmd = std::string("\"") + DEEP3D_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) *output = slurp(log);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Binary, ExitCodes) {
  std::string out;
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("no-such-command"), 1);

  const fs::path dir = fresh("binary");
  Json bad = toy_json(mini_kitti().root);
  bad["network"]["backbone_depth"] = 42;
  std::ofstream(dir / "bad.json") << bad.dump();
  EXPECT_EQ(run_cli("train --config \"" + (dir / "bad.json").string() + "\" --out \"" + (dir / "run").string() + "\"", &out), 1);
  EXPECT_NE(out.find("backbone_depth"), std::string::npos) << out;

  const auto ds = fixtures::write_mini_kitti(dir / "data", 64, 32, 5);
  std::ofstream(ds.root / "training" / "velodyne" / "um_000001.bin", std::ios::trunc) << "bad";
  EXPECT_EQ(run_cli("preprocess --root \"" + ds.root.string() + "\" --out \"" + (dir / "cache").string() + "\"", &out), 2);
  EXPECT_NE(out.find("um_000001"), std::string::npos) << out;

  EXPECT_EQ(run_cli("split --root \"" + ds.root.string() + "\" --holdout 2 --iterations 2 --out \"" +
                    (dir / "plan.json").string() + "\""),
            0);
  EXPECT_EQ(read_json(dir / "plan.json")["splits"].size(), 2u);
  EXPECT_EQ(run_cli("split --root \"" + ds.root.string() + "\" --holdout 9 --out \"" + (dir / "p2.json").string() + "\""), 1);

  EXPECT_EQ(run_cli("param-count --depth 18 --classes 2", &out), 0);
  model::NetworkConfig n;
  EXPECT_NE(out.find("total " + std::to_string(model::count_trainable_parameters(*model::ThreeDeepNet(n)))),
            std::string::npos)
      << out;
}

TEST(Binary, EnvironmentVariableOverridesTheRoot) {
  const fs::path dir = fresh("binary_env");
  const auto ds = fixtures::write_mini_kitti(dir / "data", 64, 32, 5);
  std::ofstream(dir / "c.json") << toy_json("/does/not/exist").dump();
  const std::string args = "split --config \"" + (dir / "c.json").string() + "\" --holdout 1 --iterations 1 --out \"" +
                           (dir / "plan.json").string() + "\"";
  EXPECT_EQ(run_cli(args), 1);
  ::setenv(kDatasetRootEnv, ds.root.c_str(), 1);
  EXPECT_EQ(run_cli(args), 0);
  ::unsetenv(kDatasetRootEnv);
}
