#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "deep3d/metrics.hpp"

using namespace deep3d::metrics;

namespace {

struct NaivePoint {
  double p, r, f, fpr, fnr;
};

// O(T * N) sweep: count every pixel against every threshold.
std::vector<NaivePoint> naive_sweep(const std::vector<float>& s, const std::vector<std::uint8_t>& g,
                                    const std::vector<double>& thresholds) {
  std::vector<NaivePoint> out;
  for (double t : thresholds) {
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool pos = static_cast<double>(s[i]) >= t;
      if (g[i]) {
        (pos ? tp : fn) += 1;
      } else {
        (pos ? fp : tn) += 1;
      }
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0;
    const double r = tp / (tp + fn);
    out.push_back({p, r, p + r > 0 ? 2 * p * r / (p + r) : 0, fp / (fp + tn), fn / (tp + fn)});
  }
  return out;
}

double naive_maxf(const std::vector<float>& s, const std::vector<std::uint8_t>& g, const std::vector<double>& t) {
  double best = 0;
  for (const auto& pt : naive_sweep(s, g, t)) best = std::max(best, pt.f);
  return 100 * best;
}

void random_map(std::mt19937& rng, std::vector<float>& s, std::vector<std::uint8_t>& g, int n = 32 * 32) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  s.resize(n);
  g.resize(n);
  for (int i = 0; i < n; ++i) {
    g[i] = u(rng) < 0.4f;
    s[i] = std::clamp(u(rng) * 0.7f + (g[i] ? 0.3f : 0.0f), 0.0f, 1.0f);
  }
  g[0] = 1;
}

}  // namespace

TEST(Confusion, DiagonalAndIgnore) {
  const std::vector<int> a = {0, 1, 2, 1, 0};
  const auto cm = confusion_matrix<int>(a, a, 3);
  EXPECT_EQ(cm.at(0, 0), 2u);
  EXPECT_EQ(cm.at(1, 1), 2u);
  EXPECT_EQ(cm.at(2, 2), 1u);
  EXPECT_EQ(cm.total(), 5u);

  const std::vector<int> ign(5, 255);
  EXPECT_EQ(confusion_matrix<int>(a, ign, 3).total(), 0u);
}

TEST(Confusion, HandCountedFourPixels) {
  const std::vector<int> pred = {0, 1, 1, 0};
  const std::vector<int> gt = {0, 1, 0, 255};
  const auto cm = confusion_matrix<int>(pred, gt, 2);
  EXPECT_EQ(cm.at(0, 0), 1u);
  EXPECT_EQ(cm.at(0, 1), 1u);
  EXPECT_EQ(cm.at(1, 1), 1u);
  EXPECT_EQ(cm.at(1, 0), 0u);
  EXPECT_EQ(cm.total(), 3u);
}

TEST(Confusion, OutOfRangePredictionRejected) {
  const std::vector<int> pred = {3};
  const std::vector<int> gt = {0};
  EXPECT_THROW(confusion_matrix<int>(pred, gt, 3), deep3d::ShapeError);
}

TEST(Confusion, MergeableOverPartitions) {
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> lab(0, 5);
  std::vector<int> p(500), g(500);
  for (int i = 0; i < 500; ++i) {
    p[i] = lab(rng);
    g[i] = lab(rng) == 5 ? 255 : lab(rng);
  }
  const auto whole = confusion_matrix<int>(p, g, 6);
  for (std::size_t cut : {0u, 1u, 137u, 499u, 500u}) {
    const std::span<const int> ps(p), gs(g);
    auto a = confusion_matrix<int>(ps.first(cut), gs.first(cut), 6);
    const auto b = confusion_matrix<int>(ps.subspan(cut), gs.subspan(cut), 6);
    EXPECT_EQ(a + b, whole);
  }
}

TEST(MIoU, PerfectBinaryAndEmptyUnion) {
  const std::vector<int> a = {0, 1, 1, 2};
  const auto r = miou(confusion_matrix<int>(a, a, 4));
  EXPECT_DOUBLE_EQ(r.mean, 100.0);
  EXPECT_TRUE(std::isnan(r.per_class[3]));
  EXPECT_EQ(r.scored_classes, 3);

  ConfusionMatrix cm(2);
  cm.at(1, 1) = 50;
  cm.at(0, 1) = 25;  // FP for class 1
  cm.at(1, 0) = 25;  // FN for class 1
  EXPECT_DOUBLE_EQ(miou(cm).per_class[1], 50.0);
}

TEST(MIoU, PermutationEquivariant) {
  std::mt19937 rng(8);
  std::uniform_int_distribution<int> lab(0, 7);
  std::vector<int> p(2000), g(2000);
  for (int i = 0; i < 2000; ++i) {
    g[i] = lab(rng);
    p[i] = lab(rng) < 4 ? g[i] : lab(rng);
  }
  std::vector<int> perm = {3, 7, 0, 1, 6, 2, 5, 4};
  std::vector<int> pp(2000), gp(2000);
  for (int i = 0; i < 2000; ++i) {
    pp[i] = perm[p[i]];
    gp[i] = perm[g[i]];
  }
  const auto a = miou(confusion_matrix<int>(p, g, 8));
  const auto b = miou(confusion_matrix<int>(pp, gp, 8));
  EXPECT_NEAR(a.mean, b.mean, 1e-12);
  for (int c = 0; c < 8; ++c) EXPECT_NEAR(a.per_class[c], b.per_class[perm[c]], 1e-12);
}

TEST(Road, PerfectScore) {
  const std::vector<float> s = {1, 0, 1, 0, 0};
  const std::vector<std::uint8_t> g = {1, 0, 1, 0, 0};
  const auto r = road_metrics(s, g, {});
  EXPECT_DOUBLE_EQ(r.max_f, 100.0);
  EXPECT_DOUBLE_EQ(r.fpr, 0.0);
  EXPECT_DOUBLE_EQ(r.fnr, 0.0);
  EXPECT_DOUBLE_EQ(r.ap, 100.0);
}

TEST(Road, InvertedScoreDegeneratesToAllPositive) {
  std::mt19937 rng(2);
  std::vector<float> s;
  std::vector<std::uint8_t> g;
  random_map(rng, s, g);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = g[i] ? 0.0f : 1.0f;
  const double prevalence = std::count(g.begin(), g.end(), 1) / static_cast<double>(g.size());
  const auto r = road_metrics(s, g, {});
  EXPECT_NEAR(r.precision, 100 * prevalence, 1e-9);
  EXPECT_NEAR(r.recall, 100.0, 1e-9);
  EXPECT_NEAR(r.max_f, 100 * 2 * prevalence / (prevalence + 1), 1e-9);
  EXPECT_NEAR(r.max_f, naive_maxf(s, g, uniform_thresholds()), 1e-9);
  EXPECT_EQ(r.threshold_at_max, 0.0);
}

TEST(Road, MatchesExhaustiveOracleOnRandomMaps) {
  std::mt19937 rng(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<float> s;
    std::vector<std::uint8_t> g;
    random_map(rng, s, g);
    const auto grid = uniform_thresholds();
    EXPECT_NEAR(road_metrics(s, g, {}, grid).max_f, naive_maxf(s, g, grid), 1e-9);
    const auto all = exhaustive_thresholds(s, {});
    EXPECT_NEAR(road_metrics(s, g, {}, all).max_f, naive_maxf(s, g, all), 1e-9);
  }
}

TEST(Road, ExhaustiveMaxFInvariantUnderMonotoneTransform) {
  std::mt19937 rng(6);
  for (int t = 0; t < 20; ++t) {
    std::vector<float> s;
    std::vector<std::uint8_t> g;
    random_map(rng, s, g);
    std::vector<float> s2(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) s2[i] = std::pow(s[i], 3.0f) * 0.5f + 0.1f;
    const double a = road_metrics(s, g, {}, exhaustive_thresholds(s, {})).max_f;
    const double b = road_metrics(s2, g, {}, exhaustive_thresholds(s2, {})).max_f;
    EXPECT_NEAR(a, b, 1e-9);
  }
}

TEST(Road, IdentitiesAtEveryThreshold) {
  std::mt19937 rng(7);
  std::vector<float> s;
  std::vector<std::uint8_t> g;
  random_map(rng, s, g);
  RoadAccumulator acc(uniform_thresholds());
  acc.add(s, g, {});
  for (const auto& c : acc.counts()) {
    EXPECT_NEAR(100 * c.recall() + 100 * c.fnr(), 100.0, 1e-9);
    EXPECT_EQ(c.tp + c.fp + c.tn + c.fn, s.size());
  }
  const auto r = acc.report();
  EXPECT_NEAR(r.recall + r.fnr, 100.0, 1e-9);
  for (double v : {r.max_f, r.ap, r.precision, r.recall, r.fpr, r.fnr}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
}

TEST(Road, ElevenPointApHandComputed) {
  // Operating points: t=0 (P=1/2, R=1), t=0.3 (P=2/3, R=1), t=0.5 (P=1, R=1/2), t=1 (P=0, R=0).
  const std::vector<float> s = {0.9f, 0.4f, 0.4f, 0.1f};
  const std::vector<std::uint8_t> g = {1, 1, 0, 0};
  const auto r = road_metrics(s, g, {}, {0.0, 0.3, 0.5, 1.0});
  // r in {0..0.5}: max P = 1 (6 levels); r in {0.6..1.0}: max P = 2/3 (5 levels).
  EXPECT_NEAR(r.ap, 100.0 * (6 * 1.0 + 5 * (2.0 / 3.0)) / 11.0, 1e-9);
}

TEST(Road, ValidMaskAndNoPositives) {
  const std::vector<float> s = {1, 1, 0};
  const std::vector<std::uint8_t> g = {1, 0, 0};
  const std::vector<std::uint8_t> v = {1, 0, 1};
  EXPECT_DOUBLE_EQ(road_metrics(s, g, v).max_f, 100.0);
  const std::vector<std::uint8_t> none = {0, 0, 0};
  EXPECT_THROW(road_metrics(s, none, {}), deep3d::NumericError);
}

TEST(RoadEvaluator, DatasetAggregationProperties) {
  std::mt19937 rng(12);
  std::vector<std::vector<float>> scores(6);
  std::vector<std::vector<std::uint8_t>> gts(6);
  for (int i = 0; i < 6; ++i) random_map(rng, scores[i], gts[i], 200);

  RoadEvaluator all, twice, shard_a, shard_b, single;
  for (int i = 0; i < 6; ++i) {
    all.add(scores[i], gts[i], {});
    twice.add(scores[i], gts[i], {});
    twice.add(scores[i], gts[i], {});
    (i < 3 ? shard_a : shard_b).add(scores[i], gts[i], {});
  }
  shard_a += shard_b;
  const auto ra = all.report();
  EXPECT_DOUBLE_EQ(twice.report().max_f, ra.max_f);
  EXPECT_DOUBLE_EQ(twice.report().ap, ra.ap);
  EXPECT_DOUBLE_EQ(shard_a.report().max_f, ra.max_f);
  EXPECT_DOUBLE_EQ(shard_a.report().precision, ra.precision);

  single.add(scores[0], gts[0], {});
  EXPECT_DOUBLE_EQ(single.report().max_f, road_metrics(scores[0], gts[0], {}).max_f);

  RoadEvaluator mean(uniform_thresholds(), Aggregation::image_mean);
  mean.add(scores[0], gts[0], {});
  mean.add(scores[1], gts[1], {});
  const double expected = (road_metrics(scores[0], gts[0], {}).max_f + road_metrics(scores[1], gts[1], {}).max_f) / 2;
  EXPECT_NEAR(mean.report().max_f, expected, 1e-9);
}
