#pragma once

// Segmentation scores: confusion-matrix mIoU and the road threshold sweep
// (MaxF, AP, PRE, REC, FPR, FNR). All accumulators are mergeable by addition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "deep3d/error.hpp"

namespace deep3d::metrics {

inline constexpr int kDefaultIgnoreIndex = 255;

class ConfusionMatrix {
public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes)
      : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

  int num_classes() const noexcept { return num_classes_; }

  /// rows = ground truth, cols = prediction
  std::uint64_t at(int gt, int pred) const { return counts_[index(gt, pred)]; }
  std::uint64_t& at(int gt, int pred) { return counts_[index(gt, pred)]; }

  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) {
      throw ShapeError("confusion matrices have different class counts");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      counts_[i] += other.counts_[i];
    }
    return *this;
  }
  friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
  bool operator==(const ConfusionMatrix&) const = default;

private:
  std::size_t index(int gt, int pred) const {
    return static_cast<std::size_t>(gt) * num_classes_ + pred;
  }

  int num_classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Accumulates one label map pair. Pixels whose ground truth is `ignore_index` are skipped.
template <typename Label>
void confusion_update(ConfusionMatrix& cm, std::span<const Label> pred, std::span<const Label> gt,
                      int ignore_index = kDefaultIgnoreIndex) {
  if (pred.size() != gt.size()) {
    throw ShapeError("prediction and ground truth differ in size");
  }
  const int c = cm.num_classes();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = static_cast<int>(gt[i]);
    if (g == ignore_index) {
      continue;
    }
    const int p = static_cast<int>(pred[i]);
    if (p < 0 || p >= c) {
      throw ShapeError("prediction id " + std::to_string(p) + " out of range");
    }
    if (g < 0 || g >= c) {
      throw ShapeError("ground-truth id " + std::to_string(g) + " out of range");
    }
    ++cm.at(g, p);
  }
}

template <typename Label>
ConfusionMatrix confusion_matrix(std::span<const Label> pred, std::span<const Label> gt, int num_classes,
                                 int ignore_index = kDefaultIgnoreIndex) {
  ConfusionMatrix cm(num_classes);
  confusion_update(cm, pred, gt, ignore_index);
  return cm;
}

struct IoUReport {
  std::vector<double> per_class;  // percent; NaN where the union is empty
  double mean = 0.0;              // percent over classes with a non-empty union
  int scored_classes = 0;
};

inline IoUReport miou(const ConfusionMatrix& cm) {
  const int c = cm.num_classes();
  IoUReport report;
  report.per_class.assign(c, std::nan(""));
  double sum = 0.0;
  for (int k = 0; k < c; ++k) {
    const double tp = static_cast<double>(cm.at(k, k));
    double fp = 0.0;
    double fn = 0.0;
    for (int j = 0; j < c; ++j) {
      if (j != k) {
        fp += static_cast<double>(cm.at(j, k));
        fn += static_cast<double>(cm.at(k, j));
      }
    }
    const double uni = tp + fp + fn;
    if (uni > 0.0) {
      report.per_class[k] = 100.0 * tp / uni;
      sum += report.per_class[k];
      ++report.scored_classes;
    }
  }
  report.mean = report.scored_classes > 0 ? sum / report.scored_classes : 0.0;
  return report;
}

inline double pixel_accuracy(const ConfusionMatrix& cm) {
  std::uint64_t diag = 0;
  for (int k = 0; k < cm.num_classes(); ++k) {
    diag += cm.at(k, k);
  }
  const auto total = cm.total();
  return total > 0 ? 100.0 * static_cast<double>(diag) / static_cast<double>(total) : 0.0;
}

// Road threshold sweep ------------------------------------------------------

/// Binary counts at one threshold; a pixel is predicted positive when score >= threshold.
struct BinaryCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  BinaryCounts& operator+=(const BinaryCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const BinaryCounts&) const = default;

  // Zero denominators are scored as 0.
  double precision() const { return tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0; }
  double fpr() const { return fp + tn > 0 ? double(fp) / double(fp + tn) : 0.0; }
  double fnr() const { return tp + fn > 0 ? double(fn) / double(tp + fn) : 0.0; }
  double f1() const {
    const double p = precision();
    const double r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
};

/// `n` evenly spaced thresholds covering [0, 1] inclusive.
inline std::vector<double> uniform_thresholds(int n = 256) {
  if (n < 2) {
    throw ConfigError("threshold grid needs at least two points", "thresholds");
  }
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) {
    t[i] = static_cast<double>(i) / (n - 1);
  }
  return t;
}

/// Every distinct score that occurs on valid pixels, ascending. Sweeping these visits every
/// distinct operating point, so the result depends only on the score ordering.
inline std::vector<double> exhaustive_thresholds(std::span<const float> score, std::span<const std::uint8_t> valid) {
  std::vector<double> t;
  t.reserve(score.size());
  for (std::size_t i = 0; i < score.size(); ++i) {
    if (valid.empty() || valid[i]) {
      t.push_back(score[i]);
    }
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

struct RoadScoreReport {
  double max_f = 0.0;  // percent
  double ap = 0.0;
  double precision = 0.0;  // at the MaxF threshold
  double recall = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
  double threshold_at_max = 0.0;
  BinaryCounts counts_at_max;
};

/// Per-threshold binary counts, additive across images and shards.
class RoadAccumulator {
public:
  explicit RoadAccumulator(std::vector<double> thresholds) : thresholds_(std::move(thresholds)), counts_(thresholds_.size()) {
    if (thresholds_.empty() || !std::is_sorted(thresholds_.begin(), thresholds_.end())) {
      throw ConfigError("thresholds must be a non-empty increasing list", "thresholds");
    }
  }

  const std::vector<double>& thresholds() const noexcept { return thresholds_; }
  const std::vector<BinaryCounts>& counts() const noexcept { return counts_; }

  /// `valid` may be empty (all pixels scored).
  void add(std::span<const float> score, std::span<const std::uint8_t> gt, std::span<const std::uint8_t> valid) {
    if (score.size() != gt.size() || (!valid.empty() && valid.size() != gt.size())) {
      throw ShapeError("score, ground truth and valid mask differ in size");
    }
    std::vector<float> pos;
    std::vector<float> neg;
    for (std::size_t i = 0; i < score.size(); ++i) {
      if (!valid.empty() && !valid[i]) {
        continue;
      }
      (gt[i] ? pos : neg).push_back(score[i]);
    }
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    for (std::size_t k = 0; k < thresholds_.size(); ++k) {
      const double t = thresholds_[k];
      // Count of scores >= t in a sorted list.
      auto at_least = [t](const std::vector<float>& v) {
        const auto it = std::lower_bound(v.begin(), v.end(), t,
                                         [](float s, double th) { return static_cast<double>(s) < th; });
        return static_cast<std::uint64_t>(v.end() - it);
      };
      const std::uint64_t tp = at_least(pos);
      const std::uint64_t fp = at_least(neg);
      BinaryCounts& c = counts_[k];
      c.tp += tp;
      c.fn += pos.size() - tp;
      c.fp += fp;
      c.tn += neg.size() - fp;
    }
  }

  RoadAccumulator& operator+=(const RoadAccumulator& o) {
    if (o.thresholds_ != thresholds_) {
      throw ShapeError("road accumulators use different threshold grids");
    }
    for (std::size_t k = 0; k < counts_.size(); ++k) {
      counts_[k] += o.counts_[k];
    }
    return *this;
  }

  std::uint64_t positives() const { return counts_.front().tp + counts_.front().fn; }

  /// MaxF and the operating point at its first maximizing threshold; AP by 11-point interpolation.
  RoadScoreReport report() const {
    if (positives() == 0) {
      throw NumericError("ground truth has no positive pixels; recall is undefined");
    }
    RoadScoreReport r;
    double best = -1.0;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < counts_.size(); ++k) {
      const double f = counts_[k].f1();
      if (f > best) {
        best = f;
        best_k = k;
      }
    }
    const BinaryCounts& c = counts_[best_k];
    r.max_f = 100.0 * best;
    r.precision = 100.0 * c.precision();
    r.recall = 100.0 * c.recall();
    r.fpr = 100.0 * c.fpr();
    r.fnr = 100.0 * c.fnr();
    r.threshold_at_max = thresholds_[best_k];
    r.counts_at_max = c;

    double ap = 0.0;
    for (int level = 0; level <= 10; ++level) {
      const double rl = level / 10.0;
      double pmax = 0.0;
      for (const BinaryCounts& bc : counts_) {
        if (bc.recall() >= rl - 1e-12) {
          pmax = std::max(pmax, bc.precision());
        }
      }
      ap += pmax;
    }
    r.ap = 100.0 * ap / 11.0;
    return r;
  }

private:
  std::vector<double> thresholds_;
  std::vector<BinaryCounts> counts_;
};

inline RoadScoreReport road_metrics(std::span<const float> score, std::span<const std::uint8_t> gt,
                                    std::span<const std::uint8_t> valid, std::vector<double> thresholds) {
  RoadAccumulator acc(std::move(thresholds));
  acc.add(score, gt, valid);
  return acc.report();
}

inline RoadScoreReport road_metrics(std::span<const float> score, std::span<const std::uint8_t> gt,
                                    std::span<const std::uint8_t> valid) {
  return road_metrics(score, gt, valid, uniform_thresholds());
}

// Dataset-level evaluation --------------------------------------------------

enum class Aggregation { dataset, image_mean };

/// Road mode: counts are pooled over all images before scoring unless image averaging is asked for.
class RoadEvaluator {
public:
  explicit RoadEvaluator(std::vector<double> thresholds = uniform_thresholds(),
                         Aggregation mode = Aggregation::dataset)
      : pooled_(thresholds), thresholds_(std::move(thresholds)), mode_(mode) {}

  void add(std::span<const float> score, std::span<const std::uint8_t> gt, std::span<const std::uint8_t> valid) {
    RoadAccumulator one(thresholds_);
    one.add(score, gt, valid);
    pooled_ += one;
    if (mode_ == Aggregation::image_mean) {
      per_image_.push_back(one.report());
    }
    ++images_;
  }

  RoadEvaluator& operator+=(const RoadEvaluator& o) {
    pooled_ += o.pooled_;
    per_image_.insert(per_image_.end(), o.per_image_.begin(), o.per_image_.end());
    images_ += o.images_;
    return *this;
  }

  std::size_t images() const noexcept { return images_; }
  const RoadAccumulator& pooled() const noexcept { return pooled_; }

  RoadScoreReport report() const {
    if (mode_ == Aggregation::dataset || per_image_.empty()) {
      return pooled_.report();
    }
    RoadScoreReport mean;
    for (const auto& r : per_image_) {
      mean.max_f += r.max_f;
      mean.ap += r.ap;
      mean.precision += r.precision;
      mean.recall += r.recall;
      mean.fpr += r.fpr;
      mean.fnr += r.fnr;
      mean.threshold_at_max += r.threshold_at_max;
    }
    const double n = static_cast<double>(per_image_.size());
    mean.max_f /= n;
    mean.ap /= n;
    mean.precision /= n;
    mean.recall /= n;
    mean.fpr /= n;
    mean.fnr /= n;
    mean.threshold_at_max /= n;
    return mean;
  }

private:
  RoadAccumulator pooled_;
  std::vector<double> thresholds_;
  Aggregation mode_;
  std::vector<RoadScoreReport> per_image_;
  std::size_t images_ = 0;
};

}  // namespace deep3d::metrics
