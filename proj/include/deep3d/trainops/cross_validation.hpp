#pragma once

// Monte Carlo cross-validation: independent uniform holdout draws per iteration.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "deep3d/error.hpp"
#include "deep3d/json_fields.hpp"

namespace deep3d::trainops {

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

struct CrossValidationPlan {
  int iterations = 0;
  int holdout_size = 0;
  uint64_t seed = 0;
  std::vector<Split> splits;
};

/// Separate engine per iteration, keyed by (seed, iteration), so any single
/// split can be regenerated on its own.
inline std::mt19937_64 split_engine(uint64_t seed, int iteration) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(iteration)};
  return std::mt19937_64(seq);
}

inline CrossValidationPlan monte_carlo_split(const std::vector<std::string>& ids, int holdout, int iterations,
                                             uint64_t seed) {
  if (holdout < 0 || static_cast<std::size_t>(holdout) >= ids.size()) {
    throw ConfigError("holdout must be in [0, " + std::to_string(ids.size()) + ")", "holdout");
  }
  if (iterations <= 0) throw ConfigError("iterations must be positive", "iterations");
  CrossValidationPlan plan{iterations, holdout, seed, {}};
  for (int it = 0; it < iterations; ++it) {
    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = split_engine(seed, it);
    // Partial Fisher-Yates: the first `holdout` slots are a uniform draw without replacement.
    for (int k = 0; k < holdout; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), order.size() - 1);
      std::swap(order[static_cast<std::size_t>(k)], order[pick(rng)]);
    }
    std::vector<bool> in_val(ids.size(), false);
    for (int k = 0; k < holdout; ++k) in_val[order[static_cast<std::size_t>(k)]] = true;
    Split s;
    for (std::size_t i = 0; i < ids.size(); ++i) (in_val[i] ? s.val_ids : s.train_ids).push_back(ids[i]);
    plan.splits.push_back(std::move(s));
  }
  return plan;
}

inline Json to_json(const CrossValidationPlan& p) {
  Json splits = Json::array();
  for (const auto& s : p.splits) splits.push_back({{"train", s.train_ids}, {"val", s.val_ids}});
  return {{"iterations", p.iterations}, {"holdout_size", p.holdout_size}, {"seed", p.seed}, {"splits", splits}};
}

}  // namespace deep3d::trainops
