#pragma once

// Learning-rate schedules: constant, polynomial decay and triangular cycles
// (optionally halving the amplitude every cycle).

#include <cmath>
#include <cstdint>
#include <string>

#include "deep3d/error.hpp"

namespace deep3d::trainops {

inline double poly_lr(double base_lr, int64_t iter, int64_t max_iters, double power) {
  if (max_iters <= 0) throw ConfigError("poly_lr needs max_iters > 0", "max_iters");
  if (iter < 0 || iter > max_iters) throw ConfigError("poly_lr iteration outside [0, max_iters]", "max_iters");
  if (!(power > 0)) throw ConfigError("poly_power must be positive", "poly_power");
  if (iter == max_iters) return 0.0;
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iters), power);
}

/// Triangular wave starting at `lower`, reaching `upper` after `step_size`
/// iterations; `decreasing` halves the peak height each full cycle.
inline double cyclical_lr(double lower, double upper, int64_t step_size, int64_t iter, bool decreasing) {
  if (step_size <= 0) throw ConfigError("cyclical step size must be positive", "cyc_step_size");
  const double pos = static_cast<double>(iter) / static_cast<double>(step_size);
  const double cycle = std::floor(1.0 + pos / 2.0);
  const double x = std::abs(pos - 2.0 * cycle + 1.0);
  double height = (upper - lower) * std::max(0.0, 1.0 - x);
  if (decreasing) height /= std::pow(2.0, cycle - 1.0);
  return lower + height;
}

enum class ScheduleKind { constant, poly, cyc_triangular, cyc_triangular_decreasing };

inline ScheduleKind parse_schedule(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "poly") return ScheduleKind::poly;
  if (s == "cyc_triangular") return ScheduleKind::cyc_triangular;
  if (s == "cyc_triangular_decreasing") return ScheduleKind::cyc_triangular_decreasing;
  throw ConfigError("unknown schedule '" + s + "'", "schedule");
}

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::poly: return "poly";
    case ScheduleKind::cyc_triangular: return "cyc_triangular";
    case ScheduleKind::cyc_triangular_decreasing: return "cyc_triangular_decreasing";
  }
  return "?";
}

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::poly;
  double base_lr = 0.02;
  double poly_power = 0.9;
  double cyc_lower = 0.0001;
  double cyc_upper = 0.25;
  int64_t cyc_step_size = 0;
  int64_t max_iters = 1;

  double at(int64_t iter) const {
    switch (kind) {
      case ScheduleKind::constant: return base_lr;
      case ScheduleKind::poly: return poly_lr(base_lr, std::min(iter, max_iters), max_iters, poly_power);
      case ScheduleKind::cyc_triangular: return cyclical_lr(cyc_lower, cyc_upper, cyc_step_size, iter, false);
      case ScheduleKind::cyc_triangular_decreasing:
        return cyclical_lr(cyc_lower, cyc_upper, cyc_step_size, iter, true);
    }
    return base_lr;
  }
};

}  // namespace deep3d::trainops
