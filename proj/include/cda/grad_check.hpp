#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cda/autodiff.hpp"

namespace cda {

struct GradCheckFailure {
  std::size_t param = 0;  // index into the params span
  std::size_t index = 0;  // flat coordinate
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckFailure> failures;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Check at most this many coordinates per parameter (0 = all), evenly strided.
  std::size_t max_coords_per_param = 0;
};

/// Compares backward() gradients of f against central differences for every
/// coordinate of every parameter. f must rebuild its graph on each call.
GradCheckReport grad_check(const std::function<ad::Node()>& f, std::span<const ad::Node> params,
                           const GradCheckOptions& options);

}  // namespace cda
