#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cda/tensor.hpp"

namespace cda {

/// Exogenous noise realized by the simulator, kept for counterfactual replay.
struct NoiseTrace {
  Tensor covariate;            // T x d_x, eps_t added to X_t
  std::vector<double> outcome;  // T, eta_t added to Y_t
};

/// One production unit: aligned covariates, treatments and outcomes plus static
/// features. Treatment 0 is "none".
struct Episode {
  std::string id;
  int first_month = 0;
  Tensor x;             // T x d_x
  std::vector<int> z;   // T
  std::vector<double> y;  // T
  std::vector<double> u;  // u_dim
  std::optional<NoiseTrace> noise;

  std::size_t length() const { return z.size(); }
  std::size_t d_x() const { return x.cols(); }

  /// Steps [begin, end) as a new episode; the noise trace is sliced alongside.
  Episode slice(std::size_t begin, std::size_t end) const;
  /// Throws std::invalid_argument describing the first violated invariant.
  void validate(std::size_t n_treatments) const;
};

}  // namespace cda
