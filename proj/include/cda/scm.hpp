#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cda/dataset.hpp"
#include "cda/episode.hpp"

namespace cda::scm {

/// Logging policy: P(Z_t = k) is softmax(bias_k + slope_k * Y_{t-1}), then
/// treated-arm probabilities are multiplied by rate_scale_k and arm 0 takes the
/// remainder. available_k = false removes an arm entirely.
struct LoggingPolicy {
  std::vector<double> bias;
  std::vector<double> slope;
  std::vector<double> rate_scale;
  std::vector<bool> available;

  static LoggingPolicy uniform(std::size_t k);
  std::vector<double> probabilities(double y_prev) const;
};

struct ScmSpec {
  std::size_t d_x = 0;
  std::size_t n_treatments = 0;
  std::size_t u_dim = 0;
  Eigen::MatrixXd transition;              // A
  std::vector<Eigen::VectorXd> effects;    // B[k]
  Eigen::VectorXd outcome_loading;         // c
  Eigen::MatrixXd static_loading;          // u_load, d_x x u_dim
  Eigen::VectorXd noise_scale;             // per channel
  double outcome_noise = 0.0;
  std::size_t lag = 1;
  bool nonlinear = false;                  // X_{t+1} = tanh(A X_t) + ...
  LoggingPolicy policy;
  std::vector<std::string> treatment_names;

  /// Throws std::invalid_argument on inconsistent dimensions or an unstable A.
  void validate() const;
  double spectral_radius() const;
};

std::string to_json(const ScmSpec& spec);
ScmSpec spec_from_json(const std::string& text);

struct ExampleSpecOptions {
  std::size_t d_x = 4;
  std::size_t n_treatments = 5;
  std::size_t u_dim = 2;
  std::size_t lag = 1;
  bool nonlinear = false;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

/// Random stable spec with a Y-dependent logging policy.
ScmSpec example_spec(const ExampleSpecOptions& options = {});

/// Episodes carry noise traces. Episode i draws from its own stream derived
/// from (seed, i), so results do not depend on evaluation order.
std::vector<Episode> simulate(const ScmSpec& spec, std::size_t n_episodes, std::size_t T, std::uint64_t seed);

/// Closed-form mean of Y under i.i.d. treatments with the given arm
/// probabilities and fixed U. Linear specs only.
double stationary_outcome_mean(const ScmSpec& spec, const std::vector<double>& arm_probs,
                               const std::vector<double>& u);

struct Intervention {
  std::size_t step = 0;   // index of the responding covariate, t + 1 + lag
  Eigen::VectorXd mean;   // E[X_step | H_{<=t}, do(Z_t = z)]
};

/// Interventional mean of the responding covariate. Exact for linear specs and
/// for lag 0; Monte Carlo with a fixed internal seed otherwise.
Intervention intervene(const ScmSpec& spec, const Episode& ep, std::size_t t, int z,
                       std::size_t mc_samples = 20000);

struct Counterfactual {
  std::size_t step = 0;
  Eigen::VectorXd x;
  double y = 0.0;
};

/// Abduction by stored noise: replays the episode with Z_t replaced by z.
Counterfactual counterfactual(const ScmSpec& spec, const Episode& ep, std::size_t t, int z);

/// Replays the episode from t0 with Z_{t0..t0+n-1} replaced by z_seq under the
/// stored noise. Returns outcomes for steps t0+1 .. min(T-1, t0+n+lag).
std::vector<double> counterfactual_rollout(const ScmSpec& spec, const Episode& ep, std::size_t t0,
                                           const std::vector<int>& z_seq);

enum class CateMode {
  kDoContrast,    // E[X|H, do z] - E[X|H, do z_ref]
  kObservedContrast,  // E[X|H, do z] - E[X|H, Z_t = z]; zero when H blocks confounding
};

Eigen::VectorXd oracle_cate(const ScmSpec& spec, const Episode& ep, std::size_t t, int z, int z_ref,
                            CateMode mode = CateMode::kDoContrast);

/// Target-domain policy change. Anything that would alter A or c is rejected.
struct DomainShift {
  std::vector<double> rate_scale;    // multiplies the source rate_scale per arm
  std::vector<double> bias_delta;
  std::vector<double> slope_delta;
  std::vector<bool> available;       // overrides availability when nonempty
  bool touches_transition = false;
  bool touches_outcome_loading = false;

  bool is_zero() const;
};

struct DomainSizes {
  std::size_t n_source = 100;
  std::size_t n_target = 5;
  std::size_t length = 48;
};

std::pair<DomainDataset, DomainDataset> make_domain_pair(const ScmSpec& spec, const DomainShift& shift,
                                                         const DomainSizes& sizes, std::uint64_t seed);

ScmSpec apply_shift(const ScmSpec& spec, const DomainShift& shift);

}  // namespace cda::scm
