#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cda/scm.hpp"
#include "cda/trainer.hpp"

namespace cda {

/// Simulator world used by `simulate` and by evaluations without CSV input.
struct SimConfig {
  std::size_t d_x = 4;
  std::size_t n_treatments = 5;
  std::size_t u_dim = 2;
  std::size_t lag = 1;
  bool nonlinear = false;
  double noise = 0.1;
  /// Full spec JSON; overrides the generated example world when set.
  std::string spec_path;
  std::size_t n_source = 100;
  std::size_t n_target = 5;
  std::size_t length = 48;
  std::vector<double> target_rate_scale;
  std::vector<double> target_bias_delta;
  std::vector<double> target_slope_delta;
};

struct DataConfig {
  std::string source_csv;
  std::string target_csv;
  std::vector<std::string> policy_vocabulary;  // empty: default vocabulary
};

struct EvalConfig {
  std::vector<std::size_t> taus = {36, 24, 12, 6};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  double train_well_fraction = 0.5;
  /// Rank window length; 0 uses lag + attention window.
  std::size_t rank_window = 0;
  std::vector<int> candidates;  // empty: every arm
  int reference = 0;
  std::size_t rank_episodes = 50;
  std::size_t jobs = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SimConfig scm;
  DataConfig data;
  TrainConfig train;  // train.model is the "model" section
  EvalConfig eval;
};

std::string to_json(const RunConfig& config, int indent = 2);
/// Rejects unknown keys at every level; missing keys keep their defaults.
RunConfig run_config_from_json(const std::string& text);
/// Sets a dotted path ("train.lambda") to a JSON-parsed value, or to the raw
/// string when it does not parse.
void apply_override(RunConfig& config, const std::string& path, const std::string& value);

/// Model and train sections together, as stored in checkpoints.
std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

scm::ScmSpec build_spec(const SimConfig& sim, std::uint64_t seed);
scm::DomainShift build_shift(const SimConfig& sim);

/// Raw source and target domains: the data section's CSV files when set,
/// otherwise a simulated pair drawn from the scm section and the run seed.
std::pair<DomainDataset, DomainDataset> load_domains(const RunConfig& config);

}  // namespace cda
