#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cda/dataset.hpp"
#include "cda/model.hpp"
#include "cda/trainer.hpp"

namespace cda {

struct MetricSet {
  std::optional<double> r2;  // empty when the actual series is constant
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
};

MetricSet metrics(std::span<const double> y_true, std::span<const double> y_pred);
/// Unweighted mean over wells; r2 averages the wells where it is defined.
MetricSet mean_metrics(std::span<const MetricSet> per_well);
std::string format_r2(const std::optional<double>& r2);

struct ResultRow {
  std::string method;
  std::size_t tau = 0;
  std::uint64_t seed = 0;
  std::string split;
  MetricSet m;
};

struct WellRow {
  std::string method;
  std::size_t tau = 0;
  std::uint64_t seed = 0;
  std::string split;
  std::string well;
  MetricSet m;
};

/// Named (t, value) series for external plotting.
struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

struct Results {
  std::vector<ResultRow> rows;
  std::vector<WellRow> wells;
  std::vector<Series> series;
};

/// Outcome forecasts for the horizon given a normalized history and the
/// treatments applied from its last step on.
using SuffixPredictor = std::function<std::vector<double>(const Episode& history, const std::vector<int>& future_z)>;

SuffixPredictor model_predictor(const CdaModel& model, DomainTag tag);

/// Forecasts the last tau steps of each episode from its prefix. Episodes are
/// in original units; the model sees them through `stats`. Returns per-well
/// metrics in original units and fills `curves` with the first well's series.
std::vector<std::pair<std::string, MetricSet>> evaluate_suffix(const SuffixPredictor& predict, const NormStats& stats,
                                                               std::span<const Episode> episodes, std::size_t tau,
                                                               std::vector<Series>* curves = nullptr,
                                                               const std::string& label = "");

/// Trains a model on normalized domains and returns it. `lambda_override`
/// replaces config.lambda (the ablation uses 0).
CdaModel fit(const TrainConfig& config, const DomainDataset& source, const DomainDataset& target,
             std::optional<double> lambda_override = std::nullopt);

/// Normalized training domains of one experiment cell plus the raw episodes
/// it is scored on. Statistics come from the source training portion only.
struct PreparedCell {
  DomainDataset source;
  DomainDataset target;
  NormStats stats;
  std::vector<Episode> eval;
};

PreparedCell prepare_inside_well(const DomainDataset& source, const DomainDataset& target, std::size_t tau);
PreparedCell prepare_cross_well(const DomainDataset& source, const DomainDataset& target, double train_well_fraction,
                                std::uint64_t seed, bool with_policy);

struct ExperimentOptions {
  TrainConfig train;
  std::vector<std::size_t> taus;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  /// Cross-well only.
  double train_well_fraction = 0.5;
  std::size_t tau = 12;
};

/// For each tau and seed: keeps the last tau steps of every well out of
/// training, trains CDA and the lambda = 0 ablation, and scores target
/// suffix forecasts. Inputs are in original units.
Results run_inside_well(const DomainDataset& source, const DomainDataset& target, const ExperimentOptions& options);

/// Disjoint target well split; the held-out wells are forecast over their last
/// tau steps from their own prefixes. Without policy knowledge, source wells
/// that ever apply a treatment used by the held-out target wells are dropped.
Results run_cross_well(const DomainDataset& source, const DomainDataset& target, const ExperimentOptions& options,
                       bool with_policy);

struct PolicyTrajectory {
  int policy = 0;
  std::vector<double> cate;        // counterfactual y_hat - reference y_hat per step
  std::vector<double> cumulative;  // running sum of cate
  double increment() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
};

struct PolicyRanking {
  int reference = 0;
  std::size_t start = 0;   // first step the policy is applied
  std::size_t window = 0;
  std::vector<PolicyTrajectory> trajectories;  // candidate order
  std::vector<int> order;                      // best first by final increment
};

/// Applies each candidate at steps start..start+window-1 of a normalized
/// episode and contrasts the forecast outcomes at start+1..start+window
/// against the reference policy. `y_scale` converts outcome differences to
/// original units.
PolicyRanking rank_policies(const CdaModel& model, DomainTag tag, const Episode& episode, std::size_t start,
                            std::size_t window, std::span<const int> candidates, int reference,
                            double y_scale = 1.0);

/// results.csv, wells.csv and series.json under `dir`.
void emit_report(const Results& results, const std::filesystem::path& dir);
std::vector<ResultRow> parse_results_csv(const std::filesystem::path& path);

}  // namespace cda
