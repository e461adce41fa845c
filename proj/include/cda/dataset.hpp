#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cda/episode.hpp"

namespace cda {

/// none, sand_controlling, perforation_adding, pump_replacing, fracturing.
const std::vector<std::string>& default_policy_vocabulary();

enum class DomainTag { kSource, kTarget };
std::string to_string(DomainTag tag);

/// Per-channel z-score statistics. Constant channels are passed through as is.
struct NormStats {
  std::vector<double> x_mean, x_std;
  std::vector<bool> x_constant;
  double y_mean = 0.0, y_std = 1.0;
  bool y_constant = false;

  std::size_t channels() const { return x_mean.size(); }
  double normalize_y(double y) const;
  double denormalize_y(double y) const;
  bool operator==(const NormStats&) const = default;
};

struct DomainDataset {
  DomainTag tag = DomainTag::kSource;
  std::vector<Episode> episodes;
  std::optional<NormStats> norm;
  std::vector<std::string> policy_vocabulary = default_policy_vocabulary();

  std::size_t d_x() const;
  std::size_t u_dim() const;
  std::size_t n_treatments() const { return policy_vocabulary.size(); }
  std::size_t record_count() const;
  /// Checks per-episode invariants and that all episodes share d_x and u_dim.
  void validate() const;
};

DomainDataset parse_csv(std::istream& in,
                        const std::vector<std::string>& vocabulary = default_policy_vocabulary());
DomainDataset ingest_csv(const std::filesystem::path& path,
                         const std::vector<std::string>& vocabulary = default_policy_vocabulary());
void emit_csv(const DomainDataset& data, std::ostream& out);
void write_csv(const DomainDataset& data, const std::filesystem::path& path);

/// JSON manifest: channel names, units, vocabulary, counts.
std::string manifest_json(const DomainDataset& data, const std::vector<std::string>& x_units = {});

NormStats compute_norm_stats(const std::vector<Episode>& episodes);

struct Normalized {
  DomainDataset data;
  NormStats stats;
};

/// Z-scores X and Y. Uses the given stats, or computes them from the dataset.
Normalized normalize(const DomainDataset& data, const std::optional<NormStats>& stats = std::nullopt);
DomainDataset denormalize(const DomainDataset& data, const NormStats& stats);

enum class SplitMode { kInsideWell, kCrossWell };

struct SplitPlan {
  SplitMode mode = SplitMode::kInsideWell;
  std::size_t tau = 12;
  double train_well_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct SplitResult {
  DomainDataset train;
  DomainDataset eval;
};

SplitResult split(const DomainDataset& data, const SplitPlan& plan);

struct PolicyPartition {
  std::map<std::string, DomainDataset> parts;
  std::map<std::string, std::size_t> well_counts;
  std::map<std::string, std::size_t> record_counts;
};

/// Groups wells by every non-"none" policy they ever receive. A well can land in
/// several partitions.
PolicyPartition policy_partition(const DomainDataset& data);

}  // namespace cda
