#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cda/dataset.hpp"
#include "cda/model.hpp"
#include "cda/objectives.hpp"
#include "cda/optim.hpp"
#include "cda/rng.hpp"

namespace cda {

struct TrainConfig {
  /// d_x, n_treatments and u_dim of zero are taken from the data.
  ModelConfig model;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  /// Positions per training segment; 0 uses the shortest episode.
  std::size_t segment_length = 0;
  /// Trailing positions of each segment rolled out instead of teacher-forced.
  std::size_t horizon = 0;
  OptimizerConfig generator{"adam", 0.005};
  OptimizerConfig discriminator{"adam", 0.005};
  double lambda = 0.1;
  double warmup_fraction = 0.1;
  std::string domain_loss = "cmmd";      // cmmd | discriminator | both
  std::string lambda_sign = "descend";   // descend: +lambda*l_dom; ascend: -lambda*l_dom
  double beta1 = 1.0, beta2 = 1.0, beta3 = 1.0, beta4 = 1.0;
  double gamma = 0.0;
  std::string condition = "all";         // all | treated
  /// Weight of the next-covariate regression on teacher-forced transitions.
  double aux_weight = 1.0;
  double clip_norm = 5.0;
  /// Replaces attention with R_t = X_t.
  bool no_attention = false;
  std::uint64_t seed = 0;
  bool log_wall_time = false;
  /// Write a checkpoint every this many steps (0: only at the end).
  std::size_t checkpoint_every = 0;
  std::string checkpoint_path;

  void validate() const;
  bool uses_cmmd() const { return domain_loss != "discriminator"; }
  bool uses_discriminator() const { return domain_loss != "cmmd"; }
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BatchCursor {
  std::vector<std::size_t> order;
  std::size_t next = 0;
};

struct TrainState {
  CdaModel model;
  Optimizer generator_opt;
  Optimizer discriminator_opt;
  std::size_t step = 0;
  std::vector<LossBreakdown> history;
  Rng rng;
  BatchCursor source_cursor;
  BatchCursor target_cursor;
};

/// Segments of the sampled episodes for one step.
struct StepBatch {
  std::vector<Episode> source;
  std::vector<Episode> target;
};

std::string log_record(const LossBreakdown& b, std::size_t step, std::size_t epoch, std::optional<double> wall_time);

/// Alternating same-batch updates of the generator and discriminator groups.
/// Datasets must be normalized; they are referenced, not copied.
class Trainer {
 public:
  Trainer(TrainConfig config, const DomainDataset& source, const DomainDataset& target);

  static Trainer resume(const std::filesystem::path& checkpoint, const DomainDataset& source,
                        const DomainDataset& target);

  const TrainConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  std::size_t total_steps() const { return steps_per_epoch_ * config_.epochs; }
  bool done() const { return state_.step >= total_steps(); }
  double lambda_at(std::size_t step) const;

  /// Draws the next batches, updates parameters and returns the logged losses.
  LossBreakdown step();
  /// Losses the next step would log, without consuming randomness or updating.
  LossBreakdown peek() const;
  /// Objective graph of the next step. Without reversal the discriminator term
  /// enters as a plain summand, so the graph is differentiable as written.
  ad::Node objective_node(bool reverse_gradients = false) const;
  /// Steps until done or max_steps more steps ran; one JSON line per step to log.
  void run(std::ostream* log = nullptr, std::size_t max_steps = SIZE_MAX);

  void save(const std::filesystem::path& path) const;

 private:
  StepBatch draw(Rng& rng, BatchCursor& source, BatchCursor& target) const;
  /// Builds the step objective; `objective` receives the node to descend.
  LossBreakdown compute(const StepBatch& batch, std::size_t step, ad::Node* objective, bool reverse = true) const;

  TrainConfig config_;
  const DomainDataset* source_;
  const DomainDataset* target_;
  std::size_t segment_ = 0;
  std::vector<std::size_t> source_pool_, target_pool_;
  std::size_t steps_per_epoch_ = 0;
  TrainState state_;
};

/// Fills data-derived model dimensions and applies ablation flags.
ModelConfig resolve_model_config(const TrainConfig& config, const DomainDataset& source);

}  // namespace cda
