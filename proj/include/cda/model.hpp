#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cda/attention.hpp"
#include "cda/autodiff.hpp"
#include "cda/dataset.hpp"
#include "cda/episode.hpp"
#include "cda/optim.hpp"

namespace cda {

struct ModelConfig {
  std::size_t d_x = 0;
  std::size_t n_treatments = 0;
  std::size_t u_dim = 0;
  std::size_t d_h = 32;
  std::size_t d_e = 8;   // treatment embedding width
  std::size_t d_k = 8;   // answer/key width
  std::size_t window = 12;
  std::size_t interaction_rank = 8;  // h x z interaction inside the CATE head
  std::size_t disc_hidden = 16;
  std::string cell = "gru";  // gru | tanh
  bool separate_generators = false;

  void validate() const;
  std::size_t encoder_input_width() const { return d_x + d_e + 1 + u_dim; }
};

/// Equal-length episodes laid out position-major for batched recurrence.
struct Batch {
  std::size_t size = 0;
  std::size_t length = 0;
  std::vector<Tensor> x;               // per position, [B x d_x]
  std::vector<Tensor> y;               // per position, [B x 1]
  std::vector<std::vector<int>> z;     // per position, B labels
  Tensor u;                            // [B x u_dim]

  static Batch from_episodes(std::span<const Episode* const> episodes);
  static Batch from_episodes(std::span<const Episode> episodes);
};

struct AnswerKey {
  ad::Node answer;  // [B x d_k]
  ad::Node key;     // [B x d_k]
};

/// Every per-position quantity of one pass. Position t carries the answer/key
/// pair built from (h_{t-1}, z_{t-1}); position 0 uses a zero state and arm 0.
struct ForwardResult {
  std::size_t history = 0;
  std::vector<ad::Node> h;        // encoder state after position t
  std::vector<ad::Node> h_r;      // reconstructed-history state after position t
  std::vector<ad::Node> x_used;   // observed (t < history) or rolled out
  std::vector<ad::Node> y_used;   // observed (t < history) or predicted
  std::vector<ad::Node> mu;       // mu[t] = mu(h_t, z_t), t = 0..L-2
  std::vector<ad::Node> answer;
  std::vector<ad::Node> key;
  std::vector<ad::Node> alpha;    // [B x |N(t)|]
  std::vector<attention::Window> windows;
  std::vector<ad::Node> r;        // R_t
  std::vector<ad::Node> y_hat;    // y_hat[0] is empty
  std::vector<std::vector<int>> label;  // treatment behind position t: z_{t-1}, 0 at t = 0
};

/// Shared encoder, CATE head and attention; one outcome head per domain; a
/// small discriminator on the time-pooled reconstruction.
class CdaModel {
 public:
  CdaModel() = default;
  CdaModel(const ModelConfig& config, std::uint64_t seed);

  CdaModel clone() const;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ad::Node embed(std::span<const int> z, DomainTag tag) const;
  ad::Node encoder_step(const ad::Node& h, const ad::Node& input, DomainTag tag) const;
  ad::Node encoder_input(const ad::Node& x, const ad::Node& e_prev, const ad::Node& y, const ad::Node& u) const;
  /// Predicted next-covariate mean for arm embeddings e_z.
  ad::Node mu(const ad::Node& h, const ad::Node& e_z, DomainTag tag) const;
  ad::Node mu(const ad::Node& h, std::span<const int> z, DomainTag tag) const;
  /// mu(h, z) - mu(h, z_ref).
  ad::Node cate_hat(const ad::Node& h, std::span<const int> z, std::span<const int> z_ref, DomainTag tag) const;
  AnswerKey answer_key(const ad::Node& h, std::span<const int> z, DomainTag tag) const;
  ad::Node outcome(const ad::Node& h_r, const ad::Node& r, const ad::Node& e_z, DomainTag tag) const;
  ad::Node discriminator_logit(const ad::Node& pooled) const;

  /// Positions below `history` are teacher-forced; later positions feed back
  /// mu and the predicted outcome.
  ForwardResult forward(const Batch& batch, DomainTag tag, std::size_t history) const;

  /// Mean over positions of R, [B x d_x].
  static ad::Node pooled_reconstruction(const ForwardResult& fr);

 private:
  std::string gen(DomainTag tag, const char* name) const;
  ad::Node zero_state(std::size_t batch) const;

  ModelConfig config_;
  ParamStore params_;
};

struct Forecast {
  std::vector<double> y_hat;  // horizon
  Tensor x_hat;               // horizon x d_x
  Tensor r;                   // horizon x d_x
};

/// Episodes hold history rows followed by horizon rows; the horizon rows'
/// treatments drive the rollout (their X and Y are ignored). All episodes must
/// share one length.
std::vector<Forecast> forecast_batch(const CdaModel& model, DomainTag tag, std::span<const Episode> episodes,
                                     std::size_t history);

/// future_z[i] is the treatment applied at step H-1+i, H = history length.
Forecast forecast(const CdaModel& model, DomainTag tag, const Episode& history, const std::vector<int>& future_z);

}  // namespace cda
