#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cda/autodiff.hpp"

namespace cda {

struct KernelSpec {
  enum class Kind { kLinear, kRbf };
  Kind kind = Kind::kLinear;
  double bandwidth = 1.0;

  void validate() const;
  double operator()(std::span<const double> a, std::span<const double> b) const;
};

/// Sum over episodes of (1/T) sum of squared history residuals plus (1/tau)
/// sum of squared horizon residuals. Inputs are [episodes x T] and
/// [episodes x tau]; pass empty nodes for an absent part.
ad::Node seq_loss(const ad::Node& y_hist, const ad::Node& yhat_hist, const ad::Node& y_hor, const ad::Node& yhat_hor);

/// Squared distance between weighted mean embeddings of the rows of a and b.
double weighted_mmd2(const Tensor& a, std::span<const double> wa, const Tensor& b, std::span<const double> wb,
                     const KernelSpec& kernel);
/// Biased (V-statistic) squared MMD with uniform weights.
double mmd2(const Tensor& s, const Tensor& t, const KernelSpec& kernel = {});
/// Linear-kernel squared MMD as a graph node.
ad::Node mmd2_linear(const ad::Node& s, const ad::Node& t);

/// Squared distance between condition-summed reconstruction means,
/// (1/|S|) sum_{a in Z} sum_{S|a} phi(R) - (1/|T|) sum_{a in Z} sum_{T|a} phi(R).
/// `condition` lists the levels in Z; empty means every label present.
/// A level present in only one domain contributes from that side alone and
/// appends a warning.
double cmmd2(const Tensor& r_s, std::span<const int> z_s, const Tensor& r_t, std::span<const int> z_t,
             const KernelSpec& kernel = {}, std::span<const int> condition = {},
             std::vector<std::string>* warnings = nullptr);

struct PermutationTest {
  double observed = 0.0;
  double p_value = 1.0;
  double quantile95 = 0.0;
  double quantile99 = 0.0;
};

PermutationTest mmd_permutation_test(const Tensor& s, const Tensor& t, const KernelSpec& kernel,
                                     std::size_t permutations, std::uint64_t seed);

/// How phi(X|Z) averages per-class mean embeddings: weighted by class size
/// (pooled) or equally per present class (balanced).
enum class Conditioning { kPooled, kBalanced };

struct Theorem1Terms {
  double cmmd_st = 0.0;  // d_CMMD(S|Z, T|Z)
  double cmmd_ss = 0.0;  // d_CMMD(S, S|Z)
  double cmmd_tt = 0.0;  // d_CMMD(T, T|Z)
  double mmd_st = 0.0;   // d_MMD(S, T)
  double lhs() const { return cmmd_st * cmmd_st; }
  /// Bound whose cross product pairs d_CMMD(S|Z,T|Z) with d_MMD.
  double rhs_appendix() const;
  /// Bound whose cross product pairs d_CMMD(T,T|Z) with d_MMD.
  double rhs_statement() const;
};

Theorem1Terms theorem1_terms(const Tensor& s, std::span<const int> z_s, const Tensor& t, std::span<const int> z_t,
                             const KernelSpec& kernel, Conditioning conditioning);

struct Theorem1Report {
  std::size_t trials = 0;
  std::size_t violations = 0;            // appendix form, pooled conditioning
  std::size_t violations_statement = 0;  // statement form, pooled conditioning
  std::size_t violations_balanced = 0;   // appendix form, balanced conditioning
  double max_excess = 0.0;               // max(lhs - rhs) for the appendix form
  bool all_finite = true;
  double tolerance = 1e-9;
};

/// Bootstrap-resamples both domains n_trials times and counts bound violations
/// beyond `tolerance`.
Theorem1Report theorem1_check(const Tensor& s, std::span<const int> z_s, const Tensor& t, std::span<const int> z_t,
                              const KernelSpec& kernel, std::size_t n_trials, std::uint64_t seed,
                              double tolerance = 1e-9);

/// Rows of covariates X and reconstructions R with the treatment label behind
/// each row.
struct DomainSamples {
  ad::Node x;
  ad::Node r;
  std::vector<int> labels;
};

struct DomainLossOptions {
  double beta1 = 1.0, beta2 = 1.0, beta3 = 1.0, beta4 = 1.0;
  double gamma = 0.0;
  /// Levels forming Z; empty means all rows.
  std::vector<int> condition;
};

struct DomainLossTerms {
  ad::Node l1, l2, l3, l4, cross, total;
};

/// Term-by-term mean differences.
DomainLossTerms domain_loss(const DomainSamples& s, const DomainSamples& t, const DomainLossOptions& options);
/// The same quantity as one stacked coefficient-matrix expression.
ad::Node domain_loss_unified(const DomainSamples& s, const DomainSamples& t, const DomainLossOptions& options);

struct LossBreakdown {
  double l_seq_source = 0.0;
  double l_seq_target = 0.0;
  double l_aux = 0.0;
  double l1 = 0.0, l2 = 0.0, l3 = 0.0, l4 = 0.0;
  double cross_term = 0.0;
  double l_dom = 0.0;
  std::optional<double> l_disc;
  double lambda = 0.0;
  double total = 0.0;
};

enum class ObjectiveView { kGenerator, kDiscriminator };

/// Generator view: l_seq_S + l_seq_T - lambda * l_dom. Discriminator view:
/// lambda * l_disc (zero when the discriminator is off).
double total_objective(const LossBreakdown& b, double lambda, ObjectiveView view = ObjectiveView::kGenerator);

/// Mean binary cross-entropy of logits [B x 1] against one label.
ad::Node bce_with_logits(const ad::Node& logits, double label);

}  // namespace cda
