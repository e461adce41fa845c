#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cda/autodiff.hpp"

namespace cda {

/// Which player of the adversarial game owns a parameter.
enum class ParamGroup { kGenerator, kDiscriminator };

struct NamedParam {
  std::string name;
  ad::Node node;
  ParamGroup group = ParamGroup::kGenerator;
};

/// Ordered, named collection of trainable leaves. Copies share the underlying
/// tensors; use clone() for an independent bundle.
class ParamStore {
 public:
  ad::Node add(std::string name, Tensor init, ParamGroup group = ParamGroup::kGenerator);
  const ad::Node& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<const NamedParam> all() const { return params_; }
  std::vector<ad::Node> nodes(ParamGroup group) const;
  std::vector<ad::Node> nodes() const;

  void zero_grad();
  std::size_t scalar_count() const;
  ParamStore clone() const;

  /// Overwrites values by name; every stored name must be present with the same shape.
  void load_values(const std::map<std::string, Tensor>& values);
  std::map<std::string, Tensor> values() const;

 private:
  std::vector<NamedParam> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// param <- param - learning_rate * grad for every node.
void sgd_step(std::span<const ad::Node> params, double learning_rate);

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(std::span<const ad::Node> params, double max_norm);

struct OptimizerConfig {
  std::string kind = "sgd";  // sgd | adam
  double learning_rate = 0.01;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Stateful optimizer over one parameter group. State is keyed by parameter
/// name so it survives checkpoint round trips.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig config);

  void step(const ParamStore& store, ParamGroup group);

  const OptimizerConfig& config() const { return config_; }
  long steps() const { return steps_; }

  /// Flat state for checkpoints: "<prefix>.<slot>.<param>" -> tensor.
  std::map<std::string, Tensor> export_state(const std::string& prefix) const;
  void import_state(const std::string& prefix, const std::map<std::string, Tensor>& tensors);

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  std::map<std::string, Tensor> first_;   // velocity (sgd) or m (adam)
  std::map<std::string, Tensor> second_;  // v (adam)
};

}  // namespace cda
