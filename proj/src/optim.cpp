#include "cda/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cda {

ad::Node ParamStore::add(std::string name, Tensor init, ParamGroup group) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  if (name.find_first_of(" \t\n") != std::string::npos)
    throw std::invalid_argument("ParamStore: whitespace in parameter name '" + name + "'");
  ad::Node node = ad::parameter(std::move(init));
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), node, group});
  return node;
}

const ad::Node& ParamStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: unknown parameter " + std::string(name));
  return params_[it->second].node;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::vector<ad::Node> ParamStore::nodes(ParamGroup group) const {
  std::vector<ad::Node> out;
  for (const auto& p : params_)
    if (p.group == group) out.push_back(p.node);
  return out;
}

std::vector<ad::Node> ParamStore::nodes() const {
  std::vector<ad::Node> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.node);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    ad::Node n = p.node;
    n.zero_grad();
  }
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.node.value().size();
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& p : params_) out.add(p.name, p.node.value(), p.group);
  return out;
}

void ParamStore::load_values(const std::map<std::string, Tensor>& values) {
  for (auto& p : params_) {
    auto it = values.find(p.name);
    if (it == values.end()) throw std::runtime_error("checkpoint is missing parameter " + p.name);
    if (!it->second.same_shape(p.node.value()))
      throw ShapeError("parameter " + p.name + ": checkpoint shape " + it->second.shape_str() +
                       " vs model shape " + p.node.value().shape_str());
    ad::Node n = p.node;
    n.mutable_value() = it->second;
  }
}

std::map<std::string, Tensor> ParamStore::values() const {
  std::map<std::string, Tensor> out;
  for (const auto& p : params_) out.emplace(p.name, p.node.value());
  return out;
}

void sgd_step(std::span<const ad::Node> params, double learning_rate) {
  if (!(learning_rate > 0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Node p = params[i];
    const Tensor g = p.grad();
    if (!g.all_finite())
      throw NumericError("sgd_step: non-finite gradient for parameter #" + std::to_string(i));
    Tensor& v = p.mutable_value();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] -= learning_rate * g[j];
  }
}

double clip_grad_norm(std::span<const ad::Node> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.data()->grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.data()->grad.data()) g *= s;
    }
  }
  return norm;
}

Optimizer::Optimizer(OptimizerConfig config) : config_(std::move(config)) {
  if (!(config_.learning_rate > 0))
    throw std::invalid_argument("optimizer: learning rate must be positive");
  if (config_.kind != "sgd" && config_.kind != "adam")
    throw std::invalid_argument("optimizer: unknown kind '" + config_.kind + "'");
}

void Optimizer::step(const ParamStore& store, ParamGroup group) {
  ++steps_;
  const double lr = config_.learning_rate;
  for (const auto& np : store.all()) {
    if (np.group != group) continue;
    ad::Node p = np.node;
    const Tensor g = p.grad();
    if (!g.all_finite()) throw NumericError("optimizer: non-finite gradient for parameter " + np.name);
    Tensor& w = p.mutable_value();
    if (config_.kind == "sgd") {
      if (config_.momentum == 0.0) {
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
        continue;
      }
      auto [it, fresh] = first_.try_emplace(np.name, Tensor(w.rows(), w.cols()));
      Tensor& vel = it->second;
      for (std::size_t j = 0; j < w.size(); ++j) {
        vel[j] = config_.momentum * vel[j] + g[j];
        w[j] -= lr * vel[j];
      }
    } else {
      Tensor& m = first_.try_emplace(np.name, Tensor(w.rows(), w.cols())).first->second;
      Tensor& v = second_.try_emplace(np.name, Tensor(w.rows(), w.cols())).first->second;
      const double b1 = config_.beta1, b2 = config_.beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (1 - b1) * g[j];
        v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
        w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.epsilon);
      }
    }
  }
}

std::map<std::string, Tensor> Optimizer::export_state(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  out.emplace(prefix + ".steps", Tensor::scalar(static_cast<double>(steps_)));
  for (const auto& [k, t] : first_) out.emplace(prefix + ".m1." + k, t);
  for (const auto& [k, t] : second_) out.emplace(prefix + ".m2." + k, t);
  return out;
}

void Optimizer::import_state(const std::string& prefix, const std::map<std::string, Tensor>& tensors) {
  first_.clear();
  second_.clear();
  steps_ = 0;
  const std::string m1 = prefix + ".m1.", m2 = prefix + ".m2.";
  for (const auto& [k, t] : tensors) {
    if (k == prefix + ".steps")
      steps_ = static_cast<long>(t.item());
    else if (k.rfind(m1, 0) == 0)
      first_.emplace(k.substr(m1.size()), t);
    else if (k.rfind(m2, 0) == 0)
      second_.emplace(k.substr(m2.size()), t);
  }
}

}  // namespace cda
