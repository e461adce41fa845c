#include "cda/scm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "cda/rng.hpp"

namespace cda::scm {
namespace {

using nlohmann::json;

Eigen::VectorXd row_of(const Tensor& x, std::size_t t) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(x.cols()));
  for (std::size_t j = 0; j < x.cols(); ++j) v(static_cast<Eigen::Index>(j)) = x(t, j);
  return v;
}

void set_row(Tensor& x, std::size_t t, const Eigen::VectorXd& v) {
  for (std::size_t j = 0; j < x.cols(); ++j) x(t, j) = v(static_cast<Eigen::Index>(j));
}

Eigen::VectorXd as_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// The single place the covariate assignment is evaluated, so factual and
// counterfactual replays agree bit for bit.
Eigen::VectorXd advance(const ScmSpec& s, const Eigen::VectorXd& x_prev, int z, const Eigen::VectorXd& u,
                        const Eigen::VectorXd& eps) {
  Eigen::VectorXd drift = s.transition * x_prev;
  if (s.nonlinear) drift = drift.array().tanh().matrix();
  Eigen::VectorXd out = drift + s.effects[static_cast<std::size_t>(z)];
  if (s.u_dim > 0) out += s.static_loading * u;
  out += eps;
  return out;
}

double emit_outcome(const ScmSpec& s, const Eigen::VectorXd& x, double eta) {
  return s.outcome_loading.dot(x) + eta;
}

int treatment_at(const std::vector<int>& z, std::ptrdiff_t idx) {
  return idx < 0 ? 0 : z[static_cast<std::size_t>(idx)];
}

void check_treatment(const ScmSpec& s, int z) {
  if (z < 0 || static_cast<std::size_t>(z) >= s.n_treatments)
    throw std::out_of_range("treatment " + std::to_string(z) + " out of range [0, " +
                            std::to_string(s.n_treatments) + ")");
}

void check_step(const Episode& ep, std::size_t t) {
  if (ep.length() < 2 || t + 1 >= ep.length())
    throw std::out_of_range("step " + std::to_string(t) + " out of range for episode " + ep.id + " of length " +
                            std::to_string(ep.length()));
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd matrix_from(const json& j, std::size_t rows, std::size_t cols, const char* name) {
  if (!j.is_array() || j.size() != rows)
    throw std::invalid_argument(std::string("scm spec: ") + name + " must have " + std::to_string(rows) + " rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw std::invalid_argument(std::string("scm spec: ") + name + " must have " + std::to_string(cols) +
                                  " columns");
    for (std::size_t k = 0; k < cols; ++k)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from(const json& j, std::size_t n, const char* name) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != n)
    throw std::invalid_argument(std::string("scm spec: ") + name + " must have length " + std::to_string(n));
  return as_vector(v);
}

}  // namespace

LoggingPolicy LoggingPolicy::uniform(std::size_t k) {
  LoggingPolicy p;
  p.bias.assign(k, 0.0);
  p.slope.assign(k, 0.0);
  p.rate_scale.assign(k, 1.0);
  p.available.assign(k, true);
  return p;
}

std::vector<double> LoggingPolicy::probabilities(double y_prev) const {
  const std::size_t k = bias.size();
  std::vector<double> logits(k);
  double mx = -INFINITY;
  for (std::size_t i = 0; i < k; ++i) {
    if (!available[i]) continue;
    logits[i] = bias[i] + slope[i] * y_prev;
    mx = std::max(mx, logits[i]);
  }
  std::vector<double> p(k, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!available[i]) continue;
    p[i] = std::exp(logits[i] - mx);
    total += p[i];
  }
  for (double& v : p) v /= total;
  double treated = 0.0;
  for (std::size_t i = 1; i < k; ++i) {
    p[i] *= rate_scale[i];
    treated += p[i];
  }
  if (treated > 1.0) {
    for (std::size_t i = 1; i < k; ++i) p[i] /= treated;
    p[0] = 0.0;
  } else {
    p[0] = 1.0 - treated;
  }
  return p;
}

double ScmSpec::spectral_radius() const {
  if (transition.size() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(transition, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

void ScmSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("scm spec: " + msg); };
  const auto dx = static_cast<Eigen::Index>(d_x);
  if (d_x == 0) fail("d_x must be positive");
  if (n_treatments < 2) fail("at least two treatments required (index 0 is no treatment)");
  if (transition.rows() != dx || transition.cols() != dx) fail("A must be d_x x d_x");
  if (effects.size() != n_treatments) fail("B must have one effect vector per treatment");
  for (const auto& b : effects)
    if (b.size() != dx) fail("every B[k] must have length d_x");
  if (outcome_loading.size() != dx) fail("c must have length d_x");
  if (u_dim > 0 && (static_loading.rows() != dx || static_loading.cols() != static_cast<Eigen::Index>(u_dim)))
    fail("u_load must be d_x x u_dim");
  if (noise_scale.size() != dx) fail("noise_scale must have length d_x");
  if ((noise_scale.array() < 0).any() || outcome_noise < 0) fail("noise scales must be non-negative");
  const std::size_t k = n_treatments;
  if (policy.bias.size() != k || policy.slope.size() != k || policy.rate_scale.size() != k ||
      policy.available.size() != k)
    fail("policy vectors must have one entry per treatment");
  if (!policy.available[0]) fail("treatment 0 must stay available");
  for (double r : policy.rate_scale)
    if (!(r >= 0) || !std::isfinite(r)) fail("policy rate_scale must be finite and non-negative");
  if (!treatment_names.empty() && treatment_names.size() != k) fail("treatment_names must match K");
  const double rho = spectral_radius();
  if (!(rho < 1.0)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "unstable transition, spectral radius %.6g >= 1", rho);
    fail(buf);
  }
}

std::string to_json(const ScmSpec& s) {
  json j;
  j["d_x"] = s.d_x;
  j["n_treatments"] = s.n_treatments;
  j["u_dim"] = s.u_dim;
  j["transition"] = matrix_json(s.transition);
  json eff = json::array();
  for (const auto& b : s.effects) eff.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  j["effects"] = eff;
  j["outcome_loading"] = std::vector<double>(s.outcome_loading.data(), s.outcome_loading.data() + s.outcome_loading.size());
  j["static_loading"] = matrix_json(s.static_loading);
  j["noise_scale"] = std::vector<double>(s.noise_scale.data(), s.noise_scale.data() + s.noise_scale.size());
  j["outcome_noise"] = s.outcome_noise;
  j["lag"] = s.lag;
  j["nonlinear"] = s.nonlinear;
  j["policy"] = {{"bias", s.policy.bias},
                 {"slope", s.policy.slope},
                 {"rate_scale", s.policy.rate_scale},
                 {"available", s.policy.available}};
  j["treatment_names"] = s.treatment_names;
  return j.dump(2);
}

ScmSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scm spec: malformed JSON: ") + e.what());
  }
  static const std::vector<std::string> known = {"d_x", "n_treatments", "u_dim", "transition", "effects",
                                                 "outcome_loading", "static_loading", "noise_scale",
                                                 "outcome_noise", "lag", "nonlinear", "policy",
                                                 "treatment_names"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("scm spec: unknown key '" + key + "'");
  try {
    ScmSpec s;
    s.d_x = j.at("d_x").get<std::size_t>();
    s.n_treatments = j.at("n_treatments").get<std::size_t>();
    s.u_dim = j.value("u_dim", std::size_t{0});
    s.transition = matrix_from(j.at("transition"), s.d_x, s.d_x, "transition");
    const json& eff = j.at("effects");
    if (!eff.is_array() || eff.size() != s.n_treatments)
      throw std::invalid_argument("scm spec: effects must have one vector per treatment");
    for (const auto& b : eff) s.effects.push_back(vector_from(b, s.d_x, "effects[k]"));
    s.outcome_loading = vector_from(j.at("outcome_loading"), s.d_x, "outcome_loading");
    s.static_loading = s.u_dim > 0 ? matrix_from(j.at("static_loading"), s.d_x, s.u_dim, "static_loading")
                                   : Eigen::MatrixXd(static_cast<Eigen::Index>(s.d_x), 0);
    s.noise_scale = vector_from(j.at("noise_scale"), s.d_x, "noise_scale");
    s.outcome_noise = j.value("outcome_noise", 0.0);
    s.lag = j.value("lag", std::size_t{1});
    s.nonlinear = j.value("nonlinear", false);
    if (j.contains("policy")) {
      const json& p = j["policy"];
      s.policy = LoggingPolicy::uniform(s.n_treatments);
      if (p.contains("bias")) s.policy.bias = p["bias"].get<std::vector<double>>();
      if (p.contains("slope")) s.policy.slope = p["slope"].get<std::vector<double>>();
      if (p.contains("rate_scale")) s.policy.rate_scale = p["rate_scale"].get<std::vector<double>>();
      if (p.contains("available")) s.policy.available = p["available"].get<std::vector<bool>>();
    } else {
      s.policy = LoggingPolicy::uniform(s.n_treatments);
    }
    if (j.contains("treatment_names")) s.treatment_names = j["treatment_names"].get<std::vector<std::string>>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scm spec: ") + e.what());
  }
}

ScmSpec example_spec(const ExampleSpecOptions& o) {
  Rng rng(o.seed);
  ScmSpec s;
  s.d_x = o.d_x;
  s.n_treatments = o.n_treatments;
  s.u_dim = o.u_dim;
  s.lag = o.lag;
  s.nonlinear = o.nonlinear;
  const auto dx = static_cast<Eigen::Index>(o.d_x);
  s.transition = Eigen::MatrixXd::Zero(dx, dx);
  for (Eigen::Index i = 0; i < dx; ++i)
    for (Eigen::Index j = 0; j < dx; ++j)
      s.transition(i, j) = (i == j ? 0.5 : 0.0) + draw_normal(rng, 0.0, 0.15 / std::sqrt(static_cast<double>(dx)));
  const double rho = s.spectral_radius();
  if (rho > 0.85) s.transition *= 0.85 / rho;
  s.effects.assign(o.n_treatments, Eigen::VectorXd::Zero(dx));
  for (std::size_t k = 1; k < o.n_treatments; ++k)
    for (Eigen::Index i = 0; i < dx; ++i) s.effects[k](i) = draw_normal(rng, 0.0, 0.8);
  s.outcome_loading = Eigen::VectorXd(dx);
  for (Eigen::Index i = 0; i < dx; ++i) s.outcome_loading(i) = draw_normal(rng, 0.0, 1.0 / std::sqrt(static_cast<double>(dx)));
  s.static_loading = Eigen::MatrixXd(dx, static_cast<Eigen::Index>(o.u_dim));
  for (Eigen::Index i = 0; i < dx; ++i)
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(o.u_dim); ++j) s.static_loading(i, j) = draw_normal(rng, 0.0, 0.3);
  s.noise_scale = Eigen::VectorXd::Constant(dx, o.noise);
  s.outcome_noise = o.noise;
  s.policy = LoggingPolicy::uniform(o.n_treatments);
  s.policy.bias[0] = 2.5;
  for (std::size_t k = 1; k < o.n_treatments; ++k) s.policy.slope[k] = (k % 2 == 1 ? 0.6 : -0.6);
  const auto& vocab = default_policy_vocabulary();
  for (std::size_t k = 0; k < o.n_treatments; ++k)
    s.treatment_names.push_back(k < vocab.size() ? vocab[k] : "policy_" + std::to_string(k));
  s.validate();
  return s;
}

std::vector<Episode> simulate(const ScmSpec& spec, std::size_t n_episodes, std::size_t T, std::uint64_t seed) {
  spec.validate();
  if (n_episodes < 1) throw std::invalid_argument("simulate: n_episodes must be at least 1");
  if (T < 2) throw std::invalid_argument("simulate: T must be at least 2");
  const auto dx = static_cast<Eigen::Index>(spec.d_x);
  std::vector<Episode> out(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    Rng rng(derive_seed(seed, e));
    Episode& ep = out[e];
    char id[32];
    std::snprintf(id, sizeof id, "ep%05zu", e);
    ep.id = id;
    ep.u.resize(spec.u_dim);
    for (double& v : ep.u) v = draw_normal(rng);
    NoiseTrace nt{Tensor(T, spec.d_x), std::vector<double>(T)};
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < spec.d_x; ++j)
        nt.covariate(t, j) = draw_normal(rng) * spec.noise_scale(static_cast<Eigen::Index>(j));
      nt.outcome[t] = draw_normal(rng) * spec.outcome_noise;
    }
    ep.x = Tensor(T, spec.d_x);
    ep.z.assign(T, 0);
    ep.y.assign(T, 0.0);
    const Eigen::VectorXd u = as_vector(ep.u);
    Eigen::VectorXd x0 = row_of(nt.covariate, 0);
    if (spec.u_dim > 0) x0 = spec.static_loading * u + x0;
    set_row(ep.x, 0, x0);
    ep.y[0] = emit_outcome(spec, x0, nt.outcome[0]);
    Eigen::VectorXd x = x0;
    for (std::size_t t = 0; t < T; ++t) {
      const double y_prev = t == 0 ? 0.0 : ep.y[t - 1];
      const auto probs = spec.policy.probabilities(y_prev);
      ep.z[t] = static_cast<int>(draw_categorical(rng, probs));
      if (t + 1 < T) {
        const int zt = treatment_at(ep.z, static_cast<std::ptrdiff_t>(t) - static_cast<std::ptrdiff_t>(spec.lag));
        x = advance(spec, x, zt, u, row_of(nt.covariate, t + 1));
        set_row(ep.x, t + 1, x);
        ep.y[t + 1] = emit_outcome(spec, x, nt.outcome[t + 1]);
      }
    }
    (void)dx;
    ep.noise = std::move(nt);
  }
  return out;
}

double stationary_outcome_mean(const ScmSpec& spec, const std::vector<double>& arm_probs,
                               const std::vector<double>& u) {
  spec.validate();
  if (spec.nonlinear) throw std::invalid_argument("stationary_outcome_mean: linear specs only");
  if (arm_probs.size() != spec.n_treatments) throw std::invalid_argument("stationary_outcome_mean: need K probabilities");
  const auto dx = static_cast<Eigen::Index>(spec.d_x);
  Eigen::VectorXd drive = Eigen::VectorXd::Zero(dx);
  for (std::size_t k = 0; k < spec.n_treatments; ++k) drive += arm_probs[k] * spec.effects[k];
  if (spec.u_dim > 0) drive += spec.static_loading * as_vector(u);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(dx, dx);
  const Eigen::VectorXd mean_x = (I - spec.transition).partialPivLu().solve(drive);
  return spec.outcome_loading.dot(mean_x);
}

Intervention intervene(const ScmSpec& spec, const Episode& ep, std::size_t t, int z, std::size_t mc_samples) {
  check_step(ep, t);
  check_treatment(spec, z);
  const auto lag = static_cast<std::ptrdiff_t>(spec.lag);
  const auto ti = static_cast<std::ptrdiff_t>(t);
  const Eigen::VectorXd u = as_vector(ep.u);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.d_x));
  auto arm = [&](std::ptrdiff_t s) { return s - lag == ti ? z : treatment_at(ep.z, s - lag); };

  Intervention out;
  out.step = t + 1 + spec.lag;
  if (!spec.nonlinear || spec.lag == 0) {
    // Mean recursion is exact when the drift is linear; with lag 0 only the
    // observed X_t enters.
    Eigen::VectorXd m = row_of(ep.x, t);
    for (std::ptrdiff_t s = ti; s <= ti + lag; ++s) m = advance(spec, m, arm(s), u, zero);
    out.mean = m;
    return out;
  }
  if (mc_samples == 0) throw std::invalid_argument("intervene: mc_samples must be positive");
  Rng rng(derive_seed(0x5EED, t));
  Eigen::VectorXd acc = zero;
  for (std::size_t n = 0; n < mc_samples; ++n) {
    Eigen::VectorXd x = row_of(ep.x, t);
    for (std::ptrdiff_t s = ti; s < ti + lag; ++s) {
      Eigen::VectorXd eps(static_cast<Eigen::Index>(spec.d_x));
      for (Eigen::Index j = 0; j < eps.size(); ++j) eps(j) = draw_normal(rng) * spec.noise_scale(j);
      x = advance(spec, x, arm(s), u, eps);
    }
    acc += advance(spec, x, z, u, zero);
  }
  out.mean = acc / static_cast<double>(mc_samples);
  return out;
}

Counterfactual counterfactual(const ScmSpec& spec, const Episode& ep, std::size_t t, int z) {
  if (!ep.noise)
    throw std::invalid_argument("counterfactual: episode " + ep.id +
                                " has no noise trace; simulate with trace retention to answer counterfactuals");
  check_step(ep, t);
  check_treatment(spec, z);
  const std::size_t r = t + 1 + spec.lag;
  if (r >= ep.length())
    throw std::out_of_range("counterfactual: response step " + std::to_string(r) + " beyond episode " + ep.id);
  Counterfactual out;
  out.step = r;
  out.x = advance(spec, row_of(ep.x, r - 1), z, as_vector(ep.u), row_of(ep.noise->covariate, r));
  out.y = emit_outcome(spec, out.x, ep.noise->outcome[r]);
  return out;
}

std::vector<double> counterfactual_rollout(const ScmSpec& spec, const Episode& ep, std::size_t t0,
                                           const std::vector<int>& z_seq) {
  if (!ep.noise)
    throw std::invalid_argument("counterfactual_rollout: episode " + ep.id +
                                " has no noise trace; simulate with trace retention to answer counterfactuals");
  if (t0 >= ep.length()) throw std::out_of_range("counterfactual_rollout: t0 beyond episode " + ep.id);
  for (int z : z_seq) check_treatment(spec, z);
  std::vector<int> zs = ep.z;
  for (std::size_t i = 0; i < z_seq.size() && t0 + i < zs.size(); ++i) zs[t0 + i] = z_seq[i];
  const std::size_t last = std::min(ep.length() - 1, t0 + z_seq.size() + spec.lag);
  const Eigen::VectorXd u = as_vector(ep.u);
  Eigen::VectorXd x = row_of(ep.x, t0);
  std::vector<double> ys;
  for (std::size_t s = t0 + 1; s <= last; ++s) {
    const int zt = treatment_at(zs, static_cast<std::ptrdiff_t>(s) - 1 - static_cast<std::ptrdiff_t>(spec.lag));
    x = advance(spec, x, zt, u, row_of(ep.noise->covariate, s));
    ys.push_back(emit_outcome(spec, x, ep.noise->outcome[s]));
  }
  return ys;
}

Eigen::VectorXd oracle_cate(const ScmSpec& spec, const Episode& ep, std::size_t t, int z, int z_ref, CateMode mode) {
  check_step(ep, t);
  check_treatment(spec, z);
  check_treatment(spec, z_ref);
  if (mode == CateMode::kObservedContrast) {
    // Z_t is a function of Y_{t-1}, which the history contains, so conditioning
    // on the arm and intervening on it give the same mean.
    return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.d_x));
  }
  // Both arms share every term but the effect vector (the drift before the
  // responding step does not depend on Z_t), so the contrast is exact.
  return spec.effects[static_cast<std::size_t>(z)] - spec.effects[static_cast<std::size_t>(z_ref)];
}

bool DomainShift::is_zero() const {
  auto all = [](const std::vector<double>& v, double x) {
    return std::all_of(v.begin(), v.end(), [x](double e) { return e == x; });
  };
  return all(rate_scale, 1.0) && all(bias_delta, 0.0) && all(slope_delta, 0.0) &&
         std::all_of(available.begin(), available.end(), [](bool b) { return b; }) && !touches_transition &&
         !touches_outcome_loading;
}

ScmSpec apply_shift(const ScmSpec& spec, const DomainShift& shift) {
  if (shift.touches_transition || shift.touches_outcome_loading)
    throw std::invalid_argument("causal structure must be shared: a domain shift may not alter A or c");
  const std::size_t k = spec.n_treatments;
  auto check = [k](std::size_t n, const char* name) {
    if (n != 0 && n != k)
      throw std::invalid_argument(std::string("domain shift: ") + name + " must have one entry per treatment");
  };
  check(shift.rate_scale.size(), "rate_scale");
  check(shift.bias_delta.size(), "bias_delta");
  check(shift.slope_delta.size(), "slope_delta");
  check(shift.available.size(), "available");
  ScmSpec out = spec;
  for (std::size_t i = 0; i < shift.rate_scale.size(); ++i) out.policy.rate_scale[i] *= shift.rate_scale[i];
  for (std::size_t i = 0; i < shift.bias_delta.size(); ++i) out.policy.bias[i] += shift.bias_delta[i];
  for (std::size_t i = 0; i < shift.slope_delta.size(); ++i) out.policy.slope[i] += shift.slope_delta[i];
  if (!shift.available.empty()) out.policy.available = shift.available;
  out.validate();
  return out;
}

std::pair<DomainDataset, DomainDataset> make_domain_pair(const ScmSpec& spec, const DomainShift& shift,
                                                         const DomainSizes& sizes, std::uint64_t seed) {
  const ScmSpec target_spec = apply_shift(spec, shift);
  auto build = [&](const ScmSpec& s, std::size_t n, std::uint64_t stream, DomainTag tag, const char* prefix) {
    DomainDataset d;
    d.tag = tag;
    if (!s.treatment_names.empty()) d.policy_vocabulary = s.treatment_names;
    else {
      d.policy_vocabulary.clear();
      for (std::size_t i = 0; i < s.n_treatments; ++i) d.policy_vocabulary.push_back("policy_" + std::to_string(i));
      d.policy_vocabulary[0] = "none";
    }
    d.episodes = simulate(s, n, sizes.length, derive_seed(seed, stream));
    for (auto& ep : d.episodes) ep.id = prefix + ep.id.substr(2);
    return d;
  };
  return {build(spec, sizes.n_source, 1, DomainTag::kSource, "src"),
          build(target_spec, sizes.n_target, 2, DomainTag::kTarget, "tgt")};
}

}  // namespace cda::scm
