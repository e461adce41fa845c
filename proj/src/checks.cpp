#include "cda/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <unistd.h>

#include "cda/config.hpp"
#include "cda/eval.hpp"
#include "cda/grad_check.hpp"
#include "cda/model.hpp"
#include "cda/objectives.hpp"
#include "cda/rng.hpp"
#include "cda/scm.hpp"
#include "cda/trainer.hpp"

namespace cda::checks {

namespace {

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

CheckResult verdict(bool pass, std::string detail) { return {"", pass, std::move(detail), 0.0}; }

Tensor gaussian(std::size_t n, std::size_t d, double shift, Rng& rng) {
  Tensor t(n, d);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = shift + draw_normal(rng);
  return t;
}

std::vector<int> labels(std::size_t n, int k, Rng& rng) {
  std::vector<int> z(n);
  for (auto& v : z) v = static_cast<int>(draw_uniform(rng, 0, k));
  return z;
}

ModelConfig toy_model() {
  ModelConfig c;
  c.d_h = 5;
  c.d_e = 3;
  c.d_k = 4;
  c.window = 3;
  c.interaction_rank = 2;
  c.disc_hidden = 3;
  return c;
}

std::vector<Episode> random_episodes(std::size_t n, std::size_t length, const ModelConfig& c, Rng& rng) {
  std::vector<Episode> out(n);
  for (auto& ep : out) {
    ep.x = Tensor(length, c.d_x);
    for (std::size_t j = 0; j < ep.x.size(); ++j) ep.x[j] = draw_uniform(rng, -1, 1);
    for (std::size_t t = 0; t < length; ++t) {
      ep.y.push_back(draw_uniform(rng, -1, 1));
      ep.z.push_back(static_cast<int>(draw_uniform(rng, 0, static_cast<double>(c.n_treatments))));
    }
    for (std::size_t j = 0; j < c.u_dim; ++j) ep.u.push_back(draw_uniform(rng, -1, 1));
  }
  return out;
}

Eigen::VectorXd x_row(const Episode& ep, std::size_t t) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(ep.d_x()));
  for (std::size_t j = 0; j < ep.d_x(); ++j) v(static_cast<Eigen::Index>(j)) = ep.x(t, j);
  return v;
}

struct World {
  DomainDataset source, target;
  NormStats stats;
};

World normalized_pair(const scm::ScmSpec& spec, const scm::DomainShift& shift, const scm::DomainSizes& sizes,
                      std::uint64_t seed) {
  auto [s, t] = scm::make_domain_pair(spec, shift, sizes, seed);
  Normalized ns = normalize(s);
  World w;
  w.target = normalize(t, ns.stats).data;
  w.source = std::move(ns.data);
  w.stats = ns.stats;
  return w;
}

World toy_world(std::size_t n_source, std::size_t n_target, std::size_t length, std::uint64_t seed) {
  scm::ExampleSpecOptions o;
  o.d_x = 2;
  o.n_treatments = 3;
  o.u_dim = 1;
  o.seed = seed;
  scm::DomainShift shift;
  shift.bias_delta = {-1.0, 1.0, 0.5};
  return normalized_pair(scm::example_spec(o), shift, {n_source, n_target, length}, seed);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name, std::uint64_t seed) {
  return std::filesystem::temp_directory_path() /
         ("cda_check_" + name + "_" + std::to_string(seed) + "_" + std::to_string(::getpid()));
}

}  // namespace

CheckResult timed(const std::string& name, const std::function<CheckResult()>& run) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = run();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("error: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

CheckResult gradient_fidelity(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const World w = toy_world(2, 2, 6, seed);
  TrainConfig cfg;
  cfg.model = toy_model();
  cfg.segment_length = 6;
  cfg.horizon = 2;
  cfg.batch_size = 2;
  cfg.domain_loss = "both";
  cfg.gamma = 0.5;
  cfg.warmup_fraction = 0.0;
  cfg.seed = seed;
  Trainer trainer(cfg, w.source, w.target);
  const auto params = trainer.state().model.params().nodes();
  const GradCheckReport r = grad_check([&] { return trainer.objective_node(); }, params, {});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return verdict(r.pass && r.max_rel_error < 1e-4 && secs < 30.0,
                 std::to_string(r.checked) + " coordinates, max rel error " + fmt("%.3g", r.max_rel_error) +
                     fmt(", %.1f s", secs));
}

CheckResult theorem1_bound(std::uint64_t seed, std::size_t trials) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  const Tensor s = gaussian(60, 2, 0.0, rng), t = gaussian(40, 2, 0.7, rng);
  const auto zs = labels(60, 3, rng), zt = labels(40, 3, rng);
  std::size_t violations = 0, run = 0;
  bool finite = true;
  for (const KernelSpec& k : {KernelSpec{}, KernelSpec{KernelSpec::Kind::kRbf, 1.0}}) {
    const Theorem1Report r = theorem1_check(s, zs, t, zt, k, trials, derive_seed(seed, run), 1e-9);
    violations += r.violations;
    run += r.trials;
    finite = finite && r.all_finite;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return verdict(violations == 0 && finite && secs < 10.0,
                 std::to_string(violations) + " violations in " + std::to_string(run) + " trials" +
                     fmt(", %.2f s", secs));
}

CheckResult domain_loss_identity(std::uint64_t seed, std::size_t toys) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < toys; ++trial) {
    const std::size_t ns = 2 + trial % 7, nt = 1 + trial % 4, d = 1 + trial % 3;
    DomainSamples s{ad::constant(gaussian(ns, d, 0.0, rng)), ad::constant(gaussian(ns, d, 0.3, rng)), labels(ns, 3, rng)};
    DomainSamples t{ad::constant(gaussian(nt, d, 1.0, rng)), ad::constant(gaussian(nt, d, -0.2, rng)),
                    labels(nt, 3, rng)};
    DomainLossOptions o;
    o.beta1 = draw_uniform(rng, 0.1, 2);
    o.beta2 = draw_uniform(rng, 0.1, 2);
    o.beta3 = draw_uniform(rng, 0.1, 2);
    o.beta4 = draw_uniform(rng, 0.1, 2);
    o.gamma = trial % 2 ? draw_uniform(rng, 0, 1) : 0.0;
    if (trial % 3 == 0) o.condition = {1, 2};
    if (o.condition.size()) {
      s.labels[0] = 1;
      t.labels[0] = 2;
    }
    const DomainLossTerms terms = domain_loss(s, t, o);
    const double l1 = terms.l1.item(), l2 = terms.l2.item();
    const double independent =
        l1 + l2 + terms.l3.item() + terms.l4.item() + o.gamma * std::sqrt(l1) * std::sqrt(l2);
    worst = std::max(worst, std::abs(domain_loss_unified(s, t, o).item() - independent));
  }
  return verdict(worst <= 1e-12, std::to_string(toys) + " toys, max abs difference " + fmt("%.3g", worst));
}

CheckResult attention_contracts(std::uint64_t seed, std::size_t batches) {
  Rng rng(seed);
  std::size_t stochastic = 0, support = 0, hull = 0, identity = 0, positions = 0;
  for (std::size_t trial = 0; trial < batches; ++trial) {
    ModelConfig cfg = toy_model();
    cfg.d_x = 1 + trial % 3;
    cfg.n_treatments = 2 + trial % 3;
    cfg.u_dim = trial % 2;
    cfg.window = 1 + trial % 5;
    const CdaModel model(cfg, derive_seed(seed, trial));
    const std::size_t length = 4 + trial % 6, history = 1 + trial % length;
    auto eps = random_episodes(1 + trial % 3, length, cfg, rng);
    const ForwardResult fr = model.forward(Batch::from_episodes(eps), DomainTag::kSource, history);
    // Changing everything after a cut must leave earlier positions untouched.
    const std::size_t cut = trial % length;
    for (auto& ep : eps)
      for (std::size_t t = cut + 1; t < length; ++t) {
        for (std::size_t j = 0; j < cfg.d_x; ++j) ep.x(t, j) += 1.0;
        ep.y[t] -= 1.0;
        ep.z[t] = (ep.z[t] + 1) % static_cast<int>(cfg.n_treatments);
      }
    const ForwardResult moved = model.forward(Batch::from_episodes(eps), DomainTag::kSource, history);
    for (std::size_t t = 0; t < length; ++t) {
      ++positions;
      const auto& win = fr.windows[t];
      const Tensor& alpha = fr.alpha[t].value();
      const Tensor& r = fr.r[t].value();
      bool ok_stoch = alpha.cols() == win.size(), ok_hull = true;
      for (std::size_t b = 0; b < alpha.rows(); ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < alpha.cols(); ++j) {
          ok_stoch = ok_stoch && alpha(b, j) >= 0.0;
          s += alpha(b, j);
        }
        ok_stoch = ok_stoch && std::abs(s - 1.0) <= 1e-12;
        for (std::size_t c = 0; c < cfg.d_x; ++c) {
          double lo = INFINITY, hi = -INFINITY;
          for (std::size_t tp = win.begin; tp <= win.end; ++tp) {
            lo = std::min(lo, fr.x_used[tp].value()(b, c));
            hi = std::max(hi, fr.x_used[tp].value()(b, c));
          }
          ok_hull = ok_hull && r(b, c) >= lo - 1e-12 && r(b, c) <= hi + 1e-12;
        }
      }
      bool ok_support = win.end == t && win.size() == std::min(t + 1, cfg.window);
      if (t <= cut) ok_support = ok_support && moved.alpha[t].value() == alpha && moved.r[t].value() == r;
      stochastic += ok_stoch;
      hull += ok_hull;
      support += ok_support;
      identity += cfg.window != 1 || r == fr.x_used[t].value();
    }
  }
  const bool pass = stochastic == positions && support == positions && hull == positions && identity == positions;
  std::ostringstream d;
  d << batches << " batches, " << positions << " positions; failures: row-stochastic " << positions - stochastic
    << ", past-only " << positions - support << ", convex hull " << positions - hull << ", unit window "
    << positions - identity;
  return verdict(pass, d.str());
}

CheckResult counterfactual_identity(std::uint64_t seed, std::size_t queries) {
  Rng rng(seed);
  std::size_t abduction = 0, identity = 0;
  double worst = 0.0;
  for (std::size_t q = 0; q < queries; ++q) {
    scm::ExampleSpecOptions o;
    o.lag = q % 3;
    o.d_x = 1 + q % 4;
    o.n_treatments = 2 + q % 4;
    o.u_dim = q % 3;
    o.seed = derive_seed(seed, q);
    const scm::ScmSpec linear = scm::example_spec(o);
    o.nonlinear = true;
    const scm::ScmSpec nonlinear = scm::example_spec(o);
    const std::size_t T = 6 + q % 10;
    const Episode ep = scm::simulate(linear, 1, T, derive_seed(seed, queries + q)).front();
    const Episode ep_nl = scm::simulate(nonlinear, 1, T, derive_seed(seed, queries + q)).front();
    const auto t = static_cast<std::size_t>(draw_uniform(rng, 0, static_cast<double>(T - 1 - o.lag)));
    const int z = static_cast<int>(draw_uniform(rng, 0, static_cast<double>(o.n_treatments)));

    bool same = true;
    for (const auto* pair : {&ep, &ep_nl}) {
      const scm::ScmSpec& s = pair == &ep ? linear : nonlinear;
      const scm::Counterfactual f = scm::counterfactual(s, *pair, t, pair->z[t]);
      same = same && f.x == x_row(*pair, f.step) && f.y == pair->y[f.step];
    }
    abduction += same;

    const scm::Counterfactual cf = scm::counterfactual(linear, ep, t, z);
    const Eigen::VectorXd db =
        linear.effects[static_cast<std::size_t>(z)] - linear.effects[static_cast<std::size_t>(ep.z[t])];
    const double err = (cf.x - x_row(ep, cf.step) - db).cwiseAbs().maxCoeff();
    worst = std::max(worst, err);
    identity += err <= 1e-12;
  }
  return verdict(abduction == queries && identity == queries,
                 std::to_string(queries) + " queries; factual replay exact on " + std::to_string(abduction) +
                     ", effect identity on " + std::to_string(identity) + fmt(" (max error %.3g)", worst));
}

CheckResult cate_recovery(std::uint64_t seed, std::size_t episodes, std::size_t length) {
  const auto t0 = std::chrono::steady_clock::now();
  scm::ExampleSpecOptions o;
  o.d_x = 4;
  o.n_treatments = 5;
  o.u_dim = 2;
  o.lag = 0;
  o.seed = seed;
  scm::ScmSpec spec = scm::example_spec(o);
  spec.policy = scm::LoggingPolicy::uniform(spec.n_treatments);
  const World w = normalized_pair(spec, {}, {episodes, std::max<std::size_t>(episodes / 20, 2), length}, seed);

  TrainConfig cfg;
  cfg.model.d_h = 32;
  cfg.epochs = 6;
  cfg.batch_size = 32;
  cfg.seed = seed;
  Trainer trainer(cfg, w.source, w.target);
  trainer.run();
  const CdaModel& model = trainer.state().model;

  DomainDataset held;
  held.policy_vocabulary = w.source.policy_vocabulary;
  held.episodes = scm::simulate(spec, 100, length, derive_seed(seed, 99));
  const DomainDataset eval = normalize(held, w.stats).data;
  const ForwardResult fr = model.forward(Batch::from_episodes(eval.episodes), DomainTag::kSource, length);
  const std::size_t n = eval.episodes.size();
  double total = 0.0;
  std::size_t count = 0;
  std::ostringstream per_arm;
  for (int z = 1; z < static_cast<int>(spec.n_treatments); ++z) {
    const Eigen::VectorXd oracle = spec.effects[static_cast<std::size_t>(z)] - spec.effects[0];
    const std::vector<int> arm(n, z), ref(n, 0);
    double arm_total = 0.0;
    for (std::size_t t = 0; t + 1 < length; ++t) {
      const Tensor c = model.cate_hat(fr.h[t], arm, ref, DomainTag::kSource).value();
      for (std::size_t b = 0; b < n; ++b) {
        double err = 0.0;
        for (std::size_t j = 0; j < spec.d_x; ++j) {
          const double est = c(b, j) * (w.stats.x_constant[j] ? 1.0 : w.stats.x_std[j]);
          err += std::pow(est - oracle(static_cast<Eigen::Index>(j)), 2);
        }
        arm_total += std::sqrt(err) / oracle.norm();
      }
    }
    const double arm_mean = arm_total / static_cast<double>(n * (length - 1));
    per_arm << (z > 1 ? ", " : "") << fmt("%.3f", arm_mean);
    total += arm_mean;
    ++count;
  }
  const double rel = total / static_cast<double>(count);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return verdict(rel < 0.25 && secs < 600.0,
                 fmt("mean relative error %.4f", rel) + " (per arm " + per_arm.str() + ")" + fmt(", %.0f s", secs));
}

CheckResult adaptation_benefit(std::uint64_t seed, std::size_t seeds) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc;
  rc.seed = seed;
  rc.scm.target_bias_delta = {-1.0, 1.5, -1.0, 1.0, 0.0};
  rc.scm.n_target = rc.scm.n_source / 20;
  const auto [src, tgt] = load_domains(rc);
  ExperimentOptions o;
  o.train = rc.train;
  o.taus = {12};
  for (std::size_t i = 0; i < seeds; ++i) o.seeds.push_back(seed + i);
  const Results r = run_inside_well(src, tgt, o);
  double cda = 0.0, ablation = 0.0;
  for (const auto& row : r.rows) (row.method == "CDA" ? cda : ablation) += row.m.rmse / static_cast<double>(seeds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return verdict(cda < ablation && secs < 1800.0,
                 fmt("mean target-suffix RMSE: CDA %.5f, lambda=0 %.5f", cda, ablation) + fmt(", %.0f s", secs));
}

CheckResult policy_ranking(std::uint64_t seed, std::size_t eval_episodes) {
  // Outcome effects c'B: 1.2 > 0.55 > 0 > -0.65.
  scm::ScmSpec spec;
  spec.d_x = 3;
  spec.n_treatments = 4;
  spec.u_dim = 1;
  spec.transition = Eigen::MatrixXd::Identity(3, 3) * 0.4;
  spec.transition(0, 1) = 0.1;
  spec.effects = {Eigen::Vector3d(0.0, 0.0, 0.0), Eigen::Vector3d(1.0, 0.4, 0.0), Eigen::Vector3d(0.3, 0.4, 0.2),
                  Eigen::Vector3d(-0.6, -0.2, 0.2)};
  spec.outcome_loading = Eigen::Vector3d(1.0, 0.5, 0.25);
  spec.static_loading = Eigen::MatrixXd::Constant(3, 1, 0.3);
  spec.noise_scale = Eigen::VectorXd::Constant(3, 0.1);
  spec.outcome_noise = 0.1;
  spec.lag = 0;
  spec.policy = scm::LoggingPolicy::uniform(4);
  spec.treatment_names = {"none", "p1", "p2", "p3"};
  spec.validate();

  const std::size_t length = 40, window = 12;
  scm::DomainShift shift;
  shift.bias_delta = {0.5, -0.5, 0.5, 0.0};
  const World w = normalized_pair(spec, shift, {600, 30, length}, seed);
  TrainConfig cfg;
  cfg.model.d_h = 32;
  cfg.epochs = 15;
  cfg.batch_size = 32;
  cfg.horizon = window;
  cfg.seed = seed;
  Trainer trainer(cfg, w.source, w.target);
  trainer.run();
  const CdaModel& model = trainer.state().model;

  DomainDataset held;
  held.policy_vocabulary = w.target.policy_vocabulary;
  held.episodes = scm::simulate(spec, eval_episodes, length, derive_seed(seed, 77));
  const DomainDataset eval = normalize(held, w.stats).data;
  const std::vector<int> candidates = {1, 2, 3};
  std::size_t order_hits = 0, sign_hits = 0, signs = 0;
  for (std::size_t e = 0; e < eval_episodes; ++e) {
    const Episode& raw = held.episodes[e];
    std::size_t start = 10;
    while (start + window + 1 < length && raw.z[start] == 0) ++start;
    if (start + window >= length) start = 10;
    const PolicyRanking pr = rank_policies(model, DomainTag::kTarget, eval.episodes[e], start, window, candidates, 0,
                                           w.stats.y_std);
    const auto base = scm::counterfactual_rollout(spec, raw, start, std::vector<int>(window, 0));
    std::vector<std::pair<double, int>> oracle;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto ys = scm::counterfactual_rollout(spec, raw, start, std::vector<int>(window, candidates[i]));
      double inc = 0.0;
      for (std::size_t k = 0; k < window; ++k) inc += ys[k] - base[k];
      oracle.emplace_back(inc, candidates[i]);
      ++signs;
      sign_hits += (inc > 0) == (pr.trajectories[i].increment() > 0);
    }
    std::stable_sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> oracle_order;
    for (const auto& [inc, z] : oracle) oracle_order.push_back(z);
    order_hits += oracle_order == pr.order;
  }
  const double order_rate = static_cast<double>(order_hits) / static_cast<double>(eval_episodes);
  const double sign_rate = static_cast<double>(sign_hits) / static_cast<double>(signs);
  return verdict(order_rate >= 0.8 && sign_rate >= 0.8,
                 fmt("oracle order recovered on %.0f%% of episodes, increment sign on %.0f%% of contrasts",
                     100 * order_rate, 100 * sign_rate));
}

CheckResult metric_identities(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };
  std::vector<double> y(30);
  for (double& v : y) v = draw_normal(rng, 2.0, 1.5);
  const MetricSet perfect = metrics(y, y);
  expect(perfect.r2 && *perfect.r2 == 1.0 && perfect.rmse == 0.0 && perfect.mae == 0.0, "perfect fit");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  const MetricSet null = metrics(y, std::vector<double>(y.size(), mean));
  expect(null.r2 && std::abs(*null.r2) <= 1e-12, "mean predictor");
  const MetricSet hand = metrics(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0});
  expect(std::abs(hand.rmse - std::sqrt(12.5)) <= 1e-12 && std::abs(hand.mae - 3.5) <= 1e-12 && !hand.r2,
         "hand case [0,0] vs [3,4]");
  const MetricSet hand2 = metrics(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 2, 2, 2});
  expect(std::abs(hand2.rmse - std::sqrt(1.5)) <= 1e-12 && std::abs(hand2.mae - 1.0) <= 1e-12 &&
             std::abs(*hand2.r2 + 0.2) <= 1e-12,
         "hand case [1..4] vs 2");
  std::vector<double> p(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) p[i] = y[i] + draw_normal(rng, 0.0, 0.3);
  std::vector<std::size_t> idx(y.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<double> ys, ps;
  for (std::size_t i : idx) {
    ys.push_back(y[i]);
    ps.push_back(p[i]);
  }
  const MetricSet a = metrics(y, p), b = metrics(ys, ps);
  expect(std::abs(*a.r2 - *b.r2) <= 1e-12 && std::abs(a.rmse - b.rmse) <= 1e-12 && std::abs(a.mae - b.mae) <= 1e-12,
         "reorder invariance");
  std::string detail = "all identities hold";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f + ";";
  }
  return verdict(failed.empty(), detail);
}

CheckResult reproducibility(std::uint64_t seed) {
  const World w = toy_world(10, 3, 12, seed);
  TrainConfig cfg;
  cfg.model = toy_model();
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.segment_length = 8;
  cfg.horizon = 2;
  cfg.domain_loss = "both";
  cfg.seed = seed;
  const auto dir = scratch("repro", seed);
  std::filesystem::create_directories(dir);
  // Runs share one checkpoint path so the stored configs match byte for byte.
  const auto path = dir / "run.ckpt";
  cfg.checkpoint_path = path.string();
  auto run = [&](std::ostream& log) {
    Trainer t(cfg, w.source, w.target);
    t.run(&log);
    return read_file(path);
  };
  std::ostringstream la, lb, lc;
  const std::string a = run(la), b = run(lb);
  const bool identical = a == b && la.str() == lb.str() && !a.empty();

  Trainer first(cfg, w.source, w.target);
  first.run(&lc, first.total_steps() / 2);
  first.save(dir / "half.ckpt");
  Trainer resumed = Trainer::resume(dir / "half.ckpt", w.source, w.target);
  resumed.run(&lc);
  const bool resume_ok = read_file(path) == a && lc.str() == la.str();
  std::filesystem::remove_all(dir);
  return verdict(identical && resume_ok, std::string("same-seed runs ") + (identical ? "bit-identical" : "differ") +
                                             ", resumed run " + (resume_ok ? "matches" : "differs from") +
                                             " the uninterrupted one");
}

CheckResult data_plumbing(std::uint64_t seed) {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  scm::ExampleSpecOptions o;
  o.seed = seed;
  auto [src, tgt] = scm::make_domain_pair(scm::example_spec(o), {}, {12, 3, 20}, seed);
  std::ostringstream out;
  emit_csv(src, out);
  std::istringstream in(out.str());
  const DomainDataset back = parse_csv(in, src.policy_vocabulary);
  std::ostringstream again;
  emit_csv(back, again);
  bool exact = again.str() == out.str() && back.episodes.size() == src.episodes.size();
  for (std::size_t i = 0; exact && i < src.episodes.size(); ++i) {
    const auto &a = src.episodes[i], &b = back.episodes[i];
    exact = a.x == b.x && a.y == b.y && a.z == b.z && a.u == b.u && a.id == b.id;
  }
  expect(exact, "csv round trip");

  Rng rng(seed);
  bool partition_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    SplitPlan plan;
    plan.seed = static_cast<std::uint64_t>(trial);
    if (trial % 2 == 0) {
      plan.tau = static_cast<std::size_t>(draw_uniform(rng, 1, 19));
    } else {
      plan.mode = SplitMode::kCrossWell;
      plan.train_well_fraction = draw_uniform(rng, 0.1, 0.9);
    }
    const SplitResult r = split(src, plan);
    std::set<std::pair<std::string, int>> all, seen;
    std::size_t rows = 0;
    for (const auto& ep : src.episodes)
      for (std::size_t t = 0; t < ep.length(); ++t) all.insert({ep.id, ep.first_month + static_cast<int>(t)});
    for (const auto* part : {&r.train, &r.eval})
      for (const auto& ep : part->episodes)
        for (std::size_t t = 0; t < ep.length(); ++t, ++rows) seen.insert({ep.id, ep.first_month + static_cast<int>(t)});
    partition_ok = partition_ok && seen == all && rows == all.size();
  }
  expect(partition_ok, "split disjointness and coverage");

  const PolicyPartition sim_parts = policy_partition(src);
  std::size_t treated = 0, counted = 0;
  for (const auto& ep : src.episodes) {
    std::set<int> used;
    for (int z : ep.z)
      if (z != 0) used.insert(z);
    treated += used.size() * ep.length();
  }
  for (const auto& [name, n] : sim_parts.record_counts) counted += n;
  expect(counted == treated, "partition record counts");

  // One treatment event per well, 240 months each.
  DomainDataset corpus;
  const std::pair<int, std::size_t> groups[] = {{1, 975}, {2, 424}, {3, 19}, {4, 56}};
  for (const auto& [policy, wells] : groups)
    for (std::size_t i = 0; i < wells; ++i) {
      Episode ep;
      ep.id = "w" + std::to_string(policy) + "_" + std::to_string(i);
      ep.x = Tensor(240, 1);
      ep.y.assign(240, 1.0);
      ep.z.assign(240, 0);
      ep.z[120] = policy;
      corpus.episodes.push_back(std::move(ep));
    }
  const auto file = scratch("corpus", seed).replace_extension(".csv");
  write_csv(corpus, file);
  const DomainDataset loaded = ingest_csv(file);
  std::filesystem::remove(file);
  const PolicyPartition p = policy_partition(loaded);
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> expected[] = {
      {"sand_controlling", {975, 234000}},
      {"perforation_adding", {424, 101760}},
      {"pump_replacing", {19, 4560}},
      {"fracturing", {56, 13440}}};
  bool table_ok = loaded.episodes.size() == 1474 && loaded.record_count() == 353760;
  for (const auto& [name, counts] : expected)
    table_ok = table_ok && p.well_counts.at(name) == counts.first && p.record_counts.at(name) == counts.second;
  expect(table_ok, "corpus partition counts");

  std::string detail = "round trip, 50 split plans, partition sums and corpus counts hold";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f + ";";
  }
  return verdict(failed.empty(), detail);
}

const std::vector<Check>& registry() {
  static const std::vector<Check> checks = {
      {"gradient_fidelity", false, [](std::uint64_t s) { return gradient_fidelity(s); }},
      {"theorem1_bound", false, [](std::uint64_t s) { return theorem1_bound(s); }},
      {"domain_loss_identity", false, [](std::uint64_t s) { return domain_loss_identity(s); }},
      {"attention_contracts", false, [](std::uint64_t s) { return attention_contracts(s); }},
      {"counterfactual_identity", false, [](std::uint64_t s) { return counterfactual_identity(s); }},
      {"cate_recovery", true, [](std::uint64_t s) { return cate_recovery(s); }},
      {"adaptation_benefit", true, [](std::uint64_t s) { return adaptation_benefit(s); }},
      {"policy_ranking", true, [](std::uint64_t s) { return policy_ranking(s); }},
      {"metric_identities", false, [](std::uint64_t s) { return metric_identities(s); }},
      {"reproducibility", false, [](std::uint64_t s) { return reproducibility(s); }},
      {"data_plumbing", false, [](std::uint64_t s) { return data_plumbing(s); }},
  };
  return checks;
}

}  // namespace cda::checks
