#include "cda/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace cda {
namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Runs cells on up to `jobs` threads; every cell writes only its own slot.
void run_cells(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& cell) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) cell(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          cell(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

DomainDataset with_episodes(const DomainDataset& like, std::vector<Episode> episodes) {
  DomainDataset d;
  d.tag = like.tag;
  d.policy_vocabulary = like.policy_vocabulary;
  d.episodes = std::move(episodes);
  return d;
}

void append(Results& into, Results&& from) {
  std::move(from.rows.begin(), from.rows.end(), std::back_inserter(into.rows));
  std::move(from.wells.begin(), from.wells.end(), std::back_inserter(into.wells));
  std::move(from.series.begin(), from.series.end(), std::back_inserter(into.series));
}

void score(Results& out, const CdaModel& model, const NormStats& stats, std::span<const Episode> eval,
           const std::string& method, std::size_t tau, std::uint64_t seed, const std::string& split) {
  const std::string label = method + "/tau=" + std::to_string(tau) + "/seed=" + std::to_string(seed) + "/" + split;
  const auto per_well = evaluate_suffix(model_predictor(model, DomainTag::kTarget), stats, eval, tau, &out.series, label);
  std::vector<MetricSet> ms;
  for (const auto& [well, m] : per_well) {
    out.wells.push_back({method, tau, seed, split, well, m});
    ms.push_back(m);
  }
  out.rows.push_back({method, tau, seed, split, mean_metrics(ms)});
}

void check_options(const ExperimentOptions& o) {
  if (o.seeds.empty()) throw std::invalid_argument("experiment: empty seed list");
}

}  // namespace

MetricSet metrics(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size())
    throw std::invalid_argument("metrics: " + std::to_string(y_true.size()) + " actual values but " +
                                std::to_string(y_pred.size()) + " predictions");
  if (y_true.empty()) throw std::invalid_argument("metrics: empty series");
  const double n = static_cast<double>(y_true.size());
  const double mean = std::accumulate(y_true.begin(), y_true.end(), 0.0) / n;
  double sse = 0.0, sst = 0.0, sae = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double e = y_pred[i] - y_true[i];
    sse += e * e;
    sae += std::abs(e);
    sst += (mean - y_true[i]) * (mean - y_true[i]);
  }
  MetricSet m;
  m.n = y_true.size();
  m.rmse = std::sqrt(sse / n);
  m.mae = sae / n;
  if (sst > 0) m.r2 = 1.0 - sse / sst;
  return m;
}

MetricSet mean_metrics(std::span<const MetricSet> per_well) {
  if (per_well.empty()) throw std::invalid_argument("mean_metrics: no wells");
  MetricSet out;
  double r2 = 0.0;
  std::size_t defined = 0;
  for (const auto& m : per_well) {
    out.rmse += m.rmse / static_cast<double>(per_well.size());
    out.mae += m.mae / static_cast<double>(per_well.size());
    out.n += m.n;
    if (m.r2) {
      r2 += *m.r2;
      ++defined;
    }
  }
  if (defined > 0) out.r2 = r2 / static_cast<double>(defined);
  return out;
}

std::string format_r2(const std::optional<double>& r2) { return r2 ? num(*r2) : "NA"; }

SuffixPredictor model_predictor(const CdaModel& model, DomainTag tag) {
  return [&model, tag](const Episode& history, const std::vector<int>& future_z) {
    return forecast(model, tag, history, future_z).y_hat;
  };
}

std::vector<std::pair<std::string, MetricSet>> evaluate_suffix(const SuffixPredictor& predict, const NormStats& stats,
                                                               std::span<const Episode> episodes, std::size_t tau,
                                                               std::vector<Series>* curves, const std::string& label) {
  if (tau == 0) throw std::invalid_argument("evaluate: tau must be positive");
  DomainDataset raw;
  raw.episodes.assign(episodes.begin(), episodes.end());
  const DomainDataset norm = normalize(raw, stats).data;
  std::vector<std::pair<std::string, MetricSet>> out;
  for (std::size_t e = 0; e < norm.episodes.size(); ++e) {
    const Episode& ep = norm.episodes[e];
    if (tau >= ep.length())
      throw std::invalid_argument("evaluate: tau=" + std::to_string(tau) + " is not shorter than episode " + ep.id);
    const std::size_t h = ep.length() - tau;
    const std::vector<int> future(ep.z.begin() + static_cast<std::ptrdiff_t>(h - 1),
                                  ep.z.begin() + static_cast<std::ptrdiff_t>(h - 1 + tau));
    const std::vector<double> y_hat = predict(ep.slice(0, h), future);
    if (y_hat.size() != tau) throw std::logic_error("evaluate: predictor returned the wrong horizon");
    std::vector<double> pred, actual;
    for (std::size_t i = 0; i < tau; ++i) {
      pred.push_back(stats.denormalize_y(y_hat[i]));
      actual.push_back(episodes[e].y[h + i]);
    }
    out.emplace_back(ep.id, metrics(actual, pred));
    if (curves && e == 0) {
      Series a{label + "/actual/" + ep.id, {}}, p{label + "/forecast/" + ep.id, {}};
      for (std::size_t i = 0; i < tau; ++i) {
        a.points.emplace_back(static_cast<double>(h + i), actual[i]);
        p.points.emplace_back(static_cast<double>(h + i), pred[i]);
      }
      curves->push_back(std::move(a));
      curves->push_back(std::move(p));
    }
  }
  return out;
}

CdaModel fit(const TrainConfig& config, const DomainDataset& source, const DomainDataset& target,
             std::optional<double> lambda_override) {
  TrainConfig c = config;
  if (lambda_override) c.lambda = *lambda_override;
  c.checkpoint_path.clear();
  Trainer trainer(c, source, target);
  trainer.run();
  return trainer.state().model;
}

PreparedCell prepare_inside_well(const DomainDataset& source, const DomainDataset& target, std::size_t tau) {
  SplitPlan plan;
  plan.tau = tau;
  const SplitResult s = split(source, plan), t = split(target, plan);
  Normalized ns = normalize(s.train);
  PreparedCell c;
  c.target = normalize(t.train, ns.stats).data;
  c.source = std::move(ns.data);
  c.stats = ns.stats;
  c.eval = target.episodes;
  return c;
}

PreparedCell prepare_cross_well(const DomainDataset& source, const DomainDataset& target, double train_well_fraction,
                                std::uint64_t seed, bool with_policy) {
  if (target.episodes.size() < 2) throw std::invalid_argument("cross-well: need at least two target wells");
  SplitPlan plan;
  plan.mode = SplitMode::kCrossWell;
  plan.train_well_fraction = train_well_fraction;
  plan.seed = derive_seed(seed, 7);
  const SplitResult t = split(target, plan);
  std::vector<Episode> src = source.episodes;
  if (!with_policy) {
    std::set<int> held;
    for (const auto& ep : t.eval.episodes)
      for (int z : ep.z)
        if (z != 0) held.insert(z);
    std::erase_if(src, [&](const Episode& ep) {
      return std::any_of(ep.z.begin(), ep.z.end(), [&](int z) { return held.count(z) > 0; });
    });
    if (src.empty()) throw std::invalid_argument("cross-well: no source wells remain without the target policies");
  }
  Normalized ns = normalize(with_episodes(source, std::move(src)));
  PreparedCell c;
  c.target = normalize(t.train, ns.stats).data;
  c.source = std::move(ns.data);
  c.stats = ns.stats;
  c.eval = t.eval.episodes;
  return c;
}

Results run_inside_well(const DomainDataset& source, const DomainDataset& target, const ExperimentOptions& o) {
  check_options(o);
  if (o.taus.empty()) throw std::invalid_argument("inside-well: empty tau list");
  const std::size_t cells = o.taus.size() * o.seeds.size();
  std::vector<Results> slots(cells);
  run_cells(cells, o.jobs, [&](std::size_t i) {
    const std::size_t tau = o.taus[i / o.seeds.size()];
    const std::uint64_t seed = o.seeds[i % o.seeds.size()];
    const PreparedCell c = prepare_inside_well(source, target, tau);
    TrainConfig cfg = o.train;
    cfg.seed = seed;
    Results r;
    const CdaModel cda = fit(cfg, c.source, c.target);
    score(r, cda, c.stats, c.eval, "CDA", tau, seed, "target");
    const CdaModel ablation = fit(cfg, c.source, c.target, 0.0);
    score(r, ablation, c.stats, c.eval, "CDA(lambda=0)", tau, seed, "target");
    slots[i] = std::move(r);
  });
  Results out;
  for (auto& r : slots) append(out, std::move(r));
  return out;
}

Results run_cross_well(const DomainDataset& source, const DomainDataset& target, const ExperimentOptions& o,
                       bool with_policy) {
  check_options(o);
  const std::string split_name = with_policy ? "with_policy" : "without_policy";
  std::vector<Results> slots(o.seeds.size());
  run_cells(o.seeds.size(), o.jobs, [&](std::size_t i) {
    const std::uint64_t seed = o.seeds[i];
    const PreparedCell c = prepare_cross_well(source, target, o.train_well_fraction, seed, with_policy);
    TrainConfig cfg = o.train;
    cfg.seed = seed;
    Results r;
    const CdaModel model = fit(cfg, c.source, c.target);
    score(r, model, c.stats, c.eval, "CDA", o.tau, seed, split_name);
    slots[i] = std::move(r);
  });
  Results out;
  for (auto& r : slots) append(out, std::move(r));
  return out;
}

PolicyRanking rank_policies(const CdaModel& model, DomainTag tag, const Episode& episode, std::size_t start,
                            std::size_t window, std::span<const int> candidates, int reference, double y_scale) {
  if (candidates.empty()) throw std::invalid_argument("rank_policies: empty candidate set");
  if (window == 0) throw std::invalid_argument("rank_policies: window must be positive");
  const auto k = static_cast<int>(model.config().n_treatments);
  for (int z : candidates)
    if (z < 0 || z >= k) throw std::invalid_argument("rank_policies: unknown policy " + std::to_string(z));
  if (reference < 0 || reference >= k) throw std::invalid_argument("rank_policies: unknown reference policy");
  if (start + window >= episode.length())
    throw std::invalid_argument("rank_policies: window [" + std::to_string(start) + ", " +
                                std::to_string(start + window) + "] leaves episode " + episode.id);
  const Episode history = episode.slice(0, start + 1);
  auto outcomes = [&](int z) { return forecast(model, tag, history, std::vector<int>(window, z)).y_hat; };
  const std::vector<double> ref = outcomes(reference);
  PolicyRanking out;
  out.reference = reference;
  out.start = start;
  out.window = window;
  for (int z : candidates) {
    PolicyTrajectory tr;
    tr.policy = z;
    const std::vector<double> y = z == reference ? ref : outcomes(z);
    double acc = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
      tr.cate.push_back((y[i] - ref[i]) * y_scale);
      acc += tr.cate.back();
      tr.cumulative.push_back(acc);
    }
    out.trajectories.push_back(std::move(tr));
  }
  std::vector<std::size_t> idx(out.trajectories.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return out.trajectories[a].increment() > out.trajectories[b].increment();
  });
  for (std::size_t i : idx) out.order.push_back(out.trajectories[i].policy);
  return out;
}

void emit_report(const Results& results, const std::filesystem::path& dir) {
  if (results.rows.empty()) throw std::invalid_argument("report: no results");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  {
    std::ofstream f = open("results.csv");
    f << "method,tau,seed,split,r2,rmse,mae\n";
    for (const auto& r : results.rows)
      f << r.method << ',' << r.tau << ',' << r.seed << ',' << r.split << ',' << format_r2(r.m.r2) << ','
        << num(r.m.rmse) << ',' << num(r.m.mae) << '\n';
    if (!f) throw std::runtime_error("failed writing results.csv");
  }
  {
    std::ofstream f = open("wells.csv");
    f << "method,tau,seed,split,well,r2,rmse,mae\n";
    for (const auto& r : results.wells)
      f << r.method << ',' << r.tau << ',' << r.seed << ',' << r.split << ',' << r.well << ','
        << format_r2(r.m.r2) << ',' << num(r.m.rmse) << ',' << num(r.m.mae) << '\n';
  }
  {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& s : results.series) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& [t, v] : s.points) pts.push_back({t, v});
      j[s.name] = pts;
    }
    std::ofstream f = open("series.json");
    f << j.dump(1) << '\n';
  }
}

std::vector<ResultRow> parse_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "method,tau,seed,split,r2,rmse,mae") throw std::runtime_error("results: unexpected header '" + line + "'");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error("results: bad row '" + line + "'");
    ResultRow r;
    r.method = f[0];
    r.tau = std::stoul(f[1]);
    r.seed = std::stoull(f[2]);
    r.split = f[3];
    if (f[4] != "NA") r.m.r2 = std::stod(f[4]);
    r.m.rmse = std::stod(f[5]);
    r.m.mae = std::stod(f[6]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cda
