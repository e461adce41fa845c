#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cda/eval.hpp"
#include "cda/scm.hpp"
#include "test_util.hpp"

using namespace cda;

namespace {

std::pair<DomainDataset, DomainDataset> world(std::size_t n_treatments, std::size_t n_source, std::size_t n_target,
                                              std::size_t length, std::uint64_t seed, bool control_only = false) {
  scm::ExampleSpecOptions o;
  o.d_x = 2;
  o.n_treatments = n_treatments;
  o.u_dim = 1;
  scm::ScmSpec spec = scm::example_spec(o);
  scm::DomainShift shift;
  shift.bias_delta.assign(n_treatments, 0.0);
  shift.bias_delta[1] = 1.0;
  if (control_only) {
    spec.policy.available.assign(n_treatments, false);
    spec.policy.available[0] = true;
  }
  return scm::make_domain_pair(spec, shift, {n_source, n_target, length}, seed);
}

ExperimentOptions quick_options() {
  ExperimentOptions o;
  o.train.model = cda::testing::toy_config(0, 0, 0);
  o.train.epochs = 2;
  o.train.batch_size = 4;
  o.seeds = {0, 1};
  return o;
}

}  // namespace

TEST(Metrics, PerfectFit) {
  const std::vector<double> y = {1.0, 2.0, 4.0};
  const MetricSet m = metrics(y, y);
  EXPECT_EQ(*m.r2, 1.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.n, 3u);
}

TEST(Metrics, MeanPredictorHasZeroR2) {
  const std::vector<double> y = {1.0, 2.0, 6.0}, mean(3, 3.0);
  EXPECT_NEAR(*metrics(y, mean).r2, 0.0, 1e-15);
}

TEST(Metrics, HandComputedErrors) {
  const std::vector<double> y = {0.0, 0.0}, p = {3.0, 4.0};
  const MetricSet m = metrics(y, p);
  EXPECT_NEAR(m.rmse, std::sqrt(12.5), 1e-12);
  EXPECT_NEAR(m.mae, 3.5, 1e-12);
  EXPECT_FALSE(m.r2.has_value());
  EXPECT_EQ(format_r2(m.r2), "NA");
  const std::vector<double> y2 = {1.0, 2.0, 3.0, 4.0}, p2 = {2.0, 2.0, 2.0, 2.0};
  const MetricSet m2 = metrics(y2, p2);
  EXPECT_NEAR(m2.rmse, std::sqrt(6.0 / 4.0), 1e-12);
  EXPECT_NEAR(m2.mae, 1.0, 1e-12);
  EXPECT_NEAR(*m2.r2, 1.0 - 6.0 / 5.0, 1e-12);
}

TEST(Metrics, OrderInvarianceAndErrors) {
  const std::vector<double> y = {0.5, -1.0, 2.0, 3.5}, p = {0.0, -0.5, 2.5, 3.0};
  const std::vector<double> yr = {3.5, 2.0, 0.5, -1.0}, pr = {3.0, 2.5, 0.0, -0.5};
  const MetricSet a = metrics(y, p), b = metrics(yr, pr);
  EXPECT_NEAR(*a.r2, *b.r2, 1e-15);
  EXPECT_NEAR(a.rmse, b.rmse, 1e-15);
  EXPECT_NEAR(a.mae, b.mae, 1e-15);
  EXPECT_THROW(metrics(y, std::vector<double>{1.0}), std::invalid_argument);
  EXPECT_THROW(metrics(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST(Metrics, MeanOverWellsIsUnweighted) {
  MetricSet a, b;
  a.r2 = 0.5;
  a.rmse = 1.0;
  a.mae = 2.0;
  a.n = 10;
  b.rmse = 3.0;
  b.mae = 4.0;
  b.n = 2;
  const std::vector<MetricSet> ms = {a, b};
  const MetricSet m = mean_metrics(ms);
  EXPECT_EQ(m.rmse, 2.0);
  EXPECT_EQ(m.mae, 3.0);
  EXPECT_EQ(*m.r2, 0.5);
  EXPECT_EQ(m.n, 12u);
}

TEST(Evaluate, OraclePredictorScoresPerfectly) {
  auto [src, tgt] = world(3, 6, 4, 20, 1);
  for (std::size_t tau : {6u, 3u}) {
    const PreparedCell c = prepare_inside_well(src, tgt, tau);
    const DomainDataset truth = normalize(tgt, c.stats).data;
    std::size_t calls = 0;
    const SuffixPredictor oracle = [&](const Episode& history, const std::vector<int>& future) {
      const Episode& full = truth.episodes[calls++];
      EXPECT_EQ(history.length() + tau, full.length());
      EXPECT_EQ(future.size(), tau);
      return std::vector<double>(full.y.end() - static_cast<std::ptrdiff_t>(tau), full.y.end());
    };
    std::vector<Series> curves;
    const auto wells = evaluate_suffix(oracle, c.stats, c.eval, tau, &curves, "oracle");
    ASSERT_EQ(wells.size(), tgt.episodes.size());
    for (const auto& [id, m] : wells) {
      EXPECT_NEAR(*m.r2, 1.0, 1e-12) << id;
      EXPECT_NEAR(m.rmse, 0.0, 1e-12);
    }
    ASSERT_EQ(curves.size(), 2u);
    EXPECT_EQ(curves[0].points.size(), tau);
  }
}

TEST(Evaluate, HeldOutSuffixNeverReachesTraining) {
  auto [src, tgt] = world(3, 6, 4, 20, 2);
  const PreparedCell clean = prepare_inside_well(src, tgt, 5);
  for (auto* d : {&src, &tgt})
    for (auto& ep : d->episodes)
      for (std::size_t t = ep.length() - 5; t < ep.length(); ++t) {
        ep.y[t] = 1e6;
        ep.x(t, 0) = -1e6;
      }
  const PreparedCell dirty = prepare_inside_well(src, tgt, 5);
  EXPECT_EQ(clean.stats, dirty.stats);
  ASSERT_EQ(clean.source.episodes.size(), dirty.source.episodes.size());
  for (std::size_t i = 0; i < clean.source.episodes.size(); ++i) {
    EXPECT_EQ(clean.source.episodes[i].x, dirty.source.episodes[i].x);
    EXPECT_EQ(clean.source.episodes[i].y, dirty.source.episodes[i].y);
  }
  for (std::size_t i = 0; i < clean.target.episodes.size(); ++i) EXPECT_EQ(clean.target.episodes[i].y, dirty.target.episodes[i].y);
}

TEST(Evaluate, HeldOutWellsNeverReachTraining) {
  auto [src, tgt] = world(3, 6, 8, 12, 3);
  const PreparedCell c = prepare_cross_well(src, tgt, 0.5, 4, true);
  EXPECT_EQ(c.target.episodes.size() + c.eval.size(), tgt.episodes.size());
  for (const auto& held : c.eval)
    for (const auto& used : c.target.episodes) EXPECT_NE(held.id, used.id);
  EXPECT_EQ(c.stats, compute_norm_stats(src.episodes));
}

TEST(Experiments, InsideWellTableShape) {
  auto [src, tgt] = world(3, 6, 3, 16, 4);
  ExperimentOptions o = quick_options();
  o.taus = {6, 3};
  o.jobs = 2;
  const Results r = run_inside_well(src, tgt, o);
  ASSERT_EQ(r.rows.size(), 2u * 2u * 2u);
  std::set<std::size_t> taus;
  std::set<std::string> methods;
  for (const auto& row : r.rows) {
    taus.insert(row.tau);
    methods.insert(row.method);
    EXPECT_EQ(row.split, "target");
    EXPECT_GE(row.m.rmse, 0.0);
  }
  EXPECT_EQ(taus, (std::set<std::size_t>{3, 6}));
  EXPECT_EQ(methods, (std::set<std::string>{"CDA", "CDA(lambda=0)"}));
  EXPECT_EQ(r.wells.size(), r.rows.size() * tgt.episodes.size());

  o.jobs = 1;
  const Results serial = run_inside_well(src, tgt, o);
  for (std::size_t i = 0; i < r.rows.size(); ++i) EXPECT_EQ(r.rows[i].m.rmse, serial.rows[i].m.rmse);
}

TEST(Experiments, CrossWellConditionsCoincideWithoutTreatment) {
  auto [src, tgt] = world(2, 6, 6, 16, 5, true);
  ExperimentOptions o = quick_options();
  o.tau = 4;
  const Results with = run_cross_well(src, tgt, o, true), without = run_cross_well(src, tgt, o, false);
  ASSERT_EQ(with.rows.size(), without.rows.size());
  for (std::size_t i = 0; i < with.rows.size(); ++i) {
    EXPECT_EQ(with.rows[i].split, "with_policy");
    EXPECT_EQ(without.rows[i].split, "without_policy");
    EXPECT_EQ(with.rows[i].m.rmse, without.rows[i].m.rmse);
    EXPECT_EQ(with.rows[i].m.r2, without.rows[i].m.r2);
  }
}

TEST(Experiments, EmptySeedListIsError) {
  auto [src, tgt] = world(3, 4, 3, 12, 6);
  ExperimentOptions o = quick_options();
  o.seeds.clear();
  o.taus = {3};
  EXPECT_THROW(run_inside_well(src, tgt, o), std::invalid_argument);
  EXPECT_THROW(run_cross_well(src, tgt, o, true), std::invalid_argument);
}

TEST(Ranking, SelfContrastAntisymmetryAndOrder) {
  const auto cfg = cda::testing::toy_config();
  const CdaModel model(cfg, 3);
  const auto eps = cda::testing::random_episodes(1, 12, cfg.d_x, cfg.n_treatments, cfg.u_dim, 8);
  const std::vector<int> all = {0, 1, 2};
  const PolicyRanking r = rank_policies(model, DomainTag::kTarget, eps[0], 4, 5, all, 0);
  ASSERT_EQ(r.trajectories.size(), 3u);
  for (double v : r.trajectories[0].cate) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.trajectories[0].increment(), 0.0);
  for (const auto& tr : r.trajectories) EXPECT_EQ(tr.cate.size(), 5u);
  for (std::size_t i = 0; i + 1 < r.order.size(); ++i) {
    auto inc = [&](int z) { return r.trajectories[static_cast<std::size_t>(z)].increment(); };
    EXPECT_GE(inc(r.order[i]), inc(r.order[i + 1]));
  }
  const std::vector<int> one = {2}, zero = {1};
  const PolicyRanking ab = rank_policies(model, DomainTag::kTarget, eps[0], 4, 5, one, 1);
  const PolicyRanking ba = rank_policies(model, DomainTag::kTarget, eps[0], 4, 5, zero, 2);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(ab.trajectories[0].cate[i], -ba.trajectories[0].cate[i]);

  EXPECT_THROW(rank_policies(model, DomainTag::kTarget, eps[0], 4, 5, {}, 0), std::invalid_argument);
  EXPECT_THROW(rank_policies(model, DomainTag::kTarget, eps[0], 8, 5, all, 0), std::invalid_argument);
}

TEST(Report, CsvRoundTripAndSeries) {
  Results r;
  MetricSet m;
  m.r2 = 0.1234567890123456789;
  m.rmse = 1.0 / 3.0;
  m.mae = 2e-17;
  r.rows.push_back({"CDA", 12, 3, "target", m});
  m.r2.reset();
  r.rows.push_back({"CDA(lambda=0)", 6, 4, "target", m});
  r.series.push_back({"cate/1", {{4.0, 0.5}, {5.0, 0.25}}});
  const auto dir = std::filesystem::temp_directory_path() / "cda_report_test";
  emit_report(r, dir);
  const auto back = parse_results_csv(dir / "results.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].m.r2, r.rows[0].m.r2);
  EXPECT_EQ(back[0].m.rmse, r.rows[0].m.rmse);
  EXPECT_EQ(back[0].m.mae, r.rows[0].m.mae);
  EXPECT_FALSE(back[1].m.r2.has_value());
  EXPECT_EQ(back[1].method, "CDA(lambda=0)");
  std::ifstream js(dir / "series.json");
  const auto j = nlohmann::json::parse(js);
  EXPECT_EQ(j.at("cate/1").size(), 2u);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(emit_report(Results{}, dir), std::invalid_argument);
}
