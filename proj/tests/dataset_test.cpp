#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include <json.hpp>

#include "cda/dataset.hpp"
#include "cda/rng.hpp"
#include "cda/scm.hpp"

using namespace cda;

namespace {

std::string error_of(const std::string& csv) {
  std::istringstream in(csv);
  try {
    parse_csv(in);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

// Wells with fixed length; treatment k applied once in well i when i % n == k.
DomainDataset synthetic(std::size_t wells, std::size_t length, std::size_t policies_used = 4) {
  DomainDataset d;
  for (std::size_t i = 0; i < wells; ++i) {
    Episode ep;
    ep.id = "w" + std::to_string(i);
    ep.first_month = 1;
    ep.x = Tensor(length, 2);
    for (std::size_t t = 0; t < length; ++t) {
      ep.x(t, 0) = 0.1 * static_cast<double>(t) + static_cast<double>(i);
      ep.x(t, 1) = 1.0 / (1.0 + static_cast<double>(t + i));
      ep.y.push_back(std::sin(static_cast<double>(t + 3 * i)));
      ep.z.push_back(0);
    }
    const std::size_t k = i % (policies_used + 1);
    if (k > 0) ep.z[length / 2] = static_cast<int>(k);
    ep.u = {static_cast<double>(i), -0.5};
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace

TEST(Csv, SmallFileRoundTripsBitExactly) {
  const std::string csv =
      "well_id,month,X1,X2,Z,Y,U1\n"
      "a,0,0.1,1e-300,none,3.141592653589793,7\n"
      "b,5,2,2,fracturing,-0,1\n"
      "a,1,0.30000000000000004,2,pump_replacing,1.5,7\n"
      "a,2,-1,2,none,2.5,7\n"
      "b,6,2,2,none,0.1,1\n"
      "b,7,2,2,sand_controlling,0.2,1\n";
  std::istringstream in(csv);
  const DomainDataset d = parse_csv(in);
  ASSERT_EQ(d.episodes.size(), 2u);
  EXPECT_EQ(d.record_count(), 6u);
  EXPECT_EQ(d.episodes[0].length(), 3u);
  EXPECT_EQ(d.episodes[0].x(1, 0), 0.30000000000000004);
  EXPECT_EQ(d.episodes[0].x(0, 1), 1e-300);
  EXPECT_EQ(d.episodes[0].z, (std::vector<int>{0, 3, 0}));
  EXPECT_EQ(d.episodes[1].first_month, 5);

  std::ostringstream out;
  emit_csv(d, out);
  std::istringstream back(out.str());
  const DomainDataset r = parse_csv(back);
  ASSERT_EQ(r.episodes.size(), d.episodes.size());
  for (std::size_t i = 0; i < d.episodes.size(); ++i) {
    EXPECT_EQ(r.episodes[i].x, d.episodes[i].x);
    EXPECT_EQ(r.episodes[i].y, d.episodes[i].y);
    EXPECT_EQ(r.episodes[i].z, d.episodes[i].z);
    EXPECT_EQ(r.episodes[i].u, d.episodes[i].u);
    EXPECT_EQ(r.episodes[i].first_month, d.episodes[i].first_month);
  }
}

TEST(Csv, SimulatedDatasetRoundTrips) {
  const auto spec = scm::example_spec();
  auto [src, tgt] = scm::make_domain_pair(spec, {}, {.n_source = 6, .n_target = 2, .length = 15}, 1);
  std::ostringstream out;
  emit_csv(src, out);
  std::istringstream in(out.str());
  const DomainDataset r = parse_csv(in, src.policy_vocabulary);
  for (std::size_t i = 0; i < src.episodes.size(); ++i) {
    EXPECT_EQ(r.episodes[i].x, src.episodes[i].x);
    EXPECT_EQ(r.episodes[i].y, src.episodes[i].y);
    EXPECT_EQ(r.episodes[i].u, src.episodes[i].u);
  }
}

TEST(Csv, Errors) {
  EXPECT_EQ(error_of(""), "no records");
  EXPECT_EQ(error_of("well_id,month,X1,Z,Y\n"), "no records");
  EXPECT_NE(error_of("well_id,month,X1,Y\na,0,1,2\n").find("missing column 'Z'"), std::string::npos);
  const auto gap = error_of("well_id,month,X1,Z,Y\na,0,1,none,1\na,2,1,none,1\nb,0,1,none,1\nb,1,1,none,1\n");
  EXPECT_NE(gap.find("non-contiguous"), std::string::npos);
  EXPECT_NE(gap.find("a"), std::string::npos);
  const auto pol = error_of("well_id,month,X1,Z,Y\na,0,1,acidizing,1\na,1,1,none,1\n");
  EXPECT_NE(pol.find("unknown policy 'acidizing'"), std::string::npos);
  EXPECT_NE(pol.find("sand_controlling"), std::string::npos);
  EXPECT_NE(error_of("well_id,month,X1,Z,Y\na,0,x,none,1\na,1,1,none,1\n").find("bad number"), std::string::npos);
  EXPECT_NE(error_of("well_id,month,X1,Z,Y,U1\na,0,1,none,1,0\na,1,1,none,1,2\n").find("static"), std::string::npos);
}

TEST(Csv, CorpusShapeCounts) {
  DomainDataset d = synthetic(1474, 240, 0);
  EXPECT_EQ(d.episodes.size(), 1474u);
  EXPECT_EQ(d.record_count(), 353760u);
}

TEST(Manifest, ReportsChannelsAndCounts) {
  const DomainDataset d = synthetic(5, 10);
  const auto j = nlohmann::json::parse(manifest_json(d));
  EXPECT_EQ(j["records"], 50);
  EXPECT_EQ(j["episodes"], 5);
  EXPECT_EQ(j["channels"]["covariates"].size(), 2u);
  EXPECT_EQ(j["treatment_counts"]["none"], 46);
}

TEST(Normalize, StandardizesAndInvertsExactly) {
  const DomainDataset d = synthetic(10, 30);
  const auto n = normalize(d);
  const NormStats again = compute_norm_stats(n.data.episodes);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(again.x_mean[j], 0.0, 1e-12);
    EXPECT_NEAR(again.x_std[j], 1.0, 1e-12);
  }
  EXPECT_NEAR(again.y_mean, 0.0, 1e-12);
  const DomainDataset back = denormalize(n.data, n.stats);
  for (std::size_t i = 0; i < d.episodes.size(); ++i)
    for (std::size_t t = 0; t < 30; ++t) {
      EXPECT_NEAR(back.episodes[i].x(t, 0), d.episodes[i].x(t, 0), 1e-12);
      EXPECT_NEAR(back.episodes[i].y[t], d.episodes[i].y[t], 1e-12);
    }
  EXPECT_EQ(n.data.episodes[3].z, d.episodes[3].z);
  EXPECT_EQ(n.data.episodes[3].u, d.episodes[3].u);
}

TEST(Normalize, ConstantChannelPassesThrough) {
  DomainDataset d = synthetic(3, 8);
  for (auto& ep : d.episodes)
    for (std::size_t t = 0; t < 8; ++t) ep.x(t, 1) = 4.0;
  const auto n = normalize(d);
  EXPECT_TRUE(n.stats.x_constant[1]);
  EXPECT_EQ(n.data.episodes[0].x(2, 1), 4.0);
}

TEST(Normalize, ChannelCountMismatch) {
  const DomainDataset d = synthetic(3, 8);
  NormStats s = compute_norm_stats(d.episodes);
  s.x_mean.pop_back();
  EXPECT_THROW(normalize(d, s), std::invalid_argument);
}

TEST(Normalize, TargetWithSourceStatsIsOffCenterUnderShift) {
  const auto spec = scm::example_spec();
  scm::DomainShift shift;
  shift.bias_delta = {-3.0, 0.0, 0.0, 0.0, 0.0};
  shift.rate_scale = {1.0, 3.0, 0.0, 0.0, 0.0};
  const auto [src, tgt] = scm::make_domain_pair(spec, shift, {.n_source = 200, .n_target = 200, .length = 30}, 4);
  const auto ns = normalize(src);
  const auto nt = normalize(tgt, ns.stats);
  const NormStats t = compute_norm_stats(nt.data.episodes);
  EXPECT_GT(std::abs(t.y_mean), 0.1);
}

TEST(Split, InsideWellSuffix) {
  const DomainDataset d = synthetic(4, 240);
  const auto r = split(d, {.mode = SplitMode::kInsideWell, .tau = 6});
  ASSERT_EQ(r.train.episodes.size(), 4u);
  EXPECT_EQ(r.train.episodes[0].length(), 234u);
  EXPECT_EQ(r.eval.episodes[0].length(), 6u);
  EXPECT_EQ(r.eval.episodes[2].first_month, 235);
  EXPECT_EQ(r.eval.episodes[2].y[0], d.episodes[2].y[234]);
  try {
    split(d, {.mode = SplitMode::kInsideWell, .tau = 240});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("w0"), std::string::npos);
  }
}

TEST(Split, CrossWellCounting) {
  const DomainDataset d = synthetic(2, 5);
  const auto r = split(d, {.mode = SplitMode::kCrossWell, .train_well_fraction = 0.5, .seed = 3});
  EXPECT_EQ(r.train.episodes.size(), 1u);
  EXPECT_EQ(r.eval.episodes.size(), 1u);
  EXPECT_THROW(split(d, {.mode = SplitMode::kCrossWell, .train_well_fraction = 1.0}), std::invalid_argument);
  EXPECT_THROW(split(d, {.mode = SplitMode::kCrossWell, .train_well_fraction = 0.0}), std::invalid_argument);
}

TEST(Split, PartitionPropertyOverRandomPlans) {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const auto wells = static_cast<std::size_t>(draw_uniform(rng, 2, 15));
    const auto length = static_cast<std::size_t>(draw_uniform(rng, 3, 20));
    const DomainDataset d = synthetic(wells, length);
    SplitPlan plan;
    plan.seed = static_cast<std::uint64_t>(trial);
    if (trial % 2 == 0) {
      plan.mode = SplitMode::kInsideWell;
      plan.tau = static_cast<std::size_t>(draw_uniform(rng, 1, static_cast<double>(length)));
    } else {
      plan.mode = SplitMode::kCrossWell;
      plan.train_well_fraction = draw_uniform(rng, 0.05, 0.95);
    }
    const auto r = split(d, plan);
    std::set<std::pair<std::string, int>> all, tr, ev;
    for (const auto& ep : d.episodes)
      for (std::size_t t = 0; t < ep.length(); ++t) all.insert({ep.id, ep.first_month + static_cast<int>(t)});
    for (const auto& ep : r.train.episodes)
      for (std::size_t t = 0; t < ep.length(); ++t) tr.insert({ep.id, ep.first_month + static_cast<int>(t)});
    for (const auto& ep : r.eval.episodes)
      for (std::size_t t = 0; t < ep.length(); ++t) ev.insert({ep.id, ep.first_month + static_cast<int>(t)});
    std::set<std::pair<std::string, int>> both(tr);
    both.insert(ev.begin(), ev.end());
    EXPECT_EQ(both, all);
    EXPECT_EQ(tr.size() + ev.size(), all.size());
  }
}

TEST(Split, StatsRecomputedFromTrainingRowsMatch) {
  const DomainDataset d = synthetic(6, 20);
  const auto r = split(d, {.mode = SplitMode::kInsideWell, .tau = 6});
  const auto n = normalize(r.train);
  EXPECT_EQ(compute_norm_stats(r.train.episodes), n.stats);
  EXPECT_EQ(*n.data.norm, n.stats);
}

TEST(PolicyPartition, CorpusPartitionSizes) {
  DomainDataset d;
  auto add = [&](std::size_t n, int policy) {
    for (std::size_t i = 0; i < n; ++i) {
      Episode ep;
      ep.id = "p" + std::to_string(policy) + "_" + std::to_string(i);
      ep.x = Tensor(240, 1);
      ep.y.assign(240, 0.0);
      ep.z.assign(240, 0);
      ep.z[100] = policy;
      d.episodes.push_back(std::move(ep));
    }
  };
  add(975, 1);
  add(424, 2);
  add(19, 3);
  add(56, 4);
  const auto p = policy_partition(d);
  EXPECT_EQ(p.well_counts.at("sand_controlling"), 975u);
  EXPECT_EQ(p.record_counts.at("sand_controlling"), 234000u);
  EXPECT_EQ(p.well_counts.at("perforation_adding"), 424u);
  EXPECT_EQ(p.record_counts.at("perforation_adding"), 101760u);
  EXPECT_EQ(p.well_counts.at("pump_replacing"), 19u);
  EXPECT_EQ(p.record_counts.at("pump_replacing"), 4560u);
  EXPECT_EQ(p.well_counts.at("fracturing"), 56u);
  EXPECT_EQ(p.record_counts.at("fracturing"), 13440u);
  EXPECT_EQ(d.record_count(), 353760u);
}

TEST(PolicyPartition, UntreatedDatasetHasEmptyPartitions) {
  const auto p = policy_partition(synthetic(5, 6, 0));
  EXPECT_EQ(p.parts.size(), 4u);
  for (const auto& [name, n] : p.well_counts) EXPECT_EQ(n, 0u) << name;
}

TEST(PolicyPartition, RecordCountsSumToTreatedRecords) {
  const DomainDataset d = synthetic(30, 9, 3);
  const auto p = policy_partition(d);
  std::size_t sum = 0;
  for (const auto& [name, n] : p.record_counts) sum += n;
  std::size_t treated = 0;
  for (const auto& ep : d.episodes)
    if (std::any_of(ep.z.begin(), ep.z.end(), [](int z) { return z != 0; })) treated += ep.length();
  EXPECT_EQ(sum, treated);
}
