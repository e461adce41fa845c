#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

Outcome cda(const std::string& args) {
  const std::string cmd = std::string(CDA_BINARY) + " " + args + " 2>/dev/null";
  Outcome r;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("cda_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

const std::string kSmall =
    "--set scm.n_source=8 --set scm.n_target=3 --set scm.length=16 --set train.epochs=2 --set train.batch_size=4 "
    "--set model.d_h=6 --set model.window=3";

}  // namespace

TEST_F(Cli, SimulateThenIngestCounts) {
  ASSERT_EQ(cda("simulate --episodes 20 --length 40 --seed 1 -o " + at("d.csv")).code, 0);
  const Outcome r = cda("ingest " + at("d.csv"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["episodes"], 20);
  EXPECT_EQ(j["records"], 800);
}

TEST_F(Cli, SimulationIsAFunctionOfTheSeed) {
  ASSERT_EQ(cda("simulate --episodes 5 --length 10 --seed 3 -o " + at("a.csv")).code, 0);
  ASSERT_EQ(cda("simulate --episodes 5 --length 10 --seed 3 -o " + at("b.csv")).code, 0);
  ASSERT_EQ(cda("simulate --episodes 5 --length 10 --seed 4 -o " + at("c.csv")).code, 0);
  EXPECT_EQ(slurp(at("a.csv")), slurp(at("b.csv")));
  EXPECT_NE(slurp(at("a.csv")), slurp(at("c.csv")));
  setenv("CDA_SEED", "3", 1);
  ASSERT_EQ(cda("simulate --episodes 5 --length 10 -o " + at("d.csv")).code, 0);
  unsetenv("CDA_SEED");
  EXPECT_EQ(slurp(at("a.csv")), slurp(at("d.csv")));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cda("train --no-such-flag").code, 2);
  EXPECT_EQ(cda("frobnicate").code, 2);
  EXPECT_EQ(cda("").code, 2);
  EXPECT_EQ(cda("simulate --episodes 3").code, 2);
}

TEST_F(Cli, BadConfigIsAStructuredError) {
  std::ofstream(at("bad.json")) << R"({"train": {"lamda": 1}})";
  EXPECT_EQ(cda("train --config " + at("bad.json")).code, 1);
  EXPECT_EQ(cda("train --set train.nope=1 --print-config").code, 1);
}

TEST_F(Cli, PrintedConfigReproducesItself) {
  const Outcome a = cda("train --seed 11 --set train.lambda=0.5 --set eval.taus=[6] --print-config");
  ASSERT_EQ(a.code, 0);
  std::ofstream(at("c.json")) << a.out;
  const Outcome b = cda("train --config " + at("c.json") + " --print-config");
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["seed"], 11);
  EXPECT_EQ(j["train"]["lambda"], 0.5);
}

TEST_F(Cli, TrainRunsAreReproducibleAndDistinct) {
  ASSERT_EQ(cda("train --seed 2 " + kSmall + " -o " + at("a")).code, 0);
  ASSERT_EQ(cda("train --seed 2 " + kSmall + " -o " + at("b")).code, 0);
  EXPECT_EQ(slurp(at("a/log.jsonl")), slurp(at("b/log.jsonl")));
  EXPECT_FALSE(slurp(at("a/log.jsonl")).empty());
  EXPECT_EQ(slurp(at("a/config.json")), slurp(at("b/config.json")));

  // Default run directories are keyed by the config.
  const std::string cwd = fs::current_path().string();
  fs::current_path(dir);
  ASSERT_EQ(cda("train --seed 2 " + kSmall).code, 0);
  ASSERT_EQ(cda("train --seed 2 " + kSmall + " --set train.lambda=0").code, 0);
  fs::current_path(cwd);
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(dir / "runs")) runs.push_back(e.path());
  ASSERT_EQ(runs.size(), 2u);
  EXPECT_NE(slurp(runs[0] / "log.jsonl"), slurp(runs[1] / "log.jsonl"));
}

TEST_F(Cli, RankPoliciesFromATrainedRun) {
  ASSERT_EQ(cda("train --seed 5 " + kSmall + " --set eval.rank_window=4 -o " + at("run")).code, 0);
  const Outcome r = cda("rank-policies --run " + at("run"));
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j.size(), 3u);
  for (const auto& e : j) {
    EXPECT_EQ(e["window"], 4);
    EXPECT_EQ(e["trajectories"].size(), 4u);
    EXPECT_EQ(e["order"].size(), 4u);
  }
}

TEST_F(Cli, EvalWritesReports) {
  const std::string small = kSmall + " --set eval.taus=[4] --set eval.seeds=[0]";
  ASSERT_EQ(cda("eval inside-well " + small + " --jobs 2 -o " + at("in")).code, 0);
  EXPECT_TRUE(fs::exists(at("in/results.csv")));
  EXPECT_TRUE(fs::exists(at("in/series.json")));
  const Outcome c = cda("eval cross-well " + small + " -o " + at("cross"));
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(c.out.find("with_policy"), std::string::npos);
  EXPECT_NE(c.out.find("without_policy"), std::string::npos);
}

TEST_F(Cli, CheckListsProperties) {
  const Outcome r = cda("check --seed 7 --only metric_identities --only domain_loss_identity");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("pass metric_identities"), std::string::npos);
  EXPECT_NE(r.out.find("pass domain_loss_identity"), std::string::npos);
}
