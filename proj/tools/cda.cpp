#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cda/checks.hpp"
#include "cda/config.hpp"
#include "cda/eval.hpp"
#include "cda/scm.hpp"
#include "cda/trainer.hpp"

namespace fs = std::filesystem;
using namespace cda;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool print_config = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "run config JSON")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "override a config field, e.g. train.lambda=0");
  app->add_option("--seed", c.seed, "run seed (default: $CDA_SEED, then the config)");
  app->add_flag("--print-config", c.print_config, "print the fully materialized config and exit");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

RunConfig resolve(const Common& c) {
  RunConfig rc = c.config_path.empty() ? RunConfig{} : run_config_from_json(slurp(c.config_path));
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects path=value, got '" + o + "'");
    apply_override(rc, o.substr(0, eq), o.substr(eq + 1));
  }
  if (c.seed) {
    rc.seed = *c.seed;
  } else if (const char* env = std::getenv("CDA_SEED"); env && *env) {
    rc.seed = std::stoull(env);
  }
  rc.train.seed = rc.seed;
  return rc;
}

struct Domains {
  DomainDataset raw_source, raw_target;
  DomainDataset source, target;  // normalized with source statistics
  NormStats stats;
};

Domains prepare(const RunConfig& rc) {
  Domains d;
  std::tie(d.raw_source, d.raw_target) = load_domains(rc);
  Normalized ns = normalize(d.raw_source);
  d.target = normalize(d.raw_target, ns.stats).data;
  d.source = std::move(ns.data);
  d.stats = ns.stats;
  return d;
}

std::string hex_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) h = (h ^ ch) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int cmd_simulate(const RunConfig& base, std::optional<std::size_t> episodes, std::optional<std::size_t> target_episodes,
                 std::optional<std::size_t> length, const std::string& out, const std::string& target_out,
                 const std::string& spec_out) {
  RunConfig rc = base;
  rc.data = {};
  if (episodes) rc.scm.n_source = *episodes;
  if (target_episodes) rc.scm.n_target = *target_episodes;
  if (length) rc.scm.length = *length;
  const auto [source, target] = load_domains(rc);
  write_csv(source, out);
  std::cout << "wrote " << source.episodes.size() << " episodes, " << source.record_count() << " records to " << out
            << "\n";
  if (!target_out.empty()) {
    write_csv(target, target_out);
    std::cout << "wrote " << target.episodes.size() << " episodes, " << target.record_count() << " records to "
              << target_out << "\n";
  }
  if (!spec_out.empty()) spit(spec_out, scm::to_json(build_spec(rc.scm, rc.seed)) + "\n");
  return 0;
}

int cmd_ingest(const RunConfig& rc, const std::string& path) {
  const auto& vocab = rc.data.policy_vocabulary.empty() ? default_policy_vocabulary() : rc.data.policy_vocabulary;
  std::cout << manifest_json(ingest_csv(path, vocab)) << "\n";
  return 0;
}

int cmd_train(RunConfig rc, std::string dir, bool resume) {
  if (dir.empty()) dir = "runs/run-" + hex_hash(to_json(rc));
  fs::create_directories(dir);
  const fs::path ckpt = fs::path(dir) / "checkpoint.ckpt";
  const Domains d = prepare(rc);
  std::optional<Trainer> trainer;
  if (resume && fs::exists(ckpt)) {
    trainer.emplace(Trainer::resume(ckpt, d.source, d.target));
  } else {
    spit(fs::path(dir) / "config.json", to_json(rc) + "\n");
    rc.train.checkpoint_path = ckpt.string();
    trainer.emplace(rc.train, d.source, d.target);
  }
  std::ofstream log(fs::path(dir) / "log.jsonl", resume ? std::ios::app : std::ios::trunc);
  trainer->run(&log);
  const LossBreakdown& last = trainer->state().history.back();
  std::cout << "trained " << trainer->state().step << " steps; final total " << last.total << "; run directory "
            << dir << "\n";
  return 0;
}

int cmd_eval(const RunConfig& rc, bool cross, const std::string& condition, const std::string& out,
             std::optional<std::size_t> jobs) {
  const auto [source, target] = load_domains(rc);
  ExperimentOptions o;
  o.train = rc.train;
  o.taus = rc.eval.taus;
  o.seeds = rc.eval.seeds;
  o.jobs = jobs.value_or(rc.eval.jobs);
  o.train_well_fraction = rc.eval.train_well_fraction;
  o.tau = rc.eval.taus.empty() ? o.tau : rc.eval.taus.front();
  Results results;
  if (!cross) {
    results = run_inside_well(source, target, o);
  } else {
    for (bool with : {true, false}) {
      if ((with && condition == "without") || (!with && condition == "with")) continue;
      Results r = run_cross_well(source, target, o, with);
      for (auto& v : r.rows) results.rows.push_back(std::move(v));
      for (auto& v : r.wells) results.wells.push_back(std::move(v));
      for (auto& v : r.series) results.series.push_back(std::move(v));
    }
  }
  emit_report(results, out);
  std::cout << slurp(fs::path(out) / "results.csv");
  return 0;
}

int cmd_rank(const std::string& run_dir, const std::optional<std::string>& episode_id, std::optional<std::size_t> start,
             const std::string& out) {
  const RunConfig rc = run_config_from_json(slurp(fs::path(run_dir) / "config.json"));
  const Domains d = prepare(rc);
  const Trainer trainer = Trainer::resume(fs::path(run_dir) / "checkpoint.ckpt", d.source, d.target);
  const CdaModel& model = trainer.state().model;
  const std::size_t lag = rc.data.source_csv.empty() ? rc.scm.lag : 0;
  const std::size_t window = rc.eval.rank_window ? rc.eval.rank_window : lag + model.config().window;
  std::vector<int> candidates = rc.eval.candidates;
  if (candidates.empty())
    for (int z = 0; z < static_cast<int>(model.config().n_treatments); ++z)
      if (z != rc.eval.reference) candidates.push_back(z);

  nlohmann::json doc = nlohmann::json::array();
  std::size_t ranked = 0;
  for (const Episode& ep : d.target.episodes) {
    if (episode_id ? ep.id != *episode_id : ranked >= rc.eval.rank_episodes) continue;
    if (ep.length() <= window) continue;
    std::size_t s = start.value_or(0);
    if (!start) {
      // First treated step with a full window after it.
      while (s + window < ep.length() && ep.z[s] == 0) ++s;
      if (s + window >= ep.length()) s = ep.length() - window - 1;
    }
    const PolicyRanking r =
        rank_policies(model, DomainTag::kTarget, ep, s, window, candidates, rc.eval.reference, d.stats.y_std);
    nlohmann::json e = {{"episode", ep.id}, {"start", s}, {"window", window}, {"reference", r.reference},
                        {"order", r.order}};
    for (const auto& tr : r.trajectories)
      e["trajectories"].push_back({{"policy", tr.policy}, {"cate", tr.cate}, {"cumulative", tr.cumulative}});
    doc.push_back(std::move(e));
    ++ranked;
  }
  if (episode_id && doc.empty()) throw std::invalid_argument("rank-policies: no target episode '" + *episode_id + "'");
  if (out.empty()) {
    std::cout << doc.dump(1) << "\n";
  } else {
    spit(out, doc.dump(1) + "\n");
    std::cout << "ranked " << doc.size() << " episodes into " << out << "\n";
  }
  return 0;
}

int cmd_check(std::uint64_t seed, bool all, const std::vector<std::string>& only) {
  std::vector<std::string> failed;
  for (const auto& c : checks::registry()) {
    if (!only.empty() ? std::find(only.begin(), only.end(), c.name) == only.end() : c.slow && !all) continue;
    const auto r = checks::timed(c.name, [&] { return c.run(seed); });
    std::printf("%s %-24s %s\n", r.pass ? "pass" : "FAIL", r.name.c_str(), r.detail.c_str());
    std::fflush(stdout);
    if (!r.pass) failed.push_back(r.name);
  }
  if (failed.empty()) return 0;
  std::string names;
  for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
  std::fprintf(stderr, "failed checks: %s\n", names.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Treatment-aware time-series forecasting with causal domain adaptation"};
  app.require_subcommand(1);
  Common common;

  auto* simulate = app.add_subcommand("simulate", "draw a source/target domain pair from the simulator");
  add_common(simulate, common);
  std::optional<std::size_t> episodes, target_episodes, length;
  std::string out, target_out, spec_out;
  simulate->add_option("--episodes", episodes, "source episodes (scm.n_source)");
  simulate->add_option("--target-episodes", target_episodes, "target episodes (scm.n_target)");
  simulate->add_option("--length", length, "steps per episode (scm.length)");
  simulate->add_option("-o,--output", out, "source CSV")->required();
  simulate->add_option("--target-output", target_out, "target CSV");
  simulate->add_option("--spec-output", spec_out, "simulator spec JSON");

  auto* ingest = app.add_subcommand("ingest", "validate a CSV file and print its manifest");
  add_common(ingest, common);
  std::string ingest_path;
  ingest->add_option("file", ingest_path, "records CSV")->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "train one model into a run directory");
  add_common(train, common);
  std::string run_dir;
  bool resume = false;
  train->add_option("-o,--output", run_dir, "run directory (default: runs/run-<config hash>)");
  train->add_flag("--resume", resume, "continue from the run directory's checkpoint");

  auto* eval = app.add_subcommand("eval", "run an evaluation protocol");
  eval->require_subcommand(1);
  std::optional<std::size_t> jobs;
  std::string report = "report", condition = "both";
  auto* inside = eval->add_subcommand("inside-well", "forecast the held-out suffix of every target well");
  auto* cross = eval->add_subcommand("cross-well", "forecast held-out target wells");
  for (auto* sub : {inside, cross}) {
    add_common(sub, common);
    sub->add_option("--jobs", jobs, "parallel experiment cells (eval.jobs)");
    sub->add_option("-o,--output", report, "report directory");
  }
  cross->add_option("--condition", condition, "source policy knowledge: with, without or both")
      ->check(CLI::IsMember({"with", "without", "both"}));

  auto* rank = app.add_subcommand("rank-policies", "rank candidate policies with a trained run");
  std::string rank_run, rank_out;
  std::optional<std::string> rank_episode;
  std::optional<std::size_t> rank_start;
  rank->add_option("--run", rank_run, "run directory written by train")->required()->check(CLI::ExistingDirectory);
  rank->add_option("--episode", rank_episode, "target episode id (default: the first eval.rank_episodes)");
  rank->add_option("--start", rank_start, "first step of the policy window");
  rank->add_option("-o,--output", rank_out, "output JSON");

  auto* check = app.add_subcommand("check", "run the built-in property checks");
  add_common(check, common);
  bool check_all = false;
  std::vector<std::string> check_only;
  check->add_flag("--all", check_all, "include the checks that train models");
  check->add_option("--only", check_only, "run just these checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (rank->parsed()) return cmd_rank(rank_run, rank_episode, rank_start, rank_out);
    const RunConfig rc = resolve(common);
    if (common.print_config) {
      std::cout << to_json(rc) << "\n";
      return 0;
    }
    if (simulate->parsed()) return cmd_simulate(rc, episodes, target_episodes, length, out, target_out, spec_out);
    if (ingest->parsed()) return cmd_ingest(rc, ingest_path);
    if (train->parsed()) return cmd_train(rc, run_dir, resume);
    if (inside->parsed()) return cmd_eval(rc, false, condition, report, jobs);
    if (cross->parsed()) return cmd_eval(rc, true, condition, report, jobs);
    if (check->parsed()) return cmd_check(rc.seed, check_all, check_only);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
