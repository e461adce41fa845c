#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cda::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// Property checks over the whole pipeline. Each is a pure function of its seed.
CheckResult gradient_fidelity(std::uint64_t seed);
CheckResult theorem1_bound(std::uint64_t seed, std::size_t trials = 100);
CheckResult domain_loss_identity(std::uint64_t seed, std::size_t toys = 50);
CheckResult attention_contracts(std::uint64_t seed, std::size_t batches = 1000);
CheckResult counterfactual_identity(std::uint64_t seed, std::size_t queries = 1000);
CheckResult cate_recovery(std::uint64_t seed, std::size_t episodes = 2000, std::size_t length = 40);
CheckResult adaptation_benefit(std::uint64_t seed, std::size_t seeds = 5);
CheckResult policy_ranking(std::uint64_t seed, std::size_t eval_episodes = 50);
CheckResult metric_identities(std::uint64_t seed);
CheckResult reproducibility(std::uint64_t seed);
CheckResult data_plumbing(std::uint64_t seed);

struct Check {
  std::string name;
  bool slow = false;  // trains models to convergence
  std::function<CheckResult(std::uint64_t)> run;
};

const std::vector<Check>& registry();

/// Runs `run` and stamps name and wall time; exceptions become failures.
CheckResult timed(const std::string& name, const std::function<CheckResult()>& run);

}  // namespace cda::checks
