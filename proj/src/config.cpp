#include "cda/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cda {
namespace {

using nlohmann::json;

template <class F>
void fields(ModelConfig& c, F&& f) {
  f("d_x", c.d_x);
  f("n_treatments", c.n_treatments);
  f("u_dim", c.u_dim);
  f("d_h", c.d_h);
  f("d_e", c.d_e);
  f("d_k", c.d_k);
  f("window", c.window);
  f("interaction_rank", c.interaction_rank);
  f("disc_hidden", c.disc_hidden);
  f("cell", c.cell);
  f("separate_generators", c.separate_generators);
}

template <class F>
void fields(OptimizerConfig& c, F&& f) {
  f("kind", c.kind);
  f("learning_rate", c.learning_rate);
  f("momentum", c.momentum);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("epsilon", c.epsilon);
}

template <class F>
void fields(TrainConfig& c, F&& f) {
  f("epochs", c.epochs);
  f("batch_size", c.batch_size);
  f("segment_length", c.segment_length);
  f("horizon", c.horizon);
  f("generator", c.generator);
  f("discriminator", c.discriminator);
  f("lambda", c.lambda);
  f("warmup_fraction", c.warmup_fraction);
  f("domain_loss", c.domain_loss);
  f("lambda_sign", c.lambda_sign);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("beta3", c.beta3);
  f("beta4", c.beta4);
  f("gamma", c.gamma);
  f("condition", c.condition);
  f("aux_weight", c.aux_weight);
  f("clip_norm", c.clip_norm);
  f("no_attention", c.no_attention);
  f("log_wall_time", c.log_wall_time);
  f("checkpoint_every", c.checkpoint_every);
  f("checkpoint_path", c.checkpoint_path);
}

template <class F>
void fields(SimConfig& c, F&& f) {
  f("d_x", c.d_x);
  f("n_treatments", c.n_treatments);
  f("u_dim", c.u_dim);
  f("lag", c.lag);
  f("nonlinear", c.nonlinear);
  f("noise", c.noise);
  f("spec_path", c.spec_path);
  f("n_source", c.n_source);
  f("n_target", c.n_target);
  f("length", c.length);
  f("target_rate_scale", c.target_rate_scale);
  f("target_bias_delta", c.target_bias_delta);
  f("target_slope_delta", c.target_slope_delta);
}

template <class F>
void fields(DataConfig& c, F&& f) {
  f("source_csv", c.source_csv);
  f("target_csv", c.target_csv);
  f("policy_vocabulary", c.policy_vocabulary);
}

template <class F>
void fields(EvalConfig& c, F&& f) {
  f("taus", c.taus);
  f("seeds", c.seeds);
  f("train_well_fraction", c.train_well_fraction);
  f("rank_window", c.rank_window);
  f("candidates", c.candidates);
  f("reference", c.reference);
  f("rank_episodes", c.rank_episodes);
  f("jobs", c.jobs);
}

template <class T>
concept Section = requires(T& t) { fields(t, [](const char*, auto&) {}); };

struct Writer {
  json& out;
  template <class T>
  void operator()(const char* key, T& v) const {
    if constexpr (Section<T>) {
      json sub = json::object();
      fields(v, Writer{sub});
      out[key] = sub;
    } else {
      out[key] = v;
    }
  }
};

struct Reader {
  const json& in;
  std::string where;

  template <class T>
  void operator()(const char* key, T& v) const {
    auto it = in.find(key);
    if (it == in.end()) return;
    const std::string path = where.empty() ? key : where + "." + key;
    if constexpr (Section<T>) {
      read_section(*it, v, path);
    } else {
      try {
        v = it->template get<T>();
      } catch (const json::exception&) {
        throw std::invalid_argument("config: bad value for '" + path + "': " + it->dump());
      }
    }
  }

  template <class T>
  static void read_section(const json& j, T& v, const std::string& path) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + path + "' must be an object");
    std::set<std::string> known;
    fields(v, [&](const char* key, auto&) { known.insert(key); });
    for (const auto& [key, value] : j.items())
      if (!known.count(key))
        throw std::invalid_argument("config: unknown key '" + (path.empty() ? key : path + "." + key) + "'");
    fields(v, Reader{j, path});
  }
};

json to_tree(RunConfig& c) {
  json j = json::object();
  j["seed"] = c.seed;
  Writer w{j};
  w("scm", c.scm);
  w("data", c.data);
  w("model", c.train.model);
  w("train", c.train);
  w("eval", c.eval);
  return j;
}

RunConfig from_tree(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  static const std::set<std::string> sections = {"seed", "scm", "data", "model", "train", "eval"};
  for (const auto& [key, value] : j.items())
    if (!sections.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
  RunConfig c;
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw std::invalid_argument("config: seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("scm")) Reader::read_section(j["scm"], c.scm, "scm");
  if (j.contains("data")) Reader::read_section(j["data"], c.data, "data");
  if (j.contains("model")) Reader::read_section(j["model"], c.train.model, "model");
  if (j.contains("train")) Reader::read_section(j["train"], c.train, "train");
  if (j.contains("eval")) Reader::read_section(j["eval"], c.eval, "eval");
  c.train.seed = c.seed;
  return c;
}

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string(what) + ": invalid JSON: " + e.what());
  }
}

}  // namespace

std::string to_json(const RunConfig& config, int indent) {
  RunConfig copy = config;
  return to_tree(copy).dump(indent);
}

RunConfig run_config_from_json(const std::string& text) { return from_tree(parse(text, "config")); }

void apply_override(RunConfig& config, const std::string& path, const std::string& value) {
  json tree = to_tree(config);
  json* node = &tree;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw std::invalid_argument("config: empty override path");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw std::invalid_argument("config: unknown key '" + path + "'");
    node = &(*node)[parts[i]];
  }
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  *node = v;
  config = from_tree(tree);
}

std::string train_config_to_json(const TrainConfig& config) {
  TrainConfig c = config;
  json j = json::object();
  Writer w{j};
  w("model", c.model);
  w("train", c);
  j["seed"] = c.seed;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = parse(text, "train config");
  TrainConfig c;
  Reader::read_section(j.at("model"), c.model, "model");
  Reader::read_section(j.at("train"), c, "train");
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

scm::ScmSpec build_spec(const SimConfig& sim, std::uint64_t seed) {
  if (!sim.spec_path.empty()) {
    std::ifstream in(sim.spec_path);
    if (!in) throw std::runtime_error("cannot read spec " + sim.spec_path);
    std::stringstream buf;
    buf << in.rdbuf();
    return scm::spec_from_json(buf.str());
  }
  scm::ExampleSpecOptions o;
  o.d_x = sim.d_x;
  o.n_treatments = sim.n_treatments;
  o.u_dim = sim.u_dim;
  o.lag = sim.lag;
  o.nonlinear = sim.nonlinear;
  o.noise = sim.noise;
  o.seed = seed;
  return scm::example_spec(o);
}

scm::DomainShift build_shift(const SimConfig& sim) {
  scm::DomainShift s;
  s.rate_scale = sim.target_rate_scale;
  s.bias_delta = sim.target_bias_delta;
  s.slope_delta = sim.target_slope_delta;
  return s;
}

std::pair<DomainDataset, DomainDataset> load_domains(const RunConfig& config) {
  if (config.data.source_csv.empty() != config.data.target_csv.empty())
    throw std::invalid_argument("data: source_csv and target_csv must be given together");
  if (!config.data.source_csv.empty()) {
    const auto& vocab =
        config.data.policy_vocabulary.empty() ? default_policy_vocabulary() : config.data.policy_vocabulary;
    DomainDataset s = ingest_csv(config.data.source_csv, vocab), t = ingest_csv(config.data.target_csv, vocab);
    s.tag = DomainTag::kSource;
    t.tag = DomainTag::kTarget;
    return {std::move(s), std::move(t)};
  }
  const SimConfig& sim = config.scm;
  return scm::make_domain_pair(build_spec(sim, config.seed), build_shift(sim), {sim.n_source, sim.n_target, sim.length},
                               derive_seed(config.seed, 3));
}

}  // namespace cda
