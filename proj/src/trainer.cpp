#include "cda/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "cda/checkpoint.hpp"
#include "cda/config.hpp"

namespace cda {
namespace {

using nlohmann::json;

json breakdown_json(const LossBreakdown& b) {
  json j;
  j["lambda"] = b.lambda;
  j["l_seq_source"] = b.l_seq_source;
  j["l_seq_target"] = b.l_seq_target;
  j["l_aux"] = b.l_aux;
  j["l1"] = b.l1;
  j["l2"] = b.l2;
  j["l3"] = b.l3;
  j["l4"] = b.l4;
  j["cross_term"] = b.cross_term;
  j["l_dom"] = b.l_dom;
  j["l_disc"] = b.l_disc ? json(*b.l_disc) : json(nullptr);
  j["total"] = b.total;
  return j;
}

LossBreakdown breakdown_from(const json& j) {
  LossBreakdown b;
  b.lambda = j.at("lambda").get<double>();
  b.l_seq_source = j.at("l_seq_source").get<double>();
  b.l_seq_target = j.at("l_seq_target").get<double>();
  b.l_aux = j.at("l_aux").get<double>();
  b.l1 = j.at("l1").get<double>();
  b.l2 = j.at("l2").get<double>();
  b.l3 = j.at("l3").get<double>();
  b.l4 = j.at("l4").get<double>();
  b.cross_term = j.at("cross_term").get<double>();
  b.l_dom = j.at("l_dom").get<double>();
  if (!j.at("l_disc").is_null()) b.l_disc = j.at("l_disc").get<double>();
  b.total = j.at("total").get<double>();
  return b;
}

json cursor_json(const BatchCursor& c) { return json{{"order", c.order}, {"next", c.next}}; }

BatchCursor cursor_from(const json& j) {
  return BatchCursor{j.at("order").get<std::vector<std::size_t>>(), j.at("next").get<std::size_t>()};
}

std::vector<std::size_t> eligible(const DomainDataset& d, std::size_t length) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < d.episodes.size(); ++i)
    if (d.episodes[i].length() >= length) out.push_back(i);
  return out;
}

struct DomainPass {
  ad::Node seq, aux, x, r, pooled;
  std::vector<int> labels;
};

DomainPass run_domain(const CdaModel& model, std::span<const Episode> episodes, DomainTag tag, std::size_t horizon) {
  const Batch batch = Batch::from_episodes(episodes);
  const std::size_t L = batch.length, H = L - horizon, B = batch.size;
  const ForwardResult fr = model.forward(batch, tag, H);
  DomainPass p;

  auto stack_y = [&](std::size_t from, std::size_t to, ad::Node& actual, ad::Node& predicted) {
    if (from >= to) return;
    std::vector<ad::Node> pred;
    Tensor y(B, to - from);
    for (std::size_t t = from; t < to; ++t) {
      pred.push_back(fr.y_hat[t]);
      for (std::size_t b = 0; b < B; ++b) y(b, t - from) = batch.y[t](b, 0);
    }
    actual = ad::constant(std::move(y));
    predicted = ad::concat_cols(pred);
  };
  ad::Node yh, yh_hat, yf, yf_hat;
  stack_y(1, H, yh, yh_hat);
  stack_y(H, L, yf, yf_hat);
  p.seq = ad::scale(seq_loss(yh, yh_hat, yf, yf_hat), 1.0 / static_cast<double>(B));

  std::vector<ad::Node> sq;
  for (std::size_t t = 0; t + 1 < H; ++t)
    sq.push_back(ad::sum_all(ad::square(ad::sub(fr.mu[t], ad::constant(batch.x[t + 1])))));
  p.aux = sq.empty() ? ad::constant(Tensor::scalar(0.0))
                     : ad::scale(ad::add_n(sq), 1.0 / static_cast<double>(B * sq.size()));

  p.x = ad::concat_rows(fr.x_used);
  p.r = ad::concat_rows(fr.r);
  for (const auto& lab : fr.label) p.labels.insert(p.labels.end(), lab.begin(), lab.end());
  p.pooled = CdaModel::pooled_reconstruction(fr);
  return p;
}

std::size_t count_in(const std::vector<int>& labels, const std::vector<int>& condition) {
  if (condition.empty()) return labels.size();
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [&](int z) {
    return std::find(condition.begin(), condition.end(), z) != condition.end();
  }));
}

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (epochs < 1) bad("epochs must be at least 1");
  if (batch_size < 1) bad("batch_size must be at least 1");
  if (!(generator.learning_rate > 0) || !(discriminator.learning_rate > 0)) bad("learning rates must be positive");
  if (!(lambda >= 0) || !std::isfinite(lambda)) bad("lambda must be finite and non-negative");
  if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) bad("warmup_fraction must lie in [0, 1]");
  if (domain_loss != "cmmd" && domain_loss != "discriminator" && domain_loss != "both")
    bad("domain_loss must be cmmd, discriminator or both");
  if (lambda_sign != "descend" && lambda_sign != "ascend") bad("lambda_sign must be descend or ascend");
  if (condition != "all" && condition != "treated") bad("condition must be all or treated");
  for (double b : {beta1, beta2, beta3, beta4, gamma, aux_weight})
    if (!(b >= 0)) bad("loss weights must be non-negative");
  if (!(clip_norm >= 0)) bad("clip_norm must be non-negative");
}

ModelConfig resolve_model_config(const TrainConfig& config, const DomainDataset& source) {
  ModelConfig m = config.model;
  auto fill = [](std::size_t& field, std::size_t data, const char* name) {
    if (field == 0) field = data;
    else if (field != data)
      throw std::invalid_argument(std::string("model.") + name + " = " + std::to_string(field) +
                                  " but the data has " + std::to_string(data));
  };
  fill(m.d_x, source.d_x(), "d_x");
  fill(m.n_treatments, source.n_treatments(), "n_treatments");
  if (m.u_dim != source.u_dim()) fill(m.u_dim, source.u_dim(), "u_dim");
  if (config.no_attention) m.window = 1;
  m.validate();
  return m;
}

std::string log_record(const LossBreakdown& b, std::size_t step, std::size_t epoch, std::optional<double> wall_time) {
  json j = breakdown_json(b);
  j["step"] = step;
  j["epoch"] = epoch;
  if (wall_time) j["wall_time"] = *wall_time;
  return j.dump();
}

Trainer::Trainer(TrainConfig config, const DomainDataset& source, const DomainDataset& target)
    : config_(std::move(config)), source_(&source), target_(&target) {
  config_.validate();
  if (source.episodes.empty()) throw std::invalid_argument("train: source domain is empty");
  if (target.episodes.empty()) throw std::invalid_argument("train: target domain is empty");
  if (source.d_x() != target.d_x() || source.u_dim() != target.u_dim() ||
      source.n_treatments() != target.n_treatments())
    throw std::invalid_argument("train: source and target disagree on d_x, u_dim or treatment count");

  segment_ = config_.segment_length;
  if (segment_ == 0) {
    segment_ = SIZE_MAX;
    for (const auto* d : {&source, &target})
      for (const auto& ep : d->episodes) segment_ = std::min(segment_, ep.length());
  }
  if (segment_ < 2) throw std::invalid_argument("train: segments need at least 2 positions");
  if (config_.horizon + 1 >= segment_)
    throw std::invalid_argument("train: horizon " + std::to_string(config_.horizon) + " leaves no history in segments of " +
                                std::to_string(segment_));
  source_pool_ = eligible(source, segment_);
  target_pool_ = eligible(target, segment_);
  if (source_pool_.empty() || target_pool_.empty())
    throw std::invalid_argument("train: no episodes of length >= " + std::to_string(segment_) + " in the " +
                                (source_pool_.empty() ? "source" : "target") + " domain");
  const std::size_t n = std::max(source_pool_.size(), target_pool_.size());
  steps_per_epoch_ = (n + config_.batch_size - 1) / config_.batch_size;

  state_.model = CdaModel(resolve_model_config(config_, source), derive_seed(config_.seed, 0));
  state_.generator_opt = Optimizer(config_.generator);
  state_.discriminator_opt = Optimizer(config_.discriminator);
  state_.rng = Rng(derive_seed(config_.seed, 1));
}

double Trainer::lambda_at(std::size_t step) const {
  const auto warm = static_cast<std::size_t>(std::ceil(config_.warmup_fraction * static_cast<double>(total_steps())));
  if (warm == 0) return config_.lambda;
  return config_.lambda * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warm));
}

StepBatch Trainer::draw(Rng& rng, BatchCursor& source, BatchCursor& target) const {
  auto take = [&](const DomainDataset& d, const std::vector<std::size_t>& pool, BatchCursor& c) {
    const std::size_t b = std::min(config_.batch_size, pool.size());
    if (c.order.empty() || c.next + b > c.order.size()) {
      c.order = pool;
      std::shuffle(c.order.begin(), c.order.end(), rng);
      c.next = 0;
    }
    std::vector<Episode> out;
    for (std::size_t i = 0; i < b; ++i) {
      const Episode& ep = d.episodes[c.order[c.next + i]];
      std::uniform_int_distribution<std::size_t> start(0, ep.length() - segment_);
      const std::size_t s = start(rng);
      out.push_back(ep.slice(s, s + segment_));
    }
    c.next += b;
    return out;
  };
  StepBatch batch;
  batch.source = take(*source_, source_pool_, source);
  batch.target = take(*target_, target_pool_, target);
  return batch;
}

LossBreakdown Trainer::compute(const StepBatch& batch, std::size_t step, ad::Node* objective, bool reverse) const {
  const CdaModel& model = state_.model;
  const double lambda = lambda_at(step);
  const DomainPass s = run_domain(model, batch.source, DomainTag::kSource, config_.horizon);
  const DomainPass t = run_domain(model, batch.target, DomainTag::kTarget, config_.horizon);

  LossBreakdown b;
  b.lambda = lambda;
  b.l_seq_source = s.seq.item();
  b.l_seq_target = t.seq.item();
  const ad::Node aux = ad::add(s.aux, t.aux);
  b.l_aux = aux.item();
  std::vector<ad::Node> parts = {s.seq, t.seq, ad::scale(aux, config_.aux_weight)};

  DomainLossOptions o;
  o.beta1 = config_.beta1;
  o.beta2 = config_.beta2;
  o.beta3 = config_.beta3;
  o.beta4 = config_.beta4;
  o.gamma = config_.gamma;
  if (config_.condition == "treated")
    for (int k = 1; k < static_cast<int>(model.config().n_treatments); ++k) o.condition.push_back(k);
  if (count_in(s.labels, o.condition) > 0 && count_in(t.labels, o.condition) > 0) {
    const DomainLossTerms terms = domain_loss({s.x, s.r, s.labels}, {t.x, t.r, t.labels}, o);
    b.l1 = terms.l1.item();
    b.l2 = terms.l2.item();
    b.l3 = terms.l3.item();
    b.l4 = terms.l4.item();
    b.cross_term = terms.cross.item();
    b.l_dom = terms.total.item();
    if (config_.uses_cmmd() && lambda > 0)
      parts.push_back(ad::scale(terms.total, config_.lambda_sign == "descend" ? lambda : -lambda));
  }
  if (config_.uses_discriminator()) {
    const auto gate = [&](const ad::Node& x) { return reverse ? ad::grad_reverse(x) : x; };
    const ad::Node ls = model.discriminator_logit(gate(s.pooled));
    const ad::Node lt = model.discriminator_logit(gate(t.pooled));
    const ad::Node disc = ad::scale(ad::add(bce_with_logits(ls, 1.0), bce_with_logits(lt, 0.0)), 0.5);
    b.l_disc = disc.item();
    if (lambda > 0) parts.push_back(ad::scale(disc, lambda));
  }
  const ad::Node total = ad::add_n(parts);
  b.total = total.item();
  if (objective) *objective = total;
  return b;
}

LossBreakdown Trainer::step() {
  const StepBatch batch = draw(state_.rng, state_.source_cursor, state_.target_cursor);
  ParamStore& params = state_.model.params();
  params.zero_grad();
  LossBreakdown b;
  try {
    ad::Node objective;
    b = compute(batch, state_.step, &objective);
    if (!std::isfinite(b.total)) {
      std::ostringstream msg;
      msg << "total loss " << b.total;
      throw NumericError(msg.str());
    }
    ad::backward(objective);
    const auto gen = params.nodes(ParamGroup::kGenerator);
    if (config_.clip_norm > 0) clip_grad_norm(gen, config_.clip_norm);
    state_.generator_opt.step(params, ParamGroup::kGenerator);
    if (config_.uses_discriminator() && b.lambda > 0) {
      const auto disc = params.nodes(ParamGroup::kDiscriminator);
      if (config_.clip_norm > 0) clip_grad_norm(disc, config_.clip_norm);
      state_.discriminator_opt.step(params, ParamGroup::kDiscriminator);
    }
  } catch (const NumericError& e) {
    throw DivergenceError("training diverged at step " + std::to_string(state_.step) + ": " + e.what());
  }
  ++state_.step;
  state_.history.push_back(b);
  if (!config_.checkpoint_path.empty() && config_.checkpoint_every > 0 && state_.step % config_.checkpoint_every == 0)
    save(config_.checkpoint_path);
  return b;
}

LossBreakdown Trainer::peek() const {
  Rng rng = state_.rng;
  BatchCursor s = state_.source_cursor, t = state_.target_cursor;
  return compute(draw(rng, s, t), state_.step, nullptr);
}

ad::Node Trainer::objective_node(bool reverse_gradients) const {
  Rng rng = state_.rng;
  BatchCursor s = state_.source_cursor, t = state_.target_cursor;
  ad::Node out;
  compute(draw(rng, s, t), state_.step, &out, reverse_gradients);
  return out;
}

void Trainer::run(std::ostream* log, std::size_t max_steps) {
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t n = 0; n < max_steps && !done(); ++n) {
    const std::size_t index = state_.step;
    const LossBreakdown b = step();
    if (log) {
      std::optional<double> wall;
      if (config_.log_wall_time)
        wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *log << log_record(b, index, index / steps_per_epoch_, wall) << '\n';
    }
  }
  if (!config_.checkpoint_path.empty()) save(config_.checkpoint_path);
}

void Trainer::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  for (const auto& [name, value] : state_.model.params().values()) ckpt.tensors.emplace("param." + name, value);
  ckpt.tensors.merge(state_.generator_opt.export_state("opt.generator"));
  ckpt.tensors.merge(state_.discriminator_opt.export_state("opt.discriminator"));
  ckpt.texts["train_config"] = train_config_to_json(config_);
  std::ostringstream rng;
  rng << state_.rng;
  ckpt.texts["rng"] = rng.str();
  ckpt.texts["cursors"] =
      json{{"source", cursor_json(state_.source_cursor)}, {"target", cursor_json(state_.target_cursor)}}.dump();
  ckpt.texts["step"] = std::to_string(state_.step);
  std::string log;
  for (std::size_t i = 0; i < state_.history.size(); ++i)
    log += log_record(state_.history[i], i, i / steps_per_epoch_, std::nullopt) + "\n";
  ckpt.texts["log"] = log;
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_checkpoint(ckpt, tmp);
  std::filesystem::rename(tmp, path);
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, const DomainDataset& source,
                        const DomainDataset& target) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  auto text = [&](const char* key) -> const std::string& {
    auto it = ckpt.texts.find(key);
    if (it == ckpt.texts.end()) throw std::runtime_error(std::string("checkpoint: missing '") + key + "'");
    return it->second;
  };
  Trainer t(train_config_from_json(text("train_config")), source, target);
  std::map<std::string, Tensor> params, gen_opt, disc_opt;
  for (const auto& [name, value] : ckpt.tensors) {
    if (name.rfind("param.", 0) == 0) params.emplace(name.substr(6), value);
    else if (name.rfind("opt.generator.", 0) == 0) gen_opt.emplace(name, value);
    else if (name.rfind("opt.discriminator.", 0) == 0) disc_opt.emplace(name, value);
  }
  t.state_.model.params().load_values(params);
  t.state_.generator_opt.import_state("opt.generator", gen_opt);
  t.state_.discriminator_opt.import_state("opt.discriminator", disc_opt);
  std::istringstream rng(text("rng"));
  rng >> t.state_.rng;
  if (!rng) throw std::runtime_error("checkpoint: bad random stream state");
  const json cursors = json::parse(text("cursors"));
  t.state_.source_cursor = cursor_from(cursors.at("source"));
  t.state_.target_cursor = cursor_from(cursors.at("target"));
  t.state_.step = std::stoul(text("step"));
  std::istringstream log(text("log"));
  for (std::string line; std::getline(log, line);)
    if (!line.empty()) t.state_.history.push_back(breakdown_from(json::parse(line)));
  return t;
}

}  // namespace cda
