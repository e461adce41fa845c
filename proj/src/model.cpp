#include "cda/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cda/rng.hpp"

namespace cda {
namespace {

Tensor uniform_init(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = draw_uniform(rng, -bound, bound);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (d_x == 0) fail("d_x must be positive");
  if (n_treatments < 2) fail("n_treatments must be at least 2");
  if (d_h == 0 || d_e == 0 || d_k == 0 || interaction_rank == 0 || disc_hidden == 0)
    fail("layer widths must be positive");
  if (window == 0) fail("window must be at least 1");
  if (cell != "gru" && cell != "tanh") fail("cell must be gru or tanh, got '" + cell + "'");
}

Batch Batch::from_episodes(std::span<const Episode* const> episodes) {
  if (episodes.empty()) throw std::invalid_argument("batch: no episodes");
  Batch b;
  b.size = episodes.size();
  b.length = episodes.front()->length();
  const std::size_t dx = episodes.front()->d_x();
  const std::size_t du = episodes.front()->u.size();
  for (const Episode* ep : episodes) {
    if (ep->length() != b.length)
      throw std::invalid_argument("batch: episode " + ep->id + " has length " + std::to_string(ep->length()) +
                                  ", expected " + std::to_string(b.length));
    if (ep->d_x() != dx || ep->u.size() != du) throw std::invalid_argument("batch: episode " + ep->id + " shape differs");
  }
  b.x.assign(b.length, Tensor(b.size, dx));
  b.y.assign(b.length, Tensor(b.size, 1));
  b.z.assign(b.length, std::vector<int>(b.size, 0));
  b.u = Tensor(b.size, du);
  for (std::size_t i = 0; i < b.size; ++i) {
    const Episode& ep = *episodes[i];
    for (std::size_t t = 0; t < b.length; ++t) {
      for (std::size_t j = 0; j < dx; ++j) b.x[t](i, j) = ep.x(t, j);
      b.y[t](i, 0) = ep.y[t];
      b.z[t][i] = ep.z[t];
    }
    for (std::size_t j = 0; j < du; ++j) b.u(i, j) = ep.u[j];
  }
  return b;
}

Batch Batch::from_episodes(std::span<const Episode> episodes) {
  std::vector<const Episode*> ptrs;
  ptrs.reserve(episodes.size());
  for (const auto& ep : episodes) ptrs.push_back(&ep);
  return from_episodes(std::span<const Episode* const>(ptrs));
}

CdaModel::CdaModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;
  const std::size_t gates = c.cell == "gru" ? 3 * c.d_h : c.d_h;
  const std::size_t in = c.encoder_input_width();
  std::vector<DomainTag> gens = {DomainTag::kSource};
  if (c.separate_generators) gens.push_back(DomainTag::kTarget);
  for (DomainTag tag : gens) {
    params_.add(gen(tag, "emb"), uniform_init(rng, c.n_treatments, c.d_e, c.n_treatments));
    params_.add(gen(tag, "enc.Wx"), uniform_init(rng, in, gates, in));
    params_.add(gen(tag, "enc.Uh"), uniform_init(rng, c.d_h, gates, c.d_h));
    params_.add(gen(tag, "enc.bx"), uniform_init(rng, 1, gates, c.d_h));
    params_.add(gen(tag, "enc.bh"), uniform_init(rng, 1, gates, c.d_h));
    params_.add(gen(tag, "cate.Wh"), uniform_init(rng, c.d_h, c.d_x, c.d_h));
    params_.add(gen(tag, "cate.We"), uniform_init(rng, c.d_e, c.d_x, c.d_e));
    params_.add(gen(tag, "cate.b"), uniform_init(rng, 1, c.d_x, c.d_h));
    params_.add(gen(tag, "cate.Pa"), uniform_init(rng, c.d_h, c.interaction_rank, c.d_h));
    params_.add(gen(tag, "cate.Pb"), uniform_init(rng, c.d_e, c.interaction_rank, c.d_e));
    params_.add(gen(tag, "cate.Pc"), uniform_init(rng, c.interaction_rank, c.d_x, c.interaction_rank));
    params_.add(gen(tag, "attn.Wa"), uniform_init(rng, c.d_e, c.d_k, c.d_e));
    params_.add(gen(tag, "attn.Wk"), uniform_init(rng, c.d_x, c.d_k, c.d_x));
    params_.add(gen(tag, "attn.bk"), uniform_init(rng, 1, c.d_k, c.d_x));
  }
  const std::size_t head_in = c.d_h + c.d_x + c.d_e;
  for (const char* dom : {"source", "target"}) {
    params_.add(std::string("head.") + dom + ".W", uniform_init(rng, head_in, 1, head_in));
    params_.add(std::string("head.") + dom + ".b", uniform_init(rng, 1, 1, head_in));
  }
  params_.add("disc.W1", uniform_init(rng, c.d_x, c.disc_hidden, c.d_x), ParamGroup::kDiscriminator);
  params_.add("disc.b1", uniform_init(rng, 1, c.disc_hidden, c.d_x), ParamGroup::kDiscriminator);
  params_.add("disc.W2", uniform_init(rng, c.disc_hidden, 1, c.disc_hidden), ParamGroup::kDiscriminator);
  params_.add("disc.b2", uniform_init(rng, 1, 1, c.disc_hidden), ParamGroup::kDiscriminator);
}

CdaModel CdaModel::clone() const {
  CdaModel m;
  m.config_ = config_;
  m.params_ = params_.clone();
  return m;
}

std::string CdaModel::gen(DomainTag tag, const char* name) const {
  if (!config_.separate_generators) return std::string("gen.") + name;
  return std::string("gen.") + to_string(tag) + "." + name;
}

ad::Node CdaModel::zero_state(std::size_t batch) const { return ad::constant(Tensor(batch, config_.d_h)); }

ad::Node CdaModel::embed(std::span<const int> z, DomainTag tag) const {
  return ad::matmul(ad::constant(ad::one_hot(z, config_.n_treatments)), params_.get(gen(tag, "emb")));
}

ad::Node CdaModel::encoder_input(const ad::Node& x, const ad::Node& e_prev, const ad::Node& y,
                                 const ad::Node& u) const {
  if (config_.u_dim > 0) {
    const ad::Node parts[] = {x, e_prev, y, u};
    return ad::concat_cols(parts);
  }
  const ad::Node parts[] = {x, e_prev, y};
  return ad::concat_cols(parts);
}

ad::Node CdaModel::encoder_step(const ad::Node& h, const ad::Node& input, DomainTag tag) const {
  if (input.cols() != config_.encoder_input_width())
    throw ShapeError("encoder: input width " + std::to_string(input.cols()) + " does not match model (" +
                     std::to_string(config_.encoder_input_width()) + ")");
  const ad::Node gx = ad::add(ad::matmul(input, params_.get(gen(tag, "enc.Wx"))), params_.get(gen(tag, "enc.bx")));
  const ad::Node gh = ad::add(ad::matmul(h, params_.get(gen(tag, "enc.Uh"))), params_.get(gen(tag, "enc.bh")));
  if (config_.cell == "tanh") return ad::tanh(ad::add(gx, gh));
  const std::size_t d = config_.d_h;
  const ad::Node update = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, d), ad::slice_cols(gh, 0, d)));
  const ad::Node reset = ad::sigmoid(ad::add(ad::slice_cols(gx, d, 2 * d), ad::slice_cols(gh, d, 2 * d)));
  const ad::Node cand =
      ad::tanh(ad::add(ad::slice_cols(gx, 2 * d, 3 * d), ad::mul(reset, ad::slice_cols(gh, 2 * d, 3 * d))));
  return ad::add(cand, ad::mul(update, ad::sub(h, cand)));
}

ad::Node CdaModel::mu(const ad::Node& h, const ad::Node& e_z, DomainTag tag) const {
  const ad::Node linear = ad::add(ad::add(ad::matmul(h, params_.get(gen(tag, "cate.Wh"))),
                                          ad::matmul(e_z, params_.get(gen(tag, "cate.We")))),
                                  params_.get(gen(tag, "cate.b")));
  const ad::Node inter = ad::mul(ad::matmul(h, params_.get(gen(tag, "cate.Pa"))),
                                 ad::matmul(e_z, params_.get(gen(tag, "cate.Pb"))));
  return ad::add(linear, ad::matmul(inter, params_.get(gen(tag, "cate.Pc"))));
}

ad::Node CdaModel::mu(const ad::Node& h, std::span<const int> z, DomainTag tag) const {
  return mu(h, embed(z, tag), tag);
}

ad::Node CdaModel::cate_hat(const ad::Node& h, std::span<const int> z, std::span<const int> z_ref,
                            DomainTag tag) const {
  return ad::sub(mu(h, z, tag), mu(h, z_ref, tag));
}

AnswerKey CdaModel::answer_key(const ad::Node& h, std::span<const int> z, DomainTag tag) const {
  const std::vector<int> ref(z.size(), 0);
  const ad::Node e_z = embed(z, tag);
  const ad::Node cate = ad::sub(mu(h, e_z, tag), mu(h, ref, tag));
  return {ad::matmul(e_z, params_.get(gen(tag, "attn.Wa"))),
          ad::add(ad::matmul(cate, params_.get(gen(tag, "attn.Wk"))), params_.get(gen(tag, "attn.bk")))};
}

ad::Node CdaModel::outcome(const ad::Node& h_r, const ad::Node& r, const ad::Node& e_z, DomainTag tag) const {
  const std::string dom = to_string(tag);
  const ad::Node parts[] = {h_r, r, e_z};
  return ad::add(ad::matmul(ad::concat_cols(parts), params_.get("head." + dom + ".W")), params_.get("head." + dom + ".b"));
}

ad::Node CdaModel::discriminator_logit(const ad::Node& pooled) const {
  const ad::Node hidden = ad::tanh(ad::add(ad::matmul(pooled, params_.get("disc.W1")), params_.get("disc.b1")));
  return ad::add(ad::matmul(hidden, params_.get("disc.W2")), params_.get("disc.b2"));
}

ForwardResult CdaModel::forward(const Batch& batch, DomainTag tag, std::size_t history) const {
  const std::size_t B = batch.size, L = batch.length;
  if (B == 0 || L == 0) throw std::invalid_argument("forward: empty batch");
  if (history < 1 || history > L)
    throw std::invalid_argument("forward: history " + std::to_string(history) + " outside [1, " + std::to_string(L) + "]");
  if (batch.x.front().cols() != config_.d_x || batch.u.cols() != config_.u_dim)
    throw ShapeError("forward: batch has d_x=" + std::to_string(batch.x.front().cols()) + ", u_dim=" +
                     std::to_string(batch.u.cols()) + "; model expects d_x=" + std::to_string(config_.d_x) +
                     ", u_dim=" + std::to_string(config_.u_dim));

  ForwardResult fr;
  fr.history = history;
  const ad::Node u = config_.u_dim > 0 ? ad::constant(batch.u) : ad::Node();
  const std::vector<int> ref(B, 0);
  const ad::Node e_ref = embed(ref, tag);
  const ad::Node wa = params_.get(gen(tag, "attn.Wa"));
  const ad::Node wk = params_.get(gen(tag, "attn.Wk"));
  const ad::Node bk = params_.get(gen(tag, "attn.bk"));

  auto attend = [&](std::size_t pos, const ad::Node& answer) {
    const attention::Window w = attention::neighborhood(pos, config_.window);
    std::span<const ad::Node> keys(fr.key.data() + w.begin, w.size());
    std::span<const ad::Node> values(fr.x_used.data() + w.begin, w.size());
    const ad::Node alpha = attention::causal_score(answer, keys);
    fr.windows.push_back(w);
    fr.alpha.push_back(alpha);
    fr.r.push_back(attention::reconstruct(alpha, values));
  };

  // Position 0: zero state, arm 0.
  const ad::Node h0 = zero_state(B);
  fr.label.push_back(ref);
  fr.x_used.push_back(ad::constant(batch.x[0]));
  fr.y_used.push_back(ad::constant(batch.y[0]));
  {
    const ad::Node mu_ref = mu(h0, e_ref, tag);
    fr.answer.push_back(ad::matmul(e_ref, wa));
    fr.key.push_back(ad::add(ad::matmul(ad::sub(mu_ref, mu_ref), wk), bk));
  }
  attend(0, fr.answer[0]);
  fr.y_hat.emplace_back();
  fr.h.push_back(encoder_step(h0, encoder_input(fr.x_used[0], e_ref, fr.y_used[0], u), tag));
  fr.h_r.push_back(encoder_step(h0, encoder_input(fr.r[0], e_ref, fr.y_used[0], u), tag));

  for (std::size_t t = 0; t + 1 < L; ++t) {
    const std::vector<int>& zt = batch.z[t];
    const ad::Node e_t = embed(zt, tag);
    const ad::Node mu_t = mu(fr.h[t], e_t, tag);
    fr.mu.push_back(mu_t);
    const bool observed = t + 1 < history;
    fr.x_used.push_back(observed ? ad::constant(batch.x[t + 1]) : mu_t);
    fr.label.push_back(zt);
    fr.answer.push_back(ad::matmul(e_t, wa));
    fr.key.push_back(ad::add(ad::matmul(ad::sub(mu_t, mu(fr.h[t], e_ref, tag)), wk), bk));
    attend(t + 1, fr.answer.back());
    const ad::Node y_hat = outcome(fr.h_r[t], fr.r.back(), e_t, tag);
    fr.y_hat.push_back(y_hat);
    fr.y_used.push_back(observed ? ad::constant(batch.y[t + 1]) : y_hat);
    fr.h.push_back(encoder_step(fr.h[t], encoder_input(fr.x_used.back(), e_t, fr.y_used.back(), u), tag));
    fr.h_r.push_back(encoder_step(fr.h_r[t], encoder_input(fr.r.back(), e_t, fr.y_used.back(), u), tag));
  }
  return fr;
}

ad::Node CdaModel::pooled_reconstruction(const ForwardResult& fr) {
  return ad::scale(ad::add_n(fr.r), 1.0 / static_cast<double>(fr.r.size()));
}

std::vector<Forecast> forecast_batch(const CdaModel& model, DomainTag tag, std::span<const Episode> episodes,
                                     std::size_t history) {
  if (episodes.empty()) return {};
  const Batch batch = Batch::from_episodes(episodes);
  const std::size_t horizon = batch.length - history;
  std::vector<Forecast> out(batch.size);
  for (auto& f : out) {
    f.y_hat.resize(horizon);
    f.x_hat = Tensor(horizon, model.config().d_x);
    f.r = Tensor(horizon, model.config().d_x);
  }
  if (horizon == 0) return out;
  const ForwardResult fr = model.forward(batch, tag, history);
  for (std::size_t s = 0; s < horizon; ++s) {
    const std::size_t t = history + s;
    const Tensor& yh = fr.y_hat[t].value();
    const Tensor& xh = fr.x_used[t].value();
    const Tensor& rr = fr.r[t].value();
    for (std::size_t i = 0; i < batch.size; ++i) {
      out[i].y_hat[s] = yh(i, 0);
      for (std::size_t j = 0; j < xh.cols(); ++j) {
        out[i].x_hat(s, j) = xh(i, j);
        out[i].r(s, j) = rr(i, j);
      }
    }
  }
  return out;
}

Forecast forecast(const CdaModel& model, DomainTag tag, const Episode& history, const std::vector<int>& future_z) {
  const std::size_t H = history.length(), tau = future_z.size();
  if (H == 0) throw std::invalid_argument("forecast: empty history");
  if (tau == 0) return Forecast{{}, Tensor(0, model.config().d_x), Tensor(0, model.config().d_x)};
  Episode ep;
  ep.id = history.id;
  ep.x = Tensor(H + tau, history.d_x());
  for (std::size_t t = 0; t < H; ++t)
    for (std::size_t j = 0; j < history.d_x(); ++j) ep.x(t, j) = history.x(t, j);
  ep.y = history.y;
  ep.y.resize(H + tau, 0.0);
  ep.z = history.z;
  ep.z.resize(H + tau, 0);
  for (std::size_t i = 0; i < tau; ++i) ep.z[H - 1 + i] = future_z[i];
  ep.u = history.u;
  return forecast_batch(model, tag, std::span<const Episode>(&ep, 1), H).front();
}

}  // namespace cda
