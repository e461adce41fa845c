#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cda/checkpoint.hpp"
#include "cda/config.hpp"
#include "cda/grad_check.hpp"
#include "cda/scm.hpp"
#include "cda/trainer.hpp"
#include "test_util.hpp"

using namespace cda;

namespace {

struct World {
  DomainDataset source, target;
};

World make_world(std::size_t n_source, std::size_t n_target, std::size_t length, std::uint64_t seed,
                 std::size_t d_x = 2) {
  scm::ExampleSpecOptions o;
  o.d_x = d_x;
  o.n_treatments = 3;
  o.u_dim = 1;
  const scm::ScmSpec spec = scm::example_spec(o);
  scm::DomainShift shift;
  shift.bias_delta = {-1.0, 1.0, 0.5};
  auto [s, t] = scm::make_domain_pair(spec, shift, {n_source, n_target, length}, seed);
  const Normalized ns = normalize(s);
  return {ns.data, normalize(t, ns.stats).data};
}

TrainConfig small_config() {
  TrainConfig c;
  c.model = cda::testing::toy_config(0, 0, 0);
  c.epochs = 3;
  c.batch_size = 4;
  c.segment_length = 8;
  c.horizon = 2;
  c.seed = 17;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cda_trainer_" + name);
}

std::map<std::string, Tensor> values(const Trainer& t) { return t.state().model.params().values(); }

}  // namespace

TEST(Trainer, SameSeedIsBitIdentical) {
  const World w = make_world(10, 3, 12, 1);
  Trainer a(small_config(), w.source, w.target), b(small_config(), w.source, w.target);
  std::ostringstream la, lb;
  a.run(&la);
  b.run(&lb);
  EXPECT_EQ(a.state().step, a.total_steps());
  EXPECT_EQ(values(a), values(b));
  EXPECT_EQ(la.str(), lb.str());
  auto other = small_config();
  other.seed = 18;
  Trainer c(other, w.source, w.target);
  c.run();
  EXPECT_NE(values(a), values(c));
}

TEST(Trainer, StepsPerEpochFollowLargerDomain) {
  const World w = make_world(10, 3, 12, 1);
  const Trainer t(small_config(), w.source, w.target);
  EXPECT_EQ(t.steps_per_epoch(), 3u);
  EXPECT_EQ(t.total_steps(), 9u);
}

TEST(Trainer, LambdaWarmsUpLinearly) {
  const World w = make_world(40, 3, 12, 1);
  auto cfg = small_config();
  cfg.lambda = 2.0;
  const Trainer t(cfg, w.source, w.target);
  ASSERT_EQ(t.total_steps(), 30u);
  EXPECT_DOUBLE_EQ(t.lambda_at(0), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.lambda_at(2), 2.0);
  EXPECT_DOUBLE_EQ(t.lambda_at(29), 2.0);
}

TEST(Trainer, ZeroLambdaDecouplesDomainModules) {
  const World w = make_world(10, 3, 12, 2);
  auto cfg = small_config();
  cfg.lambda = 0.0;
  Trainer a(cfg, w.source, w.target);
  cfg.domain_loss = "both";
  Trainer b(cfg, w.source, w.target);
  a.run();
  b.run();
  for (const auto& np : a.state().model.params().all()) {
    if (np.group != ParamGroup::kGenerator) continue;
    EXPECT_EQ(np.node.value(), b.state().model.params().get(np.name).value()) << np.name;
  }
  double recorded = 0.0;
  for (const auto& rec : a.state().history) {
    recorded += rec.l_dom;
    EXPECT_EQ(rec.total, rec.l_seq_source + rec.l_seq_target + rec.l_aux);
  }
  EXPECT_GT(recorded, 0.0);
  // Discriminator parameters never move at lambda = 0.
  const Trainer fresh(cfg, w.source, w.target);
  for (const auto& np : b.state().model.params().all())
    if (np.group == ParamGroup::kDiscriminator)
      EXPECT_EQ(np.node.value(), fresh.state().model.params().get(np.name).value());
}

TEST(Trainer, StepChangesOnlyParametersWithGradient) {
  const World w = make_world(10, 3, 12, 3);
  auto cfg = small_config();
  cfg.generator = {"sgd", 0.01};
  Trainer t(cfg, w.source, w.target);
  const auto before = values(t);
  t.step();
  for (const auto& np : t.state().model.params().all()) {
    const Tensor& g = np.node.grad();
    const Tensor& old = before.at(np.name);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (g[i] == 0.0) EXPECT_EQ(np.node.value()[i], old[i]) << np.name;
    if (np.group == ParamGroup::kDiscriminator) EXPECT_EQ(np.node.value(), old);
  }
}

TEST(Trainer, SequenceLossDecreasesOnLearnableToy) {
  const World w = make_world(20, 20, 40, 4, 4);
  TrainConfig cfg;
  cfg.model.d_h = 16;
  cfg.epochs = 100;
  cfg.batch_size = 10;
  cfg.segment_length = 40;
  cfg.seed = 3;
  Trainer t(cfg, w.source, w.target);
  ASSERT_EQ(t.total_steps(), 200u);
  t.run();
  const auto& h = t.state().history;
  const double first = h.front().l_seq_source + h.front().l_seq_target;
  double last = 0.0;
  for (std::size_t i = h.size() - 10; i < h.size(); ++i) last += (h[i].l_seq_source + h[i].l_seq_target) / 10.0;
  EXPECT_LT(last, first);
}

TEST(Checkpoint, RoundTripAndResumeMatchUninterrupted) {
  const World w = make_world(10, 3, 12, 5);
  auto cfg = small_config();
  cfg.domain_loss = "both";
  cfg.epochs = 6;
  Trainer straight(cfg, w.source, w.target);
  std::ostringstream straight_log;
  straight.run(&straight_log, 8);
  const auto path = temp_path("resume.ckpt");
  straight.save(path);
  const Trainer loaded = Trainer::resume(path, w.source, w.target);
  EXPECT_EQ(values(loaded), values(straight));

  std::ostringstream tail_a, tail_b;
  Trainer resumed = Trainer::resume(path, w.source, w.target);
  straight.run(&tail_a, 10);
  resumed.run(&tail_b, 10);
  EXPECT_EQ(values(straight), values(resumed));
  EXPECT_EQ(tail_a.str(), tail_b.str());
  EXPECT_EQ(straight.state().history.size(), resumed.state().history.size());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptMagicIsRejected) {
  const auto path = temp_path("corrupt.ckpt");
  std::ofstream(path) << "NOT-A-CHECKPOINT\n";
  const World w = make_world(4, 2, 10, 6);
  try {
    Trainer::resume(path, w.source, w.target);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("CDA-CKPT-1 expected"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, LoggedLossesReplayFromCheckpoints) {
  const World w = make_world(10, 3, 12, 7);
  auto cfg = small_config();
  cfg.epochs = 4;
  Trainer t(cfg, w.source, w.target);
  const std::size_t end = t.total_steps();
  std::vector<std::size_t> marks = {0, end / 2, end - 1};
  std::vector<std::filesystem::path> paths;
  for (std::size_t m : marks) {
    t.run(nullptr, m - t.state().step);
    paths.push_back(temp_path("replay" + std::to_string(m) + ".ckpt"));
    t.save(paths.back());
  }
  t.run();
  for (std::size_t i = 0; i < marks.size(); ++i) {
    const Trainer r = Trainer::resume(paths[i], w.source, w.target);
    EXPECT_NEAR(r.peek().total, t.state().history[marks[i]].total, 1e-9);
    std::filesystem::remove(paths[i]);
  }
}

TEST(Trainer, DivergenceAbortsAndKeepsCheckpoint) {
  World w = make_world(6, 3, 10, 8);
  auto cfg = small_config();
  cfg.checkpoint_every = 1;
  cfg.checkpoint_path = temp_path("diverge.ckpt").string();
  Trainer t(cfg, w.source, w.target);
  t.run(nullptr, 2);
  for (auto& ep : w.source.episodes)
    for (double& y : ep.y) y = 1e300;
  EXPECT_THROW(t.step(), DivergenceError);
  const Trainer back = Trainer::resume(cfg.checkpoint_path, w.source, w.target);
  EXPECT_EQ(back.state().step, 2u);
  std::filesystem::remove(cfg.checkpoint_path);
}

TEST(Trainer, InvalidInputs) {
  const World w = make_world(4, 2, 10, 9);
  DomainDataset empty = w.target;
  empty.episodes.clear();
  EXPECT_THROW(Trainer(small_config(), w.source, empty), std::invalid_argument);
  auto cfg = small_config();
  cfg.lambda = -1.0;
  EXPECT_THROW(Trainer(cfg, w.source, w.target), std::invalid_argument);
  cfg = small_config();
  cfg.horizon = 7;
  EXPECT_THROW(Trainer(cfg, w.source, w.target), std::invalid_argument);
  cfg = small_config();
  cfg.domain_loss = "wasserstein";
  EXPECT_THROW(Trainer(cfg, w.source, w.target), std::invalid_argument);
}

// Max player: discriminator-only steps on a frozen batch raise its accuracy.
// Min player: generator-only steps through gradient reversal lower it.
TEST(Adversary, MinMaxSanity) {
  auto cfg = cda::testing::toy_config();
  CdaModel model(cfg, 21);
  auto s = cda::testing::random_episodes(6, 6, cfg.d_x, cfg.n_treatments, cfg.u_dim, 1);
  auto t = cda::testing::random_episodes(6, 6, cfg.d_x, cfg.n_treatments, cfg.u_dim, 2);
  for (auto& ep : s)
    for (std::size_t i = 0; i < ep.x.size(); ++i) ep.x[i] += 1.5;
  const Batch bs = Batch::from_episodes(s), bt = Batch::from_episodes(t);
  auto correct_prob = [&](bool reverse) {
    auto logit = [&](const Batch& b, DomainTag tag) {
      ad::Node pooled = CdaModel::pooled_reconstruction(model.forward(b, tag, b.length));
      return model.discriminator_logit(reverse ? ad::grad_reverse(pooled) : pooled);
    };
    const ad::Node ls = logit(bs, DomainTag::kSource), lt = logit(bt, DomainTag::kTarget);
    const ad::Node loss = ad::scale(ad::add(bce_with_logits(ls, 1.0), bce_with_logits(lt, 0.0)), 0.5);
    double p = 0.0;
    for (double v : ls.value().data()) p += 1.0 / (1.0 + std::exp(-v));
    for (double v : lt.value().data()) p += 1.0 / (1.0 + std::exp(v));
    return std::pair{loss, p / static_cast<double>(ls.rows() + lt.rows())};
  };
  const double start = correct_prob(false).second;
  for (int i = 0; i < 30; ++i) {
    model.params().zero_grad();
    ad::backward(correct_prob(true).first);
    sgd_step(model.params().nodes(ParamGroup::kDiscriminator), 0.2);
  }
  const double trained = correct_prob(false).second;
  EXPECT_GT(trained, start);
  for (int i = 0; i < 30; ++i) {
    model.params().zero_grad();
    ad::backward(correct_prob(true).first);
    sgd_step(model.params().nodes(ParamGroup::kGenerator), 0.2);
  }
  EXPECT_LT(correct_prob(false).second, trained);
}

TEST(Objective, FullObjectivePassesGradientCheck) {
  const World w = make_world(2, 2, 6, 10);
  auto cfg = small_config();
  cfg.segment_length = 6;
  cfg.batch_size = 2;
  cfg.domain_loss = "both";
  cfg.gamma = 0.5;
  cfg.warmup_fraction = 0.0;
  Trainer t(cfg, w.source, w.target);
  const LossBreakdown ref = t.peek();
  ASSERT_TRUE(ref.l_disc.has_value());
  ASSERT_GT(ref.cross_term, 0.0);
  const auto params = t.state().model.params().nodes();
  GradCheckOptions o;
  o.max_coords_per_param = 6;
  const GradCheckReport r = grad_check([&] { return t.objective_node(); }, params, o);
  EXPECT_TRUE(r.pass) << r.max_rel_error;
}

TEST(Config, JsonRoundTripAndOverrides) {
  RunConfig c;
  c.seed = 42;
  c.train.lambda = 0.25;
  c.eval.taus = {12, 6};
  const std::string text = to_json(c);
  const RunConfig back = run_config_from_json(text);
  EXPECT_EQ(to_json(back), text);
  EXPECT_EQ(back.train.seed, 42u);
  EXPECT_THROW(run_config_from_json(R"({"train": {"lamda": 1}})"), std::invalid_argument);
  EXPECT_THROW(run_config_from_json(R"({"bogus": 1})"), std::invalid_argument);
  apply_override(c, "train.lambda", "0");
  EXPECT_EQ(c.train.lambda, 0.0);
  apply_override(c, "train.domain_loss", "both");
  EXPECT_EQ(c.train.domain_loss, "both");
  apply_override(c, "model.d_h", "7");
  EXPECT_EQ(c.train.model.d_h, 7u);
  EXPECT_THROW(apply_override(c, "train.nope", "1"), std::invalid_argument);
  EXPECT_THROW(apply_override(c, "train.epochs", "\"many\""), std::invalid_argument);
  const TrainConfig tc = train_config_from_json(train_config_to_json(c.train));
  EXPECT_EQ(train_config_to_json(tc), train_config_to_json(c.train));
}
