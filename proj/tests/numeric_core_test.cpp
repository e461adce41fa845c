#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>

#include "cda/autodiff.hpp"
#include "cda/checkpoint.hpp"
#include "cda/grad_check.hpp"
#include "cda/optim.hpp"

using namespace cda;
namespace fs = std::filesystem;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Weighted sum with fixed random weights so every output coordinate matters.
ad::Node probe(const ad::Node& out, const Tensor& weights) {
  return ad::sum_all(ad::mul(out, ad::constant(weights)));
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t(2, 3);
  EXPECT_EQ(t.shape(), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(t.size(), 6u);
}

TEST(ForwardOps, MatmulIdentity) {
  auto a = ad::constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto out = ad::matmul(a, ad::constant(Tensor::identity(2)));
  EXPECT_EQ(out.value(), Tensor::from_rows({{1, 2}, {3, 4}}));
}

TEST(ForwardOps, SigmoidAtZero) {
  EXPECT_DOUBLE_EQ(ad::sigmoid(ad::constant(Tensor::scalar(0.0))).item(), 0.5);
}

TEST(ForwardOps, SumAxis) {
  auto a = ad::constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(ad::sum_axis(a, 0).value(), Tensor::from_rows({{4, 6}}));
  EXPECT_EQ(ad::sum_axis(a, 1).value(), Tensor::from_rows({{3}, {7}}));
}

TEST(ForwardOps, ShapeErrorNamesOpAndShapes) {
  auto a = ad::constant(Tensor(2, 3));
  auto b = ad::constant(Tensor(2, 2));
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x2]"), std::string::npos);
  }
  EXPECT_THROW(ad::add(a, b), ShapeError);
  // only a single-row operand may broadcast
  EXPECT_THROW(ad::add(ad::constant(Tensor(3, 2)), ad::constant(Tensor(2, 2))), ShapeError);
  EXPECT_NO_THROW(ad::add(ad::constant(Tensor(3, 2)), ad::constant(Tensor(1, 2))));
}

TEST(ForwardOps, LogOfNonPositiveIsAnError) {
  EXPECT_THROW(ad::log(ad::constant(Tensor::scalar(0.0))), NumericError);
  EXPECT_THROW(ad::log(ad::constant(Tensor::scalar(-1.0))), NumericError);
}

TEST(ForwardOps, ExpClampsAndCounts) {
  ad::reset_exp_clamp_count();
  auto x = ad::parameter(Tensor::from_rows({{50.0, 1.0}}));
  auto y = ad::exp(x);
  EXPECT_DOUBLE_EQ(y.value()(0, 0), std::exp(ad::kExpClamp));
  EXPECT_EQ(ad::exp_clamp_count(), 1u);
  ad::backward(ad::sum_all(y));
  EXPECT_EQ(x.grad()(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(x.grad()(0, 1), std::exp(1.0));
}

TEST(ForwardOps, NonFiniteForwardIsAnError) {
  auto big = ad::constant(Tensor::scalar(1e300));
  EXPECT_THROW(ad::mul(big, big), NumericError);
}

TEST(Backward, SquareGradient) {
  auto x = ad::parameter(Tensor::scalar(3.0));
  ad::backward(ad::mul(x, x));
  EXPECT_DOUBLE_EQ(x.grad().item(), 6.0);
}

TEST(Backward, ConstantRootGivesZeroGradient) {
  auto x = ad::parameter(Tensor::scalar(3.0));
  auto c = ad::parameter(Tensor::scalar(2.0));
  ad::backward(ad::square(c));
  EXPECT_EQ(x.grad().item(), 0.0);
}

TEST(Backward, NonScalarRootIsAnError) {
  auto x = ad::parameter(Tensor(2, 2, 1.0));
  EXPECT_THROW(ad::backward(ad::tanh(x)), ShapeError);
}

TEST(Backward, IdempotentAfterZeroGrad) {
  auto x = ad::parameter(Tensor::from_rows({{0.3, -0.7}}));
  auto root = ad::sum_all(ad::tanh(ad::mul(x, x)));
  ad::backward(root);
  const Tensor first = x.grad();
  x.zero_grad();
  ad::backward(root);
  EXPECT_EQ(x.grad(), first);
}

TEST(Backward, TanhMatmulMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto W = ad::parameter(random_tensor(rng, 4, 3));
  auto x = ad::parameter(random_tensor(rng, 2, 4));
  auto f = [&] { return ad::sum_all(ad::tanh(ad::matmul(x, W))); };
  GradCheckOptions opt;
  opt.step = 1e-5;
  opt.tolerance = 1e-4;
  std::vector<ad::Node> params{W, x};
  auto report = grad_check(f, params, opt);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

// Every registered op against central differences on randomized shapes.
TEST(BackwardProperty, AllOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<int> dim(1, 4);
  using Unary = std::function<ad::Node(const ad::Node&)>;
  using Binary = std::function<ad::Node(const ad::Node&, const ad::Node&)>;
  const std::vector<std::pair<const char*, Unary>> unary = {
      {"tanh", [](const ad::Node& a) { return ad::tanh(a); }},
      {"sigmoid", [](const ad::Node& a) { return ad::sigmoid(a); }},
      {"exp", [](const ad::Node& a) { return ad::exp(a); }},
      {"log", [](const ad::Node& a) { return ad::log(ad::add_scalar(ad::square(a), 0.5)); }},
      {"square", [](const ad::Node& a) { return ad::square(a); }},
      {"sqrt", [](const ad::Node& a) { return ad::sqrt(ad::add_scalar(ad::square(a), 0.5)); }},
      {"softplus", [](const ad::Node& a) { return ad::softplus(a); }},
      {"scale", [](const ad::Node& a) { return ad::scale(a, -1.7); }},
      {"sum0", [](const ad::Node& a) { return ad::sum_axis(a, 0); }},
      {"sum1", [](const ad::Node& a) { return ad::sum_axis(a, 1); }},
      {"mean0", [](const ad::Node& a) { return ad::mean_axis(a, 0); }},
      {"mean1", [](const ad::Node& a) { return ad::mean_axis(a, 1); }},
      {"l2", [](const ad::Node& a) { return ad::l2_norm_sq(a); }},
      {"softmax0", [](const ad::Node& a) { return ad::softmax(a, 0); }},
      {"softmax1", [](const ad::Node& a) { return ad::softmax(a, 1); }},
      {"slice", [](const ad::Node& a) { return ad::slice_cols(a, 0, (a.cols() + 1) / 2); }},
  };
  const std::vector<std::pair<const char*, Binary>> binary = {
      {"add", [](const ad::Node& a, const ad::Node& b) { return ad::add(a, b); }},
      {"sub", [](const ad::Node& a, const ad::Node& b) { return ad::sub(a, b); }},
      {"mul", [](const ad::Node& a, const ad::Node& b) { return ad::mul(a, b); }},
      {"concat_cols",
       [](const ad::Node& a, const ad::Node& b) {
         std::vector<ad::Node> p{a, b};
         return ad::concat_cols(p);
       }},
      {"concat_rows",
       [](const ad::Node& a, const ad::Node& b) {
         std::vector<ad::Node> p{a, b};
         return ad::concat_rows(p);
       }},
      {"row_dot", [](const ad::Node& a, const ad::Node& b) { return ad::row_dot(a, b); }},
      {"add_n",
       [](const ad::Node& a, const ad::Node& b) {
         std::vector<ad::Node> p{a, b, a};
         return ad::add_n(p);
       }},
  };
  GradCheckOptions opt;
  opt.step = 1e-5;
  opt.tolerance = 1e-4;
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t r = dim(rng), c = dim(rng);
    for (const auto& [name, op] : unary) {
      auto a = ad::parameter(random_tensor(rng, r, c));
      const Tensor w = random_tensor(rng, op(a).rows(), op(a).cols());
      std::vector<ad::Node> params{a};
      auto rep = grad_check([&] { return probe(op(a), w); }, params, opt);
      EXPECT_TRUE(rep.pass) << name << " max rel " << rep.max_rel_error;
    }
    for (const auto& [name, op] : binary) {
      auto a = ad::parameter(random_tensor(rng, r, c));
      auto b = ad::parameter(random_tensor(rng, r, c));
      const Tensor w = random_tensor(rng, op(a, b).rows(), op(a, b).cols());
      std::vector<ad::Node> params{a, b};
      auto rep = grad_check([&] { return probe(op(a, b), w); }, params, opt);
      EXPECT_TRUE(rep.pass) << name << " max rel " << rep.max_rel_error;
    }
    // batch broadcast on either side
    for (int side = 0; side < 2; ++side) {
      auto a = ad::parameter(random_tensor(rng, r + 1, c));
      auto b = ad::parameter(random_tensor(rng, 1, c));
      const Tensor w = random_tensor(rng, r + 1, c);
      std::vector<ad::Node> params{a, b};
      for (auto f : {+[](const ad::Node& x, const ad::Node& y) { return ad::add(x, y); },
                     +[](const ad::Node& x, const ad::Node& y) { return ad::sub(x, y); },
                     +[](const ad::Node& x, const ad::Node& y) { return ad::mul(x, y); }}) {
        auto rep = grad_check([&] { return side == 0 ? probe(f(a, b), w) : probe(f(b, a), w); }, params, opt);
        EXPECT_TRUE(rep.pass) << "broadcast side " << side << " max rel " << rep.max_rel_error;
      }
    }
    {
      auto a = ad::parameter(random_tensor(rng, r, c));
      auto b = ad::parameter(random_tensor(rng, c, dim(rng)));
      const Tensor w = random_tensor(rng, r, b.cols());
      std::vector<ad::Node> params{a, b};
      auto rep = grad_check([&] { return probe(ad::matmul(a, b), w); }, params, opt);
      EXPECT_TRUE(rep.pass) << "matmul max rel " << rep.max_rel_error;
    }
    {
      auto a = ad::parameter(random_tensor(rng, r, c));
      auto s = ad::parameter(random_tensor(rng, r, 1));
      const Tensor w = random_tensor(rng, r, c);
      std::vector<ad::Node> params{a, s};
      auto rep = grad_check([&] { return probe(ad::scale_rows(a, s), w); }, params, opt);
      EXPECT_TRUE(rep.pass) << "scale_rows max rel " << rep.max_rel_error;
    }
  }
}

TEST(Backward, GradReverseNegatesAndScales) {
  auto x = ad::parameter(Tensor::from_rows({{0.2, -0.4}}));
  auto y = ad::grad_reverse(ad::tanh(x), 0.5);
  EXPECT_EQ(y.value(), ad::tanh(ad::constant(x.value())).value());
  ad::backward(ad::sum_all(y));
  for (std::size_t i = 0; i < 2; ++i) {
    const double t = std::tanh(x.value()[i]);
    EXPECT_DOUBLE_EQ(x.grad()[i], -0.5 * (1 - t * t));
  }
}

TEST(BackwardProperty, SoftmaxGradientSumsToZeroUnderUniformUpstream) {
  std::mt19937_64 rng(5);
  for (int axis = 0; axis < 2; ++axis) {
    auto a = ad::parameter(random_tensor(rng, 3, 4, -3, 3));
    ad::backward(ad::sum_all(ad::scale(ad::softmax(a, axis), 2.5)));
    const Tensor g = a.grad();
    auto sums = ad::sum_axis(ad::constant(g), axis).value();
    for (double s : sums.data()) EXPECT_NEAR(s, 0.0, 1e-15);
  }
}

TEST(BackwardProperty, EvaluationIsDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(99);
    auto W = ad::parameter(random_tensor(rng, 5, 5));
    auto x = ad::constant(random_tensor(rng, 3, 5));
    auto y = ad::sum_all(ad::softmax(ad::tanh(ad::matmul(x, W)), 1));
    ad::backward(y);
    return std::make_pair(y.item(), W.grad());
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(std::memcmp(&a.first, &b.first, sizeof(double)), 0);
  EXPECT_EQ(a.second, b.second);
}

TEST(GradCheck, QuadraticPassesTightTolerance) {
  auto x = ad::parameter(Tensor::from_rows({{0.5, -1.5, 2.0}}));
  auto A = ad::constant(Tensor::from_rows({{2, 0.5, 0}, {0.5, 1, 0.1}, {0, 0.1, 3}}));
  auto f = [&] { return ad::sum_all(ad::mul(ad::matmul(x, A), x)); };
  GradCheckOptions opt;
  opt.tolerance = 1e-6;
  std::vector<ad::Node> params{x};
  EXPECT_TRUE(grad_check(f, params, opt).pass);
}

TEST(GradCheck, ZeroToleranceFailsWithReport) {
  auto x = ad::parameter(Tensor::from_rows({{0.3, 0.9}}));
  auto f = [&] { return ad::sum_all(ad::tanh(ad::exp(x))); };
  GradCheckOptions opt;
  opt.tolerance = 0.0;
  std::vector<ad::Node> params{x};
  auto rep = grad_check(f, params, opt);
  EXPECT_FALSE(rep.pass);
  EXPECT_EQ(rep.failures.size(), 2u);
  EXPECT_GE(rep.max_rel_error, 0.0);
}

TEST(GradCheck, RejectsBadStep) {
  auto x = ad::parameter(Tensor::scalar(1.0));
  std::vector<ad::Node> params{x};
  GradCheckOptions opt;
  opt.step = 0.0;
  EXPECT_THROW(grad_check([&] { return ad::square(x); }, params, opt), std::invalid_argument);
}

TEST(GradCheck, NonFiniteAtPerturbedPointIsAnError) {
  auto x = ad::parameter(Tensor::scalar(1e-6));
  std::vector<ad::Node> params{x};
  GradCheckOptions opt;
  opt.step = 1e-3;
  EXPECT_THROW(grad_check([&] { return ad::log(x); }, params, opt), NumericError);
}

TEST(Sgd, SingleStep) {
  auto p = ad::parameter(Tensor::scalar(1.0));
  ad::backward(ad::scale(p, 2.0));
  std::vector<ad::Node> params{p};
  sgd_step(params, 0.1);
  EXPECT_DOUBLE_EQ(p.value().item(), 0.8);
}

TEST(Sgd, ZeroGradientIsAFixedPoint) {
  auto p = ad::parameter(Tensor::from_rows({{1.0, -2.0}}));
  std::vector<ad::Node> params{p};
  sgd_step(params, 0.5);
  EXPECT_EQ(p.value(), Tensor::from_rows({{1.0, -2.0}}));
}

TEST(Sgd, ConvergesOnParabola) {
  auto x = ad::parameter(Tensor::scalar(1.0));
  std::vector<ad::Node> params{x};
  for (int i = 0; i < 100; ++i) {
    x.zero_grad();
    ad::backward(ad::square(x));
    sgd_step(params, 0.1);
  }
  // closed form: 0.8^100 ~ 2.0e-10
  EXPECT_LT(std::abs(x.value().item()), 1e-8);
  EXPECT_NEAR(x.value().item(), std::pow(0.8, 100), 1e-20);
}

TEST(Sgd, NonFiniteGradientNamesParameter) {
  ParamStore store;
  auto w = store.add("head.W", Tensor::scalar(1.0));
  w.data()->grad = Tensor::scalar(std::numeric_limits<double>::infinity());
  Optimizer opt(OptimizerConfig{"sgd", 0.1});
  try {
    opt.step(store, ParamGroup::kGenerator);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head.W"), std::string::npos);
  }
}

TEST(Optimizer, OnlyTouchesRequestedGroup) {
  ParamStore store;
  auto g = store.add("g", Tensor::scalar(1.0), ParamGroup::kGenerator);
  auto d = store.add("d", Tensor::scalar(1.0), ParamGroup::kDiscriminator);
  ad::backward(ad::add(g, d));
  Optimizer opt(OptimizerConfig{"sgd", 0.5, 0.9});
  opt.step(store, ParamGroup::kGenerator);
  EXPECT_DOUBLE_EQ(g.value().item(), 0.5);
  EXPECT_DOUBLE_EQ(d.value().item(), 1.0);
}

TEST(Optimizer, ClipGradNorm) {
  auto a = ad::parameter(Tensor::from_rows({{3.0, 4.0}}));
  ad::backward(ad::scale(ad::l2_norm_sq(a), 0.5));  // grad = a
  std::vector<ad::Node> params{a};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(a.grad()(0, 1), 0.8, 1e-15);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  Checkpoint c;
  c.tensors["w"] = random_tensor(rng, 3, 2, -1e5, 1e5);
  c.tensors["tiny"] = Tensor::from_rows({{1e-310, -0.0, 0.1}});
  c.texts["config"] = "{\"a\": 1}\nsecond line";
  const auto path = fs::temp_directory_path() / "cda_ckpt_roundtrip.txt";
  write_checkpoint(c, path);
  Checkpoint back = read_checkpoint(path);
  ASSERT_EQ(back.tensors.size(), 2u);
  for (const auto& [k, t] : c.tensors) {
    const Tensor& u = back.tensors.at(k);
    ASSERT_TRUE(t.same_shape(u));
    EXPECT_EQ(std::memcmp(t.data().data(), u.data().data(), t.size() * sizeof(double)), 0) << k;
  }
  EXPECT_EQ(back.texts.at("config"), c.texts.at("config"));
  fs::remove(path);
}

TEST(Checkpoint, CorruptMagicIsRejected) {
  try {
    parse_checkpoint("XDA-CKPT-1\nend\n");
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("CDA-CKPT-1 expected"), std::string::npos);
  }
  try {
    parse_checkpoint("CDA-CKPT-2\nend\n");
    FAIL();
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("CDA-CKPT-1"), std::string::npos);
    EXPECT_NE(msg.find("CDA-CKPT-2"), std::string::npos);
  }
  EXPECT_THROW(parse_checkpoint("CDA-CKPT-1\ntensor w 1 2\n0x1p+0\n"), std::runtime_error);
}
