#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "modalcompose/autograd.hpp"
#include "modalcompose/errors.hpp"
#include "modalcompose/mlp.hpp"
#include "modalcompose/optim.hpp"
#include "modalcompose/rng.hpp"
#include "modalcompose/tensor.hpp"

using namespace modalcompose;

namespace {

double loss_of(const Mlp& mlp, const ParamSet& p, const Tensor& x) {
  const Tensor y = mlp.forward(p, x);
  double s = 0.0;
  for (double v : y.data()) s += v * v;
  return 0.5 * s;
}

}  // namespace

TEST(Rng, StreamsAreReproducibleAndIndependent) {
  Rng a(stream_key(7, 3)), b(stream_key(7, 3)), c(stream_key(7, 4));
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
  // The n-th draw is a pure function of the key and n.
  Rng d(42);
  d.next_u64();
  d.next_u64();
  EXPECT_EQ(d.next_u64(), splitmix64(42 + 2 * 0x9E3779B97F4A7C15ULL));
}

TEST(Rng, UniformAndNormalMoments) {
  Rng r(1);
  double su = 0.0, sn = 0.0, sn2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.01);
}

TEST(Rng, UniformIntCoversInclusiveRange) {
  Rng r(9);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(r.uniform_int(-2, 2));
  EXPECT_EQ(seen, (std::set<int>{-2, -1, 0, 1, 2}));
}

TEST(Tensor, ShapeContract) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(Tensor::row(std::vector<double>{1, 2}).rows(), 1u);
}

TEST(ParamSet, NamesAreUniqueAndGradShapesMatch) {
  ParamSet p;
  p.add("a", Tensor({2, 2}, 1.0));
  EXPECT_THROW(p.add("a", Tensor({1}, 0.0)), ContractError);
  EXPECT_THROW(p.value("missing"), ContractError);
  EXPECT_TRUE(p.grad("a").same_shape(p.value("a")));
  EXPECT_EQ(p.scalar_count(), 4u);
}

TEST(Autograd, QuadraticGradientIsTwiceTheWeights) {
  ParamSet p;
  p.add("w", Tensor::matrix(1, 3, {0.5, -1.5, 2.0}));
  Graph g;
  const Var w = g.param(p, "w");
  g.backward(g.sum(g.mul(w, w)), p);
  const auto& grad = p.grad("w");
  EXPECT_EQ(grad[0], 1.0);
  EXPECT_EQ(grad[1], -3.0);
  EXPECT_EQ(grad[2], 4.0);
}

TEST(Autograd, UnusedParameterGetsExactlyZero) {
  ParamSet p;
  p.add("used", Tensor::matrix(1, 2, {1.0, 2.0}));
  p.add("unused", Tensor::matrix(1, 2, {3.0, 4.0}));
  p.grad("unused").fill(7.0);
  Graph g;
  g.backward(g.sum(g.param(p, "used")), p);
  EXPECT_EQ(p.grad("unused")[0], 0.0);
  EXPECT_EQ(p.grad("unused")[1], 0.0);
}

TEST(Autograd, GradientsAreOverwrittenNotAccumulated) {
  ParamSet p;
  p.add("w", Tensor::matrix(1, 1, {3.0}));
  for (int i = 0; i < 3; ++i) {
    Graph g;
    const Var w = g.param(p, "w");
    g.backward(g.sum(g.mul(w, w)), p);
    EXPECT_EQ(p.grad("w")[0], 6.0);
  }
}

TEST(Autograd, NonScalarLossIsAContractError) {
  ParamSet p;
  p.add("w", Tensor::matrix(1, 2, {1.0, 2.0}));
  Graph g;
  const Var w = g.param(p, "w");
  EXPECT_THROW(g.backward(g.mul(w, w), p), ContractError);
}

TEST(Autograd, NonFiniteValuesSurfaceAsErrors) {
  Graph g;
  const Var a = g.constant(Tensor::matrix(1, 1, {1e300}));
  EXPECT_THROW(g.mul(a, a), NumericError);
}

TEST(Autograd, ShapeMismatchIsAShapeError) {
  Graph g;
  const Var a = g.constant(Tensor({2, 3}));
  const Var b = g.constant(Tensor({2, 3}));
  EXPECT_THROW(g.matmul(a, b), ShapeError);
}

TEST(Autograd, SoftmaxRowsSumToOne) {
  Graph g;
  const Var s = g.softmax_rows(g.constant(Tensor::matrix(2, 3, {1, 2, 3, -1000, 0, 1000})));
  const Tensor& v = g.value(s);
  EXPECT_NEAR(v.at(0, 0) + v.at(0, 1) + v.at(0, 2), 1.0, 1e-15);
  EXPECT_NEAR(v.at(1, 2), 1.0, 1e-15);
}

TEST(Mlp, ZeroWeightsGiveTheBias) {
  const Mlp mlp("m.", {3, {4}, 2, Activation::tanh});
  ParamSet p;
  Rng r(1);
  mlp.init(p, r);
  for (const auto& name : p.names()) p.value(name).fill(0.0);
  p.value("m.l1.b")[0] = 0.25;
  p.value("m.l1.b")[1] = -1.5;
  const Tensor y = mlp.forward(p, Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  for (std::size_t r2 = 0; r2 < 2; ++r2) {
    EXPECT_EQ(y.at(r2, 0), 0.25);
    EXPECT_EQ(y.at(r2, 1), -1.5);
  }
}

TEST(Mlp, IdentityLinearLayer) {
  const Mlp mlp("", {3, {}, 3, Activation::tanh});
  ParamSet p;
  Rng r(1);
  mlp.init(p, r);
  auto& w = p.value("l0.W");
  w.fill(0.0);
  for (std::size_t i = 0; i < 3; ++i) w.at(i, i) = 1.0;
  const Tensor x = Tensor::matrix(1, 3, {0.1, -7.0, 3.5});
  EXPECT_EQ(mlp.forward(p, x), x);
}

TEST(Mlp, HandComputedTwoThreeOne) {
  const Mlp mlp("", {2, {3}, 1, Activation::tanh});
  ParamSet p;
  Rng r(1);
  mlp.init(p, r);
  // W0 [2 x 3], b0 [3], W1 [3 x 1], b1 [1]
  p.value("l0.W").values() = {0.1, -0.2, 0.3, 0.4, 0.5, -0.6};
  p.value("l0.b").values() = {0.01, 0.02, -0.03};
  p.value("l1.W").values() = {0.7, -0.8, 0.9};
  p.value("l1.b").values() = {0.05};
  const double x0 = 0.5, x1 = -1.0;
  const double h0 = std::tanh(0.1 * x0 + 0.4 * x1 + 0.01);
  const double h1 = std::tanh(-0.2 * x0 + 0.5 * x1 + 0.02);
  const double h2 = std::tanh(0.3 * x0 - 0.6 * x1 - 0.03);
  const double expected = 0.7 * h0 - 0.8 * h1 + 0.9 * h2 + 0.05;
  const Tensor y = mlp.forward(p, Tensor::matrix(1, 2, {x0, x1}));
  EXPECT_NEAR(y[0], expected, 1e-12);
}

TEST(Mlp, InputWidthMismatchIsAShapeError) {
  const Mlp mlp("", {2, {3}, 1, Activation::tanh});
  ParamSet p;
  Rng r(1);
  mlp.init(p, r);
  EXPECT_THROW(mlp.forward(p, Tensor::matrix(1, 3, {1, 2, 3})), ShapeError);
}

TEST(Mlp, SpecRoundTripsThroughText) {
  const MlpSpec s{52, {128, 128}, 2, Activation::relu};
  EXPECT_EQ(MlpSpec::decode(s.encode()), s);
  EXPECT_EQ(s.param_count(), 52u * 128 + 128 + 128 * 128 + 128 + 128 * 2 + 2);
  EXPECT_THROW(MlpSpec::decode("3::x"), ConfigError);
}

TEST(Mlp, InitIsDeterministicAndBounded) {
  const Mlp mlp("", {5, {7}, 3, Activation::tanh});
  ParamSet a, b;
  Rng ra(11), rb(11);
  mlp.init(a, ra);
  mlp.init(b, rb);
  EXPECT_EQ(a, b);
  const double limit = std::sqrt(6.0 / 12.0);
  for (double v : a.value("l0.W").data()) EXPECT_LE(std::abs(v), limit);
  for (double v : a.value("l0.b").data()) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, ScalarExamples) {
  ParamSet p;
  p.add("x", Tensor::matrix(1, 1, {3.0}));
  auto g = finite_diff_grad([](const ParamSet& q) { return q.value("x")[0] * q.value("x")[0]; }, p, 1e-6);
  EXPECT_NEAR(g.at("x")[0], 6.0, 1e-6);
  p.value("x")[0] = 0.0;
  g = finite_diff_grad([](const ParamSet& q) { return std::sin(q.value("x")[0]); }, p, 1e-6);
  EXPECT_NEAR(g.at("x")[0], 1.0, 1e-9);
  EXPECT_EQ(p.value("x")[0], 0.0);  // restored
}

// Relative error per network: ||g_backward - g_fd|| / (||g_backward|| + ||g_fd||).
TEST(FiniteDiff, BackwardMatchesOnFiftyRandomMlps) {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    MlpSpec spec;
    spec.input_dim = 1 + rng.uniform_int(0, 4);
    const int depth = rng.uniform_int(1, 3);
    for (int l = 0; l < depth; ++l) spec.hidden_widths.push_back(1 + rng.uniform_int(0, 5));
    spec.output_dim = 1 + rng.uniform_int(0, 2);
    spec.activation = trial % 5 == 4 ? Activation::relu : Activation::tanh;
    const Mlp mlp("net.", spec);
    ParamSet p;
    mlp.init(p, rng);
    for (const auto& name : p.names()) {
      for (auto& v : p.value(name).data()) v += 0.1 * rng.normal();  // nonzero biases too
    }
    const std::size_t batch = 1 + rng.uniform_int(0, 3);
    Tensor x({batch, spec.input_dim});
    for (auto& v : x.data()) v = rng.normal();

    Graph g;
    const Var y = mlp.forward(g, p, g.constant(x));
    g.backward(g.scale(g.sum(g.mul(y, y)), 0.5), p);
    const auto fd = finite_diff_grad([&](const ParamSet& q) { return loss_of(mlp, q, x); }, p, 1e-6);
    double diff = 0.0, na = 0.0, nf = 0.0;
    for (const auto& name : p.names()) {
      const auto& a = p.grad(name);
      const auto& f = fd.at(name);
      for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - f[i]) * (a[i] - f[i]);
        na += a[i] * a[i];
        nf += f[i] * f[i];
      }
    }
    const double rel = std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nf) + 1e-300);
    worst = std::max(worst, rel);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamSet p;
  p.add("w", Tensor::matrix(1, 2, {1.0, -2.0}));
  const ParamSet before = p;
  Adam adam;
  for (int i = 0; i < 10; ++i) {
    p.zero_grad();
    adam.step(p);
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(adam.steps(), 10);
}

TEST(Adam, FirstStepMovesByTheLearningRate) {
  ParamSet p;
  p.add("w", Tensor::matrix(1, 2, {1.0, 1.0}));
  p.grad("w").values() = {3.0, -0.5};
  Adam adam({0.01});
  adam.step(p);
  EXPECT_NEAR(p.value("w")[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value("w")[1], 1.0 + 0.01, 1e-9);
}

TEST(Adam, ConvergesOnAQuadratic) {
  ParamSet p;
  p.add("w", Tensor::matrix(1, 1, {0.0}));
  Adam adam({0.1});
  // Independent scalar recurrence of the same update.
  double w = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    p.grad("w")[0] = 2.0 * (p.value("w")[0] - 5.0);
    adam.step(p);
    const double g = 2.0 * (w - 5.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p.value("w")[0], w, 1e-12);
  EXPECT_LT(std::abs(p.value("w")[0] - 5.0), 0.5);
}

TEST(Adam, NanGradientNamesTheParameter) {
  ParamSet p;
  p.add("enc.l0.W", Tensor::matrix(1, 1, {0.0}));
  p.grad("enc.l0.W")[0] = std::nan("");
  Adam adam;
  try {
    adam.step(p);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.l0.W"), std::string::npos);
  }
}
