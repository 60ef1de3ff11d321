#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "modalcompose/errors.hpp"
#include "modalcompose/router.hpp"
#include "test_support.hpp"

using namespace modalcompose;
using modalcompose::testing::constant_action_dataset;
using modalcompose::testing::small_expert_config;

namespace {

Router two_way_router(std::uint64_t seed) {
  Rng rng(seed);
  return Router({"a", "b"}, {4, 3}, {}, rng);
}

std::vector<Embedding> random_embeddings(Rng& rng) {
  std::vector<Embedding> e(2);
  e[0].values.resize(4);
  e[1].values.resize(3);
  for (auto& emb : e) {
    for (auto& v : emb.values) v = rng.uniform(-2.0, 2.0);
  }
  return e;
}

void expect_valid(const ConsensusWeights& w) {
  double total = 0.0;
  for (double v : w.w) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

}  // namespace

TEST(RouterWeights, ZeroRouterIsUniform) {
  Router r = two_way_router(1);
  for (const auto& n : r.params().names()) r.params().value(n).fill(0.0);
  Rng rng(2);
  const auto w = r.weights(random_embeddings(rng));
  EXPECT_EQ(w.w, (std::vector<double>{0.5, 0.5}));
}

TEST(RouterWeights, AnalyticSoftmax) {
  const std::vector<double> logits{std::log(2.0), 0.0};
  const auto w = softmax(logits);
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(w[1], 1.0 / 3.0, 1e-12);
  const std::vector<double> big{800.0, -800.0, 0.0};
  expect_valid(softmax(big));
}

TEST(RouterWeights, OutputBiasSetsLogits) {
  Router r = two_way_router(1);
  for (const auto& n : r.params().names()) r.params().value(n).fill(0.0);
  r.params().value("router.l1.b").values() = {std::log(2.0), 0.0};
  Rng rng(3);
  const auto w = r.weights(random_embeddings(rng));
  EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-12);
}

TEST(RouterWeights, RandomRoutersGiveProbabilityVectors) {
  Rng data(4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Router r = two_way_router(seed);
    const auto w = r.weights(random_embeddings(data));
    expect_valid(w);
    for (double v : w.w) EXPECT_GT(v, 0.0);
  }
}

TEST(RouterWeights, WrongCountOrDimIsAContractError) {
  const Router r = two_way_router(1);
  Rng rng(5);
  auto e = random_embeddings(rng);
  std::swap(e[0], e[1]);
  EXPECT_THROW(r.weights(e), ContractError);
  e.pop_back();
  EXPECT_THROW(r.weights(e), ContractError);
}

TEST(Strategy, Examples) {
  const ConsensusWeights three{{0.2, 0.5, 0.3}};
  EXPECT_EQ(apply_strategy(three, RoutingStrategy::hard).w, (std::vector<double>{0, 1, 0}));
  const auto t2 = apply_strategy(ConsensusWeights{{0.5, 0.3, 0.2}}, RoutingStrategy::top2);
  EXPECT_NEAR(t2[0], 0.625, 1e-15);
  EXPECT_NEAR(t2[1], 0.375, 1e-15);
  EXPECT_EQ(t2[2], 0.0);
  EXPECT_EQ(apply_strategy(three, RoutingStrategy::soft), three);
}

TEST(Strategy, TiesPreferTheLowerIndex) {
  EXPECT_EQ(apply_strategy(ConsensusWeights{{0.4, 0.4, 0.2}}, RoutingStrategy::hard).w,
            (std::vector<double>{1, 0, 0}));
  const auto t2 = apply_strategy(ConsensusWeights{{0.2, 0.4, 0.2, 0.2}}, RoutingStrategy::top2);
  EXPECT_EQ(t2.w, (std::vector<double>{1.0 / 3.0, 2.0 / 3.0, 0, 0}));
}

TEST(Strategy, TopTwoWithTwoModalitiesIsSoft) {
  const ConsensusWeights w{{0.35, 0.65}};
  EXPECT_EQ(apply_strategy(w, RoutingStrategy::top2), w);
}

TEST(Strategy, PropertiesOverRandomWeights) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(0, 4);
    std::vector<double> logits(n);
    for (auto& v : logits) v = rng.normal() * 3.0;
    if (trial % 7 == 0 && n > 1) logits[1] = logits[0];  // exercise ties
    const auto w = softmax(logits);
    for (auto s : {RoutingStrategy::soft, RoutingStrategy::hard, RoutingStrategy::top2}) {
      const auto once = apply_strategy(w, s);
      expect_valid(once);
      EXPECT_EQ(apply_strategy(once, s), once);
    }
    const auto hard = apply_strategy(w, RoutingStrategy::hard);
    const auto argmax = [](const std::vector<double>& v) {
      return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
    };
    EXPECT_EQ(argmax(hard.w), argmax(w.w));
  }
}

TEST(Strategy, ParsesTokens) {
  EXPECT_EQ(parse_strategy("top2"), RoutingStrategy::top2);
  EXPECT_EQ(to_string(RoutingStrategy::hard), "hard");
  EXPECT_THROW(parse_strategy("top3"), ConfigError);
}

TEST(TrainRouter, ConcentratesOnTheCheatingExpert) {
  const DiffusionConfig diffusion;
  const auto sched = diffusion.schedule();
  const std::vector<double> a0{0.3, -0.2};
  const std::size_t rows = 256;
  Rng data(7);
  Tensor chunks({rows, 2}), emb_a({rows, 4}), emb_b({rows, 3});
  for (std::size_t r = 0; r < rows; ++r) {
    chunks.at(r, 0) = a0[0];
    chunks.at(r, 1) = a0[1];
  }
  for (auto& v : emb_a.data()) v = data.uniform(-1.0, 1.0);
  for (auto& v : emb_b.data()) v = data.uniform(-1.0, 1.0);
  // Expert "a" inverts the forward process exactly; expert "b" is garbage.
  const FrozenScore cheat = [&](const Tensor&, const Tensor& noised, std::span<const int> steps) {
    Tensor out(noised.dims());
    for (std::size_t r = 0; r < noised.rows(); ++r) {
      const double ab = sched.alpha_bar(steps[r]);
      for (std::size_t c = 0; c < 2; ++c) out.at(r, c) = (noised.at(r, c) - std::sqrt(ab) * a0[c]) / std::sqrt(1 - ab);
    }
    return out;
  };
  const FrozenScore garbage = [](const Tensor&, const Tensor& noised, std::span<const int>) {
    Tensor out(noised.dims());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 3.0 - 2.0 * noised[i];
    return out;
  };
  const FrozenScore scores[] = {cheat, garbage};
  const Tensor embeddings[] = {emb_a, emb_b};
  Rng rng(8);
  const auto trained = train_router(scores, embeddings, chunks, {"a", "b"}, {}, diffusion,
                                    {.steps = 300, .batch = 32, .learning_rate = 1e-2}, rng);
  double mean_w = 0.0;
  for (std::size_t r = 0; r < 20; ++r) {
    std::vector<Embedding> e{{{emb_a.row_span(r).begin(), emb_a.row_span(r).end()}},
                             {{emb_b.row_span(r).begin(), emb_b.row_span(r).end()}}};
    mean_w += trained.router.weights(e)[0] / 20.0;
  }
  EXPECT_GE(mean_w, 0.9);
}

class RouterOnExperts : public ::testing::Test {
 protected:
  void SetUp() override {
    ds = constant_action_dataset({0.3, -0.2});
    for (const char* m : {"a", "b"}) {
      Rng rng(stream_key(20, m[0]));
      experts.push_back(train_expert(ds, m, small_expert_config(), {}, {.steps = 20, .batch = 16}, rng).expert);
    }
  }
  Router fresh(std::uint64_t seed) const {
    Rng rng(seed);
    return Router({"a", "b"}, {experts[0].embedding_dim(), experts[1].embedding_dim()}, {}, rng);
  }
  Dataset ds;
  std::vector<ModalityExpert> experts;
};

TEST_F(RouterOnExperts, ZeroStepsIsTheInitialization) {
  Rng rng(21);
  const auto trained = train_router(experts, ds, {}, {}, {.steps = 0}, rng);
  EXPECT_EQ(trained.router.params(), fresh(21).params());
  EXPECT_TRUE(trained.loss_history.empty());
}

TEST_F(RouterOnExperts, ExpertsAreUnchangedAndRunsAreReproducible) {
  const auto before_a = experts[0].params().checksum(), before_b = experts[1].params().checksum();
  Rng r1(22), r2(22);
  const auto x = train_router(experts, ds, {}, {}, {.steps = 25, .batch = 16}, r1);
  const auto y = train_router(experts, ds, {}, {}, {.steps = 25, .batch = 16}, r2);
  EXPECT_EQ(experts[0].params().checksum(), before_a);
  EXPECT_EQ(experts[1].params().checksum(), before_b);
  EXPECT_EQ(x.router.params(), y.router.params());
  EXPECT_EQ(x.loss_history.size(), 25u);
}

TEST_F(RouterOnExperts, JointModeUpdatesExperts) {
  Rng rng(23);
  const auto joint = train_joint(experts, fresh(24), ds, {}, {.steps = 5, .batch = 16}, rng);
  EXPECT_NE(joint.experts[0].params(), experts[0].params());
  EXPECT_NE(joint.experts[1].params(), experts[1].params());
  EXPECT_NE(joint.router.params(), fresh(24).params());
}

TEST_F(RouterOnExperts, JointModeRejectsOrderMismatch) {
  Rng rng(25), init(26);
  Router swapped({"b", "a"}, {experts[1].embedding_dim(), experts[0].embedding_dim()}, {}, init);
  EXPECT_THROW(train_joint(experts, swapped, ds, {}, {.steps = 1}, rng), ContractError);
}
