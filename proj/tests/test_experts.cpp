#include <gtest/gtest.h>

#include <cmath>

#include "modalcompose/errors.hpp"
#include "modalcompose/experts.hpp"
#include "test_support.hpp"

using namespace modalcompose;
using modalcompose::testing::constant_action_dataset;
using modalcompose::testing::small_expert_config;
using modalcompose::testing::small_shape;

namespace {

void zero_prefix(ParamSet& p, const std::string& prefix) {
  for (const auto& n : p.names()) {
    if (n.rfind(prefix, 0) == 0) p.value(n).fill(0.0);
  }
}

void copy_prefix(ParamSet& p, const std::string& from, const std::string& to) {
  for (const auto& n : p.names()) {
    if (n.rfind(from, 0) == 0) p.value(to + n.substr(from.size())) = p.value(n);
  }
}

}  // namespace

TEST(Encode, ZeroWeightEncoderGivesBiasThenRobotState) {
  Rng rng(1);
  ModalityExpert ex(small_shape(), rng);
  zero_prefix(ex.params(), "encoder.");
  auto& b = ex.params().value("encoder.l1.b");
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.1 * static_cast<double>(i);
  const std::vector<double> m{1, 2, 3}, r{-0.5, 0.25};
  const auto e = ex.encode(m, r).values;
  ASSERT_EQ(e.size(), 10u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(e[i], 0.1 * static_cast<double>(i));
  EXPECT_EQ(e[8], -0.5);
  EXPECT_EQ(e[9], 0.25);
}

TEST(Encode, NoRobotStateGivesCodeAlone) {
  Rng rng(1);
  ModalityExpert ex(small_shape("a", 3, 0), rng);
  EXPECT_EQ(ex.encode(std::vector<double>{1, 2, 3}, {}).values.size(), 8u);
}

TEST(Encode, MatchesPlainMlpForward) {
  Rng rng(2);
  ModalityExpert ex(small_shape(), rng);
  const Mlp enc("encoder.", ex.shape().encoder_spec());
  const std::vector<double> m{0.3, -0.1, 0.9};
  const Tensor code = enc.forward(ex.params(), Tensor::row(m));
  const auto e = ex.encode(m, std::vector<double>{0.0, 0.0}).values;
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(e[i], code[i]);
}

TEST(Encode, DimensionMismatchIsAShapeError) {
  Rng rng(1);
  ModalityExpert ex(small_shape(), rng);
  EXPECT_THROW(ex.encode(std::vector<double>{1, 2}, std::vector<double>{0, 0}), ShapeError);
  EXPECT_THROW(ex.encode(std::vector<double>{1, 2, 3}, std::vector<double>{0}), ShapeError);
}

TEST(SubPolicy, ZeroWeightNetGivesBias) {
  Rng rng(3);
  ModalityExpert ex(small_shape(), rng);
  zero_prefix(ex.params(), "sub0.");
  ex.params().value("sub0.l2.b").values() = {0.7, -0.4};
  const auto e = ex.encode(std::vector<double>{1, 2, 3}, std::vector<double>{0, 0});
  const auto out = ex.subpolicy_eps(0, std::vector<double>{0.2, 0.2}, e, 17);
  EXPECT_EQ(out, (std::vector<double>{0.7, -0.4}));
}

TEST(SubPolicy, DeterministicAndStepSensitive) {
  Rng rng(4);
  ModalityExpert ex(small_shape(), rng);
  const auto e = ex.encode(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{0.4, 0.5});
  const std::vector<double> a{0.05, -0.6};
  EXPECT_EQ(ex.subpolicy_eps(0, a, e, 9), ex.subpolicy_eps(0, a, e, 9));
  std::vector<std::vector<double>> seen;
  for (int k = 1; k <= 50; ++k) {
    const auto out = ex.subpolicy_eps(0, a, e, k);
    for (const auto& prev : seen) EXPECT_NE(out, prev) << "k=" << k;
    seen.push_back(out);
  }
  EXPECT_THROW(ex.subpolicy_eps(0, a, e, 0), ContractError);
  EXPECT_THROW(ex.subpolicy_eps(0, a, e, 51), ContractError);
  EXPECT_THROW(ex.subpolicy_eps(0, std::vector<double>{0.0}, e, 5), ShapeError);
}

TEST(IntraCompose, SingleSubPolicyIsThatSubPolicy) {
  auto shape = small_shape();
  shape.config.sub_policies = 1;
  Rng rng(5);
  ModalityExpert ex(shape, rng);
  const auto e = ex.encode(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{0.4, 0.5});
  const std::vector<double> a{0.3, 0.3};
  EXPECT_EQ(ex.intra_compose(a, e, 12), ex.subpolicy_eps(0, a, e, 12));
}

TEST(IntraCompose, IdenticalSubPoliciesGiveEitherOne) {
  Rng rng(6);
  ModalityExpert ex(small_shape(), rng);
  copy_prefix(ex.params(), "sub0.", "sub1.");
  const auto e = ex.encode(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{0.4, 0.5});
  const std::vector<double> a{-0.3, 0.8};
  const auto u = ex.subpolicy_eps(0, a, e, 33);
  const auto c = ex.intra_compose(a, e, 33);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(c[i], u[i], 1e-15);
}

TEST(IntraCompose, IsTheMeanAndPermutationInvariant) {
  Rng rng(7), data(70);
  ModalityExpert ex(small_shape(), rng);
  ModalityExpert swapped = ex;
  for (const auto& n : ex.params().names()) {
    if (n.rfind("sub0.", 0) == 0) swapped.params().value(n) = ex.params().value("sub1." + n.substr(5));
    if (n.rfind("sub1.", 0) == 0) swapped.params().value(n) = ex.params().value("sub0." + n.substr(5));
  }
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> m(3), r(2), a(2);
    for (auto* v : {&m, &r, &a}) {
      for (auto& x : *v) x = data.uniform(-1.0, 1.0);
    }
    const int k = data.uniform_int(1, 50);
    const auto e = ex.encode(m, r);
    const auto u = ex.subpolicy_eps(0, a, e, k);
    const auto v = ex.subpolicy_eps(1, a, e, k);
    const auto c = ex.intra_compose(a, e, k);
    const auto c2 = swapped.intra_compose(a, swapped.encode(m, r), k);
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_NEAR(c[i], (u[i] + v[i]) / 2.0, 1e-15);
      EXPECT_GE(c[i], std::min(u[i], v[i]));
      EXPECT_LE(c[i], std::max(u[i], v[i]));
      EXPECT_EQ(c[i], c2[i]);
    }
  }
}

TEST(IntraCompose, BatchedFormIsBitIdentical) {
  Rng rng(8), data(80);
  ModalityExpert ex(small_shape(), rng);
  const std::size_t rows = 7;
  Tensor noised({rows, 2}), emb({rows, 10});
  std::vector<int> steps(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> m(3), rs(2);
    for (auto& x : m) x = data.uniform(-1.0, 1.0);
    for (auto& x : rs) x = data.uniform(-1.0, 1.0);
    const auto e = ex.encode(m, rs).values;
    std::copy(e.begin(), e.end(), emb.row_span(r).begin());
    for (auto& x : noised.row_span(r)) x = data.normal();
    steps[r] = data.uniform_int(1, 50);
  }
  const Tensor batch = ex.intra_compose(noised, emb, steps);
  for (std::size_t r = 0; r < rows; ++r) {
    const Embedding e{{emb.row_span(r).begin(), emb.row_span(r).end()}};
    const auto single = ex.intra_compose(noised.row_span(r), e, steps[r]);
    EXPECT_EQ(single[0], batch.at(r, 0));
    EXPECT_EQ(single[1], batch.at(r, 1));
  }
}

TEST(IntraCompose, BandSplitQueriesOnlyTheActiveSubPolicy) {
  auto shape = small_shape();
  shape.config.noise_band_split = true;
  Rng rng(9);
  ModalityExpert ex(shape, rng);
  EXPECT_EQ(ex.band(0), (std::pair<int, int>{26, 50}));
  EXPECT_EQ(ex.band(1), (std::pair<int, int>{1, 25}));
  const auto e = ex.encode(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{0.4, 0.5});
  const std::vector<double> a{0.1, 0.1};
  EXPECT_EQ(ex.intra_compose(a, e, 40), ex.subpolicy_eps(0, a, e, 40));
  EXPECT_EQ(ex.intra_compose(a, e, 10), ex.subpolicy_eps(1, a, e, 10));
}

TEST(Expert, RestoreRejectsMismatchedParameters) {
  Rng rng(10);
  ModalityExpert ex(small_shape(), rng);
  ParamSet p = ex.params();
  EXPECT_NO_THROW(ModalityExpert(ex.shape(), p));
  auto other = small_shape();
  other.config.code_dim = 9;
  EXPECT_THROW(ModalityExpert(other, p), ShapeError);
}

TEST(TrainExpert, ZeroStepsIsTheInitialization) {
  const auto ds = constant_action_dataset({0.3, -0.2});
  Rng a(11), b(11);
  const auto trained = train_expert(ds, "a", small_expert_config(), {}, {.steps = 0}, a);
  const ModalityExpert init(small_shape(), b);
  EXPECT_EQ(trained.expert.params(), init.params());
  EXPECT_TRUE(trained.loss_history.empty());
}

TEST(TrainExpert, SameSeedIsBitIdentical) {
  const auto ds = constant_action_dataset({0.3, -0.2});
  Rng a(12), b(12);
  const TrainConfig tc{.steps = 30, .batch = 16};
  const auto x = train_expert(ds, "a", small_expert_config(), {}, tc, a);
  const auto y = train_expert(ds, "a", small_expert_config(), {}, tc, b);
  EXPECT_EQ(x.expert.params(), y.expert.params());
  EXPECT_EQ(x.loss_history, y.loss_history);
}

TEST(TrainExpert, OtherModalitiesAreNeverRead) {
  const auto ds = constant_action_dataset({0.3, -0.2});
  const std::vector<std::string> only_a{"a"};
  const auto reduced = ds.keep_modalities(only_a);
  auto scrambled = ds;
  for (auto& ep : scrambled.episodes) {
    for (auto& s : ep.steps) s.obs.modality("b").assign(2, 42.0);
  }
  const TrainConfig tc{.steps = 30, .batch = 16};
  Rng r1(13), r2(13), r3(13);
  const auto full = train_expert(ds, "a", small_expert_config(), {}, tc, r1);
  const auto alone = train_expert(reduced, "a", small_expert_config(), {}, tc, r2);
  const auto noisy = train_expert(scrambled, "a", small_expert_config(), {}, tc, r3);
  EXPECT_EQ(full.expert.params(), alone.expert.params());
  EXPECT_EQ(full.expert.params(), noisy.expert.params());
}

TEST(TrainExpert, UnknownModalityIsAConfigError) {
  const auto ds = constant_action_dataset({0.3, -0.2});
  Rng rng(14);
  EXPECT_THROW(train_expert(ds, "c", small_expert_config(), {}, {.steps = 1}, rng), ConfigError);
}

TEST(TrainExpert, RecoversAConstantAction) {
  const std::vector<double> target{0.3, -0.2};
  const auto ds = constant_action_dataset(target);
  Rng rng(15);
  const auto trained = train_expert(ds, "a", small_expert_config(), {}, {.steps = 1500, .batch = 64, .learning_rate = 2e-3}, rng);
  const auto& ex = trained.expert;
  EXPECT_LT(trained.loss_history.back(), trained.loss_history.front());
  const auto sched = DiffusionConfig{}.schedule();
  const auto& step0 = ds.episodes[0].steps[0].obs;
  const auto e = ex.encode(step0.modality("a"), step0.robot_state);
  const ScoreFn score = [&](std::span<const double> a, int k) { return ex.intra_compose(a, e, k); };
  Rng sampler(16);
  double mean[2] = {0, 0};
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const auto s = ddpm_sample(score, 2, sched, sampler);
    mean[0] += s[0] / n;
    mean[1] += s[1] / n;
  }
  EXPECT_NEAR(mean[0], target[0], 0.05);
  EXPECT_NEAR(mean[1], target[1], 0.05);
}
