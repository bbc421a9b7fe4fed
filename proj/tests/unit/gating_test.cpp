#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "evomoe/error.hpp"
#include "evomoe/gating.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace evomoe;
using namespace evomoe::testing;

namespace {

using Ids = std::vector<std::vector<std::size_t>>;

Tensor row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::constant({1, n}, std::move(v));
}

GateParams noiseless(std::size_t d, std::size_t n, double c, std::mt19937_64& rng) {
  GateParams p;
  p.w_g = random_param({d, n}, rng);
  p.threshold = c;
  p.noise_enabled = false;
  return p;
}

}  // namespace

TEST(TopK, WorkedExampleTwoOfThree) {
  const auto d = topk_from_logits(row({2.01, 2.64, 1.8}), 2);
  EXPECT_EQ(d.ids, (Ids{{0, 1}}));
  EXPECT_NEAR(d.weight(0, 0), 0.35, 0.01);
  EXPECT_NEAR(d.weight(0, 1), 0.65, 0.01);
  EXPECT_EQ(d.weight(0, 2), 0.0);
  EXPECT_GT(d.weight(0, 1), d.weight(0, 0));
  d.check();
}

TEST(TopK, KEqualsNIsFullSoftmax) {
  const auto d = topk_from_logits(row({0.3, -1.2, 2.0, 0.0}), 4);
  EXPECT_EQ(d.ids, (Ids{{0, 1, 2, 3}}));
  const double z = std::exp(0.3) + std::exp(-1.2) + std::exp(2.0) + std::exp(0.0);
  EXPECT_NEAR(d.weight(0, 2), std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(d.weight(0, 0) + d.weight(0, 1) + d.weight(0, 2) + d.weight(0, 3), 1.0, 1e-15);
}

TEST(TopK, TiesGoToLowerIndex) {
  EXPECT_EQ(topk_from_logits(row({1.0, 1.0, 1.0}), 1).ids, (Ids{{0}}));
  EXPECT_EQ(topk_from_logits(row({0.5, 1.0, 1.0, 1.0}), 2).ids, (Ids{{1, 2}}));
}

TEST(TopK, SwitchConventionKeepsFullSoftmaxProbability) {
  const auto d = topk_from_logits(row({1.0, 2.0, 0.5}), 1, false);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  EXPECT_EQ(d.ids, (Ids{{1}}));
  EXPECT_NEAR(d.weight(0, 1), std::exp(2.0) / z, 1e-15);
}

TEST(TopK, RejectsKOutOfRange) {
  EXPECT_THROW(topk_from_logits(row({1.0, 2.0}), 0), ParameterError);
  EXPECT_THROW(topk_from_logits(row({1.0, 2.0}), 3), ParameterError);
}

TEST(TopK, GradientOnlyThroughSelectedLogits) {
  const Tensor logits = Tensor::parameter({1, 4}, {0.1, 1.5, -0.3, 0.9});
  const auto d = topk_from_logits(logits, 2);
  // Renormalised weights sum to one, so a plain sum has zero gradient.
  weighted_sum(d.combine, std::vector<double>{1.0, 2.0, 3.0, 4.0}).backward();
  EXPECT_EQ(logits.grad()[0], 0.0);
  EXPECT_EQ(logits.grad()[2], 0.0);
  EXPECT_NE(logits.grad()[1], 0.0);
  EXPECT_NE(logits.grad()[3], 0.0);
}

TEST(Hash, SingleExpertAlwaysZero) {
  for (std::int64_t t : {0, 1, 17, 123456789}) EXPECT_EQ(hash_expert(t, 1), 0u);
}

TEST(Hash, Deterministic) {
  for (std::int64_t t = 0; t < 100; ++t) {
    const auto a = hash_gate(t, 8), b = hash_gate(t, 8);
    EXPECT_EQ(a.ids, b.ids);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.weight(0, a.ids[0][0]), 1.0);
  }
}

TEST(Hash, UniformShareOverRandomIds) {
  constexpr std::size_t kExperts = 8, kDraws = 100000;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> id(0, 50000);
  std::vector<std::size_t> counts(kExperts, 0);
  for (std::size_t i = 0; i < kDraws; ++i) ++counts[hash_expert(id(rng), kExperts)];
  for (auto c : counts) EXPECT_NEAR(static_cast<double>(c) / kDraws, 1.0 / kExperts, 0.02);
}

TEST(Hash, BatchFormMatchesScalarAndHasNoGradient) {
  const std::vector<std::int32_t> ids{4, 9, 0, 4};
  const auto d = hash_gate(ids, 5);
  for (std::size_t s = 0; s < ids.size(); ++s) EXPECT_EQ(d.ids[s], (std::vector<std::size_t>{hash_expert(ids[s], 5)}));
  EXPECT_FALSE(d.combine.requires_grad());
  EXPECT_THROW(hash_gate(-1, 4), ParameterError);
}

TEST(Gumbel, DisabledIsZero) {
  Rng rng(1);
  const Tensor z = gumbel_sample({3, 4}, rng, false);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gumbel, FixedSeedIsBitIdentical) {
  Rng a(42), b(42);
  const Tensor x = gumbel_sample({5, 7}, a), y = gumbel_sample({5, 7}, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x.data()[i], y.data()[i]);
}

TEST(Gumbel, MeanIsEulerMascheroni) {
  Rng rng(5);
  const Tensor z = gumbel_sample({1000, 1000}, rng);
  const double mean = std::accumulate(z.data().begin(), z.data().end(), 0.0) / 1e6;
  EXPECT_NEAR(mean, 0.5772156649, 0.01);
}

TEST(Threshold, SpecRows) {
  EXPECT_EQ(threshold_select(row({0.4, 0.35, 0.25}), 0.3), (Ids{{0, 1}}));
  EXPECT_EQ(threshold_select(row({0.5, 0.5}), 0.999), (Ids{{0}}));
  EXPECT_EQ(threshold_select(row({0.6, 0.0, 0.4}), 0.0), (Ids{{0, 2}}));
}

TEST(Threshold, StrictComparison) {
  EXPECT_EQ(threshold_select(row({0.5, 0.3, 0.2}), 0.2), (Ids{{0, 1}}));
}

TEST(Threshold, ArgmaxAlwaysIncluded) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = random_nonzero(5, rng);
    const double z = std::accumulate(v.begin(), v.end(), 0.0);
    for (auto& x : v) x /= z;
    const auto best = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    for (double c : {0.0, 0.1, 0.3, 0.6, 0.99}) {
      const auto ids = threshold_select(row(v), c)[0];
      EXPECT_NE(std::find(ids.begin(), ids.end(), best), ids.end());
    }
  }
}

TEST(Dts, ThresholdRowKeepsUnnormalisedWeights) {
  const auto d = decide_from_probs(row({0.7, 0.2, 0.09, 0.01}), 0.1, false);
  EXPECT_EQ(d.ids, (Ids{{0, 1}}));
  EXPECT_EQ(d.weights, (std::vector<double>{0.7, 0.2, 0.0, 0.0}));
}

TEST(Dts, TopOneAfterDenseIters) {
  std::mt19937_64 rng(7);
  const Tensor logits = random_const({20, 6}, rng, -2.0, 2.0);
  GateParams p;
  p.threshold = 0.001;
  p.noise_enabled = false;
  const auto d = dts_from_logits(logits, p, 0.5, 100, 100, nullptr);
  const auto ref = topk_from_logits(logits, 1);
  EXPECT_EQ(d.ids, ref.ids);
  for (const auto& ids : d.ids) EXPECT_EQ(ids.size(), 1u);
}

TEST(Dts, EqualLogitsHighTemperatureSelectsAll) {
  GateParams p;
  p.threshold = 0.001;
  p.noise_enabled = false;
  const auto d = dts_from_logits(Tensor::constant({3, 8}, std::vector<double>(24, 0.7)), p, 10.0, 0, 100, nullptr);
  for (const auto& ids : d.ids) EXPECT_EQ(ids.size(), 8u);
  for (double w : d.weights) EXPECT_DOUBLE_EQ(w, 0.125);
}

TEST(Dts, RejectsNonPositiveTemperature) {
  GateParams p;
  EXPECT_THROW(dts_from_logits(row({1.0, 2.0}), p, 0.0, 0, 10, nullptr), ParameterError);
  EXPECT_THROW(dts_from_logits(row({1.0, 2.0}), p, -1.0, 0, 10, nullptr), ParameterError);
}

TEST(Dts, SparsifiesMonotonicallyAsTemperatureFalls) {
  std::mt19937_64 rng(8);
  const Tensor x = random_const({256, 6}, rng);
  const GateParams p = noiseless(6, 8, 0.05, rng);
  double previous = 1e9;
  for (double tau : {2.0, 1.0, 0.5, 0.3, 0.1}) {
    const double m = dts_gate(x, p, tau, 0, 1000, nullptr).mean_selected();
    EXPECT_LE(m, previous) << "tau " << tau;
    previous = m;
  }
}

TEST(Dts, WeightsAreDenseProbEntries) {
  std::mt19937_64 rng(9);
  const Tensor x = random_const({32, 4}, rng);
  GateParams p = noiseless(4, 5, 0.15, rng);
  p.noise_enabled = true;
  Rng noise(3);
  const auto d = dts_gate(x, p, 0.7, 0, 1000, &noise);
  for (std::size_t s = 0; s < d.tokens; ++s)
    for (std::size_t i = 0; i < d.experts; ++i)
      if (d.weight(s, i) != 0.0) EXPECT_EQ(d.weight(s, i), d.dense_probs.at(s, i));
  d.check();
}

TEST(Temperature, EndpointsAndMidpoint) {
  TemperatureSchedule s;
  s.decay_iters = 1000;
  EXPECT_DOUBLE_EQ(temperature_at(s, 0), 2.0);
  EXPECT_DOUBLE_EQ(temperature_at(s, 1000), 0.3);
  EXPECT_DOUBLE_EQ(temperature_at(s, 5000), 0.3);
  EXPECT_NEAR(temperature_at(s, 500), 1.15, 1e-15);
}

TEST(Temperature, ZeroDecayIsMinimum) {
  TemperatureSchedule s;
  s.decay_iters = 0;
  EXPECT_EQ(temperature_at(s, 0), 0.3);
}

TEST(Temperature, ExponentialIsGeometric) {
  TemperatureSchedule s;
  s.decay_iters = 100;
  s.shape = ScheduleShape::kExponential;
  EXPECT_NEAR(temperature_at(s, 50), std::sqrt(2.0 * 0.3), 1e-14);
  double previous = temperature_at(s, 0);
  for (std::int64_t i = 1; i <= 120; ++i) {
    EXPECT_LE(temperature_at(s, i), previous);
    previous = temperature_at(s, i);
  }
}

TEST(Temperature, ValidateRejectsBadSchedules) {
  TemperatureSchedule s;
  s.min_temp = 3.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.min_temp = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.decay_iters = -1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Balance, PerfectBalanceEqualsAlpha) {
  // 8 tokens, 4 experts, two tokens each, uniform probabilities.
  const auto d = decide_from_probs(Tensor::constant({8, 4}, std::vector<double>(32, 0.25)), 0.3, true);
  auto balanced = d;
  for (std::size_t s = 0; s < 8; ++s) balanced.ids[s] = {s % 4};
  EXPECT_EQ(balance_loss(balanced, 0.1).item(), 0.1);
}

TEST(Balance, CollapsedRoutingEqualsAlphaN) {
  std::vector<double> probs(6 * 3, 0.0);
  for (std::size_t s = 0; s < 6; ++s) probs[s * 3] = 1.0;
  const auto d = decide_from_probs(Tensor::constant({6, 3}, probs), 0.001, true);
  EXPECT_DOUBLE_EQ(balance_loss(d, 0.1).item(), 0.1 * 3);
}

TEST(Balance, MatchesLoopOracle) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_const({17, 5}, rng);
    const GateParams p = noiseless(5, 6, 0.12, rng);
    const auto d = dts_gate(x, p, 0.8, 0, 100, nullptr);
    const std::vector<double> probs(d.dense_probs.data().begin(), d.dense_probs.data().end());
    EXPECT_NEAR(balance_loss(d, 0.37).item(), loop_balance_loss(d.ids, probs, 6, 0.37), 1e-12);
  }
}

TEST(Balance, GradientReachesGateWhenOverSelected) {
  std::mt19937_64 rng(11);
  const Tensor x = random_const({12, 4}, rng);
  GateParams p = noiseless(4, 3, 0.001, rng);
  const auto d = dts_gate(x, p, 1.0, 200, 100, nullptr);
  balance_loss(d, 0.1).backward();
  double norm = 0.0;
  for (double g : p.w_g.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);

  const GradCase c{"balance", {p.w_g}, [=] { return balance_loss(dts_gate(x, p, 1.0, 200, 100, nullptr), 0.1); },
                   [=] { return ids_key(dts_gate(x, p, 1.0, 200, 100, nullptr)); }};
  EXPECT_LT(gradcheck(c, 12, 4).max_rel_error, 1e-4);
}

TEST(Balance, EmptyBatchThrows) {
  GateDecision d;
  d.experts = 4;
  EXPECT_THROW(balance_loss(d, 0.1), ParameterError);
}

TEST(GateParamsTest, ValidateRanges) {
  GateParams p;
  p.threshold = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p.threshold = 0.5;
  p.alpha = -0.1;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Decision, CheckRejectsWeightOffIds) {
  auto d = decide_from_probs(row({0.7, 0.2, 0.1}), 0.15, false);
  d.weights[2] = 0.1;
  EXPECT_THROW(d.check(), InvariantError);
}
