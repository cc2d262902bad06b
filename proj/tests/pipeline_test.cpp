#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "tswm/pipeline.hpp"

using namespace tswm;
using tswm::testing::default_model;

namespace {

GeneratorPair constant_pair(double gamma, double delta, std::size_t d) {
  return {constant_net(GeneratorKind::Gamma, gamma, d, 8), constant_net(GeneratorKind::Delta, delta, d, 8)};
}

const TokenSeq kPrompt{{4, 8, 15, 16, 23, 42}, Origin::Prompt, 0};

} // namespace

TEST(BiasLogits, IdentityWithoutMembership) {
  const std::vector<double> l{0.1, -2.0, 3.0};
  EXPECT_EQ(bias_logits(l, std::vector<double>(3, 0.0), 2.0), l);
}

TEST(BiasLogits, DirectSum) {
  EXPECT_DOUBLE_EQ(bias_logits(std::vector<double>{2.0}, std::vector<double>{1.0}, 1.5)[0], 3.5);
}

TEST(BiasLogits, AllGreenLeavesSoftmaxUnchanged) {
  const std::vector<double> l{0.3, -1.0, 2.2, 0.0};
  const auto a = softmax(l);
  const auto b = softmax(bias_logits(l, std::vector<double>(4, 1.0), 3.0));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(BiasLogits, Errors) {
  EXPECT_THROW(bias_logits(std::vector<double>{1.0}, std::vector<double>{1.0, 0.0}, 1.0), InputError);
  EXPECT_THROW(bias_logits(std::vector<double>{1.0}, std::vector<double>{1.0}, -0.5), InputError);
}

TEST(GenerateWatermarked, VanishingDeltaReproducesUnwatermarkedSampling) {
  const auto& m = default_model();
  const auto pair = constant_pair(0.25, 1e-9, m.embed_dim());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto wm = generate_watermarked(m, pair.gamma, pair.delta, PartitionKey{7}, kPrompt, 100, seed);
    const auto plain = sample_unwatermarked(m, kPrompt, 100, seed);
    ASSERT_EQ(wm.text.tokens, plain.tokens) << "seed " << seed;
  }
}

TEST(GenerateWatermarked, ConstantDeltaRaisesGreenFraction) {
  const auto& m = default_model();
  const auto pair = constant_pair(0.25, 2.0, m.embed_dim());
  double total = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto wm = generate_watermarked(m, pair.gamma, pair.delta, PartitionKey{11}, kPrompt, 200, derive_seed(3, i));
    total += static_cast<double>(std::count(wm.green.begin(), wm.green.end(), true)) / 200.0;
  }
  const double mean = total / 100.0;
  EXPECT_GE(mean - 0.25, 0.10);
  // Flat rows give g e^d / (g e^d + 1 - g) = 0.711; concentrated rows pull it down.
  EXPECT_LT(mean, 0.7114);
  // Regression value for this model/key/seed set, frozen after measurement.
  EXPECT_NEAR(mean, 0.6978, 0.005);
}

TEST(GenerateWatermarked, DeterministicAndShaped) {
  const auto& m = default_model();
  const auto pair = init_pair(0.25, 1.5, 1, m.embed_dim());
  const auto a = generate_watermarked(m, pair.gamma, pair.delta, PartitionKey{1}, kPrompt, 64, 9);
  const auto b = generate_watermarked(m, pair.gamma, pair.delta, PartitionKey{1}, kPrompt, 64, 9);
  EXPECT_EQ(a.text, b.text);
  EXPECT_EQ(a.green, b.green);
  EXPECT_EQ(a.text.tokens.size(), 65u);
  EXPECT_EQ(a.gammas.size(), 64u);
  EXPECT_EQ(a.text.origin, Origin::Watermarked);
  EXPECT_THROW(generate_watermarked(m, pair.gamma, pair.delta, PartitionKey{1}, TokenSeq{}, 5, 1), InputError);
}

TEST(SoftRollout, VanishingDeltaGreenMassTracksGamma) {
  const auto m = build_model(512, 16, 5, {0, 0, 1});
  const auto pair = constant_pair(0.25, 1e-9, m.embed_dim());
  double mass = 0.0;
  std::size_t steps = 0;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto tr = soft_rollout(m, pair.gamma, pair.delta, PartitionKey{3}, kPrompt, 200, derive_seed(1, i), derive_seed(2, i));
    for (const auto& s : tr.steps) {
      mass += s.green_mass;
      ++steps;
    }
  }
  EXPECT_EQ(steps, 1000u);
  EXPECT_NEAR(mass / steps, 0.25, 0.02);
}

TEST(SoftRollout, TraceInvariantsAndDeterminism) {
  const auto& m = default_model();
  const auto pair = init_pair(0.25, 1.5, 2, m.embed_dim());
  const auto tr = soft_rollout(m, pair.gamma, pair.delta, PartitionKey{5}, kPrompt, 30, 17, 18);
  ASSERT_EQ(tr.size(), 30u);
  EXPECT_EQ(tr.text.tokens.size(), 31u);
  for (const auto& s : tr.steps) {
    EXPECT_EQ(s.soft.size(), m.vocab_size());
    EXPECT_EQ(s.probs.size(), m.vocab_size());
    EXPECT_EQ(s.expected_embedding.size(), m.embed_dim());
    EXPECT_NEAR(std::accumulate(s.probs.begin(), s.probs.end(), 0.0), 1.0, 1e-9);
    EXPECT_GT(s.green_mass, 0.0);
    EXPECT_LT(s.green_mass, 1.0);
  }
  const auto again = soft_rollout(m, pair.gamma, pair.delta, PartitionKey{5}, kPrompt, 30, 17, 18);
  EXPECT_EQ(again.text, tr.text);
  for (std::size_t t = 0; t < tr.size(); ++t) {
    EXPECT_EQ(again.steps[t].probs, tr.steps[t].probs);
    EXPECT_EQ(again.steps[t].g0, tr.steps[t].g0);
  }
  EXPECT_THROW(soft_rollout(m, pair.gamma, pair.delta, PartitionKey{5}, kPrompt, 30, 1, 1, {.tau = 0.0}), InputError);
}

TEST(SoftRollout, ZeroTemperatureAgreesWithHardMembership) {
  const auto& m = default_model();
  const auto pair = init_pair(0.25, 2.0, 4, m.embed_dim());
  std::size_t agree = 0, total = 0;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto tr = soft_rollout(m, pair.gamma, pair.delta, PartitionKey{21}, kPrompt, 100, derive_seed(9, i),
                                 derive_seed(10, i), {.tau = 1e-4});
    for (const auto& s : tr.steps) {
      const bool hard = hard_membership(s.seed, s.token, s.gamma);
      agree += (s.soft[s.token] > 0.5) == hard;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(agree) / total, 0.99);
}

TEST(SoftRollout, ReevaluateIsIdempotentForUnchangedParameters) {
  const auto& m = default_model();
  const auto pair = init_pair(0.25, 1.25, 6, m.embed_dim());
  auto tr = soft_rollout(m, pair.gamma, pair.delta, PartitionKey{2}, kPrompt, 15, 3, 4);
  const auto before = tr.steps;
  reevaluate(m, tr, pair);
  for (std::size_t t = 0; t < tr.size(); ++t) {
    EXPECT_EQ(tr.steps[t].probs, before[t].probs);
    EXPECT_EQ(tr.steps[t].green_mass, before[t].green_mass);
  }
}

TEST(SoftRollout, DeltaIncreasesGreenMass) {
  // Fixed realized list, nonzero green and red mass: p_gr strictly increases in delta.
  const auto& m = default_model();
  auto pair = constant_pair(0.25, 1.0, m.embed_dim());
  auto tr = soft_rollout(m, pair.gamma, pair.delta, PartitionKey{2}, kPrompt, 40, 3, 4);
  std::vector<double> prev;
  for (const auto& s : tr.steps) prev.push_back(s.green_mass);
  pair.delta = constant_net(GeneratorKind::Delta, 1.5, m.embed_dim(), 8);
  reevaluate(m, tr, pair);
  for (std::size_t t = 0; t < tr.size(); ++t) EXPECT_GT(tr.steps[t].green_mass, prev[t]);
}
