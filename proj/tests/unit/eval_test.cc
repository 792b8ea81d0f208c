// Copyright 2026 The MDDM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mddm/eval.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mddm/denoiser.hpp"
#include "mddm/errors.hpp"
#include "mddm/pipeline.hpp"
#include "oracles.hpp"

namespace mddm {
namespace {

// Zero logits everywhere: uniform over the real tokens.
class UniformDenoiser final : public Denoiser {
 public:
  std::vector<DenoiserOutput> predict(std::span<const TokenSequence> x_t,
                                      std::span<const double>) const override {
    std::vector<DenoiserOutput> out;
    for (const auto& x : x_t) {
      const int len = x.layout.len_total();
      out.push_back({len, cols, std::vector<double>(static_cast<std::size_t>(len) * cols, 0.0)});
    }
    return out;
  }
  int cols = 7;
};

std::vector<TokenId> RandomTokens(Rng& rng, int max_len, int vocab) {
  std::vector<TokenId> v(1 + rng.below(max_len));
  for (auto& x : v) x = static_cast<TokenId>(rng.below(vocab));
  return v;
}

TEST(TvTest, Examples) {
  const std::map<Outcome, double> exact{{{0}, 0.5}, {{1}, 0.5}};
  EXPECT_EQ(tv_distance({{{0}, 5.0}, {{1}, 5.0}}, exact), 0.0);
  EXPECT_EQ(tv_distance({{{0}, 3.0}}, exact), 0.5);
  EXPECT_EQ(tv_distance({{{2}, 3.0}, {{3}, 1.0}}, exact), 1.0);
  EXPECT_THROW(tv_distance({}, exact), InvalidArgument);
}

TEST(TvTest, ExactJointOfWorld) {
  const World world{GridWorldConfig{}};
  const auto joint = exact_joint(world);
  EXPECT_EQ(joint.size(), 81u);
  std::map<Outcome, double> scaled;
  for (const auto& [k, p] : joint) scaled[k] = 1000.0 * p;
  EXPECT_NEAR(tv_distance(scaled, joint), 0.0, 1e-12);
}

TEST(ConsistencyTest, GroundTruthPairs) {
  const World world{GridWorldConfig{}};
  Rng rng(1);
  std::vector<TokenSequence> pairs;
  for (int i = 0; i < 500; ++i) pairs.push_back(world.sample_sequence(rng));
  EXPECT_EQ(consistency_rate(pairs, world), 1.0);
  auto bad = pairs.front();
  bad.ids[0] = (bad.ids[0] + 1) % 3;
  EXPECT_EQ(consistency_rate(std::vector<TokenSequence>{bad}, world), 0.0);
}

TEST(ConsistencyTest, ShuffledPairsMatchByChance) {
  GridWorldConfig cfg;
  cfg.color_probs = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  const World world(cfg);
  Rng rng(2);
  const int n = 200000;
  std::vector<TokenSequence> pairs;
  for (int i = 0; i < n; ++i) {
    const auto a = unpack(world.sample_sequence(rng), world.vocab());
    const auto b = unpack(world.sample_sequence(rng), world.vocab());
    pairs.push_back(pack(a.report, b.image, world.vocab(), world.layout()));
  }
  const double p = 1.0 / 81;
  EXPECT_NEAR(consistency_rate(pairs, world), p, 4 * std::sqrt(p * (1 - p) / n));
}

TEST(RecoveryTest, UniformModelIsAtChance) {
  const World world{GridWorldConfig{}};
  const auto set = make_eval_set(world, 3000, 4);
  Rng rng(5);
  const double acc = masked_recovery_accuracy(UniformDenoiser{}, set, NoiseSchedule(), world.vocab(), 0.5, rng);
  const double n = 3000 * 8 * 0.5, p = 1.0 / 6;
  EXPECT_NEAR(acc, p, 3 * std::sqrt(p * (1 - p) / n));
}

TEST(RecoveryTest, OracleRecoversReportFromImage) {
  const World world{GridWorldConfig{}};
  const OracleDenoiser oracle(world);
  const auto set = make_eval_set(world, 500, 6);
  std::vector<TokenSequence> masked = set;
  for (auto& s : masked)
    for (int p = 0; p < 4; ++p) s.ids[p] = world.vocab().mask_id();
  Rng rng(1);
  const std::vector<double> ts(set.size(), 0.5);
  EXPECT_EQ(recovery_accuracy(oracle, set, masked, ts, world.vocab(), rng), 1.0);
}

TEST(RecoveryTest, LessNoiseRecoversMore) {
  RunConfig config;
  config.train.total_steps = 400;
  config.train.cycle_length = 400;
  config.train.batch_size = 32;
  const auto state = train_model(config);
  const BackboneDenoiser<float> model(state.params);
  const World world(config.world_config());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto set = make_eval_set(world, 1000, seed);
    Rng rng(seed);
    const double low = masked_recovery_accuracy(model, set, NoiseSchedule(), world.vocab(), 0.1, rng);
    const double high = masked_recovery_accuracy(model, set, NoiseSchedule(), world.vocab(), 0.9, rng);
    EXPECT_GE(low, high) << "seed " << seed;
  }
}

TEST(BleuTest, Examples) {
  const std::vector<TokenId> ref{0, 1, 2, 3}, rep{0, 0, 0, 0}, other{4, 5, 6, 7};
  for (int n = 1; n <= 4; ++n) EXPECT_DOUBLE_EQ(bleu_n(ref, ref, n), 1.0);
  EXPECT_DOUBLE_EQ(bleu_n(rep, ref, 1), 0.25);
  EXPECT_EQ(bleu_n(other, ref, 1), 0.0);
  // Brevity: 2 of 4 tokens, both matching.
  const std::vector<TokenId> shorter{0, 1};
  EXPECT_NEAR(bleu_n(shorter, ref, 1), std::exp(1.0 - 2.0), 1e-15);
  EXPECT_EQ(bleu_n(std::vector<TokenId>{}, ref, 1), 0.0);
}

TEST(BleuTest, MatchesBruteForce) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = RandomTokens(rng, 9, 4), r = RandomTokens(rng, 9, 4);
    const int n = 1 + static_cast<int>(rng.below(3));
    ASSERT_NEAR(bleu_n(c, r, n), oracle::bleu(c, r, n), 1e-12);
  }
}

TEST(RougeTest, Examples) {
  const std::vector<TokenId> abc{0, 1, 2}, ac{0, 2}, xyz{5, 6, 7};
  EXPECT_DOUBLE_EQ(rouge_l(abc, abc), 1.0);
  const double p = 2.0 / 3, r = 1.0, b2 = 1.44;
  EXPECT_NEAR(rouge_l(abc, ac), (1 + b2) * p * r / (r + b2 * p), 1e-15);
  EXPECT_EQ(rouge_l(abc, xyz), 0.0);
  EXPECT_EQ(lcs_length(abc, ac), 2u);
}

TEST(RougeTest, MatchesBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = RandomTokens(rng, 10, 4), r = RandomTokens(rng, 10, 4);
    ASSERT_EQ(lcs_length(c, r), oracle::lcs(c, r));
    ASSERT_NEAR(rouge_l(c, r), oracle::rouge_l(c, r, kRougeBeta), 1e-12);
  }
}

TEST(NelboTest, OracleOnDeterministicDataIsZero) {
  GridWorldConfig cfg;
  cfg.n_colors = 1;
  cfg.k_img = 1;
  cfg.color_probs = {1.0};
  const World world(cfg);
  const OracleDenoiser oracle(world);
  const auto set = make_eval_set(world, 50, 1);
  Rng rng(2);
  EXPECT_EQ(nelbo_estimate(oracle, set, NoiseSchedule(), world.vocab(), 4, rng).mean, 0.0);
}

// E over t of (1/t) * E[masked fraction | t] * ln K = ln K per token.
TEST(NelboTest, UniformModelGivesLogK) {
  const World world{GridWorldConfig{}};
  const auto set = make_eval_set(world, 2000, 3);
  Rng rng(4);
  const auto est = nelbo_estimate(UniformDenoiser{}, set, NoiseSchedule(), world.vocab(), 10, rng);
  EXPECT_NEAR(est.mean, std::log(6.0), 4 * est.std_error);
  EXPECT_LT(est.std_error, 0.05);
}

TEST(NelboTest, VarianceShrinksWithMoreTimeSamples) {
  const World world{GridWorldConfig{}};
  const auto set = make_eval_set(world, 100, 3);
  auto spread = [&](int n_t) {
    std::vector<double> means;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      Rng rng(seed);
      means.push_back(nelbo_estimate(UniformDenoiser{}, set, NoiseSchedule(), world.vocab(), n_t, rng).mean);
    }
    double mu = 0.0, var = 0.0;
    for (double m : means) mu += m / means.size();
    for (double m : means) var += (m - mu) * (m - mu) / (means.size() - 1);
    return var;
  };
  const double ratio = spread(2) / spread(16);
  // Expected 8; the sample variance ratio of 60 draws easily lands in [3, 20].
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 20.0);
}

}  // namespace
}  // namespace mddm
