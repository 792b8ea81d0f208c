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

#include "mddm/diffusion_schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mddm/errors.hpp"
#include "oracles.hpp"

namespace mddm {
namespace {

void ExpectRowStochastic(const TransitionMatrix& q) {
  for (int r = 0; r < q.size; ++r) {
    double sum = 0.0;
    for (int c = 0; c < q.size; ++c) {
      ASSERT_GE(q(r, c), 0.0);
      sum += q(r, c);
    }
    ASSERT_NEAR(sum, 1.0, 1e-12) << "row " << r;
  }
}

void ExpectMatches(const TransitionMatrix& q, const oracle::Dense& d, double tol) {
  ASSERT_EQ(static_cast<std::size_t>(q.size), d.size());
  for (int r = 0; r < q.size; ++r)
    for (int c = 0; c < q.size; ++c) ASSERT_NEAR(q(r, c), d[r][c], tol) << r << "," << c;
}

TEST(ScheduleTest, LinearRetention) {
  const NoiseSchedule s;
  EXPECT_EQ(s.retention_at(0.0), 1.0);
  EXPECT_EQ(s.retention_at(1.0), 0.0);
  EXPECT_DOUBLE_EQ(s.retention_at(0.25), 0.75);
  EXPECT_DOUBLE_EQ(s.retention_derivative(0.4), -1.0);
  EXPECT_THROW(s.retention_at(1.5), InvalidArgument);
}

TEST(ScheduleTest, RetentionStrictlyDecreasing) {
  for (auto kind : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
    const NoiseSchedule s(kind);
    EXPECT_EQ(s.retention_at(0.0), 1.0);
    EXPECT_EQ(s.retention_at(1.0), 0.0);
    for (int i = 1; i <= 1000; ++i) ASSERT_LT(s.retention_at(i / 1000.0), s.retention_at((i - 1) / 1000.0));
  }
}

TEST(ScheduleTest, LossWeight) {
  const NoiseSchedule s(ScheduleKind::kLinear, 1e-3);
  EXPECT_DOUBLE_EQ(s.loss_weight(0.5), 2.0);
  EXPECT_DOUBLE_EQ(s.loss_weight(1.0), 1.0);
  EXPECT_DOUBLE_EQ(s.loss_weight(1e-6), 1000.0);
}

TEST(ScheduleTest, ExpectedMaskFraction) {
  const NoiseSchedule s;
  EXPECT_EQ(s.expected_mask_fraction(0.0), 0.0);
  EXPECT_EQ(s.expected_mask_fraction(1.0), 1.0);
  EXPECT_DOUBLE_EQ(s.expected_mask_fraction(0.25), 0.25);
  const NoiseSchedule cosine(ScheduleKind::kCosine);
  for (double f : {0.0, 0.1, 0.5, 0.9, 1.0}) {
    EXPECT_NEAR(cosine.expected_mask_fraction(cosine.time_for_mask_fraction(f)), f, 1e-12);
  }
}

TEST(ScheduleTest, DiscreteGrid) {
  for (auto kind : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
    const NoiseSchedule s(kind, 1e-3, 64);
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    EXPECT_EQ(s.alpha_bar(64), 0.0);
    for (int j = 1; j <= 64; ++j) {
      ASSERT_LE(s.alpha_bar(j), s.alpha_bar(j - 1));
      const double a = s.step_retention(j);
      ASSERT_GE(a, 0.0);
      ASSERT_LE(a, 1.0);
    }
  }
}

TEST(TransitionTest, Boundaries) {
  const JointVocabulary v(2, 2);
  const auto id = transition_matrix(1.0, v);
  const auto absorb = transition_matrix(0.0, v);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) {
      EXPECT_EQ(id(r, c), r == c ? 1.0 : 0.0);
      EXPECT_EQ(absorb(r, c), c == v.mask_id() ? 1.0 : 0.0);
    }
  }
}

TEST(TransitionTest, HandEvaluated) {
  const JointVocabulary v(2, 1);
  const auto q = transition_matrix(0.8, v);
  const double expected[4][4] = {
      {0.8, 0, 0, 0.2}, {0, 0.8, 0, 0.2}, {0, 0, 0.8, 0.2}, {0, 0, 0, 1.0}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(q(r, c), expected[r][c], 1e-15);
  ExpectRowStochastic(q);
}

TEST(TransitionTest, TwoStepProduct) {
  const JointVocabulary v(2, 1);
  const std::vector<double> steps{0.8, 0.75};
  const auto q = cumulative_matrix_from_steps(steps, v);
  EXPECT_NEAR(q(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(q(0, 3), 0.4, 1e-15);
  ExpectMatches(q, oracle::product_of_steps(steps, 3), 1e-12);
}

TEST(TransitionTest, CumulativeEndpoints) {
  const JointVocabulary v(3, 3);
  const NoiseSchedule s(ScheduleKind::kLinear, 1e-3, 16);
  const auto full = cumulative_matrix(s, 16, v);
  for (int r = 0; r < full.size; ++r) EXPECT_EQ(full(r, v.mask_id()), 1.0);
  ExpectMatches(cumulative_matrix(s, 1, v), oracle::transition(s.step_retention(1), 6), 1e-15);
}

TEST(TransitionTest, MaskRowAbsorbing) {
  const JointVocabulary v(3, 2);
  for (double a : {0.0, 0.3, 1.0}) {
    const auto q = transition_matrix(a, v);
    for (int c = 0; c < q.size; ++c) EXPECT_EQ(q(v.mask_id(), c), c == v.mask_id() ? 1.0 : 0.0);
  }
}

TEST(TransitionTest, ClosedFormMatchesProduct) {
  for (int k = 1; k <= 12; k += 3) {
    const JointVocabulary v(k, 1);
    for (auto kind : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
      const NoiseSchedule s(kind, 1e-3, 32);
      std::vector<double> steps;
      for (int j = 1; j <= 32; ++j) {
        steps.push_back(s.step_retention(j));
        const auto q = cumulative_matrix(s, j, v);
        ExpectRowStochastic(q);
        ExpectMatches(q, oracle::product_of_steps(steps, k + 1), 1e-12);
      }
    }
  }
}

TEST(CorruptTest, Endpoints) {
  const JointVocabulary v(3, 3);
  const SequenceLayout layout(4, 4);
  const TokenSequence x0{{0, 1, 2, 0, 3, 4, 5, 3}, layout};
  const NoiseSchedule s;
  Rng rng(1);
  EXPECT_EQ(corrupt(x0, 0.0, s, v, rng), x0);
  const auto all = corrupt(x0, 1.0, s, v, rng);
  for (TokenId id : all.ids) EXPECT_EQ(id, v.mask_id());
}

TEST(CorruptTest, KeepsUnmaskedTokens) {
  const JointVocabulary v(3, 3);
  const SequenceLayout layout(4, 4);
  const TokenSequence x0{{0, 1, 2, 0, 3, 4, 5, 3}, layout};
  const NoiseSchedule s;
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto xt = corrupt(x0, rng.uniform(), s, v, rng);
    for (int p = 0; p < 8; ++p) ASSERT_TRUE(xt.ids[p] == x0.ids[p] || xt.ids[p] == v.mask_id());
  }
}

TEST(CorruptTest, BinomialMaskCount) {
  const JointVocabulary v(1, 1);
  const SequenceLayout layout(1000, 0);
  const TokenSequence x0{std::vector<TokenId>(1000, 0), layout};
  const NoiseSchedule s;
  const double mean = 300.0, sd = std::sqrt(1000 * 0.3 * 0.7);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto xt = corrupt(x0, 0.3, s, v, rng);
    int masked = 0;
    for (TokenId id : xt.ids) masked += id == v.mask_id();
    ASSERT_LE(std::abs(masked - mean), 4 * sd) << "seed " << seed;
  }
}

// Single-shot corruption at alpha_bar_j and j sequential per-step
// corruptions both mask with probability 1 - alpha_bar_j.
TEST(CorruptTest, SingleShotMatchesSequential) {
  const JointVocabulary v(3, 3);
  const SequenceLayout layout(1, 0);
  const TokenSequence x0{{1}, layout};
  const NoiseSchedule s(ScheduleKind::kLinear, 1e-3, 16);
  const int j = 5, n = 10000;
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    int single = 0, seq = 0;
    for (int i = 0; i < n; ++i) {
      single += corrupt_with_retention(x0, s.alpha_bar(j), v, rng).ids[0] == v.mask_id();
      TokenSequence x = x0;
      for (int k = 1; k <= j; ++k) x = corrupt_with_retention(x, s.step_retention(k), v, rng);
      seq += x.ids[0] == v.mask_id();
    }
    EXPECT_GT(oracle::homogeneity_p_value(single, n, seq, n), 1e-3) << single << " vs " << seq;
  }
}

}  // namespace
}  // namespace mddm
