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

#pragma once

#include <map>
#include <span>
#include <vector>

#include "mddm/denoiser.hpp"
#include "mddm/diffusion_schedule.hpp"
#include "mddm/joint_vocab.hpp"
#include "mddm/rng.hpp"
#include "mddm/toy_data.hpp"

namespace mddm {

using Outcome = std::vector<TokenId>;

/// Half the L1 distance between the normalized empirical counts and the
/// exact distribution, over the union of supports.
double tv_distance(const std::map<Outcome, double>& empirical_counts,
                   const std::map<Outcome, double>& exact);

/// Empirical counts of a sample set keyed by token ids.
std::map<Outcome, double> count_outcomes(std::span<const TokenSequence> samples);

/// Exact distribution of the world's joint sequences.
std::map<Outcome, double> exact_joint(const World& world);

/// Fraction of sequences whose report parses to the grid their image encodes.
double consistency_rate(std::span<const TokenSequence> pairs, const World& world);

/// Fraction of masked positions whose argmax prediction (ties broken
/// uniformly at random, mask column excluded) equals the clean token.
double recovery_accuracy(const Denoiser& denoiser, std::span<const TokenSequence> x0,
                         std::span<const TokenSequence> x_t, std::span<const double> t,
                         const JointVocabulary& vocab, Rng& rng);

/// Corrupts every sequence at time t and measures recovery_accuracy.
double masked_recovery_accuracy(const Denoiser& denoiser, std::span<const TokenSequence> eval_set,
                                const NoiseSchedule& schedule, const JointVocabulary& vocab,
                                double t, Rng& rng);

/// BLEU with clipped n-gram precisions of orders 1..n, unsmoothed geometric
/// mean and brevity penalty. Empty candidate scores 0.
double bleu_n(std::span<const TokenId> candidate, std::span<const TokenId> reference, int n);

inline constexpr double kRougeBeta = 1.2;

/// LCS-based F-measure with beta = 1.2.
double rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference);

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

struct NelboEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  /// Mean over the set for each repetition.
  std::vector<double> repetitions;
};

/// Monte-Carlo NELBO per token: n_t_samples passes over the set, each with
/// fresh t ~ U(t_min, 1) and corruption per sequence.
NelboEstimate nelbo_estimate(const Denoiser& denoiser, std::span<const TokenSequence> eval_set,
                             const NoiseSchedule& schedule, const JointVocabulary& vocab,
                             int n_t_samples, Rng& rng);

}  // namespace mddm
