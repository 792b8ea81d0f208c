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

#include <span>
#include <string>
#include <vector>

#include "mddm/joint_vocab.hpp"
#include "mddm/rng.hpp"

namespace mddm {

enum class ScheduleKind { kLinear, kCosine };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Retention schedule of the absorbing forward process.
///
/// Continuous time t in [0, 1] with alpha(0) = 1 and alpha(1) = 0. The
/// discrete grid used by the matrix constructors and the ancestral sampler is
/// alpha_bar_j = alpha(j / n_steps).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(ScheduleKind kind = ScheduleKind::kLinear, double t_min = 1e-3,
                         int n_steps = 256);

  ScheduleKind kind() const { return kind_; }
  double t_min() const { return t_min_; }
  int n_steps() const { return n_steps_; }

  /// alpha(t): probability a token is still unmasked at time t.
  double retention_at(double t) const;
  /// d alpha / dt.
  double retention_derivative(double t) const;
  /// -alpha'(t) / (1 - alpha(t)) evaluated at max(t, t_min).
  double loss_weight(double t) const;
  /// 1 - alpha(t).
  double expected_mask_fraction(double t) const;
  /// Inverse of expected_mask_fraction: the t whose mask fraction is f.
  double time_for_mask_fraction(double f) const;

  /// Cumulative retention on the discrete grid, j in [0, n_steps].
  double alpha_bar(int j) const;
  /// Per-step retention alpha_bar_j / alpha_bar_{j-1}, j in [1, n_steps].
  /// Defined as 0 once the chain is fully absorbed.
  double step_retention(int j) const;

 private:
  ScheduleKind kind_;
  double t_min_;
  int n_steps_;
};

/// Dense row-stochastic matrix over the extended vocabulary. Rows index the
/// source state, columns the destination.
struct TransitionMatrix {
  int size = 0;
  std::vector<double> entries;  // row-major size x size

  double operator()(int row, int col) const { return entries[row * size + col]; }
  double& operator()(int row, int col) { return entries[row * size + col]; }
};

/// alpha * I + (1 - alpha) * 1 e_mask^T.
TransitionMatrix transition_matrix(double alpha, const JointVocabulary& vocab);

/// Closed form of Q_1 ... Q_j on the schedule grid.
TransitionMatrix cumulative_matrix(const NoiseSchedule& schedule, int j,
                                   const JointVocabulary& vocab);

/// Closed form of the product of transition matrices with the given per-step
/// retentions (alpha_bar = product of the retentions).
TransitionMatrix cumulative_matrix_from_steps(std::span<const double> step_retentions,
                                              const JointVocabulary& vocab);

/// Samples x_t ~ q(x_t | x_0): each position independently becomes the mask
/// id with probability 1 - alpha(t), otherwise is kept.
TokenSequence corrupt(const TokenSequence& x0, double t, const NoiseSchedule& schedule,
                      const JointVocabulary& vocab, Rng& rng);

/// One forward step with retention `alpha` applied to a possibly already
/// corrupted sequence. Masked positions stay masked.
TokenSequence corrupt_with_retention(const TokenSequence& x, double alpha,
                                     const JointVocabulary& vocab, Rng& rng);

}  // namespace mddm
