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

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mddm/errors.hpp"

namespace mddm {
namespace {

void check_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw InvalidArgument(std::string(what) + ": t=" + std::to_string(t) + " outside [0, 1]");
  }
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidArgument("retention " + std::to_string(alpha) + " outside [0, 1]");
  }
}

}  // namespace

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "cosine";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "cosine") return ScheduleKind::kCosine;
  throw InvalidArgument("unknown schedule kind '" + name + "'");
}

NoiseSchedule::NoiseSchedule(ScheduleKind kind, double t_min, int n_steps)
    : kind_(kind), t_min_(t_min), n_steps_(n_steps) {
  if (!(t_min > 0.0 && t_min < 1.0)) throw InvalidArgument("t_min must lie in (0, 1)");
  if (n_steps < 1) throw InvalidArgument("n_steps must be >= 1");
}

double NoiseSchedule::retention_at(double t) const {
  check_time(t, "retention_at");
  if (t == 1.0) return 0.0;
  if (kind_ == ScheduleKind::kLinear) return 1.0 - t;
  return std::cos(0.5 * std::numbers::pi * t);
}

double NoiseSchedule::retention_derivative(double t) const {
  check_time(t, "retention_derivative");
  if (kind_ == ScheduleKind::kLinear) return -1.0;
  return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * t);
}

double NoiseSchedule::loss_weight(double t) const {
  check_time(t, "loss_weight");
  const double tc = std::max(t, t_min_);
  if (kind_ == ScheduleKind::kLinear) return 1.0 / tc;
  return -retention_derivative(tc) / (1.0 - retention_at(tc));
}

double NoiseSchedule::expected_mask_fraction(double t) const { return 1.0 - retention_at(t); }

double NoiseSchedule::time_for_mask_fraction(double f) const {
  if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument("mask fraction outside [0, 1]");
  if (kind_ == ScheduleKind::kLinear) return f;
  return std::clamp(2.0 / std::numbers::pi * std::acos(1.0 - f), 0.0, 1.0);
}

double NoiseSchedule::alpha_bar(int j) const {
  if (j < 0 || j > n_steps_) throw InvalidArgument("grid index out of range");
  if (j == n_steps_) return 0.0;
  return retention_at(static_cast<double>(j) / n_steps_);
}

double NoiseSchedule::step_retention(int j) const {
  if (j < 1 || j > n_steps_) throw InvalidArgument("step index out of range");
  const double prev = alpha_bar(j - 1);
  if (prev <= 0.0) return 0.0;
  return std::clamp(alpha_bar(j) / prev, 0.0, 1.0);
}

TransitionMatrix transition_matrix(double alpha, const JointVocabulary& vocab) {
  check_alpha(alpha);
  const int n = vocab.extended_size();
  const int m = vocab.mask_id();
  TransitionMatrix q{n, std::vector<double>(static_cast<size_t>(n) * n, 0.0)};
  for (int i = 0; i < n; ++i) {
    if (i == m) {
      q(i, m) = 1.0;
    } else {
      q(i, i) = alpha;
      q(i, m) = 1.0 - alpha;
    }
  }
  return q;
}

TransitionMatrix cumulative_matrix(const NoiseSchedule& schedule, int j,
                                   const JointVocabulary& vocab) {
  if (j < 1 || j > schedule.n_steps()) {
    throw InvalidArgument("cumulative_matrix: step " + std::to_string(j) + " outside [1, " +
                          std::to_string(schedule.n_steps()) + "]");
  }
  return transition_matrix(schedule.alpha_bar(j), vocab);
}

TransitionMatrix cumulative_matrix_from_steps(std::span<const double> step_retentions,
                                              const JointVocabulary& vocab) {
  if (step_retentions.empty()) throw InvalidArgument("cumulative_matrix: no steps");
  double alpha_bar = 1.0;
  for (double a : step_retentions) {
    check_alpha(a);
    alpha_bar *= a;
  }
  return transition_matrix(alpha_bar, vocab);
}

TokenSequence corrupt(const TokenSequence& x0, double t, const NoiseSchedule& schedule,
                      const JointVocabulary& vocab, Rng& rng) {
  check_time(t, "corrupt");
  if (contains_mask(x0, vocab)) throw InvalidArgument("corrupt: input already contains masks");
  return corrupt_with_retention(x0, schedule.retention_at(t), vocab, rng);
}

TokenSequence corrupt_with_retention(const TokenSequence& x, double alpha,
                                     const JointVocabulary& vocab, Rng& rng) {
  check_alpha(alpha);
  TokenSequence out = x;
  const TokenId mask = vocab.mask_id();
  for (TokenId& id : out.ids) {
    // One draw per position keeps the stream layout independent of content.
    const double u = rng.uniform();
    if (id != mask && u >= alpha) id = mask;
  }
  return out;
}

}  // namespace mddm
