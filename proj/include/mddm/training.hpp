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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mddm/backbone.hpp"
#include "mddm/diffusion_schedule.hpp"
#include "mddm/joint_vocab.hpp"
#include "mddm/rng.hpp"
#include "mddm/run_config.hpp"

namespace mddm {

/// Sum with pairwise (cascade) reduction; order-stable for a fixed input.
double pairwise_sum(std::span<const double> values);

/// Per-batch outcome of the weighted masked cross-entropy.
struct LossReport {
  double loss = 0.0;
  std::vector<double> per_example;
  std::vector<double> t;
  std::vector<int> masked_counts;
};

/// Loss for explicitly given corruptions: per example
///   loss_weight(t) / len_total * sum over masked positions of CE(x0),
/// with the mask column excluded from the softmax; batch mean. When `grads`
/// is non-empty, d(loss)/d(params) is accumulated into it.
template <typename T>
LossReport masked_loss(const ParameterSet<T>& params, std::span<const TokenSequence> x0,
                       std::span<const TokenSequence> x_t, std::span<const double> t,
                       const NoiseSchedule& schedule, const JointVocabulary& vocab,
                       std::span<T> grads, Workspace<T>& ws);

/// Monte-Carlo NELBO: t ~ U(t_min, 1) per example, x_t ~ q(x_t | x0), then
/// masked_loss.
template <typename T>
LossReport nelbo_loss(const ParameterSet<T>& params, std::span<const TokenSequence> batch,
                      const NoiseSchedule& schedule, const JointVocabulary& vocab, Rng& rng,
                      std::span<T> grads, Workspace<T>& ws);

/// Warmup + cosine annealing with restarts every cycle_length steps.
double lr_at(const TrainConfig& config, std::int64_t step);

/// Parameters, AdamW moments and the step counter. All randomness of step s
/// is derived from (seed, s), so this is the complete training state.
struct TrainState {
  ParameterSet<float> params;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
};

TrainState init_train_state(const BackboneConfig& backbone, std::uint64_t seed);

struct StepReport {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Scales `grads` in place so its global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<float> grads, double max_norm);
double clip_grad_norm(std::span<double> grads, double max_norm);

/// AdamW update with decoupled weight decay; `step` is 0-based.
void adamw_update(std::span<float> params, std::span<float> m, std::span<float> v,
                  std::span<const float> grads, const TrainConfig& config, double lr,
                  std::int64_t step);

/// One optimization step on `batch`: NELBO gradients, clipping, AdamW with
/// lr_at(step). Throws NumericalError on a non-finite loss.
StepReport train_step(TrainState& state, std::span<const TokenSequence> batch,
                      const RunConfig& config);

/// Training batch for `step`, drawn from the world with the state's seed.
std::vector<TokenSequence> make_batch(const World& world, std::uint64_t seed, std::int64_t step,
                                      int batch_size);

/// Checkpoint layout: "MDDM", u32 version, u64-length canonical JSON blob
/// (run config + step + seed), then tensors until EOF, each as u32-length
/// name, u8 dtype (0 = f32 LE), u32 rank, u64 dims, raw data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const RunConfig& config, const std::string& path);

struct LoadedCheckpoint {
  RunConfig config;
  TrainState state;
};

/// Throws IoError on bad magic/version, truncation or tensor/config mismatch.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace mddm
