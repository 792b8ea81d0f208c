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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mddm/backbone.hpp"
#include "mddm/diffusion_schedule.hpp"
#include "mddm/joint_vocab.hpp"
#include "mddm/toy_data.hpp"

namespace mddm {

struct VocabSection {
  int k_text = 3;
  int k_img = 3;
  int len_report = 4;
  int len_image = 4;
};

struct ScheduleSection {
  ScheduleKind kind = ScheduleKind::kLinear;
  double t_min = 1e-3;
  int n_steps = 256;
};

struct TrainConfig {
  int batch_size = 64;
  int total_steps = 3000;
  std::uint64_t seed = 0;
  double base_lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int warmup_steps = 100;
  int cycle_length = 3000;
  double min_lr_fraction = 0.05;
  /// Global L2 norm cap; <= 0 disables clipping.
  double grad_clip = 1.0;
  int checkpoint_every = 1000;

  void validate() const;
};

enum class SamplerAlgorithm { kMaskGit, kAncestral };

struct SamplerConfig {
  SamplerAlgorithm algorithm = SamplerAlgorithm::kAncestral;
  /// MaskGIT rounds S; ancestral uses the schedule grid instead.
  int steps = 16;
  double temperature = 1.0;
  double confidence_noise = 0.0;
  /// Restrict each position's softmax support to its modality's id range.
  bool restrict_modality = true;

  void validate() const;
};

struct EvalConfig {
  int num_samples = 20000;
  int num_conditional = 1000;
  int eval_set_size = 1000;
  int n_t_samples = 10;
  std::vector<double> recovery_t{0.1, 0.5, 0.9};
  std::uint64_t seed = 1234;
};

/// Complete description of a run. Every field has a default; JSON parsing
/// rejects unknown keys and serialization is canonical (sorted keys).
struct RunConfig {
  VocabSection vocab;
  ScheduleSection schedule;
  BackboneConfig backbone;
  TrainConfig train;
  SamplerConfig sampler;
  GridWorldConfig data;
  EvalConfig eval;

  /// Cross-section consistency (vocab vs data, vocab_out, max_len, ...).
  void validate() const;

  JointVocabulary joint_vocab() const { return {vocab.k_text, vocab.k_img}; }
  SequenceLayout layout() const { return {vocab.len_report, vocab.len_image}; }
  NoiseSchedule noise_schedule() const { return NoiseSchedule(schedule.kind, schedule.t_min, schedule.n_steps); }
  /// Data config with k_img taken from the vocab section.
  GridWorldConfig world_config() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Canonical byte form: compact JSON with sorted keys.
std::string canonical_json(const RunConfig& config);
/// Lowercase hex SHA-256 of the canonical bytes.
std::string config_hash(const RunConfig& config);
std::string sha256_hex(const std::string& bytes);

/// Throws ConfigError when the file is missing, unreadable or invalid.
RunConfig load_run_config(const std::string& path);

std::string to_string(SamplerAlgorithm algorithm);
SamplerAlgorithm sampler_algorithm_from_string(const std::string& name);

}  // namespace mddm
