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
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mddm/run_config.hpp"
#include "mddm/sampler.hpp"
#include "mddm/training.hpp"

namespace mddm {

// End-to-end workflows shared by the CLI, the Python module and the
// acceptance suite.

struct TrainOptions {
  /// Directory for metrics.csv and checkpoints; empty disables file output.
  std::string out_dir;
  /// Stop after this many steps in total (defaults to train.total_steps).
  std::int64_t stop_at = -1;
  std::function<void(std::int64_t step, const StepReport&)> on_step;
};

/// Continues `state` until the stop step. Writes a metrics row per step and
/// checkpoints every train.checkpoint_every steps plus a final one.
void run_training(TrainState& state, const RunConfig& config, const TrainOptions& options);

/// Fresh state + run_training.
TrainState train_model(const RunConfig& config, const TrainOptions& options = {});

std::vector<TokenSequence> make_eval_set(const World& world, int n, std::uint64_t seed);

inline const std::set<std::string> kEvalSuites{"dist", "consistency", "recovery", "text", "nelbo"};

/// Expands "all" and validates names. Throws ConfigError on an unknown suite.
std::set<std::string> parse_suites(const std::string& spec);

struct EvalReport {
  std::map<std::string, double> metrics;
  /// Metric conventions and settings for the JSON summary.
  nlohmann::json conventions;
};

/// Runs the selected evaluation suites for a trained model. Sample counts
/// come from config.eval; all randomness derives from config.eval.seed.
EvalReport evaluate(const Denoiser& denoiser, const RunConfig& config,
                    const std::set<std::string>& suites, int threads = 1);

struct AblationVariant {
  std::string name;
  RunConfig config;
};

/// Base model plus the variants for each requested grid entry
/// ("causal", "timestep", "adaln", "backbone_scratch"; comma separated).
/// Variants share the base seeds and budgets.
std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::string& grid);

GenerationMode mode_from_name(const std::string& name, std::vector<TokenId> condition);

}  // namespace mddm
