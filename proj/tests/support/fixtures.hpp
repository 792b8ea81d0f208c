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

// Shared setups for the unit and acceptance tests.

#include <string>
#include <vector>

#include "mddm/backbone.hpp"
#include "mddm/diffusion_schedule.hpp"
#include "mddm/rng.hpp"
#include "mddm/training.hpp"
#include "oracles.hpp"

namespace mddm::fixtures {

// Tiny config of the gradient check: d=8, 2 layers, 2 heads, len 6, k_total 5.
inline BackboneConfig tiny_config(AdaLNMode mode, bool causal = false) {
  BackboneConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_len = 6;
  c.vocab_out = 6;
  c.t_embed_dim = 8;
  c.mlp_ratio = 2;
  c.adaln_mode = mode;
  c.causal = causal;
  return c;
}

inline JointVocabulary tiny_vocab() { return {3, 2}; }
inline SequenceLayout tiny_layout() { return {3, 3}; }

// Every entry random (gates and gains included) so no gradient path is
// trivially zero.
template <typename T>
ParameterSet<T> random_params(const BackboneConfig& config, std::uint64_t seed, double scale = 0.3) {
  ParameterSet<T> p(config);
  Rng rng(seed);
  for (const auto& spec : p.specs()) {
    const bool gain = spec.name.find("gain") != std::string::npos;
    for (auto& v : p.tensor(spec.name)) v = static_cast<T>((gain ? 1.0 : 0.0) + scale * rng.normal());
  }
  return p;
}

struct GradCheckCase {
  std::vector<TokenSequence> x0, xt;
  std::vector<double> t;
};

// Three sequences with mixed masking and distinct times.
inline GradCheckCase grad_check_case() {
  const auto layout = tiny_layout();
  const TokenId m = tiny_vocab().mask_id();
  GradCheckCase c;
  c.x0 = {{{0, 1, 2, 3, 4, 3}, layout}, {{2, 2, 0, 4, 4, 3}, layout}, {{1, 0, 1, 3, 3, 4}, layout}};
  c.xt = {{{m, 1, m, 3, m, 3}, layout}, {{2, m, m, m, 4, m}, layout}, {{m, m, m, m, m, m}, layout}};
  c.t = {0.35, 0.6, 0.95};
  return c;
}

inline oracle::GradCheckResult run_grad_check(AdaLNMode mode, double h = 1e-5, std::uint64_t seed = 7) {
  const auto config = tiny_config(mode);
  auto params = random_params<double>(config, seed);
  const auto cc = grad_check_case();
  const NoiseSchedule schedule;
  const auto vocab = tiny_vocab();
  Workspace<double> ws;
  std::vector<double> grads(params.size(), 0.0);
  masked_loss<double>(params, cc.x0, cc.xt, cc.t, schedule, vocab, grads, ws);
  std::vector<double> flat(params.values().begin(), params.values().end());
  auto loss = [&]() {
    std::copy(flat.begin(), flat.end(), params.values().begin());
    return masked_loss<double>(params, cc.x0, cc.xt, cc.t, schedule, vocab, {}, ws).loss;
  };
  return oracle::grad_check(flat, grads, loss, h);
}

}  // namespace mddm::fixtures
