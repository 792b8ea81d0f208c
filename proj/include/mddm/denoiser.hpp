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
#include <vector>

#include "mddm/backbone.hpp"
#include "mddm/joint_vocab.hpp"
#include "mddm/toy_data.hpp"

namespace mddm {

/// Anything that maps corrupted sequences to per-position logits over the
/// extended vocabulary. Samplers and evaluators are written against this so
/// the learned backbone and exact oracles are interchangeable.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// One DenoiserOutput per input sequence. All sequences share one layout.
  virtual std::vector<DenoiserOutput> predict(std::span<const TokenSequence> x_t,
                                              std::span<const double> t) const = 0;
};

template <typename T>
class BackboneDenoiser final : public Denoiser {
 public:
  explicit BackboneDenoiser(const ParameterSet<T>& params) : params_(params) {}
  std::vector<DenoiserOutput> predict(std::span<const TokenSequence> x_t,
                                      std::span<const double> t) const override;

 private:
  const ParameterSet<T>& params_;
};

/// Exact posterior marginals p(x0[p] | visible tokens of x_t) of an
/// enumerable world, returned as log-probabilities (-inf off support).
/// Ignores t: under the absorbing process the mask pattern carries no
/// information about content. A canvas no outcome agrees with falls back to
/// the prior marginals.
class OracleDenoiser final : public Denoiser {
 public:
  explicit OracleDenoiser(const World& world);
  std::vector<DenoiserOutput> predict(std::span<const TokenSequence> x_t,
                                      std::span<const double> t) const override;

  /// Outcome sequences and their probabilities.
  const std::vector<TokenSequence>& support() const { return support_; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  JointVocabulary vocab_;
  std::vector<TokenSequence> support_;
  std::vector<double> probs_;
};

/// Softmax(logits / temperature) over the real tokens of one row with the
/// mask column dropped and support restricted to ids in [lo, hi). Entries
/// outside the support are 0.
std::vector<double> token_distribution(const DenoiserOutput& out, int row, int k_total,
                                       double temperature, TokenId lo, TokenId hi);

}  // namespace mddm
