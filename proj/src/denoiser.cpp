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

#include "mddm/denoiser.hpp"

#include <cmath>
#include <limits>

#include "mddm/errors.hpp"

namespace mddm {

template <typename T>
std::vector<DenoiserOutput> BackboneDenoiser<T>::predict(std::span<const TokenSequence> x_t,
                                                         std::span<const double> t) const {
  if (x_t.empty()) return {};
  if (x_t.size() != t.size()) throw InvalidArgument("predict: batch size mismatch");
  const SequenceLayout layout = x_t.front().layout;
  std::vector<TokenId> ids;
  ids.reserve(x_t.size() * layout.len_total());
  for (const auto& seq : x_t) {
    if (seq.layout != layout) throw InvalidArgument("predict: mixed layouts");
    ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
  }
  Workspace<T> ws;
  forward_batch(params_, layout, ids, t, ws);
  const int len = layout.len_total();
  const int cols = static_cast<int>(ws.logits.cols());
  std::vector<DenoiserOutput> out(x_t.size());
  for (std::size_t b = 0; b < x_t.size(); ++b) {
    out[b].rows = len;
    out[b].cols = cols;
    const T* src = ws.logits.data() + b * static_cast<std::size_t>(len) * cols;
    out[b].logits.assign(src, src + static_cast<std::size_t>(len) * cols);
  }
  return out;
}

template class BackboneDenoiser<float>;
template class BackboneDenoiser<double>;

OracleDenoiser::OracleDenoiser(const World& world) : vocab_(world.vocab()) {
  for (const auto& outcome : enumerate_joint(world.config())) {
    support_.push_back(world.sequence_for_grid(outcome.grid));
    probs_.push_back(outcome.prob);
  }
}

std::vector<DenoiserOutput> OracleDenoiser::predict(std::span<const TokenSequence> x_t,
                                                    std::span<const double> /*t*/) const {
  const int cols = vocab_.extended_size();
  const TokenId mask = vocab_.mask_id();
  std::vector<DenoiserOutput> out;
  out.reserve(x_t.size());
  for (const auto& seq : x_t) {
    const int len = seq.layout.len_total();
    std::vector<double> weights(support_.size(), 0.0);
    double total = 0.0;
    for (std::size_t o = 0; o < support_.size(); ++o) {
      bool agrees = true;
      for (int p = 0; p < len && agrees; ++p) {
        agrees = seq.ids[p] == mask || seq.ids[p] == support_[o].ids[p];
      }
      if (agrees) {
        weights[o] = probs_[o];
        total += probs_[o];
      }
    }
    if (total <= 0.0) {
      weights = probs_;
      total = 1.0;
    }
    DenoiserOutput d{len, cols, std::vector<double>(static_cast<std::size_t>(len) * cols, 0.0)};
    for (std::size_t o = 0; o < support_.size(); ++o) {
      if (weights[o] == 0.0) continue;
      for (int p = 0; p < len; ++p) d.logits[static_cast<std::size_t>(p) * cols + support_[o].ids[p]] += weights[o];
    }
    for (double& v : d.logits) {
      v = v > 0.0 ? std::log(v / total) : -std::numeric_limits<double>::infinity();
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> token_distribution(const DenoiserOutput& out, int row, int k_total,
                                       double temperature, TokenId lo, TokenId hi) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> probs(k_total, 0.0);
  double max_v = neg_inf;
  for (TokenId c = lo; c < hi; ++c) max_v = std::max(max_v, out(row, c) / temperature);
  if (max_v == neg_inf) {
    // No finite logit in the allowed range: uniform over it.
    for (TokenId c = lo; c < hi; ++c) probs[c] = 1.0 / (hi - lo);
    return probs;
  }
  double denom = 0.0;
  for (TokenId c = lo; c < hi; ++c) {
    probs[c] = std::exp(out(row, c) / temperature - max_v);
    denom += probs[c];
  }
  for (TokenId c = lo; c < hi; ++c) probs[c] /= denom;
  return probs;
}

}  // namespace mddm
