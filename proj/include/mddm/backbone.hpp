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

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mddm/joint_vocab.hpp"
#include "mddm/rng.hpp"

namespace mddm {

/// How the timestep conditions the normalization layers.
enum class AdaLNMode {
  kNone,       // plain LayerNorm with learned affine; timestep added to tokens
  kAdaLN,      // scale/shift predicted from the timestep embedding
  kAdaLNZero,  // AdaLN plus zero-initialized residual gates
};

std::string to_string(AdaLNMode mode);
AdaLNMode adaln_mode_from_string(const std::string& name);

struct BackboneConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int max_len = 8;
  /// k_total + 1: real tokens plus the mask column.
  int vocab_out = 7;
  int t_embed_dim = 32;
  int mlp_ratio = 4;
  AdaLNMode adaln_mode = AdaLNMode::kAdaLNZero;
  bool causal = false;
  bool use_modality_embed = true;
  bool use_timestep = true;

  int head_dim() const { return d_model / n_heads; }
  int mlp_dim() const { return d_model * mlp_ratio; }
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t numel = 0;
};

/// Ordered tensor list of a config. Parameter count is the sum of numel.
std::vector<TensorSpec> parameter_specs(const BackboneConfig& config);
std::size_t parameter_count(const BackboneConfig& config);

/// All backbone weights in one flat buffer with named views.
template <typename T>
class ParameterSet {
 public:
  explicit ParameterSet(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  const std::vector<TensorSpec>& specs() const { return specs_; }
  std::size_t size() const { return values_.size(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  const TensorSpec& spec(std::string_view name) const;
  bool has(std::string_view name) const;
  std::span<T> tensor(std::string_view name);
  std::span<const T> tensor(std::string_view name) const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out(config_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.values()[i] = static_cast<U>(values_[i]);
    return out;
  }

 private:
  BackboneConfig config_;
  std::vector<TensorSpec> specs_;
  std::vector<T> values_;
};

/// Truncated normal (std 0.02, cut at 2 std) weights and embeddings, zero
/// biases, unit LayerNorm gains, exactly zero AdaLN-Zero gate projections.
template <typename T>
ParameterSet<T> init_params(const BackboneConfig& config, Rng& rng);

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Activations of one block, kept for the reverse pass.
template <typename T>
struct BlockCache {
  RowMatrix<T> x_in;
  RowMatrix<T> xhat1, n1;
  std::vector<T> rstd1;
  RowMatrix<T> qkv;
  std::vector<T> probs;  // [batch][head][query][key]
  RowMatrix<T> att, attn_out;
  RowMatrix<T> x_mid;
  RowMatrix<T> xhat2, n2;
  std::vector<T> rstd2;
  RowMatrix<T> pre_act, act, mlp_out;
  RowMatrix<T> mods;   // [batch x 4D]: shift1, scale1, shift2, scale2
  RowMatrix<T> gates;  // [batch x 2D]: gate1, gate2
};

/// Forward state for a batch of sequences of one layout.
template <typename T>
struct Workspace {
  int batch = 0;
  int len = 0;
  std::vector<TokenId> ids;
  std::vector<int> regions;
  RowMatrix<T> t_features, t_hidden, t_act, cond, cond_act;
  RowMatrix<T> embedded;
  std::vector<BlockCache<T>> blocks;
  /// Residual stream after the last block.
  RowMatrix<T> residual;
  RowMatrix<T> xhat_f, n_f;
  std::vector<T> rstd_f;
  RowMatrix<T> final_mods;  // [batch x 2D]: shift, scale
  RowMatrix<T> logits;      // [batch*len x vocab_out]
};

/// Raw sinusoidal features of 1000*t: sin over the frequency ladder, then cos.
template <typename T>
std::vector<T> timestep_features(double t, int dim);

/// Timestep conditioning vector (the output of the timestep MLP), length
/// d_model. All zeros when the config disables timestep embeddings.
template <typename T>
std::vector<T> timestep_embedding(const ParameterSet<T>& params, double t);

/// Runs the backbone on `batch` sequences stored back-to-back in `ids`
/// (each of layout.len_total()), one time value per sequence.
template <typename T>
void forward_batch(const ParameterSet<T>& params, const SequenceLayout& layout,
                   std::span<const TokenId> ids, std::span<const double> ts, Workspace<T>& ws);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
template <typename T>
void backward_batch(const ParameterSet<T>& params, const Workspace<T>& ws,
                    const RowMatrix<T>& dlogits, std::span<T> grads);

/// Per-position logits over the extended vocabulary for one sequence.
struct DenoiserOutput {
  int rows = 0;
  int cols = 0;
  std::vector<double> logits;  // row-major rows x cols

  double operator()(int r, int c) const { return logits[static_cast<std::size_t>(r) * cols + c]; }
};

template <typename T>
DenoiserOutput forward(const ParameterSet<T>& params, const TokenSequence& x_t, double t);

/// Normalizes `h` (rows = positions) with the norm of `block` (slot 0 before
/// attention, 1 before the MLP), modulated by the conditioning vector per the
/// config's AdaLN mode.
template <typename T>
RowMatrix<T> adaln_modulate(const ParameterSet<T>& params, int block, int slot,
                            const RowMatrix<T>& h, std::span<const T> cond);

/// Residual gate of `block`/`slot` for a conditioning vector (ones unless
/// AdaLN-Zero).
template <typename T>
std::vector<T> residual_gate(const ParameterSet<T>& params, int block, int slot,
                             std::span<const T> cond);

/// One transformer block applied to a single sequence's activations.
template <typename T>
RowMatrix<T> attention_block(const ParameterSet<T>& params, int block, const RowMatrix<T>& h,
                             std::span<const T> cond);

}  // namespace mddm
