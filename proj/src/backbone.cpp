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

#include "mddm/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mddm/errors.hpp"

namespace mddm {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

template <typename T>
using MapC = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MapM = Eigen::Map<RowMatrix<T>>;
template <typename T>
using RowVecMapC = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
template <typename T>
using RowVecMapM = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;

std::string block_name(int block, const char* leaf) {
  return "blocks." + std::to_string(block) + "." + leaf;
}

bool is_adaptive(AdaLNMode mode) { return mode != AdaLNMode::kNone; }

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
T gelu(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T th = std::tanh(c * (x + T(0.044715) * x * x * x));
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3 * 0.044715) * x * x);
}

/// Weight/bias pair of a dense layer, y = x W^T + b.
template <typename T>
struct Linear {
  const T* w;
  const T* b;
  int out;
  int in;
  std::size_t w_offset;
  std::size_t b_offset;
};

template <typename T>
Linear<T> linear(const ParameterSet<T>& p, const std::string& prefix) {
  const TensorSpec& ws = p.spec(prefix + ".w");
  const TensorSpec& bs = p.spec(prefix + ".b");
  return {p.values().data() + ws.offset, p.values().data() + bs.offset, ws.shape[0], ws.shape[1],
          ws.offset, bs.offset};
}

template <typename T>
void linear_forward(const Linear<T>& l, const RowMatrix<T>& x, RowMatrix<T>& y) {
  MapC<T> w(l.w, l.out, l.in);
  RowVecMapC<T> b(l.b, l.out);
  y.noalias() = x * w.transpose();
  y.rowwise() += b;
}

/// Accumulates weight/bias gradients; writes dx when requested.
template <typename T>
void linear_backward(const Linear<T>& l, const RowMatrix<T>& x, const RowMatrix<T>& dy,
                     std::span<T> grads, RowMatrix<T>* dx) {
  MapM<T> dw(grads.data() + l.w_offset, l.out, l.in);
  RowVecMapM<T> db(grads.data() + l.b_offset, l.out);
  dw.noalias() += dy.transpose() * x;
  db += dy.colwise().sum();
  if (dx != nullptr) {
    MapC<T> w(l.w, l.out, l.in);
    dx->noalias() = dy * w;
  }
}

template <typename T>
void layer_norm(const RowMatrix<T>& x, RowMatrix<T>& xhat, std::vector<T>& rstd) {
  const auto rows = x.rows();
  const auto d = x.cols();
  xhat.resize(rows, d);
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T mean = x.row(r).sum() / static_cast<T>(d);
    const auto centered = (x.row(r).array() - mean).matrix();
    const T var = centered.squaredNorm() / static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[r] = rs;
    xhat.row(r) = centered * rs;
  }
}

template <typename T>
void layer_norm_backward(const RowMatrix<T>& xhat, const std::vector<T>& rstd,
                         const RowMatrix<T>& dxhat, RowMatrix<T>& dx) {
  const auto rows = xhat.rows();
  const auto d = static_cast<T>(xhat.cols());
  dx.resize(rows, xhat.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T m1 = dxhat.row(r).sum() / d;
    const T m2 = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = rstd[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
  }
}

/// Names of the affine/modulation parameters of one norm.
struct NormSite {
  std::string gain;   // plain LayerNorm gain (mode none)
  std::string bias;   // plain LayerNorm bias (mode none)
  int mod_slot;       // index of (shift, scale) pair within the modulation rows
};

/// Applies the affine part of a norm: plain learned affine or per-example
/// (shift, scale) taken from `mods` at columns [2*slot*D, (2*slot+2)*D).
template <typename T>
void apply_norm(const ParameterSet<T>& p, const NormSite& site, const RowMatrix<T>& xhat,
                const RowMatrix<T>& mods, int len, RowMatrix<T>& out) {
  const int d = p.config().d_model;
  out.resize(xhat.rows(), xhat.cols());
  if (!is_adaptive(p.config().adaln_mode)) {
    RowVecMapC<T> w(p.tensor(site.gain).data(), d);
    RowVecMapC<T> b(p.tensor(site.bias).data(), d);
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
      out.row(r) = xhat.row(r).cwiseProduct(w) + b;
    }
    return;
  }
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    const auto e = r / len;
    const auto shift = mods.row(e).segment(2 * site.mod_slot * d, d);
    const auto scale = mods.row(e).segment((2 * site.mod_slot + 1) * d, d);
    out.row(r) = (xhat.row(r).array() * (scale.array() + T(1)) + shift.array()).matrix();
  }
}

/// Reverse of apply_norm: returns d(xhat), accumulates gain/bias grads or
/// d(mods).
template <typename T>
void apply_norm_backward(const ParameterSet<T>& p, const NormSite& site, const RowMatrix<T>& xhat,
                         const RowMatrix<T>& mods, int len, const RowMatrix<T>& dout,
                         std::span<T> grads, RowMatrix<T>& dmods, RowMatrix<T>& dxhat) {
  const int d = p.config().d_model;
  dxhat.resize(xhat.rows(), xhat.cols());
  if (!is_adaptive(p.config().adaln_mode)) {
    RowVecMapC<T> w(p.tensor(site.gain).data(), d);
    RowVecMapM<T> dw(grads.data() + p.spec(site.gain).offset, d);
    RowVecMapM<T> db(grads.data() + p.spec(site.bias).offset, d);
    for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
      dxhat.row(r) = dout.row(r).cwiseProduct(w);
      dw += dout.row(r).cwiseProduct(xhat.row(r));
      db += dout.row(r);
    }
    return;
  }
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    const auto e = r / len;
    const auto scale = mods.row(e).segment((2 * site.mod_slot + 1) * d, d);
    dxhat.row(r) = (dout.row(r).array() * (scale.array() + T(1))).matrix();
    dmods.row(e).segment(2 * site.mod_slot * d, d) += dout.row(r);
    dmods.row(e).segment((2 * site.mod_slot + 1) * d, d) += dout.row(r).cwiseProduct(xhat.row(r));
  }
}

NormSite block_norm(int block, int slot) {
  const char* gain = slot == 0 ? "ln1.gain" : "ln2.gain";
  const char* bias = slot == 0 ? "ln1.bias" : "ln2.bias";
  return {block_name(block, gain), block_name(block, bias), slot};
}

/// Self-attention over each sequence of the batch.
template <typename T>
void attention_forward(const BackboneConfig& cfg, int batch, int len, const RowMatrix<T>& qkv,
                       std::vector<T>& probs, RowMatrix<T>& att) {
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  probs.assign(static_cast<std::size_t>(batch) * heads * len * len, T(0));
  att.setZero(static_cast<Eigen::Index>(batch) * len, d);
  std::vector<T> scores(len);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      T* prob = probs.data() + (static_cast<std::size_t>(b) * heads + h) * len * len;
      for (int i = 0; i < len; ++i) {
        const int row_i = b * len + i;
        const int last = cfg.causal ? i : len - 1;
        T max_s = -std::numeric_limits<T>::infinity();
        for (int j = 0; j <= last; ++j) {
          const int row_j = b * len + j;
          T s = qkv.row(row_i).segment(h * hd, hd).dot(qkv.row(row_j).segment(d + h * hd, hd)) * scale;
          scores[j] = s;
          max_s = std::max(max_s, s);
        }
        T denom = 0;
        for (int j = 0; j <= last; ++j) {
          scores[j] = std::exp(scores[j] - max_s);
          denom += scores[j];
        }
        for (int j = 0; j <= last; ++j) {
          const T pij = scores[j] / denom;
          prob[i * len + j] = pij;
          att.row(row_i).segment(h * hd, hd) += pij * qkv.row(b * len + j).segment(2 * d + h * hd, hd);
        }
      }
    }
  }
}

template <typename T>
void attention_backward(const BackboneConfig& cfg, int batch, int len, const RowMatrix<T>& qkv,
                        const std::vector<T>& probs, const RowMatrix<T>& datt,
                        RowMatrix<T>& dqkv) {
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  dqkv.setZero(qkv.rows(), qkv.cols());
  std::vector<T> dp(len);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const T* prob = probs.data() + (static_cast<std::size_t>(b) * heads + h) * len * len;
      for (int i = 0; i < len; ++i) {
        const int row_i = b * len + i;
        const int last = cfg.causal ? i : len - 1;
        const auto dout = datt.row(row_i).segment(h * hd, hd);
        T weighted = 0;
        for (int j = 0; j <= last; ++j) {
          const int row_j = b * len + j;
          dp[j] = dout.dot(qkv.row(row_j).segment(2 * d + h * hd, hd));
          weighted += prob[i * len + j] * dp[j];
          dqkv.row(row_j).segment(2 * d + h * hd, hd) += prob[i * len + j] * dout;
        }
        for (int j = 0; j <= last; ++j) {
          const int row_j = b * len + j;
          const T ds = prob[i * len + j] * (dp[j] - weighted) * scale;
          dqkv.row(row_i).segment(h * hd, hd) += ds * qkv.row(row_j).segment(d + h * hd, hd);
          dqkv.row(row_j).segment(d + h * hd, hd) += ds * qkv.row(row_i).segment(h * hd, hd);
        }
      }
    }
  }
}

/// Adds gate (per example) * branch to x, or branch alone without gates.
template <typename T>
void gated_residual(const RowMatrix<T>& x, const RowMatrix<T>& branch, const RowMatrix<T>& gates,
                    int slot, int d, int len, bool gated, RowMatrix<T>& out) {
  if (!gated) {
    out = x + branch;
    return;
  }
  out.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    out.row(r) = x.row(r) + gates.row(r / len).segment(slot * d, d).cwiseProduct(branch.row(r));
  }
}

template <typename T>
void block_modulation(const ParameterSet<T>& p, int block, const RowMatrix<T>& cond_act,
                      BlockCache<T>& c) {
  const AdaLNMode mode = p.config().adaln_mode;
  if (is_adaptive(mode)) linear_forward(linear(p, block_name(block, "mod")), cond_act, c.mods);
  if (mode == AdaLNMode::kAdaLNZero) {
    linear_forward(linear(p, block_name(block, "gate")), cond_act, c.gates);
  }
}

template <typename T>
void block_forward(const ParameterSet<T>& p, int block, int batch, int len, const RowMatrix<T>& x,
                   const RowMatrix<T>& cond_act, BlockCache<T>& c, RowMatrix<T>& out) {
  const BackboneConfig& cfg = p.config();
  const bool gated = cfg.adaln_mode == AdaLNMode::kAdaLNZero;
  block_modulation(p, block, cond_act, c);
  c.x_in = x;
  layer_norm(x, c.xhat1, c.rstd1);
  apply_norm(p, block_norm(block, 0), c.xhat1, c.mods, len, c.n1);
  linear_forward(linear(p, block_name(block, "attn.qkv")), c.n1, c.qkv);
  attention_forward(cfg, batch, len, c.qkv, c.probs, c.att);
  linear_forward(linear(p, block_name(block, "attn.out")), c.att, c.attn_out);
  gated_residual(x, c.attn_out, c.gates, 0, cfg.d_model, len, gated, c.x_mid);

  layer_norm(c.x_mid, c.xhat2, c.rstd2);
  apply_norm(p, block_norm(block, 1), c.xhat2, c.mods, len, c.n2);
  linear_forward(linear(p, block_name(block, "mlp.fc1")), c.n2, c.pre_act);
  c.act = c.pre_act.unaryExpr([](T v) { return gelu(v); });
  linear_forward(linear(p, block_name(block, "mlp.fc2")), c.act, c.mlp_out);
  gated_residual(c.x_mid, c.mlp_out, c.gates, 1, cfg.d_model, len, gated, out);
}

/// Reverse pass of one block: dx (in/out) holds d(out) on entry and d(x_in)
/// on exit. Conditioning gradients accumulate into dcond_act.
template <typename T>
void block_backward(const ParameterSet<T>& p, int block, int batch, int len,
                    const BlockCache<T>& c, const RowMatrix<T>& cond_act, RowMatrix<T>& dx,
                    RowMatrix<T>& dcond_act, std::span<T> grads) {
  const BackboneConfig& cfg = p.config();
  const int d = cfg.d_model;
  const bool gated = cfg.adaln_mode == AdaLNMode::kAdaLNZero;
  RowMatrix<T> dmods = RowMatrix<T>::Zero(batch, is_adaptive(cfg.adaln_mode) ? 4 * d : 0);
  RowMatrix<T> dgates = RowMatrix<T>::Zero(batch, gated ? 2 * d : 0);

  // MLP branch.
  RowMatrix<T> dbranch = dx;
  if (gated) {
    for (Eigen::Index r = 0; r < dx.rows(); ++r) {
      const auto e = r / len;
      dgates.row(e).segment(d, d) += dx.row(r).cwiseProduct(c.mlp_out.row(r));
      dbranch.row(r) = dx.row(r).cwiseProduct(c.gates.row(e).segment(d, d));
    }
  }
  RowMatrix<T> dact, dn, dxhat, dln;
  linear_backward(linear(p, block_name(block, "mlp.fc2")), c.act, dbranch, grads, &dact);
  RowMatrix<T> dpre = dact.cwiseProduct(c.pre_act.unaryExpr([](T v) { return gelu_grad(v); }));
  linear_backward(linear(p, block_name(block, "mlp.fc1")), c.n2, dpre, grads, &dn);
  apply_norm_backward(p, block_norm(block, 1), c.xhat2, c.mods, len, dn, grads, dmods, dxhat);
  layer_norm_backward(c.xhat2, c.rstd2, dxhat, dln);
  dx += dln;  // now d(x_mid)

  // Attention branch.
  dbranch = dx;
  if (gated) {
    for (Eigen::Index r = 0; r < dx.rows(); ++r) {
      const auto e = r / len;
      dgates.row(e).segment(0, d) += dx.row(r).cwiseProduct(c.attn_out.row(r));
      dbranch.row(r) = dx.row(r).cwiseProduct(c.gates.row(e).segment(0, d));
    }
  }
  RowMatrix<T> datt, dqkv;
  linear_backward(linear(p, block_name(block, "attn.out")), c.att, dbranch, grads, &datt);
  attention_backward(cfg, batch, len, c.qkv, c.probs, datt, dqkv);
  linear_backward(linear(p, block_name(block, "attn.qkv")), c.n1, dqkv, grads, &dn);
  apply_norm_backward(p, block_norm(block, 0), c.xhat1, c.mods, len, dn, grads, dmods, dxhat);
  layer_norm_backward(c.xhat1, c.rstd1, dxhat, dln);
  dx += dln;  // now d(x_in)

  if (is_adaptive(cfg.adaln_mode)) {
    RowMatrix<T> dc;
    linear_backward(linear(p, block_name(block, "mod")), cond_act, dmods, grads, &dc);
    dcond_act += dc;
  }
  if (gated) {
    RowMatrix<T> dc;
    linear_backward(linear(p, block_name(block, "gate")), cond_act, dgates, grads, &dc);
    dcond_act += dc;
  }
}

template <typename T>
void time_forward(const ParameterSet<T>& p, std::span<const double> ts, Workspace<T>& ws) {
  const BackboneConfig& cfg = p.config();
  const int batch = static_cast<int>(ts.size());
  ws.cond.setZero(batch, cfg.d_model);
  if (cfg.use_timestep) {
    ws.t_features.resize(batch, cfg.t_embed_dim);
    for (int b = 0; b < batch; ++b) {
      const auto f = timestep_features<T>(ts[b], cfg.t_embed_dim);
      for (int k = 0; k < cfg.t_embed_dim; ++k) ws.t_features(b, k) = f[k];
    }
    linear_forward(linear(p, "time.fc1"), ws.t_features, ws.t_hidden);
    ws.t_act = ws.t_hidden.unaryExpr([](T v) { return silu(v); });
    linear_forward(linear(p, "time.fc2"), ws.t_act, ws.cond);
  }
  ws.cond_act = ws.cond.unaryExpr([](T v) { return silu(v); });
}

}  // namespace

std::string to_string(AdaLNMode mode) {
  switch (mode) {
    case AdaLNMode::kNone:
      return "none";
    case AdaLNMode::kAdaLN:
      return "adaln";
    case AdaLNMode::kAdaLNZero:
      return "adaln_zero";
  }
  return "unknown";
}

AdaLNMode adaln_mode_from_string(const std::string& name) {
  if (name == "none") return AdaLNMode::kNone;
  if (name == "adaln") return AdaLNMode::kAdaLN;
  if (name == "adaln_zero") return AdaLNMode::kAdaLNZero;
  throw InvalidArgument("unknown adaln mode '" + name + "'");
}

void BackboneConfig::validate() const {
  if (d_model < 1 || n_layers < 0 || n_heads < 1 || max_len < 1 || vocab_out < 2 ||
      t_embed_dim < 2 || mlp_ratio < 1) {
    throw InvalidArgument("backbone config has a non-positive dimension");
  }
  if (d_model % n_heads != 0) throw InvalidArgument("d_model must be divisible by n_heads");
  if (t_embed_dim % 2 != 0) throw InvalidArgument("t_embed_dim must be even");
}

std::vector<TensorSpec> parameter_specs(const BackboneConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  std::vector<TensorSpec> specs;
  auto add = [&specs](std::string name, std::vector<int> shape) {
    std::size_t numel = 1;
    for (int s : shape) numel *= static_cast<std::size_t>(s);
    const std::size_t offset = specs.empty() ? 0 : specs.back().offset + specs.back().numel;
    specs.push_back({std::move(name), std::move(shape), offset, numel});
  };
  auto add_linear = [&add](const std::string& prefix, int out, int in) {
    add(prefix + ".w", {out, in});
    add(prefix + ".b", {out});
  };
  add("tok_embed", {cfg.vocab_out, d});
  add("pos_embed", {cfg.max_len, d});
  if (cfg.use_modality_embed) add("modality_embed", {2, d});
  if (cfg.use_timestep) {
    add_linear("time.fc1", d, cfg.t_embed_dim);
    add_linear("time.fc2", d, d);
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    if (is_adaptive(cfg.adaln_mode)) {
      add_linear(block_name(i, "mod"), 4 * d, d);
    } else {
      add(block_name(i, "ln1.gain"), {d});
      add(block_name(i, "ln1.bias"), {d});
      add(block_name(i, "ln2.gain"), {d});
      add(block_name(i, "ln2.bias"), {d});
    }
    if (cfg.adaln_mode == AdaLNMode::kAdaLNZero) add_linear(block_name(i, "gate"), 2 * d, d);
    add_linear(block_name(i, "attn.qkv"), 3 * d, d);
    add_linear(block_name(i, "attn.out"), d, d);
    add_linear(block_name(i, "mlp.fc1"), cfg.mlp_dim(), d);
    add_linear(block_name(i, "mlp.fc2"), d, cfg.mlp_dim());
  }
  if (is_adaptive(cfg.adaln_mode)) {
    add_linear("final.mod", 2 * d, d);
  } else {
    add("final.gain", {d});
    add("final.bias", {d});
  }
  add_linear("head", cfg.vocab_out, d);
  return specs;
}

std::size_t parameter_count(const BackboneConfig& config) {
  const auto specs = parameter_specs(config);
  return specs.back().offset + specs.back().numel;
}

template <typename T>
ParameterSet<T>::ParameterSet(BackboneConfig config)
    : config_(config), specs_(parameter_specs(config)), values_(parameter_count(config), T(0)) {}

template <typename T>
const TensorSpec& ParameterSet<T>::spec(std::string_view name) const {
  for (const auto& s : specs_) {
    if (s.name == name) return s;
  }
  throw InvalidArgument("no parameter tensor named '" + std::string(name) + "'");
}

template <typename T>
bool ParameterSet<T>::has(std::string_view name) const {
  return std::any_of(specs_.begin(), specs_.end(), [&](const auto& s) { return s.name == name; });
}

template <typename T>
std::span<T> ParameterSet<T>::tensor(std::string_view name) {
  const auto& s = spec(name);
  return std::span<T>(values_).subspan(s.offset, s.numel);
}

template <typename T>
std::span<const T> ParameterSet<T>::tensor(std::string_view name) const {
  const auto& s = spec(name);
  return std::span<const T>(values_).subspan(s.offset, s.numel);
}

template <typename T>
ParameterSet<T> init_params(const BackboneConfig& config, Rng& rng) {
  ParameterSet<T> p(config);
  auto trunc_normal = [&rng]() {
    double v;
    do {
      v = rng.normal();
    } while (std::abs(v) > 2.0);
    return static_cast<T>(v * kInitStd);
  };
  for (const auto& s : p.specs()) {
    auto values = p.tensor(s.name);
    const bool is_bias = s.name.ends_with(".b") || s.name.ends_with(".bias");
    const bool is_gain = s.name.ends_with(".gain");
    const bool is_gate = s.name.find(".gate.") != std::string::npos;
    if (is_gate || is_bias) {
      std::fill(values.begin(), values.end(), T(0));
    } else if (is_gain) {
      std::fill(values.begin(), values.end(), T(1));
    } else {
      for (T& v : values) v = trunc_normal();
    }
  }
  return p;
}

template <typename T>
std::vector<T> timestep_features(double t, int dim) {
  std::vector<T> out(dim, T(0));
  const int half = dim / 2;
  const double scaled = 1000.0 * t;
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    out[k] = static_cast<T>(std::sin(scaled * freq));
    out[half + k] = static_cast<T>(std::cos(scaled * freq));
  }
  return out;
}

template <typename T>
std::vector<T> timestep_embedding(const ParameterSet<T>& params, double t) {
  Workspace<T> ws;
  const double ts[] = {t};
  time_forward(params, ts, ws);
  return std::vector<T>(ws.cond.data(), ws.cond.data() + ws.cond.size());
}

template <typename T>
void forward_batch(const ParameterSet<T>& params, const SequenceLayout& layout,
                   std::span<const TokenId> ids, std::span<const double> ts, Workspace<T>& ws) {
  const BackboneConfig& cfg = params.config();
  const int len = layout.len_total();
  const int batch = static_cast<int>(ts.size());
  if (len > cfg.max_len) {
    throw InvalidArgument("sequence length " + std::to_string(len) + " exceeds max_len " +
                          std::to_string(cfg.max_len));
  }
  if (ids.size() != static_cast<std::size_t>(batch) * len) {
    throw InvalidArgument("forward: expected " + std::to_string(batch * len) + " ids");
  }
  for (TokenId id : ids) {
    if (id < 0 || id >= cfg.vocab_out) {
      throw InvalidArgument("forward: token id " + std::to_string(id) + " out of range");
    }
  }
  for (double t : ts) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("forward: t outside [0, 1]");
  }
  const int d = cfg.d_model;
  ws.batch = batch;
  ws.len = len;
  ws.ids.assign(ids.begin(), ids.end());
  ws.regions.resize(len);
  for (int pos = 0; pos < len; ++pos) ws.regions[pos] = static_cast<int>(layout.region(pos));

  time_forward(params, ts, ws);

  const T* tok = params.tensor("tok_embed").data();
  const T* pos_embed = params.tensor("pos_embed").data();
  const T* mod_embed = cfg.use_modality_embed ? params.tensor("modality_embed").data() : nullptr;
  const bool additive_time = cfg.use_timestep && cfg.adaln_mode == AdaLNMode::kNone;
  ws.embedded.resize(static_cast<Eigen::Index>(batch) * len, d);
  for (int b = 0; b < batch; ++b) {
    for (int pos = 0; pos < len; ++pos) {
      const int r = b * len + pos;
      auto row = ws.embedded.row(r);
      row = RowVecMapC<T>(tok + static_cast<std::size_t>(ids[r]) * d, d) +
            RowVecMapC<T>(pos_embed + static_cast<std::size_t>(pos) * d, d);
      if (mod_embed) row += RowVecMapC<T>(mod_embed + static_cast<std::size_t>(ws.regions[pos]) * d, d);
      if (additive_time) row += ws.cond.row(b);
    }
  }

  ws.blocks.resize(cfg.n_layers);
  RowMatrix<T> x = ws.embedded;
  RowMatrix<T> next;
  for (int i = 0; i < cfg.n_layers; ++i) {
    block_forward(params, i, batch, len, x, ws.cond_act, ws.blocks[i], next);
    x.swap(next);
  }
  ws.residual = std::move(x);

  layer_norm(ws.residual, ws.xhat_f, ws.rstd_f);
  if (is_adaptive(cfg.adaln_mode)) linear_forward(linear(params, "final.mod"), ws.cond_act, ws.final_mods);
  apply_norm(params, NormSite{"final.gain", "final.bias", 0}, ws.xhat_f, ws.final_mods, len, ws.n_f);
  linear_forward(linear(params, "head"), ws.n_f, ws.logits);
}

template <typename T>
void backward_batch(const ParameterSet<T>& params, const Workspace<T>& ws,
                    const RowMatrix<T>& dlogits, std::span<T> grads) {
  const BackboneConfig& cfg = params.config();
  const int d = cfg.d_model;
  const int batch = ws.batch;
  const int len = ws.len;
  if (grads.size() != params.size()) throw InvalidArgument("gradient buffer size mismatch");

  RowMatrix<T> dcond_act = RowMatrix<T>::Zero(batch, d);
  RowMatrix<T> dn, dxhat, dx;
  linear_backward(linear(params, "head"), ws.n_f, dlogits, grads, &dn);
  RowMatrix<T> dfinal = RowMatrix<T>::Zero(batch, is_adaptive(cfg.adaln_mode) ? 2 * d : 0);
  apply_norm_backward(params, NormSite{"final.gain", "final.bias", 0}, ws.xhat_f, ws.final_mods,
                      len, dn, grads, dfinal, dxhat);
  layer_norm_backward(ws.xhat_f, ws.rstd_f, dxhat, dx);
  if (is_adaptive(cfg.adaln_mode)) {
    RowMatrix<T> dc;
    linear_backward(linear(params, "final.mod"), ws.cond_act, dfinal, grads, &dc);
    dcond_act += dc;
  }

  for (int i = cfg.n_layers - 1; i >= 0; --i) {
    block_backward(params, i, batch, len, ws.blocks[i], ws.cond_act, dx, dcond_act, grads);
  }

  // dx is now d(embedded).
  T* dtok = grads.data() + params.spec("tok_embed").offset;
  T* dpos = grads.data() + params.spec("pos_embed").offset;
  T* dmod = cfg.use_modality_embed ? grads.data() + params.spec("modality_embed").offset : nullptr;
  for (int b = 0; b < batch; ++b) {
    for (int pos = 0; pos < len; ++pos) {
      const int r = b * len + pos;
      RowVecMapM<T>(dtok + static_cast<std::size_t>(ws.ids[r]) * d, d) += dx.row(r);
      RowVecMapM<T>(dpos + static_cast<std::size_t>(pos) * d, d) += dx.row(r);
      if (dmod) RowVecMapM<T>(dmod + static_cast<std::size_t>(ws.regions[pos]) * d, d) += dx.row(r);
    }
  }

  if (!cfg.use_timestep) return;
  RowMatrix<T> dcond = dcond_act.cwiseProduct(ws.cond.unaryExpr([](T v) { return silu_grad(v); }));
  if (cfg.adaln_mode == AdaLNMode::kNone) {
    for (int b = 0; b < batch; ++b) dcond.row(b) += dx.middleRows(b * len, len).colwise().sum();
  }
  RowMatrix<T> dt_act;
  linear_backward(linear(params, "time.fc2"), ws.t_act, dcond, grads, &dt_act);
  RowMatrix<T> dt_hidden = dt_act.cwiseProduct(ws.t_hidden.unaryExpr([](T v) { return silu_grad(v); }));
  linear_backward<T>(linear(params, "time.fc1"), ws.t_features, dt_hidden, grads, nullptr);
}

template <typename T>
DenoiserOutput forward(const ParameterSet<T>& params, const TokenSequence& x_t, double t) {
  Workspace<T> ws;
  const double ts[] = {t};
  forward_batch(params, x_t.layout, x_t.ids, ts, ws);
  DenoiserOutput out{static_cast<int>(ws.logits.rows()), static_cast<int>(ws.logits.cols()), {}};
  out.logits.assign(ws.logits.data(), ws.logits.data() + ws.logits.size());
  return out;
}

template <typename T>
RowMatrix<T> adaln_modulate(const ParameterSet<T>& params, int block, int slot,
                            const RowMatrix<T>& h, std::span<const T> cond) {
  const int d = params.config().d_model;
  if (h.cols() != d || static_cast<int>(cond.size()) != d) throw InvalidArgument("adaln_modulate: shape mismatch");
  if (slot < 0 || slot > 1 || block < 0 || block >= params.config().n_layers) {
    throw InvalidArgument("adaln_modulate: bad block/slot");
  }
  const RowMatrix<T> cond_act = RowVecMapC<T>(cond.data(), d).unaryExpr([](T v) { return silu(v); });
  BlockCache<T> c;
  block_modulation(params, block, cond_act, c);
  RowMatrix<T> xhat, out;
  std::vector<T> rstd;
  layer_norm(h, xhat, rstd);
  apply_norm(params, block_norm(block, slot), xhat, c.mods, static_cast<int>(h.rows()), out);
  return out;
}

template <typename T>
std::vector<T> residual_gate(const ParameterSet<T>& params, int block, int slot,
                             std::span<const T> cond) {
  const int d = params.config().d_model;
  if (params.config().adaln_mode != AdaLNMode::kAdaLNZero) return std::vector<T>(d, T(1));
  const RowMatrix<T> cond_act = RowVecMapC<T>(cond.data(), d).unaryExpr([](T v) { return silu(v); });
  BlockCache<T> c;
  block_modulation(params, block, cond_act, c);
  const auto g = c.gates.row(0).segment(slot * d, d);
  return std::vector<T>(g.data(), g.data() + d);
}

template <typename T>
RowMatrix<T> attention_block(const ParameterSet<T>& params, int block, const RowMatrix<T>& h,
                             std::span<const T> cond) {
  const int d = params.config().d_model;
  if (h.cols() != d || static_cast<int>(cond.size()) != d) throw InvalidArgument("attention_block: shape mismatch");
  if (block < 0 || block >= params.config().n_layers) throw InvalidArgument("attention_block: bad block");
  const RowMatrix<T> cond_act = RowVecMapC<T>(cond.data(), d).unaryExpr([](T v) { return silu(v); });
  BlockCache<T> c;
  RowMatrix<T> out;
  block_forward(params, block, 1, static_cast<int>(h.rows()), h, cond_act, c, out);
  return out;
}

#define MDDM_INSTANTIATE(T)                                                                       \
  template class ParameterSet<T>;                                                                 \
  template ParameterSet<T> init_params<T>(const BackboneConfig&, Rng&);                           \
  template std::vector<T> timestep_features<T>(double, int);                                      \
  template std::vector<T> timestep_embedding<T>(const ParameterSet<T>&, double);                  \
  template void forward_batch<T>(const ParameterSet<T>&, const SequenceLayout&,                   \
                                 std::span<const TokenId>, std::span<const double>, Workspace<T>&); \
  template void backward_batch<T>(const ParameterSet<T>&, const Workspace<T>&,                    \
                                  const RowMatrix<T>&, std::span<T>);                             \
  template DenoiserOutput forward<T>(const ParameterSet<T>&, const TokenSequence&, double);       \
  template RowMatrix<T> adaln_modulate<T>(const ParameterSet<T>&, int, int, const RowMatrix<T>&,  \
                                          std::span<const T>);                                    \
  template std::vector<T> residual_gate<T>(const ParameterSet<T>&, int, int, std::span<const T>); \
  template RowMatrix<T> attention_block<T>(const ParameterSet<T>&, int, const RowMatrix<T>&,      \
                                           std::span<const T>);

MDDM_INSTANTIATE(float)
MDDM_INSTANTIATE(double)

#undef MDDM_INSTANTIATE

}  // namespace mddm
