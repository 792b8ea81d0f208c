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

#include "mddm/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mddm/binary_io.hpp"
#include "mddm/errors.hpp"

namespace mddm {
namespace {

constexpr char kMagic[4] = {'M', 'D', 'D', 'M'};

double pairwise_sum_impl(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum_impl(v, half) + pairwise_sum_impl(v + half, n - half);
}

void write_tensor(std::ostream& out, const std::string& name, const std::vector<int>& shape,
                  std::span<const float> data) {
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  binary::write_bytes(out, name);
  binary::write_le<std::uint8_t>(out, 0);
  binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (int dim : shape) binary::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(dim));
  for (float v : data) binary::write_f32(out, v);
}

struct RawTensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

}  // namespace

double pairwise_sum(std::span<const double> values) {
  return pairwise_sum_impl(values.data(), values.size());
}

template <typename T>
LossReport masked_loss(const ParameterSet<T>& params, std::span<const TokenSequence> x0,
                       std::span<const TokenSequence> x_t, std::span<const double> t,
                       const NoiseSchedule& schedule, const JointVocabulary& vocab,
                       std::span<T> grads, Workspace<T>& ws) {
  if (x0.empty()) throw InvalidArgument("loss: empty batch");
  if (x0.size() != x_t.size() || x0.size() != t.size()) {
    throw InvalidArgument("loss: batch component sizes differ");
  }
  const SequenceLayout layout = x0.front().layout;
  const int len = layout.len_total();
  const int batch = static_cast<int>(x0.size());
  const int k = vocab.k_total();
  const TokenId mask = vocab.mask_id();

  std::vector<TokenId> ids;
  ids.reserve(static_cast<std::size_t>(batch) * len);
  for (int b = 0; b < batch; ++b) {
    if (x0[b].layout != layout || x_t[b].layout != layout) throw InvalidArgument("loss: mixed layouts");
    if (contains_mask(x0[b], vocab)) throw InvalidArgument("loss: clean sequence contains a mask");
    ids.insert(ids.end(), x_t[b].ids.begin(), x_t[b].ids.end());
  }
  forward_batch(params, layout, ids, t, ws);

  const bool want_grads = !grads.empty();
  RowMatrix<T> dlogits;
  if (want_grads) dlogits.setZero(ws.logits.rows(), ws.logits.cols());

  LossReport report;
  report.per_example.resize(batch);
  report.t.assign(t.begin(), t.end());
  report.masked_counts.assign(batch, 0);
  std::vector<double> probs(k);
  for (int b = 0; b < batch; ++b) {
    const double weight = schedule.loss_weight(t[b]);
    const double coef = weight / len;
    double ce_sum = 0.0;
    for (int pos = 0; pos < len; ++pos) {
      const int r = b * len + pos;
      if (x_t[b].ids[pos] != mask) continue;
      ++report.masked_counts[b];
      const TokenId target = x0[b].ids[pos];
      double max_logit = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) max_logit = std::max(max_logit, static_cast<double>(ws.logits(r, c)));
      double denom = 0.0;
      for (int c = 0; c < k; ++c) {
        probs[c] = std::exp(static_cast<double>(ws.logits(r, c)) - max_logit);
        denom += probs[c];
      }
      ce_sum += std::log(denom) + max_logit - static_cast<double>(ws.logits(r, target));
      if (want_grads) {
        const double scale = coef / batch;
        for (int c = 0; c < k; ++c) {
          dlogits(r, c) = static_cast<T>(scale * (probs[c] / denom - (c == target ? 1.0 : 0.0)));
        }
      }
    }
    report.per_example[b] = coef * ce_sum;
  }
  report.loss = pairwise_sum(report.per_example) / batch;
  if (want_grads) backward_batch(params, ws, dlogits, grads);
  return report;
}

template <typename T>
LossReport nelbo_loss(const ParameterSet<T>& params, std::span<const TokenSequence> batch,
                      const NoiseSchedule& schedule, const JointVocabulary& vocab, Rng& rng,
                      std::span<T> grads, Workspace<T>& ws) {
  if (batch.empty()) throw InvalidArgument("nelbo_loss: empty batch");
  std::vector<double> ts;
  std::vector<TokenSequence> corrupted;
  ts.reserve(batch.size());
  corrupted.reserve(batch.size());
  for (const auto& x0 : batch) {
    const double t = rng.uniform(schedule.t_min(), 1.0);
    ts.push_back(t);
    corrupted.push_back(corrupt(x0, t, schedule, vocab, rng));
  }
  return masked_loss(params, batch, std::span<const TokenSequence>(corrupted), ts, schedule, vocab,
                     grads, ws);
}

double lr_at(const TrainConfig& config, std::int64_t step) {
  if (step < 0) throw InvalidArgument("lr_at: negative step");
  const std::int64_t in_cycle = step % config.cycle_length;
  if (in_cycle < config.warmup_steps) {
    return config.base_lr * static_cast<double>(in_cycle) / config.warmup_steps;
  }
  const double span = static_cast<double>(config.cycle_length - config.warmup_steps);
  const double progress = static_cast<double>(in_cycle - config.warmup_steps) / span;
  const double floor_lr = config.base_lr * config.min_lr_fraction;
  return floor_lr + (config.base_lr - floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainState init_train_state(const BackboneConfig& backbone, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 0xA11CE);
  TrainState state{init_params<float>(backbone, rng), {}, {}, 0, seed};
  state.adam_m.assign(state.params.size(), 0.0f);
  state.adam_v.assign(state.params.size(), 0.0f);
  return state;
}

namespace {

template <typename T>
double clip_impl(std::span<T> grads, double max_norm) {
  double sq = 0.0;
  for (T g : grads) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (T& g : grads) g = static_cast<T>(g * scale);
  }
  return norm;
}

}  // namespace

double clip_grad_norm(std::span<float> grads, double max_norm) { return clip_impl(grads, max_norm); }
double clip_grad_norm(std::span<double> grads, double max_norm) { return clip_impl(grads, max_norm); }

void adamw_update(std::span<float> params, std::span<float> m, std::span<float> v,
                  std::span<const float> grads, const TrainConfig& config, double lr,
                  std::int64_t step) {
  const double t = static_cast<double>(step + 1);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i];
    m[i] = b1 * m[i] + (1.0f - b1) * g;
    v[i] = b2 * v[i] + (1.0f - b2) * g * g;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    const double update = mhat / (std::sqrt(vhat) + config.eps) + config.weight_decay * params[i];
    params[i] = static_cast<float>(params[i] - lr * update);
  }
}

StepReport train_step(TrainState& state, std::span<const TokenSequence> batch,
                      const RunConfig& config) {
  const NoiseSchedule schedule = config.noise_schedule();
  const JointVocabulary vocab = config.joint_vocab();
  Rng rng = Rng::stream(state.seed, 2 * static_cast<std::uint64_t>(state.step) + 1);
  std::vector<float> grads(state.params.size(), 0.0f);
  Workspace<float> ws;
  const LossReport loss =
      nelbo_loss<float>(state.params, batch, schedule, vocab, rng, grads, ws);
  if (!std::isfinite(loss.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step << "; t =";
    for (double t : loss.t) msg << ' ' << t;
    msg << "; masked counts =";
    for (int c : loss.masked_counts) msg << ' ' << c;
    throw NumericalError(msg.str());
  }
  StepReport report;
  report.loss = loss.loss;
  report.lr = lr_at(config.train, state.step);
  report.grad_norm = clip_grad_norm(grads, config.train.grad_clip);
  adamw_update(state.params.values(), state.adam_m, state.adam_v, grads, config.train, report.lr,
               state.step);
  ++state.step;
  return report;
}

std::vector<TokenSequence> make_batch(const World& world, std::uint64_t seed, std::int64_t step,
                                      int batch_size) {
  Rng rng = Rng::stream(seed, 2 * static_cast<std::uint64_t>(step));
  std::vector<TokenSequence> batch;
  batch.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) batch.push_back(world.sample_sequence(rng));
  return batch;
}

void save_checkpoint(const TrainState& state, const RunConfig& config, const std::string& path) {
  nlohmann::json blob;
  blob["config"] = to_json(config);
  blob["step"] = state.step;
  blob["seed"] = state.seed;
  const std::string text = blob.dump();

  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  binary::write_le<std::uint32_t>(out, kCheckpointVersion);
  binary::write_le<std::uint64_t>(out, text.size());
  binary::write_bytes(out, text);
  const auto& params = state.params;
  for (const char* group : {"param/", "adam_m/", "adam_v/"}) {
    const std::string prefix = group;
    std::span<const float> source = prefix == "param/"    ? params.values()
                                    : prefix == "adam_m/" ? std::span<const float>(state.adam_m)
                                                          : std::span<const float>(state.adam_v);
    for (const auto& s : params.specs()) {
      write_tensor(out, prefix + s.name, s.shape, source.subspan(s.offset, s.numel));
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path + " for writing");
  const std::string bytes = out.str();
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw IoError("checkpoint " + path + ": bad magic bytes (not an MDDM checkpoint or unsupported version)");
  }
  const auto version = binary::read_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path + ": version " + std::to_string(version) +
                  " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto blob_len = binary::read_le<std::uint64_t>(in, "config length");
  const std::string text = binary::read_bytes(in, blob_len, "config blob");
  nlohmann::json blob;
  try {
    blob = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("checkpoint " + path + ": corrupt config blob: " + e.what());
  }
  RunConfig config = run_config_from_json(blob.at("config"));

  std::map<std::string, RawTensor> tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto name_len = binary::read_le<std::uint32_t>(in, "tensor name length");
    std::string name = binary::read_bytes(in, name_len, "tensor name");
    const auto dtype = binary::read_le<std::uint8_t>(in, "dtype");
    if (dtype != 0) throw IoError("checkpoint tensor " + name + ": unsupported dtype " + std::to_string(dtype));
    const auto rank = binary::read_le<std::uint32_t>(in, "rank");
    RawTensor t;
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.shape.push_back(binary::read_le<std::uint64_t>(in, "dims"));
      numel *= t.shape.back();
    }
    if (numel > (std::uint64_t{1} << 32)) throw IoError("checkpoint tensor " + name + " is implausibly large");
    t.data.resize(numel);
    for (auto& v : t.data) v = binary::read_f32(in, "tensor data");
    tensors.emplace(std::move(name), std::move(t));
  }

  TrainState state = init_train_state(config.backbone, blob.at("seed").get<std::uint64_t>());
  state.step = blob.at("step").get<std::int64_t>();
  std::size_t expected = 0;
  for (const char* group : {"param/", "adam_m/", "adam_v/"}) {
    const std::string prefix = group;
    std::span<float> dest = prefix == "param/"    ? state.params.values()
                            : prefix == "adam_m/" ? std::span<float>(state.adam_m)
                                                  : std::span<float>(state.adam_v);
    for (const auto& s : state.params.specs()) {
      const auto it = tensors.find(prefix + s.name);
      if (it == tensors.end()) throw IoError("checkpoint is missing tensor " + prefix + s.name);
      const std::vector<std::uint64_t> want(s.shape.begin(), s.shape.end());
      if (it->second.shape != want) {
        throw IoError("checkpoint tensor " + prefix + s.name + " has a shape that does not match the config");
      }
      std::copy(it->second.data.begin(), it->second.data.end(), dest.begin() + s.offset);
      ++expected;
    }
  }
  if (tensors.size() != expected) throw IoError("checkpoint holds tensors not described by its config");
  return {std::move(config), std::move(state)};
}

template LossReport masked_loss<float>(const ParameterSet<float>&, std::span<const TokenSequence>,
                                       std::span<const TokenSequence>, std::span<const double>,
                                       const NoiseSchedule&, const JointVocabulary&,
                                       std::span<float>, Workspace<float>&);
template LossReport masked_loss<double>(const ParameterSet<double>&, std::span<const TokenSequence>,
                                        std::span<const TokenSequence>, std::span<const double>,
                                        const NoiseSchedule&, const JointVocabulary&,
                                        std::span<double>, Workspace<double>&);
template LossReport nelbo_loss<float>(const ParameterSet<float>&, std::span<const TokenSequence>,
                                      const NoiseSchedule&, const JointVocabulary&, Rng&,
                                      std::span<float>, Workspace<float>&);
template LossReport nelbo_loss<double>(const ParameterSet<double>&, std::span<const TokenSequence>,
                                       const NoiseSchedule&, const JointVocabulary&, Rng&,
                                       std::span<double>, Workspace<double>&);

}  // namespace mddm
