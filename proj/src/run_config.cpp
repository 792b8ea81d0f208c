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

#include "mddm/run_config.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <set>
#include <sstream>

#include "mddm/errors.hpp"

namespace mddm {
namespace {

using nlohmann::json;

/// Reads fields out of one JSON object section, tracking which keys were
/// consumed so leftovers can be rejected.
class SectionReader {
 public:
  SectionReader(const json& root, const std::string& section) : section_(section) {
    if (!root.contains(section)) return;
    obj_ = &root.at(section);
    if (!obj_->is_object()) throw ConfigError("config section '" + section + "' must be an object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) return;
    try {
      out = obj_->at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError("config field '" + section_ + "." + key + "': " + e.what());
    }
  }

  void finish() const {
    if (obj_ == nullptr) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + section_ + "." + key + "'");
    }
  }

 private:
  std::string section_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

template <typename Fn>
auto rethrow_as_config(Fn&& fn) {
  try {
    return fn();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (total_steps < 0) throw ConfigError("train.total_steps must be >= 0");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
  if (warmup_steps < 0 || warmup_steps >= cycle_length) {
    throw ConfigError("train.warmup_steps must lie in [0, cycle_length)");
  }
  if (min_lr_fraction < 0.0 || min_lr_fraction > 1.0) {
    throw ConfigError("train.min_lr_fraction must lie in [0, 1]");
  }
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
}

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler.steps must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("sampler.temperature must be > 0");
  if (confidence_noise < 0.0) throw ConfigError("sampler.confidence_noise must be >= 0");
}

std::string to_string(SamplerAlgorithm algorithm) {
  return algorithm == SamplerAlgorithm::kMaskGit ? "maskgit" : "ancestral";
}

SamplerAlgorithm sampler_algorithm_from_string(const std::string& name) {
  if (name == "maskgit") return SamplerAlgorithm::kMaskGit;
  if (name == "ancestral") return SamplerAlgorithm::kAncestral;
  throw InvalidArgument("unknown sampler algorithm '" + name + "'");
}

GridWorldConfig RunConfig::world_config() const {
  GridWorldConfig w = data;
  w.k_img = vocab.k_img;
  return w;
}

void RunConfig::validate() const {
  rethrow_as_config([&] {
    world_config().validate();
    backbone.validate();
    (void)joint_vocab();
    (void)layout();
    (void)noise_schedule();
    return 0;
  });
  train.validate();
  sampler.validate();
  const int cells = data.grid_size * data.grid_size;
  if (vocab.k_text != data.n_colors) throw ConfigError("vocab.k_text must equal data.n_colors");
  if (vocab.len_report != cells || vocab.len_image != cells) {
    throw ConfigError("vocab.len_report and vocab.len_image must equal data.grid_size^2");
  }
  if (backbone.vocab_out != vocab.k_text + vocab.k_img + 1) {
    throw ConfigError("backbone.vocab_out must equal k_text + k_img + 1");
  }
  if (backbone.max_len < vocab.len_report + vocab.len_image) {
    throw ConfigError("backbone.max_len is shorter than the sequence layout");
  }
  if (eval.num_samples < 1 || eval.num_conditional < 1 || eval.eval_set_size < 1 ||
      eval.n_t_samples < 1) {
    throw ConfigError("eval sample counts must be >= 1");
  }
  for (double t : eval.recovery_t) {
    if (!(t >= schedule.t_min && t <= 1.0)) throw ConfigError("eval.recovery_t entries must lie in [t_min, 1]");
  }
}

nlohmann::json to_json(const RunConfig& c) {
  json j;
  j["vocab"] = {{"k_text", c.vocab.k_text},
                {"k_img", c.vocab.k_img},
                {"len_report", c.vocab.len_report},
                {"len_image", c.vocab.len_image}};
  j["schedule"] = {{"kind", to_string(c.schedule.kind)},
                   {"t_min", c.schedule.t_min},
                   {"n_steps", c.schedule.n_steps}};
  const auto& b = c.backbone;
  j["backbone"] = {{"d_model", b.d_model},
                   {"n_layers", b.n_layers},
                   {"n_heads", b.n_heads},
                   {"max_len", b.max_len},
                   {"vocab_out", b.vocab_out},
                   {"t_embed_dim", b.t_embed_dim},
                   {"mlp_ratio", b.mlp_ratio},
                   {"adaln_mode", to_string(b.adaln_mode)},
                   {"causal", b.causal},
                   {"use_modality_embed", b.use_modality_embed},
                   {"use_timestep", b.use_timestep}};
  const auto& t = c.train;
  j["train"] = {{"batch_size", t.batch_size},
                {"total_steps", t.total_steps},
                {"seed", t.seed},
                {"base_lr", t.base_lr},
                {"beta1", t.beta1},
                {"beta2", t.beta2},
                {"eps", t.eps},
                {"weight_decay", t.weight_decay},
                {"warmup_steps", t.warmup_steps},
                {"cycle_length", t.cycle_length},
                {"min_lr_fraction", t.min_lr_fraction},
                {"grad_clip", t.grad_clip},
                {"checkpoint_every", t.checkpoint_every}};
  const auto& s = c.sampler;
  j["sampler"] = {{"algorithm", to_string(s.algorithm)},
                  {"steps", s.steps},
                  {"temperature", s.temperature},
                  {"confidence_noise", s.confidence_noise},
                  {"restrict_modality", s.restrict_modality}};
  const auto& d = c.data;
  j["data"] = {{"grid_size", d.grid_size},
               {"n_colors", d.n_colors},
               {"color_probs", d.color_probs},
               {"pixel_mode", d.pixel_mode},
               {"patch_size", d.patch_size},
               {"jitter", d.jitter}};
  const auto& e = c.eval;
  j["eval"] = {{"num_samples", e.num_samples},
               {"num_conditional", e.num_conditional},
               {"eval_set_size", e.eval_set_size},
               {"n_t_samples", e.n_t_samples},
               {"recovery_t", e.recovery_t},
               {"seed", e.seed}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> kSections{"vocab", "schedule", "backbone", "train",
                                                "sampler", "data", "eval"};
  for (const auto& [key, value] : j.items()) {
    if (!kSections.contains(key)) throw ConfigError("unknown config section '" + key + "'");
  }
  RunConfig c;
  {
    SectionReader r(j, "vocab");
    r.read("k_text", c.vocab.k_text);
    r.read("k_img", c.vocab.k_img);
    r.read("len_report", c.vocab.len_report);
    r.read("len_image", c.vocab.len_image);
    r.finish();
  }
  {
    SectionReader r(j, "schedule");
    std::string kind = to_string(c.schedule.kind);
    r.read("kind", kind);
    r.read("t_min", c.schedule.t_min);
    r.read("n_steps", c.schedule.n_steps);
    r.finish();
    c.schedule.kind = rethrow_as_config([&] { return schedule_kind_from_string(kind); });
  }
  {
    SectionReader r(j, "backbone");
    auto& b = c.backbone;
    std::string mode = to_string(b.adaln_mode);
    r.read("d_model", b.d_model);
    r.read("n_layers", b.n_layers);
    r.read("n_heads", b.n_heads);
    r.read("max_len", b.max_len);
    r.read("vocab_out", b.vocab_out);
    r.read("t_embed_dim", b.t_embed_dim);
    r.read("mlp_ratio", b.mlp_ratio);
    r.read("adaln_mode", mode);
    r.read("causal", b.causal);
    r.read("use_modality_embed", b.use_modality_embed);
    r.read("use_timestep", b.use_timestep);
    r.finish();
    b.adaln_mode = rethrow_as_config([&] { return adaln_mode_from_string(mode); });
  }
  {
    SectionReader r(j, "train");
    auto& t = c.train;
    r.read("batch_size", t.batch_size);
    r.read("total_steps", t.total_steps);
    r.read("seed", t.seed);
    r.read("base_lr", t.base_lr);
    r.read("beta1", t.beta1);
    r.read("beta2", t.beta2);
    r.read("eps", t.eps);
    r.read("weight_decay", t.weight_decay);
    r.read("warmup_steps", t.warmup_steps);
    r.read("cycle_length", t.cycle_length);
    r.read("min_lr_fraction", t.min_lr_fraction);
    r.read("grad_clip", t.grad_clip);
    r.read("checkpoint_every", t.checkpoint_every);
    r.finish();
  }
  {
    SectionReader r(j, "sampler");
    auto& s = c.sampler;
    std::string algorithm = to_string(s.algorithm);
    r.read("algorithm", algorithm);
    r.read("steps", s.steps);
    r.read("temperature", s.temperature);
    r.read("confidence_noise", s.confidence_noise);
    r.read("restrict_modality", s.restrict_modality);
    r.finish();
    s.algorithm = rethrow_as_config([&] { return sampler_algorithm_from_string(algorithm); });
  }
  {
    SectionReader r(j, "data");
    auto& d = c.data;
    r.read("grid_size", d.grid_size);
    r.read("n_colors", d.n_colors);
    r.read("color_probs", d.color_probs);
    r.read("pixel_mode", d.pixel_mode);
    r.read("patch_size", d.patch_size);
    r.read("jitter", d.jitter);
    r.finish();
  }
  {
    SectionReader r(j, "eval");
    auto& e = c.eval;
    r.read("num_samples", e.num_samples);
    r.read("num_conditional", e.num_conditional);
    r.read("eval_set_size", e.eval_set_size);
    r.read("n_t_samples", e.n_t_samples);
    r.read("recovery_t", e.recovery_t);
    r.read("seed", e.seed);
    r.finish();
  }
  c.data.k_img = c.vocab.k_img;
  c.validate();
  return c;
}

std::string canonical_json(const RunConfig& config) { return to_json(config).dump(); }

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::string config_hash(const RunConfig& config) { return sha256_hex(canonical_json(config)); }

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  // A bad --config path is a usage error, not an I/O failure of the run.
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mddm
