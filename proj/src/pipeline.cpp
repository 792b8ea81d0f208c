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

#include "mddm/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mddm/errors.hpp"
#include "mddm/eval.hpp"

namespace mddm {
namespace fs = std::filesystem;

void run_training(TrainState& state, const RunConfig& config, const TrainOptions& options) {
  const World world(config.world_config(), config.train.seed);
  const std::int64_t stop = options.stop_at >= 0 ? options.stop_at : config.train.total_steps;
  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    const fs::path csv = fs::path(options.out_dir) / "metrics.csv";
    const bool fresh = !fs::exists(csv) || state.step == 0;
    metrics.open(csv, fresh ? std::ios::trunc : std::ios::app);
    if (!metrics) throw IoError("cannot open " + csv.string());
    if (fresh) metrics << "step,loss,lr,wallclock\n";
  }
  const auto start = std::chrono::steady_clock::now();
  while (state.step < stop) {
    const auto batch = make_batch(world, state.seed, state.step, config.train.batch_size);
    const std::int64_t step = state.step;
    const StepReport report = train_step(state, batch, config);
    if (options.on_step) options.on_step(step, report);
    if (metrics.is_open()) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      metrics << step << ',' << std::setprecision(9) << report.loss << ',' << report.lr << ','
              << std::setprecision(6) << secs << '\n';
    }
    if (!options.out_dir.empty() && state.step % config.train.checkpoint_every == 0 && state.step < stop) {
      std::ostringstream name;
      name << "ckpt_" << std::setw(8) << std::setfill('0') << state.step << ".mddm";
      save_checkpoint(state, config, (fs::path(options.out_dir) / name.str()).string());
    }
  }
  if (!options.out_dir.empty()) {
    save_checkpoint(state, config, (fs::path(options.out_dir) / "final.mddm").string());
  }
}

TrainState train_model(const RunConfig& config, const TrainOptions& options) {
  TrainState state = init_train_state(config.backbone, config.train.seed);
  run_training(state, config, options);
  return state;
}

std::vector<TokenSequence> make_eval_set(const World& world, int n, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 0xE7A1);
  std::vector<TokenSequence> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(world.sample_sequence(rng));
  return out;
}

std::set<std::string> parse_suites(const std::string& spec) {
  if (spec == "all") return kEvalSuites;
  std::set<std::string> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") return kEvalSuites;
    if (!kEvalSuites.contains(item)) throw ConfigError("unknown eval suite '" + item + "'");
    out.insert(item);
  }
  if (out.empty()) throw ConfigError("no eval suite given");
  return out;
}

std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::string& grid) {
  std::vector<AblationVariant> out{{"full", base}};
  std::stringstream ss(grid);
  std::string item;
  while (std::getline(ss, item, ',')) {
    RunConfig variant = base;
    if (item == "causal") {
      variant.backbone.causal = true;
      out.push_back({"causal_mask", variant});
    } else if (item == "timestep") {
      // Norms stay adaptive but see a zero conditioning vector.
      variant.backbone.use_timestep = false;
      out.push_back({"no_timestep", variant});
    } else if (item == "adaln") {
      variant.backbone.adaln_mode = AdaLNMode::kNone;
      out.push_back({"no_adaln", variant});
    } else if (item == "backbone_scratch") {
      // The base model already trains from scratch; there is no pretrained
      // backbone to compare against at this scale.
    } else {
      throw ConfigError("unknown ablation grid entry '" + item + "'");
    }
  }
  for (auto& v : out) v.config.validate();
  return out;
}

GenerationMode mode_from_name(const std::string& name, std::vector<TokenId> condition) {
  if (name == "joint") return {GenerationVariant::kJointUnconditional, std::move(condition)};
  if (name == "t2i") return {GenerationVariant::kReportToImage, std::move(condition)};
  if (name == "i2t") return {GenerationVariant::kImageToReport, std::move(condition)};
  if (name == "prompted") return {GenerationVariant::kPromptedJoint, std::move(condition)};
  throw ConfigError("unknown generation mode '" + name + "'");
}

EvalReport evaluate(const Denoiser& denoiser, const RunConfig& config,
                    const std::set<std::string>& suites, int threads) {
  const World world(config.world_config(), config.train.seed);
  const JointVocabulary vocab = world.vocab();
  const SequenceLayout layout = world.layout();
  const NoiseSchedule schedule = config.noise_schedule();
  const EvalConfig& ec = config.eval;
  EvalReport report;
  auto& m = report.metrics;

  report.conventions = {{"bleu_smoothing", "none"},
                        {"bleu_brevity_penalty", "exp(1 - |ref|/|cand|) when |cand| < |ref|"},
                        {"rouge_beta", kRougeBeta},
                        {"tv", "0.5 * L1 between empirical and exact joint"},
                        {"nelbo_units", "nats per token"},
                        {"sampler", to_string(config.sampler.algorithm)},
                        {"sampler_steps", config.sampler.algorithm == SamplerAlgorithm::kMaskGit
                                              ? config.sampler.steps
                                              : schedule.n_steps()}};

  if (suites.contains("dist")) {
    const auto samples = generate(denoiser, {}, config.sampler, schedule, vocab, layout,
                                  ec.num_samples, Rng::splitmix64(ec.seed ^ 0xD157), threads);
    m["tv_joint"] = tv_distance(count_outcomes(samples), exact_joint(world));
    m["consistency_joint"] = consistency_rate(samples, world);
  }

  const auto references = make_eval_set(world, ec.num_conditional, ec.seed);
  auto conditional = [&](GenerationVariant variant, std::uint64_t salt) {
    std::vector<GenerationMode> modes;
    for (const auto& ref : references) {
      const auto pair = unpack(ref, vocab);
      switch (variant) {
        case GenerationVariant::kReportToImage:
          modes.push_back({variant, pair.report});
          break;
        case GenerationVariant::kImageToReport:
          modes.push_back({variant, pair.image});
          break;
        case GenerationVariant::kPromptedJoint:
          modes.push_back({variant, {pair.report.front()}});
          break;
        case GenerationVariant::kJointUnconditional:
          modes.push_back({variant, {}});
          break;
      }
    }
    return generate_each(denoiser, modes, config.sampler, schedule, vocab, layout,
                         Rng::splitmix64(ec.seed ^ salt), threads);
  };

  std::vector<TokenSequence> i2t;
  if (suites.contains("consistency") || suites.contains("text")) {
    i2t = conditional(GenerationVariant::kImageToReport, 0x12);
  }
  if (suites.contains("consistency")) {
    m["consistency_report_to_image"] = consistency_rate(conditional(GenerationVariant::kReportToImage, 0x21), world);
    m["consistency_image_to_report"] = consistency_rate(i2t, world);
    const auto prompted = conditional(GenerationVariant::kPromptedJoint, 0x77);
    m["consistency_prompted"] = consistency_rate(prompted, world);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < prompted.size(); ++i) kept += prompted[i].ids[0] == references[i].ids[0];
    m["prompt_preservation"] = static_cast<double>(kept) / prompted.size();
  }
  if (suites.contains("text")) {
    double b1 = 0, b2 = 0, b3 = 0, rl = 0;
    for (std::size_t i = 0; i < i2t.size(); ++i) {
      const std::span<const TokenId> cand(i2t[i].ids.data(), layout.len_report());
      const std::span<const TokenId> ref(references[i].ids.data(), layout.len_report());
      b1 += bleu_n(cand, ref, 1);
      b2 += bleu_n(cand, ref, 2);
      b3 += bleu_n(cand, ref, 3);
      rl += rouge_l(cand, ref);
    }
    const double n = static_cast<double>(i2t.size());
    m["bleu1"] = b1 / n;
    m["bleu2"] = b2 / n;
    m["bleu3"] = b3 / n;
    m["rouge_l"] = rl / n;
  }
  if (suites.contains("recovery")) {
    const auto eval_set = make_eval_set(world, ec.eval_set_size, ec.seed + 1);
    Rng rng = Rng::stream(ec.seed, 0x5EC0);
    for (double t : ec.recovery_t) {
      std::ostringstream key;
      key << "recovery_t" << t;
      m[key.str()] = masked_recovery_accuracy(denoiser, eval_set, schedule, vocab, t, rng);
    }
  }
  if (suites.contains("nelbo")) {
    const auto eval_set = make_eval_set(world, ec.eval_set_size, ec.seed + 2);
    Rng rng = Rng::stream(ec.seed, 0x4E1B);
    const auto est = nelbo_estimate(denoiser, eval_set, schedule, vocab, ec.n_t_samples, rng);
    m["nelbo_per_token"] = est.mean;
    m["nelbo_std_error"] = est.std_error;
    m["nelbo_uniform"] = std::log(static_cast<double>(vocab.k_total()));
  }
  return report;
}

}  // namespace mddm
