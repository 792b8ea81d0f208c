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

#include "mddm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <mutex>
#include <thread>

#include "mddm/errors.hpp"

namespace mddm {
namespace {

constexpr int kChunkSize = 256;

std::pair<TokenId, TokenId> support_range(const SequenceLayout& layout, int pos,
                                          const JointVocabulary& vocab, bool restrict) {
  if (!restrict) return {0, vocab.k_total()};
  return vocab.range(layout.region(pos));
}

TokenId draw(std::span<const double> probs, double u) {
  double acc = 0.0;
  TokenId last = 0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] <= 0.0) continue;
    acc += probs[c];
    last = static_cast<TokenId>(c);
    if (u < acc) return last;
  }
  return last;
}

int count_masked(const TokenSequence& seq, TokenId mask) {
  return static_cast<int>(std::count(seq.ids.begin(), seq.ids.end(), mask));
}

void check_canvases(std::span<const TokenSequence> canvases, std::span<Rng> rngs,
                    const JointVocabulary& vocab) {
  if (canvases.size() != rngs.size()) throw InvalidArgument("decode: one rng per canvas required");
  for (const auto& c : canvases) validate_corrupted(c, vocab);
}

}  // namespace

TokenSequence init_canvas(const GenerationMode& mode, const JointVocabulary& vocab,
                          const SequenceLayout& layout) {
  TokenSequence canvas{std::vector<TokenId>(layout.len_total(), vocab.mask_id()), layout};
  const auto& cond = mode.condition;
  const int n = static_cast<int>(cond.size());
  switch (mode.variant) {
    case GenerationVariant::kJointUnconditional:
      if (!cond.empty()) throw InvalidArgument("joint_unconditional takes no condition");
      break;
    case GenerationVariant::kReportToImage:
    case GenerationVariant::kPromptedJoint: {
      const bool full = mode.variant == GenerationVariant::kReportToImage;
      if (full ? n != layout.len_report() : (n < 1 || n > layout.len_report())) {
        throw InvalidArgument(full ? "report_to_image needs a full-length report condition"
                                   : "prompted_joint needs a report prefix of length 1..len_report");
      }
      for (int p = 0; p < n; ++p) {
        if (!vocab.is_report_id(cond[p])) throw InvalidArgument("condition id is not a report id");
        canvas.ids[p] = cond[p];
      }
      break;
    }
    case GenerationVariant::kImageToReport:
      if (n != layout.len_image()) throw InvalidArgument("image_to_report needs a full-length image condition");
      for (int p = 0; p < n; ++p) {
        if (cond[p] < 0 || cond[p] >= vocab.k_img()) throw InvalidArgument("condition id is not an image id");
        canvas.ids[layout.len_report() + p] = cond[p] + vocab.k_text();
      }
      break;
  }
  return canvas;
}

int remaining_masked(int i, int steps, int m0) {
  if (steps < 1 || i < 0 || i > steps || m0 < 0) throw InvalidArgument("remaining_masked: bad arguments");
  if (i == steps) return 0;
  return static_cast<int>(std::floor(m0 * std::cos(std::numbers::pi * i / (2.0 * steps))));
}

std::vector<TokenSequence> maskgit_decode(const Denoiser& denoiser,
                                          std::vector<TokenSequence> canvases,
                                          const SamplerConfig& config,
                                          const NoiseSchedule& schedule,
                                          const JointVocabulary& vocab, std::span<Rng> rngs,
                                          DecodeTrace* trace) {
  check_canvases(canvases, rngs, vocab);
  const TokenId mask = vocab.mask_id();
  const int steps = config.steps;
  std::vector<int> initial(canvases.size());
  for (std::size_t i = 0; i < canvases.size(); ++i) initial[i] = count_masked(canvases[i], mask);
  if (trace != nullptr) trace->push_back(canvases.front());

  for (int round = 1; round <= steps; ++round) {
    std::vector<std::size_t> active;
    std::vector<TokenSequence> inputs;
    std::vector<double> ts;
    for (std::size_t i = 0; i < canvases.size(); ++i) {
      const int masked = count_masked(canvases[i], mask);
      if (masked == 0) continue;
      active.push_back(i);
      inputs.push_back(canvases[i]);
      const double fraction = static_cast<double>(masked) / canvases[i].layout.len_total();
      ts.push_back(std::clamp(schedule.time_for_mask_fraction(fraction), schedule.t_min(), 1.0));
    }
    if (active.empty()) break;
    const auto outputs = denoiser.predict(inputs, ts);

    for (std::size_t a = 0; a < active.size(); ++a) {
      TokenSequence& canvas = canvases[active[a]];
      Rng& rng = rngs[active[a]];
      struct Candidate {
        int pos;
        TokenId token;
        double confidence;
      };
      std::vector<Candidate> candidates;
      for (int p = 0; p < canvas.layout.len_total(); ++p) {
        if (canvas.ids[p] != mask) continue;
        const auto [lo, hi] = support_range(canvas.layout, p, vocab, config.restrict_modality);
        const auto probs = token_distribution(outputs[a], p, vocab.k_total(), config.temperature, lo, hi);
        const TokenId token = draw(probs, rng.uniform());
        double confidence = probs[token];
        if (config.confidence_noise > 0.0) confidence += config.confidence_noise * rng.gumbel();
        candidates.push_back({p, token, confidence});
      }
      const int masked_before = static_cast<int>(candidates.size());
      const int target = std::min(masked_before, remaining_masked(round, steps, initial[active[a]]));
      const int commit = masked_before - target;
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const Candidate& x, const Candidate& y) { return x.confidence > y.confidence; });
      for (int c = 0; c < commit; ++c) canvas.ids[candidates[c].pos] = candidates[c].token;
    }
    if (trace != nullptr) trace->push_back(canvases.front());
  }
  return canvases;
}

double stay_masked_probability(const NoiseSchedule& schedule, int j) {
  const int steps = schedule.n_steps();
  if (j < 1 || j > steps) throw InvalidArgument("stay_masked_probability: step out of range");
  const double masked_t = 1.0 - schedule.alpha_bar(j);
  if (masked_t <= 0.0) return 0.0;
  return std::clamp((1.0 - schedule.alpha_bar(j - 1)) / masked_t, 0.0, 1.0);
}

std::vector<TokenSequence> ancestral_decode(const Denoiser& denoiser,
                                            std::vector<TokenSequence> canvases,
                                            const SamplerConfig& config,
                                            const NoiseSchedule& schedule,
                                            const JointVocabulary& vocab, std::span<Rng> rngs) {
  check_canvases(canvases, rngs, vocab);
  const TokenId mask = vocab.mask_id();
  const int steps = schedule.n_steps();
  for (int j = steps; j >= 1; --j) {
    const double stay = stay_masked_probability(schedule, j);
    const double t = static_cast<double>(j) / steps;
    std::vector<std::size_t> active;
    std::vector<std::vector<int>> unmask;
    bool any_masked = false;
    for (std::size_t i = 0; i < canvases.size(); ++i) {
      std::vector<int> positions;
      for (int p = 0; p < canvases[i].layout.len_total(); ++p) {
        if (canvases[i].ids[p] != mask) continue;
        any_masked = true;
        if (rngs[i].uniform() >= stay) positions.push_back(p);
      }
      if (!positions.empty()) {
        active.push_back(i);
        unmask.push_back(std::move(positions));
      }
    }
    if (!any_masked) break;
    if (active.empty()) continue;

    std::vector<TokenSequence> inputs;
    for (std::size_t i : active) inputs.push_back(canvases[i]);
    const std::vector<double> ts(active.size(), t);
    const auto outputs = denoiser.predict(inputs, ts);
    for (std::size_t a = 0; a < active.size(); ++a) {
      TokenSequence& canvas = canvases[active[a]];
      for (int p : unmask[a]) {
        const auto [lo, hi] = support_range(canvas.layout, p, vocab, config.restrict_modality);
        const auto probs = token_distribution(outputs[a], p, vocab.k_total(), config.temperature, lo, hi);
        canvas.ids[p] = draw(probs, rngs[active[a]].uniform());
      }
    }
  }
  return canvases;
}

std::vector<TokenSequence> decode(const Denoiser& denoiser, std::vector<TokenSequence> canvases,
                                  const SamplerConfig& config, const NoiseSchedule& schedule,
                                  const JointVocabulary& vocab, std::span<Rng> rngs) {
  if (config.algorithm == SamplerAlgorithm::kMaskGit) {
    return maskgit_decode(denoiser, std::move(canvases), config, schedule, vocab, rngs);
  }
  return ancestral_decode(denoiser, std::move(canvases), config, schedule, vocab, rngs);
}

std::vector<TokenSequence> generate_each(const Denoiser& denoiser,
                                         std::span<const GenerationMode> modes,
                                         const SamplerConfig& config,
                                         const NoiseSchedule& schedule,
                                         const JointVocabulary& vocab,
                                         const SequenceLayout& layout, std::uint64_t seed,
                                         int threads) {
  const std::size_t num = modes.size();
  std::vector<TokenSequence> results(num, TokenSequence{{}, layout});
  const std::size_t n_chunks = (num + kChunkSize - 1) / kChunkSize;
  auto run_chunk = [&](std::size_t chunk) {
    const std::size_t begin = chunk * kChunkSize;
    const std::size_t end = std::min(num, begin + kChunkSize);
    std::vector<TokenSequence> canvases;
    std::vector<Rng> rngs;
    for (std::size_t i = begin; i < end; ++i) {
      canvases.push_back(init_canvas(modes[i], vocab, layout));
      rngs.push_back(Rng::stream(seed, i));
    }
    auto decoded = decode(denoiser, std::move(canvases), config, schedule, vocab, rngs);
    for (std::size_t i = begin; i < end; ++i) results[i] = std::move(decoded[i - begin]);
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n_chunks)));
  if (workers == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    return results;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

std::vector<TokenSequence> generate(const Denoiser& denoiser, const GenerationMode& mode,
                                    const SamplerConfig& config, const NoiseSchedule& schedule,
                                    const JointVocabulary& vocab, const SequenceLayout& layout,
                                    int num, std::uint64_t seed, int threads) {
  if (num < 0) throw InvalidArgument("generate: negative sample count");
  const std::vector<GenerationMode> modes(num, mode);
  return generate_each(denoiser, modes, config, schedule, vocab, layout, seed, threads);
}

}  // namespace mddm
