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
#include <span>
#include <vector>

#include "mddm/denoiser.hpp"
#include "mddm/diffusion_schedule.hpp"
#include "mddm/joint_vocab.hpp"
#include "mddm/rng.hpp"
#include "mddm/run_config.hpp"

namespace mddm {

enum class GenerationVariant { kJointUnconditional, kReportToImage, kImageToReport, kPromptedJoint };

/// What is fixed on the canvas before decoding. `condition` holds report ids
/// (report_to_image, prompted_joint prefix) or image codebook ids
/// (image_to_report); it is empty for joint_unconditional.
struct GenerationMode {
  GenerationVariant variant = GenerationVariant::kJointUnconditional;
  std::vector<TokenId> condition;
};

/// Conditioned positions hold the condition, every other position the mask id.
TokenSequence init_canvas(const GenerationMode& mode, const JointVocabulary& vocab,
                          const SequenceLayout& layout);

/// floor(m0 * cos(pi * i / (2 * steps))): masks left after round i.
int remaining_masked(int i, int steps, int m0);

/// Canvas state after every decoding round, for inspection.
using DecodeTrace = std::vector<TokenSequence>;

/// Iterative confidence decoding. Each round samples every masked position,
/// scores it by the sampled token's probability (plus optional Gumbel noise)
/// and commits the most confident ones down to the cosine schedule's count.
/// Non-mask positions of the canvas are never changed.
std::vector<TokenSequence> maskgit_decode(const Denoiser& denoiser,
                                          std::vector<TokenSequence> canvases,
                                          const SamplerConfig& config,
                                          const NoiseSchedule& schedule,
                                          const JointVocabulary& vocab, std::span<Rng> rngs,
                                          DecodeTrace* trace = nullptr);

/// Exact reverse chain on the schedule grid: stepping from t = j/T to
/// s = (j-1)/T, each masked position stays masked with probability
/// (1 - alpha(s)) / (1 - alpha(t)) and otherwise commits a token drawn from
/// the denoiser's x0 distribution.
std::vector<TokenSequence> ancestral_decode(const Denoiser& denoiser,
                                            std::vector<TokenSequence> canvases,
                                            const SamplerConfig& config,
                                            const NoiseSchedule& schedule,
                                            const JointVocabulary& vocab, std::span<Rng> rngs);

/// Probability that a masked position stays masked from t = j/T to (j-1)/T.
double stay_masked_probability(const NoiseSchedule& schedule, int j);

/// Dispatches on config.algorithm.
std::vector<TokenSequence> decode(const Denoiser& denoiser, std::vector<TokenSequence> canvases,
                                  const SamplerConfig& config, const NoiseSchedule& schedule,
                                  const JointVocabulary& vocab, std::span<Rng> rngs);

/// Generates `num` sequences for one mode with per-sample streams
/// Rng::stream(seed, i). Samples are decoded in fixed chunks, so the output
/// depends only on (denoiser, mode, config, num, seed), not on `threads`.
std::vector<TokenSequence> generate(const Denoiser& denoiser, const GenerationMode& mode,
                                    const SamplerConfig& config, const NoiseSchedule& schedule,
                                    const JointVocabulary& vocab, const SequenceLayout& layout,
                                    int num, std::uint64_t seed, int threads = 1);

/// Like generate, with a distinct mode (e.g. a different condition) per sample.
std::vector<TokenSequence> generate_each(const Denoiser& denoiser,
                                         std::span<const GenerationMode> modes,
                                         const SamplerConfig& config,
                                         const NoiseSchedule& schedule,
                                         const JointVocabulary& vocab,
                                         const SequenceLayout& layout, std::uint64_t seed,
                                         int threads = 1);

}  // namespace mddm
