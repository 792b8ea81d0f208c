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

#include "mddm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mddm/errors.hpp"
#include "mddm/training.hpp"

namespace mddm {
namespace {

std::map<Outcome, int> ngram_counts(std::span<const TokenId> tokens, int n) {
  std::map<Outcome, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Outcome(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

}  // namespace

double tv_distance(const std::map<Outcome, double>& empirical_counts,
                   const std::map<Outcome, double>& exact) {
  double total = 0.0;
  for (const auto& [k, v] : empirical_counts) total += v;
  if (empirical_counts.empty() || total <= 0.0) throw InvalidArgument("tv_distance: empty empirical set");
  double exact_total = 0.0;
  for (const auto& [k, v] : exact) exact_total += v;
  if (std::abs(exact_total - 1.0) > 1e-9) throw InvalidArgument("tv_distance: exact distribution must sum to 1");

  double sum = 0.0;
  for (const auto& [k, v] : empirical_counts) {
    const auto it = exact.find(k);
    sum += std::abs(v / total - (it == exact.end() ? 0.0 : it->second));
  }
  for (const auto& [k, p] : exact) {
    if (!empirical_counts.contains(k)) sum += p;
  }
  return 0.5 * sum;
}

std::map<Outcome, double> count_outcomes(std::span<const TokenSequence> samples) {
  std::map<Outcome, double> counts;
  for (const auto& s : samples) counts[s.ids] += 1.0;
  return counts;
}

std::map<Outcome, double> exact_joint(const World& world) {
  std::map<Outcome, double> dist;
  for (const auto& o : enumerate_joint(world.config())) dist[world.sequence_for_grid(o.grid).ids] += o.prob;
  return dist;
}

double consistency_rate(std::span<const TokenSequence> pairs, const World& world) {
  if (pairs.empty()) throw InvalidArgument("consistency_rate: no pairs");
  std::size_t ok = 0;
  for (const auto& p : pairs) ok += world.is_consistent(p) ? 1 : 0;
  return static_cast<double>(ok) / pairs.size();
}

double recovery_accuracy(const Denoiser& denoiser, std::span<const TokenSequence> x0,
                         std::span<const TokenSequence> x_t, std::span<const double> t,
                         const JointVocabulary& vocab, Rng& rng) {
  if (x0.empty()) throw InvalidArgument("recovery_accuracy: empty eval set");
  const auto outputs = denoiser.predict(x_t, t);
  const TokenId mask = vocab.mask_id();
  std::size_t masked = 0;
  std::size_t correct = 0;
  std::vector<TokenId> best;
  for (std::size_t b = 0; b < x0.size(); ++b) {
    for (int p = 0; p < x0[b].layout.len_total(); ++p) {
      if (x_t[b].ids[p] != mask) continue;
      ++masked;
      double best_v = -std::numeric_limits<double>::infinity();
      best.clear();
      for (TokenId c = 0; c < vocab.k_total(); ++c) {
        const double v = outputs[b](p, c);
        if (v > best_v) {
          best_v = v;
          best.assign(1, c);
        } else if (v == best_v) {
          best.push_back(c);
        }
      }
      const TokenId guess = best.size() == 1 ? best[0] : best[rng.below(best.size())];
      if (guess == x0[b].ids[p]) ++correct;
    }
  }
  return masked == 0 ? 0.0 : static_cast<double>(correct) / masked;
}

double masked_recovery_accuracy(const Denoiser& denoiser, std::span<const TokenSequence> eval_set,
                                const NoiseSchedule& schedule, const JointVocabulary& vocab,
                                double t, Rng& rng) {
  if (eval_set.empty()) throw InvalidArgument("masked_recovery_accuracy: empty eval set");
  if (!(t >= schedule.t_min() && t <= 1.0)) throw InvalidArgument("masked_recovery_accuracy: t outside [t_min, 1]");
  std::vector<TokenSequence> corrupted;
  corrupted.reserve(eval_set.size());
  for (const auto& x0 : eval_set) corrupted.push_back(corrupt(x0, t, schedule, vocab, rng));
  const std::vector<double> ts(eval_set.size(), t);
  return recovery_accuracy(denoiser, eval_set, corrupted, ts, vocab, rng);
}

double bleu_n(std::span<const TokenId> candidate, std::span<const TokenId> reference, int n) {
  if (n < 1) throw InvalidArgument("bleu_n: n must be >= 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int order = 1; order <= n; ++order) {
    const auto cand = ngram_counts(candidate, order);
    const auto ref = ngram_counts(reference, order);
    int total = 0;
    int clipped = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      const auto it = ref.find(gram);
      if (it != ref.end()) clipped += std::min(count, it->second);
    }
    if (total == 0 || clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / total);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / n);
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / candidate.size();
  const double recall = lcs / reference.size();
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * precision * recall / (recall + b2 * precision);
}

NelboEstimate nelbo_estimate(const Denoiser& denoiser, std::span<const TokenSequence> eval_set,
                             const NoiseSchedule& schedule, const JointVocabulary& vocab,
                             int n_t_samples, Rng& rng) {
  if (n_t_samples < 1) throw InvalidArgument("nelbo_estimate: n_t_samples must be >= 1");
  if (eval_set.empty()) throw InvalidArgument("nelbo_estimate: empty eval set");
  const TokenId mask = vocab.mask_id();
  NelboEstimate est;
  std::vector<double> per_example(eval_set.size());
  for (int rep = 0; rep < n_t_samples; ++rep) {
    std::vector<TokenSequence> corrupted;
    std::vector<double> ts;
    for (const auto& x0 : eval_set) {
      const double t = rng.uniform(schedule.t_min(), 1.0);
      ts.push_back(t);
      corrupted.push_back(corrupt(x0, t, schedule, vocab, rng));
    }
    const auto outputs = denoiser.predict(corrupted, ts);
    for (std::size_t b = 0; b < eval_set.size(); ++b) {
      const int len = eval_set[b].layout.len_total();
      double ce = 0.0;
      for (int p = 0; p < len; ++p) {
        if (corrupted[b].ids[p] != mask) continue;
        const auto probs = token_distribution(outputs[b], p, vocab.k_total(), 1.0, 0, vocab.k_total());
        ce -= std::log(probs[eval_set[b].ids[p]]);
      }
      per_example[b] = schedule.loss_weight(ts[b]) * ce / len;
    }
    est.repetitions.push_back(pairwise_sum(per_example) / eval_set.size());
  }
  est.mean = pairwise_sum(est.repetitions) / n_t_samples;
  if (n_t_samples > 1) {
    double var = 0.0;
    for (double r : est.repetitions) var += (r - est.mean) * (r - est.mean);
    var /= (n_t_samples - 1);
    est.std_error = std::sqrt(var / n_t_samples);
  }
  return est;
}

}  // namespace mddm
