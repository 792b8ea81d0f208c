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

// Independent reference implementations used to check the library. They
// favor directness over speed and share no code with src/.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "mddm/backbone.hpp"
#include "mddm/joint_vocab.hpp"
#include "mddm/training.hpp"

namespace mddm::oracle {

using Dense = std::vector<std::vector<double>>;

// alpha I + (1 - alpha) 1 e_m^T written entry by entry.
inline Dense transition(double alpha, int k_total) {
  const int n = k_total + 1;
  Dense q(n, std::vector<double>(n, 0.0));
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      q[r][c] = (r == c ? alpha : 0.0) + (c == k_total ? 1.0 - alpha : 0.0);
    }
  }
  return q;
}

inline Dense matmul(const Dense& a, const Dense& b) {
  const std::size_t n = a.size(), m = b[0].size(), k = b.size();
  Dense c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t l = 0; l < k; ++l) c[i][j] += a[i][l] * b[l][j];
  return c;
}

inline Dense product_of_steps(const std::vector<double>& retentions, int k_total) {
  Dense acc = transition(1.0, k_total);
  for (double a : retentions) acc = matmul(acc, transition(a, k_total));
  return acc;
}

// Modified n-gram precision by exhaustive window scan, no maps of counts
// shared with the library.
inline double bleu(const std::vector<TokenId>& cand, const std::vector<TokenId>& ref, int n) {
  if (cand.empty()) return 0.0;
  double prod = 1.0;
  for (int k = 1; k <= n; ++k) {
    if (static_cast<int>(cand.size()) < k) return 0.0;
    std::vector<std::vector<TokenId>> grams;
    for (std::size_t i = 0; i + k <= cand.size(); ++i) grams.emplace_back(cand.begin() + i, cand.begin() + i + k);
    auto count_in = [k](const std::vector<TokenId>& seq, const std::vector<TokenId>& g) {
      int c = 0;
      for (std::size_t i = 0; i + k <= seq.size(); ++i) c += std::equal(g.begin(), g.end(), seq.begin() + i);
      return c;
    };
    // Sum the clipped count once per distinct gram.
    int matched = 0;
    for (std::size_t i = 0; i < grams.size(); ++i) {
      bool first = std::find(grams.begin(), grams.begin() + i, grams[i]) == grams.begin() + i;
      if (first) matched += std::min(count_in(cand, grams[i]), count_in(ref, grams[i]));
    }
    if (matched == 0) return 0.0;
    prod *= static_cast<double>(matched) / grams.size();
  }
  const double c = cand.size(), r = ref.size();
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::pow(prod, 1.0 / n);
}

// Longest common subsequence by enumerating every subsequence of `a`.
// Exponential; keep |a| small.
inline std::size_t lcs(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  std::size_t best = 0;
  const std::size_t n = a.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    std::size_t pos = 0, len = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      while (pos < b.size() && b[pos] != a[i]) ++pos;
      if (pos == b.size()) ok = false;
      else {
        ++pos;
        ++len;
      }
    }
    if (ok) best = std::max(best, len);
  }
  return best;
}

inline double rouge_l(const std::vector<TokenId>& cand, const std::vector<TokenId>& ref, double beta) {
  if (cand.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs(cand, ref));
  if (l == 0.0) return 0.0;
  const double p = l / cand.size(), r = l / ref.size();
  return (1 + beta * beta) * p * r / (r + beta * beta * p);
}

// p-value of Pearson's chi-square test that two binomial samples share one
// success probability (2x2 contingency table, 1 dof).
inline double homogeneity_p_value(double succ_a, double n_a, double succ_b, double n_b) {
  const double pooled = (succ_a + succ_b) / (n_a + n_b);
  if (pooled <= 0.0 || pooled >= 1.0) return 1.0;
  double chi = 0.0;
  for (auto [succ, n] : {std::pair{succ_a, n_a}, std::pair{succ_b, n_b}}) {
    const double e1 = n * pooled, e0 = n * (1 - pooled);
    chi += (succ - e1) * (succ - e1) / e1 + (n - succ - e0) * (n - succ - e0) / e0;
  }
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), chi));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Central differences of `loss` over every entry of `params` compared
// against `analytic`. Relative error |a - n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(std::vector<double>& params, const std::vector<double>& analytic,
                                  const std::function<double()>& loss, double h, double floor = 1e-6) {
  GradCheckResult res;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_index = i;
    }
    ++res.checked;
  }
  return res;
}

}  // namespace mddm::oracle
