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

#include "mddm/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "mddm/binary_io.hpp"
#include "mddm/errors.hpp"

namespace mddm {
namespace {

constexpr double kMaxSupport = 1e6;

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

}  // namespace

void GridWorldConfig::validate() const {
  if (grid_size < 1) throw InvalidArgument("grid_size must be >= 1");
  if (n_colors < 1) throw InvalidArgument("n_colors must be >= 1");
  if (static_cast<int>(color_probs.size()) != n_colors) {
    throw InvalidArgument("color_probs must have n_colors entries");
  }
  double total = 0.0;
  for (double p : color_probs) {
    if (!(p > 0.0)) throw InvalidArgument("color_probs entries must be positive");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("color_probs must sum to 1");
  if (k_img < n_colors) throw InvalidArgument("k_img must be >= n_colors");
  if (pixel_mode) {
    if (patch_size < 1) throw InvalidArgument("patch_size must be >= 1");
    if (jitter < 0.0) throw InvalidArgument("jitter must be >= 0");
  }
}

std::vector<TokenId> render_report(const Grid& grid, const GridWorldConfig& config) {
  if (static_cast<int>(grid.size()) != config.n_cells()) {
    throw InvalidArgument("render_report: grid has " + std::to_string(grid.size()) +
                          " cells, expected " + std::to_string(config.n_cells()));
  }
  std::vector<TokenId> tokens;
  tokens.reserve(grid.size());
  for (int c : grid) {
    if (c < 0 || c >= config.n_colors) throw InvalidArgument("render_report: invalid color");
    tokens.push_back(static_cast<TokenId>(c));
  }
  return tokens;
}

Grid parse_report(std::span<const TokenId> tokens, const GridWorldConfig& config) {
  if (static_cast<int>(tokens.size()) != config.n_cells()) {
    throw InvalidArgument("parse_report: expected " + std::to_string(config.n_cells()) +
                          " tokens, got " + std::to_string(tokens.size()));
  }
  Grid grid;
  grid.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < 0 || t >= config.n_colors) {
      throw InvalidArgument("parse_report: unknown token " + std::to_string(t));
    }
    grid.push_back(t);
  }
  return grid;
}

std::string detokenize_report(std::span<const TokenId> tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += "<color " + std::to_string(tokens[i]) + ">";
  }
  return out;
}

Grid sample_grid(const GridWorldConfig& config, Rng& rng) {
  Grid grid(config.n_cells());
  for (int& cell : grid) {
    const double u = rng.uniform();
    double acc = 0.0;
    cell = config.n_colors - 1;
    for (int c = 0; c < config.n_colors; ++c) {
      acc += config.color_probs[c];
      if (u < acc) {
        cell = c;
        break;
      }
    }
  }
  return grid;
}

PairedSample sample_pair(const GridWorldConfig& config, Rng& rng) {
  PairedSample s;
  s.grid = sample_grid(config, rng);
  s.report = render_report(s.grid, config);
  if (config.pixel_mode) s.pixels = render_pixels(s.grid, config, &rng);
  return s;
}

std::vector<JointOutcome> enumerate_joint(const GridWorldConfig& config) {
  config.validate();
  const double support = std::pow(static_cast<double>(config.n_colors), config.n_cells());
  if (support > kMaxSupport) {
    throw InvalidArgument("enumerate_joint: support size " + std::to_string(support) +
                          " exceeds 1e6");
  }
  const auto n = static_cast<size_t>(std::llround(support));
  std::vector<JointOutcome> out;
  out.reserve(n);
  Grid grid(config.n_cells(), 0);
  for (size_t k = 0; k < n; ++k) {
    // Decode k as base-n_colors digits, first cell most significant.
    size_t rem = k;
    double prob = 1.0;
    for (int cell = config.n_cells() - 1; cell >= 0; --cell) {
      grid[cell] = static_cast<int>(rem % config.n_colors);
      rem /= config.n_colors;
    }
    for (int c : grid) prob *= config.color_probs[c];
    out.push_back({grid, prob});
  }
  return out;
}

double color_intensity(int color, int n_colors) { return (color + 0.5) / n_colors; }

std::vector<double> render_pixels(const Grid& grid, const GridWorldConfig& config, Rng* rng) {
  const int g = config.grid_size;
  const int p = config.patch_size;
  const int side = g * p;
  std::vector<double> pixels(static_cast<size_t>(side) * side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const int cell = (y / p) * g + (x / p);
      double v = color_intensity(grid[cell], config.n_colors);
      if (rng != nullptr && config.jitter > 0.0) v += rng->uniform(-config.jitter, config.jitter);
      pixels[static_cast<size_t>(y) * side + x] = v;
    }
  }
  return pixels;
}

std::vector<std::vector<double>> extract_patches(std::span<const double> pixels,
                                                 const GridWorldConfig& config) {
  const int g = config.grid_size;
  const int p = config.patch_size;
  const int side = g * p;
  if (static_cast<int>(pixels.size()) != side * side) {
    throw InvalidArgument("extract_patches: pixel buffer has wrong size");
  }
  std::vector<std::vector<double>> patches(config.n_cells(), std::vector<double>(p * p));
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      patches[(y / p) * g + (x / p)][(y % p) * p + (x % p)] = pixels[static_cast<size_t>(y) * side + x];
    }
  }
  return patches;
}

Codebook::Codebook(std::vector<std::vector<double>> centroids) : centroids_(std::move(centroids)) {
  for (const auto& c : centroids_) {
    if (c.size() != centroids_.front().size()) {
      throw InvalidArgument("codebook entries must share one dimension");
    }
  }
}

TokenId Codebook::encode_one(std::span<const double> patch) const {
  if (!fitted()) throw InvalidArgument("codebook is not fitted");
  if (static_cast<int>(patch.size()) != dim()) throw InvalidArgument("patch dimension mismatch");
  TokenId best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < size(); ++k) {
    const double d = squared_distance(patch, centroids_[k]);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

std::vector<TokenId> Codebook::encode(const std::vector<std::vector<double>>& patches) const {
  std::vector<TokenId> ids;
  ids.reserve(patches.size());
  for (const auto& patch : patches) ids.push_back(encode_one(patch));
  return ids;
}

std::vector<std::vector<double>> Codebook::decode(std::span<const TokenId> ids) const {
  if (!fitted()) throw InvalidArgument("codebook is not fitted");
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0 || id >= size()) throw InvalidArgument("decode: id out of range");
    out.push_back(centroids_[id]);
  }
  return out;
}

double quantization_error(const std::vector<std::vector<double>>& patches,
                          const Codebook& codebook) {
  double err = 0.0;
  for (const auto& patch : patches) {
    err += squared_distance(patch, codebook.centroids()[codebook.encode_one(patch)]);
  }
  return err;
}

CodebookFit fit_codebook(const std::vector<std::vector<double>>& patches, int k_img,
                         int max_iters, Rng& rng) {
  if (k_img < 1) throw InvalidArgument("fit_codebook: k_img must be >= 1");
  if (max_iters < 1) throw InvalidArgument("fit_codebook: max_iters must be >= 1");
  const std::set<std::vector<double>> distinct(patches.begin(), patches.end());
  if (static_cast<int>(distinct.size()) < k_img) {
    throw InvalidArgument("fit_codebook: " + std::to_string(distinct.size()) +
                          " distinct patches, need at least " + std::to_string(k_img));
  }
  const size_t n = patches.size();

  // k-means++ seeding.
  std::vector<std::vector<double>> centroids;
  centroids.push_back(patches[rng.below(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k_img) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, squared_distance(patches[i], c));
      d2[i] = best;
      total += best;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    size_t pick = n;
    for (size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc > target) break;
    }
    centroids.push_back(patches[pick]);
  }

  CodebookFit fit;
  std::vector<int> assign(n, -1);
  const size_t dim = patches.front().size();
  for (int iter = 0; iter < max_iters; ++iter) {
    const Codebook current(centroids);
    double err = 0.0;
    for (size_t i = 0; i < n; ++i) {
      assign[i] = current.encode_one(patches[i]);
      err += squared_distance(patches[i], centroids[assign[i]]);
    }
    fit.error_history.push_back(err);
    fit.iterations = iter + 1;

    std::vector<std::vector<double>> next(k_img, std::vector<double>(dim, 0.0));
    std::vector<size_t> counts(k_img, 0);
    for (size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (size_t d = 0; d < dim; ++d) next[assign[i]][d] += patches[i][d];
    }
    for (int k = 0; k < k_img; ++k) {
      if (counts[k] == 0) {
        // Re-seed an empty cluster at the point worst served by its centroid.
        size_t far = 0;
        double far_d = -1.0;
        for (size_t i = 0; i < n; ++i) {
          const double d = squared_distance(patches[i], centroids[assign[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        next[k] = patches[far];
        continue;
      }
      for (size_t d = 0; d < dim; ++d) next[k][d] /= static_cast<double>(counts[k]);
    }
    if (next == centroids) break;  // fixpoint
    centroids = std::move(next);
  }
  fit.codebook = Codebook(std::move(centroids));
  return fit;
}

World::World(GridWorldConfig config, std::uint64_t codebook_seed)
    : config_(std::move(config)),
      vocab_(config_.n_colors, config_.k_img),
      layout_(config_.n_cells(), config_.n_cells()) {
  config_.validate();
  if (config_.pixel_mode) {
    Rng rng = Rng::stream(codebook_seed, 0xC0DEB00C);
    std::vector<std::vector<double>> patches;
    // Every color appears at least once so each gets a codeword.
    for (int c = 0; c < config_.n_colors; ++c) {
      const auto pix = render_pixels(Grid(config_.n_cells(), c), config_, &rng);
      for (auto& p : extract_patches(pix, config_)) patches.push_back(std::move(p));
    }
    for (int i = 0; i < 256; ++i) {
      const auto sample = sample_pair(config_, rng);
      for (auto& p : extract_patches(sample.pixels, config_)) patches.push_back(std::move(p));
    }
    codebook_ = fit_codebook(patches, config_.k_img, 100, rng).codebook;
    for (const auto& centroid : codebook_.centroids()) {
      const double mean = std::accumulate(centroid.begin(), centroid.end(), 0.0) / centroid.size();
      int best = 0;
      for (int c = 1; c < config_.n_colors; ++c) {
        if (std::abs(mean - color_intensity(c, config_.n_colors)) <
            std::abs(mean - color_intensity(best, config_.n_colors))) {
          best = c;
        }
      }
      codeword_color_.push_back(best);
    }
  } else {
    for (int k = 0; k < config_.k_img; ++k) {
      codeword_color_.push_back(k < config_.n_colors ? k : -1);
    }
  }
}

std::vector<TokenId> World::image_tokens(const PairedSample& sample) const {
  if (!config_.pixel_mode) return image_tokens(sample.grid);
  return codebook_.encode(extract_patches(sample.pixels, config_));
}

std::vector<TokenId> World::image_tokens(const Grid& grid) const {
  if (!config_.pixel_mode) return std::vector<TokenId>(grid.begin(), grid.end());
  return codebook_.encode(extract_patches(render_pixels(grid, config_, nullptr), config_));
}

int World::color_of_image_id(TokenId image_id) const {
  if (image_id < 0 || image_id >= config_.k_img) return -1;
  return codeword_color_[image_id];
}

std::optional<Grid> World::grid_from_image(std::span<const TokenId> image_ids) const {
  if (static_cast<int>(image_ids.size()) != config_.n_cells()) return std::nullopt;
  Grid grid;
  grid.reserve(image_ids.size());
  for (TokenId id : image_ids) {
    const int c = color_of_image_id(id);
    if (c < 0) return std::nullopt;
    grid.push_back(c);
  }
  return grid;
}

TokenSequence World::to_sequence(const PairedSample& sample) const {
  return pack(sample.report, image_tokens(sample), vocab_, layout_);
}

TokenSequence World::sequence_for_grid(const Grid& grid) const {
  return pack(render_report(grid, config_), image_tokens(grid), vocab_, layout_);
}

TokenSequence World::sample_sequence(Rng& rng) const {
  return to_sequence(sample_pair(config_, rng));
}

bool World::is_consistent(const TokenSequence& seq) const {
  try {
    const UnpackedPair pair = unpack(seq, vocab_);
    const auto grid = grid_from_image(pair.image);
    if (!grid) return false;
    return parse_report(pair.report, config_) == *grid;
  } catch (const InvalidArgument&) {
    return false;
  }
}

void write_token_records(const std::string& path, const std::vector<std::vector<TokenId>>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const auto& rec : records) {
    binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(rec.size()));
    for (TokenId id : rec) binary::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(id));
  }
  if (!out) throw IoError("write failed for " + path);
}

std::vector<std::vector<TokenId>> read_token_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::vector<TokenId>> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto n = binary::read_le<std::uint32_t>(in, "record length");
    std::vector<TokenId> rec(n);
    for (auto& id : rec) id = static_cast<TokenId>(binary::read_le<std::uint32_t>(in, "token id"));
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace mddm
