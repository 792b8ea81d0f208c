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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mddm/joint_vocab.hpp"
#include "mddm/rng.hpp"

namespace mddm {

/// Synthetic paired world: a G x G grid of colored cells, and a report that
/// lists the cell colors in row-major order (one "<color c>" token per cell).
struct GridWorldConfig {
  int grid_size = 2;
  int n_colors = 3;
  std::vector<double> color_probs{0.5, 0.3, 0.2};
  /// Render cells as P x P gray patches and tokenize through a codebook.
  bool pixel_mode = false;
  int patch_size = 4;
  /// Half-width of the uniform per-pixel jitter in pixel mode.
  double jitter = 0.05;
  /// Image codebook size (>= n_colors).
  int k_img = 3;

  int n_cells() const { return grid_size * grid_size; }
  /// Throws InvalidArgument on a malformed config.
  void validate() const;
};

/// Row-major cell colors.
using Grid = std::vector<int>;

struct PairedSample {
  Grid grid;
  std::vector<TokenId> report;
  /// (G*P) x (G*P) row-major intensities; empty unless pixel_mode.
  std::vector<double> pixels;
};

struct JointOutcome {
  Grid grid;
  double prob;
};

std::vector<TokenId> render_report(const Grid& grid, const GridWorldConfig& config);
/// Exact inverse of render_report. Throws InvalidArgument on wrong length or
/// unknown token.
Grid parse_report(std::span<const TokenId> tokens, const GridWorldConfig& config);
/// Human-readable report, e.g. "<color 0> <color 2>".
std::string detokenize_report(std::span<const TokenId> tokens);

Grid sample_grid(const GridWorldConfig& config, Rng& rng);
PairedSample sample_pair(const GridWorldConfig& config, Rng& rng);

/// Every grid with its probability. Support size is n_colors^(G^2), capped
/// at 10^6.
std::vector<JointOutcome> enumerate_joint(const GridWorldConfig& config);

/// Base gray level of a color in pixel mode.
double color_intensity(int color, int n_colors);
std::vector<double> render_pixels(const Grid& grid, const GridWorldConfig& config, Rng* rng);
/// Splits an image into per-cell patches of patch_size^2 values, row-major.
std::vector<std::vector<double>> extract_patches(std::span<const double> pixels,
                                                 const GridWorldConfig& config);

/// Nearest-centroid patch quantizer.
class Codebook {
 public:
  Codebook() = default;
  explicit Codebook(std::vector<std::vector<double>> centroids);

  bool fitted() const { return !centroids_.empty(); }
  int size() const { return static_cast<int>(centroids_.size()); }
  int dim() const { return fitted() ? static_cast<int>(centroids_[0].size()) : 0; }
  const std::vector<std::vector<double>>& centroids() const { return centroids_; }

  /// Nearest centroid per patch; ties go to the lowest index.
  std::vector<TokenId> encode(const std::vector<std::vector<double>>& patches) const;
  TokenId encode_one(std::span<const double> patch) const;
  std::vector<std::vector<double>> decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::vector<double>> centroids_;
};

struct CodebookFit {
  Codebook codebook;
  int iterations = 0;
  /// Quantization error (sum of squared distances) after each assignment.
  std::vector<double> error_history;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or max_iters is hit.
CodebookFit fit_codebook(const std::vector<std::vector<double>>& patches, int k_img,
                         int max_iters, Rng& rng);

double quantization_error(const std::vector<std::vector<double>>& patches,
                          const Codebook& codebook);

/// A GridWorldConfig bound to its vocabulary, layout and (in pixel mode) a
/// fitted codebook. Converts between grids and joint token sequences.
class World {
 public:
  explicit World(GridWorldConfig config, std::uint64_t codebook_seed = 0);

  const GridWorldConfig& config() const { return config_; }
  const JointVocabulary& vocab() const { return vocab_; }
  const SequenceLayout& layout() const { return layout_; }
  const Codebook& codebook() const { return codebook_; }

  /// Image codebook ids for a sample (pixels go through the codebook in
  /// pixel mode, cell colors are the ids otherwise).
  std::vector<TokenId> image_tokens(const PairedSample& sample) const;
  /// Noiseless image ids for a grid.
  std::vector<TokenId> image_tokens(const Grid& grid) const;
  /// Grid implied by image ids; nullopt if an id maps to no color.
  std::optional<Grid> grid_from_image(std::span<const TokenId> image_ids) const;
  /// Color whose base intensity is closest to a codeword's mean.
  int color_of_image_id(TokenId image_id) const;

  TokenSequence to_sequence(const PairedSample& sample) const;
  TokenSequence sequence_for_grid(const Grid& grid) const;
  TokenSequence sample_sequence(Rng& rng) const;

  /// A mask-free joint sequence is consistent iff its report parses to the
  /// grid its image encodes.
  bool is_consistent(const TokenSequence& seq) const;

 private:
  GridWorldConfig config_;
  JointVocabulary vocab_;
  SequenceLayout layout_;
  Codebook codebook_;
  std::vector<int> codeword_color_;
};

/// Flat binary token records: per record a u32 little-endian length followed
/// by that many u32 little-endian ids.
void write_token_records(const std::string& path, const std::vector<std::vector<TokenId>>& records);
std::vector<std::vector<TokenId>> read_token_records(const std::string& path);

}  // namespace mddm
