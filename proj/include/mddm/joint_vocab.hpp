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
#include <utility>
#include <vector>

namespace mddm {

using TokenId = std::int32_t;

enum class Modality : std::uint8_t { kReport = 0, kImage = 1 };

/// Shared id space for both modalities plus one absorbing mask state.
///
/// Report ids occupy [0, k_text), image ids [k_text, k_total) and the mask
/// id is k_total. The extended vocabulary therefore has k_total + 1 entries.
class JointVocabulary {
 public:
  JointVocabulary(int k_text, int k_img);

  int k_text() const { return k_text_; }
  int k_img() const { return k_img_; }
  int k_total() const { return k_text_ + k_img_; }
  TokenId mask_id() const { return k_text_ + k_img_; }
  /// Size of the extended vocabulary (real tokens + mask).
  int extended_size() const { return k_total() + 1; }

  bool is_report_id(TokenId id) const { return id >= 0 && id < k_text_; }
  bool is_image_id(TokenId id) const { return id >= k_text_ && id < k_total(); }

  /// Global id range [first, last) of a modality.
  std::pair<TokenId, TokenId> range(Modality m) const;

  bool operator==(const JointVocabulary&) const = default;

 private:
  int k_text_;
  int k_img_;
};

/// Fixed report-then-image sequence layout.
class SequenceLayout {
 public:
  SequenceLayout(int len_report, int len_image);

  int len_report() const { return len_report_; }
  int len_image() const { return len_image_; }
  int len_total() const { return len_report_ + len_image_; }

  Modality region(int position) const {
    return position < len_report_ ? Modality::kReport : Modality::kImage;
  }

  bool operator==(const SequenceLayout&) const = default;

 private:
  int len_report_;
  int len_image_;
};

/// Token ids laid out per a SequenceLayout. Clean sequences hold no mask id;
/// corrupted ones may hold it anywhere.
struct TokenSequence {
  std::vector<TokenId> ids;
  SequenceLayout layout;

  bool operator==(const TokenSequence&) const = default;
};

struct UnpackedPair {
  std::vector<TokenId> report;
  std::vector<TokenId> image;  // codebook indices, offset removed
};

/// Concatenates report ids and (offset) image ids.
TokenSequence pack(std::span<const TokenId> report_ids, std::span<const TokenId> image_ids,
                   const JointVocabulary& vocab, const SequenceLayout& layout);

/// Inverse of pack. Rejects masks and ids outside their position's modality.
UnpackedPair unpack(const TokenSequence& seq, const JointVocabulary& vocab);

/// True exactly on the positions of the requested region.
std::vector<bool> modality_positions(const SequenceLayout& layout, Modality which);

/// Checks ids are in [0, k_total] and non-mask ids respect their modality.
void validate_corrupted(const TokenSequence& seq, const JointVocabulary& vocab);

bool contains_mask(const TokenSequence& seq, const JointVocabulary& vocab);

}  // namespace mddm
