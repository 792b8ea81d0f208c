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

#include "mddm/joint_vocab.hpp"

#include <algorithm>
#include <string>

#include "mddm/errors.hpp"

namespace mddm {

JointVocabulary::JointVocabulary(int k_text, int k_img) : k_text_(k_text), k_img_(k_img) {
  if (k_text < 0 || k_img < 0 || k_text + k_img < 1) {
    throw InvalidArgument("vocabulary needs at least one real token (k_text=" + std::to_string(k_text) +
                          ", k_img=" + std::to_string(k_img) + ")");
  }
}

std::pair<TokenId, TokenId> JointVocabulary::range(Modality m) const {
  if (m == Modality::kReport) return {0, k_text_};
  return {k_text_, k_total()};
}

SequenceLayout::SequenceLayout(int len_report, int len_image)
    : len_report_(len_report), len_image_(len_image) {
  if (len_report < 0 || len_image < 0 || len_report + len_image < 1) {
    throw InvalidArgument("invalid sequence layout (" + std::to_string(len_report) + ", " +
                          std::to_string(len_image) + ")");
  }
}

TokenSequence pack(std::span<const TokenId> report_ids, std::span<const TokenId> image_ids,
                   const JointVocabulary& vocab, const SequenceLayout& layout) {
  if (static_cast<int>(report_ids.size()) != layout.len_report() ||
      static_cast<int>(image_ids.size()) != layout.len_image()) {
    throw InvalidArgument("pack: lengths (" + std::to_string(report_ids.size()) + ", " +
                          std::to_string(image_ids.size()) + ") do not match layout (" +
                          std::to_string(layout.len_report()) + ", " +
                          std::to_string(layout.len_image()) + ")");
  }
  TokenSequence seq{{}, layout};
  seq.ids.reserve(layout.len_total());
  for (TokenId id : report_ids) {
    if (id < 0 || id >= vocab.k_text()) {
      throw InvalidArgument("pack: report id " + std::to_string(id) + " outside [0, " +
                            std::to_string(vocab.k_text()) + ")");
    }
    seq.ids.push_back(id);
  }
  for (TokenId id : image_ids) {
    if (id < 0 || id >= vocab.k_img()) {
      throw InvalidArgument("pack: image id " + std::to_string(id) + " outside [0, " +
                            std::to_string(vocab.k_img()) + ")");
    }
    seq.ids.push_back(id + vocab.k_text());
  }
  return seq;
}

UnpackedPair unpack(const TokenSequence& seq, const JointVocabulary& vocab) {
  const SequenceLayout& layout = seq.layout;
  if (static_cast<int>(seq.ids.size()) != layout.len_total()) {
    throw InvalidArgument("unpack: sequence length does not match layout");
  }
  UnpackedPair out;
  out.report.reserve(layout.len_report());
  out.image.reserve(layout.len_image());
  for (int p = 0; p < layout.len_total(); ++p) {
    const TokenId id = seq.ids[p];
    if (id == vocab.mask_id()) {
      throw InvalidArgument("unpack: mask token at position " + std::to_string(p));
    }
    if (layout.region(p) == Modality::kReport) {
      if (!vocab.is_report_id(id)) {
        throw InvalidArgument("unpack: id " + std::to_string(id) +
                              " is not a report id (position " + std::to_string(p) + ")");
      }
      out.report.push_back(id);
    } else {
      if (!vocab.is_image_id(id)) {
        throw InvalidArgument("unpack: id " + std::to_string(id) +
                              " is not an image id (position " + std::to_string(p) + ")");
      }
      out.image.push_back(id - vocab.k_text());
    }
  }
  return out;
}

std::vector<bool> modality_positions(const SequenceLayout& layout, Modality which) {
  std::vector<bool> out(layout.len_total());
  for (int p = 0; p < layout.len_total(); ++p) out[p] = layout.region(p) == which;
  return out;
}

void validate_corrupted(const TokenSequence& seq, const JointVocabulary& vocab) {
  if (static_cast<int>(seq.ids.size()) != seq.layout.len_total()) {
    throw InvalidArgument("sequence length does not match layout");
  }
  for (int p = 0; p < seq.layout.len_total(); ++p) {
    const TokenId id = seq.ids[p];
    if (id == vocab.mask_id()) continue;
    const bool ok = seq.layout.region(p) == Modality::kReport ? vocab.is_report_id(id)
                                                             : vocab.is_image_id(id);
    if (!ok) {
      throw InvalidArgument("id " + std::to_string(id) + " invalid at position " +
                            std::to_string(p));
    }
  }
}

bool contains_mask(const TokenSequence& seq, const JointVocabulary& vocab) {
  return std::find(seq.ids.begin(), seq.ids.end(), vocab.mask_id()) != seq.ids.end();
}

}  // namespace mddm
