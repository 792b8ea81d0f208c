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

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "mddm/errors.hpp"

namespace mddm::binary {

// Little-endian fixed-width primitives for the on-disk formats.

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U read_le(std::istream& in, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  U value = 0;
  for (size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_f32(std::ostream& out, float value) {
  write_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(value));
}

inline float read_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(read_le<std::uint32_t>(in, what));
}

inline void write_bytes(std::ostream& out, const std::string& bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_bytes(std::istream& in, std::uint64_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  return s;
}

}  // namespace mddm::binary
