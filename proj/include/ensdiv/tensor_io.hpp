// Copyright 2026 The ensdiv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Little-endian binary helpers and the tensor dump format.
//
// Tensor dump layout (all integers little-endian):
//
//   8 bytes   magic "ENSDIVTS"
//   u32       format version (1)
//   u64       header length L
//   L bytes   UTF-8 JSON: [{"name": ..., "shape": [...]}, ...]
//   f64 * N   values of every tensor, in header order, row-major
//
// Checkpoints (model.hpp) share this structure with their own magic and a
// model spec as the JSON header.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ensdiv/tensor.hpp"

namespace ensdiv {

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

namespace io {

inline constexpr std::string_view kTensorMagic = "ENSDIVTS";
inline constexpr std::uint32_t kTensorVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_f64s(std::ostream& os, std::span<const double> values);

/// Readers throw kFormat with `what` in the message on short reads.
std::uint32_t read_u32(std::istream& is, std::string_view what);
std::uint64_t read_u64(std::istream& is, std::string_view what);
void read_f64s(std::istream& is, std::span<double> out, std::string_view what);
std::string read_bytes(std::istream& is, std::size_t n, std::string_view what);

/// Writes magic + version + length-prefixed header.
void write_preamble(std::ostream& os, std::string_view magic, std::uint32_t version,
                    std::string_view header);
/// Checks magic and version (kVersionMismatch) and returns the header.
std::string read_preamble(std::istream& is, std::string_view magic, std::uint32_t version);

/// Throws kFormat unless the stream is exhausted.
void expect_eof(std::istream& is, std::string_view what);

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Byte-exact writer: write to a temporary sibling, then rename.
void write_file(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace io
}  // namespace ensdiv
