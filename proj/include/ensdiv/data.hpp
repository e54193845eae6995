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


// Synthetic shapes data, IDX ingestion and parameterized image corruptions.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ensdiv/tensor.hpp"

namespace ensdiv {

struct Dataset {
  Tensor images;  // n x C x H x W, values in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::string split;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  /// Rows [begin, end) as a new dataset.
  Dataset subset(std::size_t begin, std::size_t end) const;
};

struct ShapesOptions {
  std::size_t n = 800;
  std::size_t classes = 8;
  std::size_t channels = 3;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  /// Wider scale, position and background ranges: a mildly shifted test
  /// distribution in the spirit of a re-collected validation set.
  bool shifted = false;
  std::string split = "train";
};

/// One colored glyph per image on a textured background. Class c draws
/// shape c % 4 (circle, square, triangle, plus) in palette color c / 4.
/// Classes are balanced (counts differ by at most one) and each image uses
/// its own generator derived from (seed, index).
Dataset gen_shapes(const ShapesOptions& options);

/// Highest class count the palette supports.
inline constexpr std::size_t kMaxShapeClasses = 24;

// IDX files: big-endian magic 0x00000801 (labels, u8), 0x00000803
// (n x H x W images, u8) or 0x00000804 (n x C x H x W images, u8).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes = 0);
/// Pixels are quantized to round(255 x).
void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels);

/// Tensor dump with "images", "labels" and "classes".
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

enum class CorruptionKind { kLines, kCheckerboard, kPlasma, kWaterdrop };

std::string to_string(CorruptionKind kind);
CorruptionKind corruption_from_string(const std::string& s);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::kLines;
  double strength = 0.0;
  std::uint64_t seed = 0;

  /// "kind=lines,strength=1.6,seed=3"
  std::string str() const;
  /// Short name for file and split labels, e.g. "lines-1.6".
  std::string label() const;
};

/// Parses "kind=<k>,strength=<s>[,seed=<n>]" in any key order.
CorruptionSpec parse_corruption(const std::string& text);

/// Strength levels used for the corrupted evaluation splits.
std::vector<CorruptionSpec> reference_corruptions(std::uint64_t seed);

/// Corrupts every image; labels are untouched and strength 0 returns an
/// exact copy. Geometry drawn for a corruption does not depend on the
/// strength, so stronger settings extend weaker ones.
Dataset corrupt(const Dataset& data, const CorruptionSpec& spec);

}  // namespace ensdiv
