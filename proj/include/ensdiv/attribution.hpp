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


// Input attributions: saliency |d logit[t] / dx| and integrated gradients
// (x - x') * mean_k grad F(x' + (k / m)(x - x')), k = 1..m.
//
// Batched entry points rely on rows of a batch not interacting, so the input
// gradient of the summed per-row target logits holds every row's gradient.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensdiv/model.hpp"
#include "ensdiv/tensor.hpp"

namespace ensdiv {

enum class AttributionMethod { kSaliency, kIntegratedGradients };

/// Which class each member's map explains.
enum class TargetPolicy { kPredicted, kLabel };

struct AttributionSpec {
  AttributionMethod method = AttributionMethod::kSaliency;
  /// Riemann steps for integrated gradients.
  std::size_t steps = 1;
  TargetPolicy target = TargetPolicy::kPredicted;

  /// "saliency", "ig-10", ...
  std::string tag() const;
};

/// Parses "saliency" or "ig-<steps>"; kInvalidArgument otherwise.
AttributionSpec attribution_from_tag(const std::string& tag);

struct AttributionMap {
  Tensor scores;  // C x H x W
  std::size_t target = 0;
  AttributionMethod method = AttributionMethod::kSaliency;
  std::size_t steps = 1;
};

/// Input gradient of each row's target logit; rows x C x H x W.
Tensor input_gradients(const Model& model, const Tensor& batch,
                       std::span<const std::size_t> targets);

Tensor saliency(const Model& model, const Tensor& batch, std::span<const std::size_t> targets);
AttributionMap saliency(const Model& model, const Tensor& sample, std::size_t target);

/// `baseline` has the batch's shape; steps >= 1.
Tensor integrated_gradients(const Model& model, const Tensor& batch, const Tensor& baseline,
                            std::span<const std::size_t> targets, std::size_t steps);
AttributionMap integrated_gradients(const Model& model, const Tensor& sample,
                                    const Tensor& baseline, std::size_t target,
                                    std::size_t steps);

/// Maps for every (member, sample): `maps` is M x n x C x H x W.
struct AttributionSet {
  AttributionSpec spec;
  Tensor maps;
  /// targets[i][r]: class explained by member i on sample r.
  std::vector<std::vector<std::size_t>> targets;

  std::size_t members() const { return maps.dim(0); }
  std::size_t samples() const { return maps.dim(1); }
  /// One member's maps, n x C x H x W.
  Tensor member(std::size_t i) const;
};

/// Zero baseline for integrated gradients. `labels` is required for
/// TargetPolicy::kLabel.
AttributionSet attribution_batch(std::span<const Model> models, const Tensor& images,
                                 const AttributionSpec& spec,
                                 std::optional<std::span<const std::size_t>> labels = std::nullopt,
                                 std::size_t chunk = 128);

/// Tensor dump with tensors "maps" and "targets" (M x n, stored as doubles).
void save_attributions(const std::filesystem::path& path, const AttributionSet& set);
AttributionSet load_attributions(const std::filesystem::path& path);

}  // namespace ensdiv
