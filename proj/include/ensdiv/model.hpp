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

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ensdiv/autodiff.hpp"
#include "ensdiv/tensor.hpp"
#include "ensdiv/tensor_io.hpp"
#include "json.hpp"

namespace ensdiv {

enum class ModelKind { kMlp, kCnn };

struct InputShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t features() const { return channels * height * width; }
  Shape batch_shape(std::size_t n) const { return {n, channels, height, width}; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// Architecture description. MLP: `hidden` widths between the flattened
/// input and the class logits. CNN: one same-padded conv + relu per entry
/// of `channels`, then global average pooling and a linear head.
struct ModelSpec {
  ModelKind kind = ModelKind::kMlp;
  std::vector<std::size_t> hidden;
  std::vector<std::size_t> channels;
  std::size_t kernel_size = 3;
  InputShape input;
  std::size_t classes = 8;
  std::uint64_t seed = 0;

  /// Throws kConfig on an unusable spec.
  void validate() const;
  /// Short human-readable label such as "mlp[64]" or "cnn[8,16]k3".
  std::string label() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);
std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct ParamInfo {
  std::string name;
  Shape shape;
};

/// Parameter names and shapes in registry order.
std::vector<ParamInfo> parameter_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);
/// Names accepted by capture_activations, in forward order.
std::vector<std::string> layer_names(const ModelSpec& spec);

/// Receives (layer name, activation) during a forward pass.
using ActivationSink = std::map<std::string, Tensor>;

class Model {
 public:
  /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases, drawn
  /// from a generator seeded only by spec.seed.
  static Model build(const ModelSpec& spec);

  /// Wraps existing parameters, checking them against the spec layout.
  Model(ModelSpec spec, std::vector<NamedTensor> parameters);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  std::size_t parameter_count() const;

  /// Logits for a [n, C, H, W] batch, evaluated without a graph.
  Tensor forward(const Tensor& batch) const;

  /// Logits as a Var. `params` are the parameters in registry order (see
  /// bind()); when `sink` is set every registered layer output is stored.
  ad::Var forward(std::span<const ad::Var> params, const ad::Var& batch,
                  ActivationSink* sink = nullptr) const;

  /// Parameters as graph leaves (or constants when !requires_grad).
  std::vector<ad::Var> bind(ad::Graph& graph, bool requires_grad = true) const;

 private:
  ModelSpec spec_;
  std::vector<NamedTensor> params_;
};

/// Logits for a whole dataset, evaluated in chunks of `batch` rows.
Tensor predict_logits(const Model& model, const Tensor& images, std::size_t batch = 256);

/// Members sharing input shape and class count; M >= 2.
class Ensemble {
 public:
  explicit Ensemble(std::vector<Model> members);

  std::size_t size() const { return members_.size(); }
  const std::vector<Model>& members() const { return members_; }
  std::vector<Model>& members() { return members_; }
  const Model& operator[](std::size_t i) const { return members_[i]; }
  std::size_t parameter_count() const;

 private:
  std::vector<Model> members_;
};

/// Per-layer activations flattened to (n samples x features).
struct ActivationCapture {
  std::vector<std::string> layers;
  std::vector<Tensor> matrices;

  const Tensor& at(const std::string& layer) const;
  std::size_t rows() const { return matrices.empty() ? 0 : matrices.front().dim(0); }
};

/// Throws kNotFound for a layer outside the model's registry.
ActivationCapture capture_activations(const Model& model, const Tensor& images,
                                      std::span<const std::string> layers,
                                      std::size_t batch = 256);

// Checkpoint layout (little-endian):
//   8 bytes "ENSDIVCK" | u32 version | u64 L | L bytes spec JSON |
//   f64 values of every parameter in registry order.
inline constexpr std::string_view kCheckpointMagic = "ENSDIVCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_header(const ModelSpec& spec);
std::size_t checkpoint_size(const ModelSpec& spec);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
/// Also requires the stored spec to equal `expected` (kShapeMismatch).
Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace ensdiv
