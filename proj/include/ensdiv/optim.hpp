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
#include <span>
#include <string>
#include <vector>

#include "ensdiv/tensor.hpp"
#include "ensdiv/tensor_io.hpp"
#include "json.hpp"

namespace ensdiv {

enum class OptimizerKind { kSgd, kAdaBelief };

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::kAdaBelief;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// SGD only.
  double momentum = 0.0;
  /// Step decay: lr * decay_factor ^ floor(epoch / decay_every).
  double decay_factor = 0.9;
  std::size_t decay_every = 30;

  void validate() const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

/// Step-decayed learning rate. "Decay 10% every 30 epochs" is read as
/// multiplying by 0.9 at every boundary.
double lr_at_epoch(const OptimConfig& config, std::size_t epoch);

/// Per-model optimizer state. AdaBelief follows its original update:
///   m <- b1 m + (1 - b1) g
///   s <- b2 s + (1 - b2) (g - m)^2 + eps
///   theta <- theta - lr * m_hat / (sqrt(s_hat) + eps)
/// with bias-corrected m_hat, s_hat. SGD uses v <- mu v + g; theta -= lr v.
class Optimizer {
 public:
  Optimizer(OptimConfig config, std::span<const NamedTensor> params);

  /// Updates `params` in place. Throws kNonFinite naming the parameter when
  /// a gradient holds NaN or Inf; nothing is modified in that case.
  void step(std::span<NamedTensor> params, std::span<const Tensor> grads, double lr);

  std::uint64_t steps() const { return steps_; }
  const OptimConfig& config() const { return config_; }

  /// State as named tensors ("<param>.m", "<param>.s", "step").
  std::vector<NamedTensor> state() const;
  void load_state(std::span<const NamedTensor> state);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  OptimConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace ensdiv
