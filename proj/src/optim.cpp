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

#include "ensdiv/optim.hpp"

#include <cmath>

#include "ensdiv/error.hpp"

namespace ensdiv {

void OptimConfig::validate() const {
  if (!(lr > 0.0)) fail(ErrorCode::kConfig, "learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorCode::kConfig, "betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) fail(ErrorCode::kConfig, "epsilon must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) fail(ErrorCode::kConfig, "momentum must lie in [0, 1)");
  if (!(decay_factor > 0.0)) fail(ErrorCode::kConfig, "decay factor must be > 0");
  if (decay_every == 0) fail(ErrorCode::kConfig, "decay interval must be >= 1 epoch");
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = nlohmann::json{{"kind", c.kind == OptimizerKind::kSgd ? "sgd" : "adabelief"},
                     {"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"momentum", c.momentum},
                     {"decay_factor", c.decay_factor},
                     {"decay_every", c.decay_every}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  c = OptimConfig{};
  if (j.contains("kind")) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "sgd") {
      c.kind = OptimizerKind::kSgd;
    } else if (kind == "adabelief") {
      c.kind = OptimizerKind::kAdaBelief;
    } else {
      fail(ErrorCode::kConfig, "unknown optimizer '" + kind + "'");
    }
  }
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) c.eps = j.at("eps").get<double>();
  if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
  if (j.contains("decay_factor")) c.decay_factor = j.at("decay_factor").get<double>();
  if (j.contains("decay_every")) c.decay_every = j.at("decay_every").get<std::size_t>();
  c.validate();
}

double lr_at_epoch(const OptimConfig& config, std::size_t epoch) {
  const auto k = static_cast<double>(epoch / config.decay_every);
  return config.lr * std::pow(config.decay_factor, k);
}

Optimizer::Optimizer(OptimConfig config, std::span<const NamedTensor> params)
    : config_(config) {
  config_.validate();
  for (const NamedTensor& p : params) {
    names_.push_back(p.name);
    first_.emplace_back(p.tensor.shape());
    second_.emplace_back(p.tensor.shape());
  }
}

void Optimizer::step(std::span<NamedTensor> params, std::span<const Tensor> grads, double lr) {
  if (params.size() != names_.size() || grads.size() != names_.size()) {
    fail(ErrorCode::kShapeMismatch, "optimizer step: parameter/gradient count mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i].tensor.shape()) {
      fail(ErrorCode::kShapeMismatch, "gradient " + shape_str(grads[i].shape()) +
                                          " for parameter " + params[i].name + " " +
                                          shape_str(params[i].tensor.shape()));
    }
    if (!grads[i].all_finite()) {
      fail(ErrorCode::kNonFinite, "non-finite gradient for parameter " + params[i].name);
    }
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.eps;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto theta = params[i].tensor.data();
    auto g = grads[i].data();
    auto m = first_[i].data();
    auto s = second_[i].data();
    if (config_.kind == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < theta.size(); ++j) {
        m[j] = config_.momentum * m[j] + g[j];
        theta[j] -= lr * m[j];
      }
      continue;
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      const double diff = g[j] - m[j];
      s[j] = b2 * s[j] + (1.0 - b2) * diff * diff + eps;
      const double m_hat = m[j] / c1;
      const double s_hat = s[j] / c2;
      theta[j] -= lr * m_hat / (std::sqrt(s_hat) + eps);
    }
  }
}

std::vector<NamedTensor> Optimizer::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    out.push_back({names_[i] + ".m", first_[i]});
    out.push_back({names_[i] + ".s", second_[i]});
  }
  out.push_back({"step", Tensor::scalar(static_cast<double>(steps_))});
  return out;
}

void Optimizer::load_state(std::span<const NamedTensor> state) {
  if (state.size() != 2 * names_.size() + 1) {
    fail(ErrorCode::kShapeMismatch, "optimizer state has the wrong number of tensors");
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const NamedTensor& m = state[2 * i];
    const NamedTensor& s = state[2 * i + 1];
    if (m.name != names_[i] + ".m" || s.name != names_[i] + ".s" ||
        m.tensor.shape() != first_[i].shape() || s.tensor.shape() != second_[i].shape()) {
      fail(ErrorCode::kShapeMismatch, "optimizer state does not match parameter " + names_[i]);
    }
    first_[i] = m.tensor;
    second_[i] = s.tensor;
  }
  steps_ = static_cast<std::uint64_t>(state.back().tensor.item());
}

void Optimizer::save(const std::filesystem::path& path) const { io::save_tensors(path, state()); }

void Optimizer::load(const std::filesystem::path& path) { load_state(io::load_tensors(path)); }

}  // namespace ensdiv
