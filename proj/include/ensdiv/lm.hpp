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

// Finite design-diversity model: inputs drawn from a distribution Q,
// programs with failure sets, and development methodologies given as
// distributions over programs. A methodology's difficulty at x is the
// probability that a program it produces fails on x.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace ensdiv::lm {

struct Methodology {
  std::string name;
  /// Probability of producing each program, indexed like World::programs.
  std::vector<double> weights;
};

struct World {
  std::vector<std::string> inputs;
  /// Input distribution Q.
  std::vector<double> input_probability;
  std::vector<std::string> programs;
  /// fails[p][x] == 1 when program p fails on input x.
  std::vector<std::vector<std::uint8_t>> fails;
  std::vector<Methodology> methodologies;

  /// kDomain when Q or a methodology is negative or does not sum to 1
  /// within 1e-12; kConfig on inconsistent sizes or duplicate names.
  void validate() const;
  const Methodology& methodology(const std::string& name) const;
};

// JSON layout:
//   {"inputs": [{"name": "x1", "probability": 0.5}, ...],
//    "programs": [{"name": "p1", "fails_on": ["x1"]}, ...],
//    "methodologies": [{"name": "A", "programs": {"p1": 0.9, "p2": 0.1}}, ...]}
// Programs missing from a methodology have probability 0.
void to_json(nlohmann::json& j, const World& w);
void from_json(const nlohmann::json& j, World& w);
World load_world(const std::filesystem::path& path);
void save_world(const std::filesystem::path& path, const World& world);

/// Per-input failure probability of a program drawn from `m`.
std::vector<double> difficulty(const World& world, const Methodology& m);

struct JointFailure {
  double both = 0.0;  // P(both versions fail) = E_Q[theta_a theta_b]
  double mean_a = 0.0;
  double mean_b = 0.0;
  double covariance = 0.0;  // cov_Q(theta_a, theta_b), computed centered
};

/// Exact enumeration. The decomposition both == mean_a mean_b + covariance
/// is checked internally (kDomain if it fails by more than 1e-9).
JointFailure joint_failure(const World& world, const Methodology& a, const Methodology& b);

struct MonteCarlo {
  double estimate = 0.0;
  double standard_error = 0.0;
  std::uint64_t trials = 0;
  std::uint64_t failures = 0;
};

/// Samples (program from a, program from b, input from Q) and counts joint
/// failures. Trials run in fixed shards with their own generator streams,
/// so the result depends only on (trials, seed). kInvalidArgument when
/// trials == 0.
MonteCarlo joint_failure_mc(const World& world, const Methodology& a, const Methodology& b,
                            std::uint64_t trials, std::uint64_t seed);

/// Random world with methodologies "A" and "B"; failure sets are Bernoulli
/// with a per-program rate, weights are normalized uniforms.
World random_world(std::size_t inputs, std::size_t programs, std::uint64_t seed);

}  // namespace ensdiv::lm
