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

#include "ensdiv/lm.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ensdiv/error.hpp"
#include "ensdiv/rng.hpp"
#include "ensdiv/tensor_io.hpp"

namespace ensdiv::lm {
namespace {

constexpr double kSumTolerance = 1e-12;
constexpr std::uint64_t kShardTrials = 1 << 16;

void check_distribution(const std::vector<double>& p, const std::string& what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      fail(ErrorCode::kDomain, what + " has a negative or non-finite probability");
    }
    total += v;
  }
  if (std::fabs(total - 1.0) > kSumTolerance) {
    fail(ErrorCode::kDomain, what + " sums to " + std::to_string(total) + ", not 1");
  }
}

void check_unique(const std::vector<std::string>& names, const std::string& what) {
  if (std::set<std::string>(names.begin(), names.end()).size() != names.size()) {
    fail(ErrorCode::kConfig, "duplicate " + what + " name");
  }
}

std::size_t index_of(const std::vector<std::string>& names, const std::string& name,
                     const std::string& what) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) fail(ErrorCode::kNotFound, "unknown " + what + " '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

double mean_q(const World& w, const std::vector<double>& f) {
  double total = 0.0;
  for (std::size_t x = 0; x < f.size(); ++x) total += w.input_probability[x] * f[x];
  return total;
}

}  // namespace

void World::validate() const {
  if (inputs.empty() || programs.empty()) fail(ErrorCode::kConfig, "world needs inputs and programs");
  if (input_probability.size() != inputs.size() || fails.size() != programs.size()) {
    fail(ErrorCode::kConfig, "world tables have inconsistent sizes");
  }
  check_unique(inputs, "input");
  check_unique(programs, "program");
  check_distribution(input_probability, "input distribution");
  for (const auto& row : fails) {
    if (row.size() != inputs.size()) fail(ErrorCode::kConfig, "failure table row has wrong length");
    for (std::uint8_t v : row) {
      if (v > 1) fail(ErrorCode::kConfig, "failure indicators must be 0 or 1");
    }
  }
  std::vector<std::string> names;
  for (const Methodology& m : methodologies) {
    if (m.weights.size() != programs.size()) {
      fail(ErrorCode::kConfig, "methodology " + m.name + " has the wrong number of weights");
    }
    check_distribution(m.weights, "methodology " + m.name);
    names.push_back(m.name);
  }
  check_unique(names, "methodology");
}

const Methodology& World::methodology(const std::string& name) const {
  for (const Methodology& m : methodologies) {
    if (m.name == name) return m;
  }
  fail(ErrorCode::kNotFound, "unknown methodology '" + name + "'");
}

void to_json(nlohmann::json& j, const World& w) {
  j = nlohmann::json::object();
  for (std::size_t x = 0; x < w.inputs.size(); ++x) {
    j["inputs"].push_back({{"name", w.inputs[x]}, {"probability", w.input_probability[x]}});
  }
  for (std::size_t p = 0; p < w.programs.size(); ++p) {
    nlohmann::json fails_on = nlohmann::json::array();
    for (std::size_t x = 0; x < w.inputs.size(); ++x) {
      if (w.fails[p][x] != 0) fails_on.push_back(w.inputs[x]);
    }
    j["programs"].push_back({{"name", w.programs[p]}, {"fails_on", fails_on}});
  }
  j["methodologies"] = nlohmann::json::array();
  for (const Methodology& m : w.methodologies) {
    nlohmann::json weights = nlohmann::json::object();
    for (std::size_t p = 0; p < w.programs.size(); ++p) {
      if (m.weights[p] != 0.0) weights[w.programs[p]] = m.weights[p];
    }
    j["methodologies"].push_back({{"name", m.name}, {"programs", weights}});
  }
}

void from_json(const nlohmann::json& j, World& w) {
  w = World{};
  try {
    for (const auto& in : j.at("inputs")) {
      w.inputs.push_back(in.at("name").get<std::string>());
      w.input_probability.push_back(in.at("probability").get<double>());
    }
    for (const auto& prog : j.at("programs")) {
      w.programs.push_back(prog.at("name").get<std::string>());
      std::vector<std::uint8_t> row(w.inputs.size(), 0);
      for (const auto& x : prog.at("fails_on")) {
        row[index_of(w.inputs, x.get<std::string>(), "input")] = 1;
      }
      w.fails.push_back(std::move(row));
    }
    for (const auto& m : j.at("methodologies")) {
      Methodology meth;
      meth.name = m.at("name").get<std::string>();
      meth.weights.assign(w.programs.size(), 0.0);
      for (const auto& [program, weight] : m.at("programs").items()) {
        meth.weights[index_of(w.programs, program, "program")] = weight.get<double>();
      }
      w.methodologies.push_back(std::move(meth));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("world description: ") + e.what());
  }
  w.validate();
}

World load_world(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
  return j.get<World>();
}

void save_world(const std::filesystem::path& path, const World& world) {
  io::write_file(path, nlohmann::json(world).dump(2) + "\n");
}

std::vector<double> difficulty(const World& world, const Methodology& m) {
  std::vector<double> theta(world.inputs.size(), 0.0);
  for (std::size_t p = 0; p < world.programs.size(); ++p) {
    if (m.weights[p] == 0.0) continue;
    for (std::size_t x = 0; x < theta.size(); ++x) {
      if (world.fails[p][x] != 0) theta[x] += m.weights[p];
    }
  }
  return theta;
}

JointFailure joint_failure(const World& world, const Methodology& a, const Methodology& b) {
  const std::vector<double> ta = difficulty(world, a), tb = difficulty(world, b);
  JointFailure out;
  out.mean_a = mean_q(world, ta);
  out.mean_b = mean_q(world, tb);
  for (std::size_t x = 0; x < ta.size(); ++x) {
    const double q = world.input_probability[x];
    out.both += q * ta[x] * tb[x];
    out.covariance += q * (ta[x] - out.mean_a) * (tb[x] - out.mean_b);
  }
  if (std::fabs(out.both - (out.mean_a * out.mean_b + out.covariance)) > 1e-9) {
    fail(ErrorCode::kDomain, "joint failure decomposition does not hold; is Q normalized?");
  }
  return out;
}

MonteCarlo joint_failure_mc(const World& world, const Methodology& a, const Methodology& b,
                            std::uint64_t trials, std::uint64_t seed) {
  if (trials == 0) fail(ErrorCode::kInvalidArgument, "Monte Carlo needs at least one trial");
  std::discrete_distribution<std::size_t> pick_a(a.weights.begin(), a.weights.end());
  std::discrete_distribution<std::size_t> pick_b(b.weights.begin(), b.weights.end());
  std::discrete_distribution<std::size_t> pick_x(world.input_probability.begin(),
                                                 world.input_probability.end());
  MonteCarlo out;
  out.trials = trials;
  for (std::uint64_t shard = 0; shard * kShardTrials < trials; ++shard) {
    Rng rng = make_rng(seed, shard);
    const std::uint64_t n = std::min(kShardTrials, trials - shard * kShardTrials);
    for (std::uint64_t t = 0; t < n; ++t) {
      const std::size_t pa = pick_a(rng), pb = pick_b(rng), x = pick_x(rng);
      out.failures += world.fails[pa][x] & world.fails[pb][x];
    }
  }
  const double p = static_cast<double>(out.failures) / static_cast<double>(trials);
  out.estimate = p;
  out.standard_error = std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
  return out;
}

World random_world(std::size_t inputs, std::size_t programs, std::uint64_t seed) {
  if (inputs == 0 || programs == 0) {
    fail(ErrorCode::kInvalidArgument, "random world needs inputs and programs");
  }
  Rng rng = make_rng(seed, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto normalized = [&](std::size_t n) {
    std::vector<double> v(n);
    double total = 0.0;
    for (double& x : v) total += (x = unit(rng) + 1e-3);
    for (double& x : v) x /= total;
    return v;
  };
  World w;
  for (std::size_t x = 0; x < inputs; ++x) w.inputs.push_back("x" + std::to_string(x));
  w.input_probability = normalized(inputs);
  for (std::size_t p = 0; p < programs; ++p) {
    w.programs.push_back("p" + std::to_string(p));
    const double rate = unit(rng);
    std::vector<std::uint8_t> row(inputs);
    for (auto& f : row) f = unit(rng) < rate ? 1 : 0;
    w.fails.push_back(std::move(row));
  }
  w.methodologies.push_back({"A", normalized(programs)});
  w.methodologies.push_back({"B", normalized(programs)});
  w.validate();
  return w;
}

}  // namespace ensdiv::lm
