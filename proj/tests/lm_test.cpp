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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "test_util.hpp"

namespace ensdiv::lm {
namespace {

using testing::throws_code;

const std::filesystem::path kWorlds = ENSDIV_SOURCE_DIR "/data/worlds";

// Two inputs, two programs each failing on exactly one input.
World two_program_world(std::vector<double> a, std::vector<double> b) {
  World w;
  w.inputs = {"x1", "x2"};
  w.input_probability = {0.5, 0.5};
  w.programs = {"p1", "p2"};
  w.fails = {{1, 0}, {0, 1}};
  w.methodologies = {{"A", std::move(a)}, {"B", std::move(b)}};
  w.validate();
  return w;
}

TEST(Difficulty, WeightedSum) {
  const World w = two_program_world({0.9, 0.1}, {0.1, 0.9});
  const auto theta = difficulty(w, w.methodology("A"));
  ASSERT_EQ(theta.size(), 2u);
  EXPECT_DOUBLE_EQ(theta[0], 0.9);
  EXPECT_DOUBLE_EQ(theta[1], 0.1);
}

TEST(Difficulty, PointMassAndSaturation) {
  const World w = two_program_world({0.0, 1.0}, {0.5, 0.5});
  const auto theta = difficulty(w, w.methodology("A"));
  EXPECT_EQ(theta, (std::vector<double>{0.0, 1.0}));
  World all = w;
  all.fails = {{1, 1}, {1, 1}};
  for (double t : difficulty(all, all.methodology("B"))) EXPECT_DOUBLE_EQ(t, 1.0);
}

TEST(JointFailure, AntiCorrelatedReference) {
  const World w = load_world(kWorlds / "anticorrelated.json");
  const JointFailure j = joint_failure(w, w.methodology("A"), w.methodology("B"));
  EXPECT_NEAR(j.both, 0.09, 1e-15);
  EXPECT_NEAR(j.mean_a, 0.5, 1e-15);
  EXPECT_NEAR(j.mean_b, 0.5, 1e-15);
  EXPECT_LT(j.covariance, 0.0);
  EXPECT_LT(j.both, j.mean_a * j.mean_b);
}

TEST(JointFailure, SharedMethodologyReference) {
  const World w = load_world(kWorlds / "shared_methodology.json");
  const JointFailure j = joint_failure(w, w.methodology("A"), w.methodology("B"));
  EXPECT_NEAR(j.both, 0.41, 1e-15);
  EXPECT_GE(j.both, 0.25);
  EXPECT_NEAR(j.covariance, 0.16, 1e-15);
}

TEST(JointFailure, ConstantDifficultyHasZeroCovariance) {
  World w = two_program_world({0.3, 0.7}, {0.6, 0.4});
  w.fails = {{1, 1}, {0, 0}};
  const JointFailure j = joint_failure(w, w.methodology("A"), w.methodology("B"));
  EXPECT_NEAR(j.covariance, 0.0, 1e-15);
  EXPECT_NEAR(j.both, j.mean_a * j.mean_b, 1e-15);
}

TEST(JointFailure, DecompositionOnRandomWorlds) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const World w = random_world(1 + seed % 9, 1 + seed % 7, seed);
    const Methodology& a = w.methodology("A");
    const Methodology& b = w.methodology("B");
    const JointFailure j = joint_failure(w, a, b);
    // Brute force over (program a, program b, input).
    double brute = 0.0;
    for (std::size_t pa = 0; pa < w.programs.size(); ++pa) {
      for (std::size_t pb = 0; pb < w.programs.size(); ++pb) {
        for (std::size_t x = 0; x < w.inputs.size(); ++x) {
          brute += a.weights[pa] * b.weights[pb] * w.input_probability[x] * w.fails[pa][x] *
                   w.fails[pb][x];
        }
      }
    }
    EXPECT_NEAR(j.both, brute, 1e-12) << seed;
    EXPECT_NEAR(j.both, j.mean_a * j.mean_b + j.covariance, 1e-12) << seed;
    // Same methodology twice: covariance is a variance.
    const JointFailure same = joint_failure(w, a, a);
    EXPECT_GE(same.both, same.mean_a * same.mean_a - 1e-15) << seed;
  }
}

TEST(JointFailure, StrictWhenDifficultyVaries) {
  const World w = two_program_world({0.9, 0.1}, {0.5, 0.5});
  const JointFailure j = joint_failure(w, w.methodology("A"), w.methodology("A"));
  EXPECT_GT(j.both, j.mean_a * j.mean_a);
}

TEST(MonteCarlo, WithinFourStandardErrors) {
  for (const char* file : {"anticorrelated.json", "shared_methodology.json"}) {
    const World w = load_world(kWorlds / file);
    const JointFailure exact = joint_failure(w, w.methodology("A"), w.methodology("B"));
    const MonteCarlo mc = joint_failure_mc(w, w.methodology("A"), w.methodology("B"), 200000, 5);
    EXPECT_EQ(mc.trials, 200000u);
    EXPECT_LE(std::fabs(mc.estimate - exact.both), 4.0 * mc.standard_error) << file;
  }
}

TEST(MonteCarlo, DeterministicWorldIsExact) {
  World w;
  w.inputs = {"x"};
  w.input_probability = {1.0};
  w.programs = {"p"};
  w.fails = {{1}};
  w.methodologies = {{"A", {1.0}}};
  const MonteCarlo mc = joint_failure_mc(w, w.methodologies[0], w.methodologies[0], 1000, 1);
  EXPECT_EQ(mc.estimate, 1.0);
  EXPECT_EQ(mc.standard_error, 0.0);
}

TEST(MonteCarlo, SeedDeterminism) {
  const World w = random_world(5, 4, 3);
  const auto& a = w.methodology("A");
  const auto& b = w.methodology("B");
  const MonteCarlo x = joint_failure_mc(w, a, b, 100000, 9);
  const MonteCarlo y = joint_failure_mc(w, a, b, 100000, 9);
  EXPECT_EQ(x.failures, y.failures);
  EXPECT_TRUE(throws_code([&] { joint_failure_mc(w, a, b, 0, 9); }, ErrorCode::kInvalidArgument));
}

TEST(WorldFile, RoundTrip) {
  const World w = random_world(4, 3, 11);
  const auto path = std::filesystem::temp_directory_path() / "ensdiv_lm_world.json";
  save_world(path, w);
  const World back = load_world(path);
  EXPECT_EQ(back.inputs, w.inputs);
  EXPECT_EQ(back.fails, w.fails);
  ASSERT_EQ(back.methodologies.size(), 2u);
  EXPECT_EQ(back.methodologies[1].weights, w.methodologies[1].weights);
}

TEST(WorldFile, Validation) {
  World w = two_program_world({0.9, 0.1}, {0.1, 0.9});
  w.input_probability = {0.5, 0.6};
  EXPECT_TRUE(throws_code([&] { w.validate(); }, ErrorCode::kDomain));
  w = two_program_world({0.9, 0.1}, {0.1, 0.9});
  w.methodologies[0].weights = {1.2, -0.2};
  EXPECT_TRUE(throws_code([&] { w.validate(); }, ErrorCode::kDomain));
  w = two_program_world({0.9, 0.1}, {0.1, 0.9});
  w.fails[0] = {2, 0};
  EXPECT_TRUE(throws_code([&] { w.validate(); }, ErrorCode::kConfig));
  EXPECT_TRUE(throws_code([&] { w.methodology("C"); }, ErrorCode::kNotFound));
  const nlohmann::json bad = {{"inputs", {{{"name", "x"}, {"probability", 1.0}}}},
                              {"programs", {{{"name", "p"}, {"fails_on", {"y"}}}}},
                              {"methodologies", nlohmann::json::array()}};
  EXPECT_TRUE(throws_code([&] { bad.get<World>(); }, ErrorCode::kNotFound));
  EXPECT_TRUE(throws_code([&] { nlohmann::json::object().get<World>(); }, ErrorCode::kFormat));
}

}  // namespace
}  // namespace ensdiv::lm
