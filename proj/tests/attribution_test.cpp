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


#include "ensdiv/attribution.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "ensdiv/error.hpp"
#include "ensdiv/kernels.hpp"
#include "test_util.hpp"

namespace ensdiv {
namespace {

using testing::max_rel_error;
using testing::random_tensor;
using testing::throws_code;

ModelSpec linear_spec() {
  ModelSpec spec;
  spec.input = {2, 2, 2};
  spec.hidden = {};
  spec.classes = 3;
  return spec;
}

Model linear_model(std::mt19937_64& rng) {
  const ModelSpec spec = linear_spec();
  return Model(spec, {{"fc0.weight", random_tensor({8, 3}, rng)},
                      {"fc0.bias", random_tensor({3}, rng)}});
}

Model mlp(std::uint64_t seed) {
  ModelSpec spec = linear_spec();
  spec.hidden = {6, 5};
  spec.seed = seed;
  Model m = Model::build(spec);
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : m.parameters()) {
    if (name.ends_with(".bias")) t = random_tensor(t.shape(), rng, -0.3, 0.3);
  }
  return m;
}

double logit(const Model& m, const Tensor& sample, std::size_t target) {
  Shape s = sample.shape();
  s.insert(s.begin(), 1);
  return m.forward(sample.reshaped(s))[target];
}

TEST(Saliency, LinearModelIsAbsoluteWeightColumn) {
  std::mt19937_64 rng(1);
  const Model m = linear_model(rng);
  const Tensor x = random_tensor({2, 2, 2}, rng);
  const AttributionMap map = saliency(m, x, 2);
  EXPECT_EQ(map.scores.shape(), (Shape{2, 2, 2}));
  const Tensor& w = m.parameters()[0].tensor;
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(map.scores[i], std::fabs(w[i * 3 + 2]));
}

TEST(Saliency, ConstantModelGivesZeroMap) {
  Model m = mlp(2);
  m.parameters()[0].tensor = Tensor(m.parameters()[0].tensor.shape());
  std::mt19937_64 rng(2);
  const AttributionMap map = saliency(m, random_tensor({2, 2, 2}, rng), 1);
  for (double v : map.scores.values()) EXPECT_EQ(v, 0.0);
}

TEST(Saliency, MlpMatchesFiniteDifferences) {
  const Model m = mlp(3);
  std::mt19937_64 rng(3);
  for (std::size_t t = 0; t < 3; ++t) {
    const Tensor x = random_tensor({2, 2, 2}, rng);
    const Tensor numeric = kernels::map(
        testing::numeric_gradient([&](const Tensor& v) { return logit(m, v, t); }, x),
        [](double v) { return std::fabs(v); });
    const AttributionMap map = saliency(m, x, t);
    EXPECT_LT(max_rel_error(map.scores, numeric), 1e-4);
    for (double v : map.scores.values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Saliency, TargetOutOfRange) {
  std::mt19937_64 rng(4);
  const Model m = linear_model(rng);
  EXPECT_TRUE(throws_code([&] { (void)saliency(m, Tensor({2, 2, 2}), 3); },
                          ErrorCode::kInvalidArgument));
}

TEST(IntegratedGradients, ExactOnLinearModels) {
  std::mt19937_64 rng(5);
  const Model m = linear_model(rng);
  const Tensor x = random_tensor({2, 2, 2}, rng);
  const Tensor zero({2, 2, 2});
  const Tensor& w = m.parameters()[0].tensor;
  for (std::size_t steps : {1u, 3u, 7u}) {
    const AttributionMap ig = integrated_gradients(m, x, zero, 1, steps);
    double total = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(ig.scores[i], x[i] * w[i * 3 + 1], 1e-14);
      total += ig.scores[i];
    }
    EXPECT_NEAR(total, logit(m, x, 1) - logit(m, zero, 1), 1e-13);
  }
}

TEST(IntegratedGradients, ZeroPathGivesZeroMap) {
  const Model m = mlp(6);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({2, 2, 2}, rng);
  const AttributionMap map = integrated_gradients(m, x, x, 0, 10);
  for (double v : map.scores.values()) EXPECT_EQ(v, 0.0);
}

TEST(IntegratedGradients, CompletenessGapShrinksWithSteps) {
  const Model m = mlp(7);
  std::mt19937_64 rng(7);
  const Tensor zero({2, 2, 2});
  const std::size_t steps[] = {2, 10, 50, 200, 2000};
  std::vector<double> gap(std::size(steps), 0.0);
  for (int sample = 0; sample < 10; ++sample) {
    const Tensor x = random_tensor({2, 2, 2}, rng, -2, 2);
    const double target = logit(m, x, 0) - logit(m, zero, 0);
    for (std::size_t k = 0; k < std::size(steps); ++k) {
      const AttributionMap map = integrated_gradients(m, x, zero, 0, steps[k]);
      double total = 0.0;
      for (double v : map.scores.values()) total += v;
      gap[k] += std::fabs(total - target) / 10.0;
    }
  }
  for (std::size_t k = 1; k < gap.size(); ++k) EXPECT_LE(gap[k], gap[k - 1]) << steps[k];
  EXPECT_LT(gap.back(), 1e-3);
}

TEST(IntegratedGradients, Errors) {
  const Model m = mlp(8);
  EXPECT_TRUE(throws_code([&] { (void)integrated_gradients(m, Tensor({2, 2, 2}), Tensor({2, 2, 2}), 0, 0); },
                          ErrorCode::kInvalidArgument));
  EXPECT_TRUE(throws_code([&] { (void)integrated_gradients(m, Tensor({2, 2, 2}), Tensor({8}), 0, 2); },
                          ErrorCode::kShapeMismatch));
}

TEST(Batch, SingleModelMatchesPerSampleCalls) {
  const std::vector<Model> models = {mlp(9)};
  std::mt19937_64 rng(9);
  const Tensor images = random_tensor({7, 2, 2, 2}, rng);
  const AttributionSet set = attribution_batch(models, images, {}, std::nullopt, 3);
  ASSERT_EQ(set.maps.shape(), (Shape{1, 7, 2, 2, 2}));
  const auto pred = kernels::argmax_rows(models[0].forward(images));
  EXPECT_EQ(set.targets[0], pred);
  for (std::size_t r = 0; r < 7; ++r) {
    const Tensor sample = kernels::slice(images, 0, r, r + 1).reshaped({2, 2, 2});
    const Tensor expected = saliency(models[0], sample, pred[r]).scores;
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(set.maps[r * 8 + i], expected[i]);
  }
}

TEST(Batch, CountsAndIdenticalMembers) {
  const std::vector<Model> models = {mlp(10), mlp(10), mlp(11)};
  std::mt19937_64 rng(10);
  const Tensor images = random_tensor({5, 2, 2, 2}, rng);
  AttributionSpec ig;
  ig.method = AttributionMethod::kIntegratedGradients;
  ig.steps = 4;
  const AttributionSet set = attribution_batch(models, images, ig);
  EXPECT_EQ(set.members() * set.samples(), 15u);
  EXPECT_EQ(set.member(0), set.member(1));
  EXPECT_NE(set.member(0), set.member(2));
}

TEST(Batch, LabelTargetsAndDumpRoundTrip) {
  const std::vector<Model> models = {mlp(12), mlp(13)};
  std::mt19937_64 rng(12);
  const Tensor images = random_tensor({4, 2, 2, 2}, rng);
  const std::vector<std::size_t> labels = {2, 0, 1, 2};
  AttributionSpec spec;
  spec.target = TargetPolicy::kLabel;
  const AttributionSet set = attribution_batch(models, images, spec, labels);
  EXPECT_EQ(set.targets[1], labels);
  EXPECT_TRUE(throws_code([&] { (void)attribution_batch(models, images, spec); },
                          ErrorCode::kInvalidArgument));
  const auto path = std::filesystem::temp_directory_path() / "ensdiv_attr.bin";
  save_attributions(path, set);
  const AttributionSet back = load_attributions(path);
  EXPECT_EQ(back.maps, set.maps);
  EXPECT_EQ(back.targets, set.targets);
  EXPECT_EQ(back.spec.tag(), "saliency");
}

TEST(Tags, ParseAndFormat) {
  EXPECT_EQ(attribution_from_tag("ig-50").steps, 50u);
  EXPECT_EQ(attribution_from_tag("ig-50").tag(), "ig-50");
  EXPECT_EQ(attribution_from_tag("saliency").method, AttributionMethod::kSaliency);
  for (const char* bad : {"ig-0", "ig-", "gradcam", "ig-x"}) {
    EXPECT_TRUE(throws_code([&] { (void)attribution_from_tag(bad); }, ErrorCode::kInvalidArgument))
        << bad;
  }
}

}  // namespace
}  // namespace ensdiv
