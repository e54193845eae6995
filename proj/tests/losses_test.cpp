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


#include "ensdiv/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ensdiv/error.hpp"
#include "ensdiv/kernels.hpp"
#include "test_util.hpp"

namespace ensdiv {
namespace {

using ad::Var;
using testing::max_rel_error;
using testing::random_tensor;
using testing::throws_code;

// Scalar cross-entropy of one row, written out directly.
double row_ce(const Tensor& logits, std::size_t row, std::size_t label) {
  const std::size_t s = logits.dim(1);
  double mx = logits[row * s];
  for (std::size_t c = 1; c < s; ++c) mx = std::max(mx, logits[row * s + c]);
  double z = 0.0;
  for (std::size_t c = 0; c < s; ++c) z += std::exp(logits[row * s + c] - mx);
  return -(logits[row * s + label] - mx - std::log(z));
}

double mean_ce(const Tensor& logits, const std::vector<std::size_t>& labels) {
  double acc = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) acc += row_ce(logits, r, labels[r]);
  return acc / static_cast<double>(labels.size());
}

std::vector<double> softmax_row(const Tensor& t, std::size_t row) {
  const std::size_t s = t.dim(1);
  std::vector<double> p(s);
  double z = 0.0;
  for (std::size_t c = 0; c < s; ++c) z += p[c] = std::exp(t[row * s + c]);
  for (double& v : p) v /= z;
  return p;
}

struct Problem {
  std::vector<Model> members;
  Tensor x;
  std::vector<std::size_t> y;
};

Problem make_problem(std::size_t m, std::uint64_t seed, std::vector<std::size_t> hidden = {3}) {
  Problem p;
  for (std::size_t i = 0; i < m; ++i) {
    ModelSpec spec;
    spec.input = {1, 2, 2};
    spec.hidden = hidden;
    spec.classes = 3;
    spec.seed = seed * 31 + i;
    p.members.push_back(Model::build(spec));
  }
  std::mt19937_64 rng(seed);
  // Nonzero biases keep rows away from exact logit ties, where the argmax
  // based masks are discontinuous.
  for (Model& m : p.members) {
    for (auto& [name, t] : m.parameters()) {
      if (name.ends_with(".bias")) t = random_tensor(t.shape(), rng, -0.5, 0.5);
    }
  }
  p.x = random_tensor({5, 1, 2, 2}, rng);
  for (std::size_t r = 0; r < 5; ++r) p.y.push_back((r + seed) % 3);
  return p;
}

std::vector<Var> constant_logits(const Problem& p) {
  std::vector<Var> out;
  for (const Model& m : p.members) out.emplace_back(m.forward(p.x));
  return out;
}

double objective_value(const LossConfig& c, const std::vector<Model>& members, const Problem& p) {
  ad::Graph g;
  std::vector<std::vector<Var>> params;
  for (const Model& m : members) params.push_back(m.bind(g, false));
  return compute_loss(c, g, members, params, p.x, p.y).objective.value().item();
}

// Largest relative error between autodiff and central differences over all
// parameters of every member.
double gradient_error(const LossConfig& c, const Problem& p) {
  ad::Graph g;
  std::vector<std::vector<Var>> params;
  for (const Model& m : p.members) params.push_back(m.bind(g, true));
  const LossBreakdown b = compute_loss(c, g, p.members, params, p.x, p.y);
  const ad::Gradients grads = g.backward(b.objective);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.members.size(); ++i) {
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      auto f = [&](const Tensor& value) {
        std::vector<Model> perturbed = p.members;
        perturbed[i].parameters()[k].tensor = value;
        return objective_value(c, perturbed, p);
      };
      const Tensor numeric =
          testing::numeric_gradient(f, p.members[i].parameters()[k].tensor, 1e-5);
      worst = std::max(worst, max_rel_error(grads[params[i][k]], numeric, 1e-4));
    }
  }
  return worst;
}

LossConfig config(LossKind kind, double lambda, Curvature curv = Curvature::kCeSoftmaxHessian,
                  ConsensusKind cons = ConsensusKind::kAverage) {
  LossConfig c;
  c.kind = kind;
  c.lambda = lambda;
  c.curvature = curv;
  c.consensus = cons;
  return c;
}

TEST(CrossEntropy, UniformLogitsGiveLogClasses) {
  const std::vector<std::size_t> y = {0, 3, 1};
  const Var ce = cross_entropy(Var(Tensor({3, 4})), y);
  EXPECT_NEAR(ce.value().item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, SaturatedCorrectLogitsNearZero) {
  const std::vector<std::size_t> y = {1};
  EXPECT_LT(cross_entropy(Var(Tensor::matrix({{-40, 40, -40}})), y).value().item(), 1e-30);
}

TEST(CrossEntropy, LabelOutOfRange) {
  const std::vector<std::size_t> y = {3};
  EXPECT_TRUE(throws_code([&] { (void)cross_entropy(Var(Tensor({1, 3})), y); },
                          ErrorCode::kInvalidArgument));
}

TEST(Independent, TotalIsMeanOfMemberCrossEntropies) {
  const Problem p = make_problem(3, 1);
  const auto logits = constant_logits(p);
  const LossBreakdown b = loss_independent(logits, p.y);
  double sum = 0.0;
  for (const Var& h : logits) sum += mean_ce(h.value(), p.y);
  EXPECT_NEAR(b.total.value().item(), sum / 3.0, 1e-14);
  EXPECT_NEAR(b.objective.value().item(), sum, 1e-14);
}

TEST(Gncl, ZeroLambdaIsSumOfIndependentLosses) {
  const Problem p = make_problem(3, 2);
  const auto logits = constant_logits(p);
  for (Curvature c : {Curvature::kMseIdentity, Curvature::kCeSoftmaxHessian}) {
    EXPECT_EQ(loss_gncl(logits, p.y, 0.0, c).total.value().item(),
              loss_independent(logits, p.y).objective.value().item());
  }
}

TEST(Gncl, IdenticalMembersHaveNoPenalty) {
  const Problem p = make_problem(1, 3);
  const Tensor h = p.members[0].forward(p.x);
  const std::vector<Var> logits = {Var(h), Var(h), Var(h)};
  for (Curvature c : {Curvature::kMseIdentity, Curvature::kCeSoftmaxHessian}) {
    // Only rounding in the consensus mean separates d_i from zero.
    EXPECT_NEAR(loss_gncl(logits, p.y, 0.7, c).penalty.value().item(), 0.0, 1e-28);
  }
}

TEST(Gncl, ScalarPenaltyHandValue) {
  // h = (0, 2), f = 1, D = 2I: (lambda / 4) * (2 + 2) = lambda.
  const std::vector<Var> h = {Var(Tensor::matrix({{0}})), Var(Tensor::matrix({{2}}))};
  const double lambda = 0.3;
  EXPECT_NEAR(
      gncl_diversity(h, Curvature::kMseIdentity, ConsensusKind::kAverage).value().item() * lambda,
      lambda, 1e-15);
}

TEST(Gncl, SoftmaxHessianPenaltyMatchesExplicitMatrix) {
  const Problem p = make_problem(3, 4);
  const auto logits = constant_logits(p);
  Tensor mean_logits({5, 3});
  for (const Var& h : logits) {
    for (std::size_t e = 0; e < 15; ++e) mean_logits[e] += h.value()[e] / 3.0;
  }
  double expected = 0.0;
  for (const Var& h : logits) {
    double member = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
      const auto f = softmax_row(mean_logits, r);
      const auto q = softmax_row(h.value(), r);
      for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
          const double curv = (a == b ? f[a] : 0.0) - f[a] * f[b];
          member += (q[a] - f[a]) * curv * (q[b] - f[b]);
        }
      }
    }
    expected += member / 5.0;
  }
  expected /= 2.0 * 3.0;
  EXPECT_NEAR(
      gncl_diversity(logits, Curvature::kCeSoftmaxHessian, ConsensusKind::kAverage).value().item(),
      expected, 1e-15);
}

TEST(Gncl, MseIdentityPenaltyNonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Problem p = make_problem(4, seed + 10);
    const auto logits = constant_logits(p);
    const LossBreakdown g = loss_gncl(logits, p.y, 0.5, Curvature::kMseIdentity);
    EXPECT_GE(g.penalty.value().item(), 0.0);
    EXPECT_LE(g.total.value().item(), loss_independent(logits, p.y).objective.value().item());
  }
}

TEST(Gncl, NegativeLambdaRejected) {
  const Problem p = make_problem(2, 5);
  EXPECT_TRUE(throws_code(
      [&] { (void)loss_gncl(constant_logits(p), p.y, -0.1, Curvature::kMseIdentity); },
      ErrorCode::kInvalidArgument));
}

TEST(Balanced, Reductions) {
  const Problem p = make_problem(3, 6);
  const auto logits = constant_logits(p);
  const LossBreakdown ind = loss_independent(logits, p.y);
  EXPECT_NEAR(loss_balanced(logits, p.y, 0.0).total.value().item(), ind.total.value().item(),
              1e-12);
  EXPECT_NEAR(loss_balanced(logits, p.y, 1.0).total.value().item(),
              ind.ensemble_loss.value().item(), 1e-12);
}

TEST(Balanced, HalfMixtureOfHandComputedLosses) {
  const std::vector<Var> h = {Var(Tensor::matrix({{2, 0}, {0, 1}})),
                              Var(Tensor::matrix({{0, 1}, {3, 0}}))};
  const std::vector<std::size_t> y = {0, 1};
  const double l0 = 0.5 * (std::log(1 + std::exp(-2.0)) + std::log(1 + std::exp(-1.0)));
  const double l1 = 0.5 * (std::log(1 + std::exp(1.0)) + std::log(1 + std::exp(3.0)));
  // Averaged logits are (1, 0.5) and (1.5, 0.5).
  const double lf = 0.5 * (std::log(1 + std::exp(-0.5)) + std::log(1 + std::exp(1.0)));
  EXPECT_NEAR(loss_balanced(h, y, 0.5).total.value().item(), 0.5 * lf + 0.25 * (l0 + l1), 1e-14);
}

TEST(Balanced, LambdaOutsideUnitInterval) {
  const Problem p = make_problem(2, 7);
  EXPECT_TRUE(throws_code([&] { (void)loss_balanced(constant_logits(p), p.y, 1.5); },
                          ErrorCode::kInvalidArgument));
}

TEST(Masked, AllWrongReducesToIndependent) {
  const std::vector<Var> h = {Var(Tensor::matrix({{3, 0}, {2, 1}})),
                              Var(Tensor::matrix({{1, 0}, {5, 1}}))};
  const std::vector<std::size_t> y = {1, 1};
  const LossBreakdown b = loss_gncl_masked(h, y, 0.5, Curvature::kMseIdentity);
  EXPECT_EQ(b.penalty.value().item(), 0.0);
  EXPECT_EQ(b.total.value().item(), loss_independent(h, y).objective.value().item());
}

TEST(Masked, AllCorrectEqualsGncl) {
  const std::vector<Var> h = {Var(Tensor::matrix({{3, 0}, {2, 1}})),
                              Var(Tensor::matrix({{1, 0}, {5, 1}}))};
  const std::vector<std::size_t> y = {0, 0};
  for (Curvature c : {Curvature::kMseIdentity, Curvature::kCeSoftmaxHessian}) {
    EXPECT_EQ(loss_gncl_masked(h, y, 0.5, c).total.value().item(),
              loss_gncl(h, y, 0.5, c).total.value().item());
  }
}

TEST(Masked, MixedCorrectnessMatchesExplicitMask) {
  const Problem p = make_problem(3, 8);
  const auto logits = constant_logits(p);
  // Brute force: average logits, then per member sum 2|h - f|^2 only on
  // rows that member classifies correctly.
  Tensor f({5, 3});
  for (const Var& h : logits) {
    for (std::size_t e = 0; e < 15; ++e) f[e] += h.value()[e] / 3.0;
  }
  double expected = 0.0;
  std::size_t correct = 0;
  for (const Var& h : logits) {
    const auto pred = kernels::argmax_rows(h.value());
    double member = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
      if (pred[r] != p.y[r]) continue;
      ++correct;
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = h.value()[r * 3 + c] - f[r * 3 + c];
        member += 2.0 * d * d;
      }
    }
    expected += member / 5.0;
  }
  ASSERT_GT(correct, 0u);
  ASSERT_LT(correct, 15u);
  expected *= 0.4 / 6.0;
  EXPECT_NEAR(loss_gncl_masked(logits, p.y, 0.4, Curvature::kMseIdentity).penalty.value().item(),
              expected, 1e-15);
}

TEST(AttributionDiv, ZeroLambdaIsMeanCrossEntropy) {
  const Problem p = make_problem(3, 9);
  ad::Graph g;
  std::vector<std::vector<Var>> params;
  for (const Model& m : p.members) params.push_back(m.bind(g, false));
  const LossBreakdown b = loss_attribution_div(g, p.members, params, p.x, p.y, 0.0);
  double expected = 0.0;
  for (const Model& m : p.members) expected += mean_ce(m.forward(p.x), p.y);
  EXPECT_NEAR(b.total.value().item(), expected / 3.0, 1e-12);
  EXPECT_GT(b.diversity.value().item(), 0.0);
}

TEST(AttributionDiv, IdenticalMembersHaveZeroDiversity) {
  Problem p = make_problem(1, 10);
  p.members.push_back(p.members[0]);
  ad::Graph g;
  std::vector<std::vector<Var>> params;
  for (const Model& m : p.members) params.push_back(m.bind(g, false));
  const LossBreakdown b = loss_attribution_div(g, p.members, params, p.x, p.y, 0.9);
  EXPECT_EQ(b.diversity.value().item(), 0.0);
  EXPECT_NEAR(b.total.value().item(), mean_ce(p.members[0].forward(p.x), p.y), 1e-14);
}

TEST(AttributionDiv, LinearMembersClosedForm) {
  ModelSpec spec;
  spec.input = {1, 1, 2};
  spec.hidden = {};
  spec.classes = 2;
  const Tensor w0 = Tensor::matrix({{1.0, -2.0}, {0.5, 3.0}});
  const Tensor w1 = Tensor::matrix({{-1.5, 0.0}, {2.0, 1.0}});
  std::vector<Model> members = {Model(spec, {{"fc0.weight", w0}, {"fc0.bias", Tensor({2})}}),
                                Model(spec, {{"fc0.weight", w1}, {"fc0.bias", Tensor({2})}})};
  const Tensor x = Tensor({2, 1, 1, 2}, {1.0, 1.0, -1.0, 0.2});
  const std::vector<std::size_t> y = {1, 0};
  // Row 0: member 0 logits (1.5, 1) -> class 0, member 1 (0.5, 1) -> class 1.
  // Row 1: member 0 (-0.9, 2.6) -> class 1, member 1 (1.9, 0.2) -> class 0.
  // Saliency is |column of W| for the predicted class; per-feature variance
  // of two values is (a - b)^2 / 4.
  auto var2 = [](double a, double b) { return (a - b) * (a - b) / 4.0; };
  const double a_row0 = var2(1.0, 0.0) + var2(0.5, 1.0);
  const double a_row1 = var2(2.0, 1.5) + var2(3.0, 2.0);
  const double diversity = 0.5 * (a_row0 + a_row1);
  const double lambda = 0.25;
  const double ce = 0.5 * (mean_ce(members[0].forward(x), y) + mean_ce(members[1].forward(x), y));
  ad::Graph g;
  std::vector<std::vector<Var>> params;
  for (const Model& m : members) params.push_back(m.bind(g, true));
  const LossBreakdown b = loss_attribution_div(g, members, params, x, y, lambda);
  EXPECT_NEAR(b.diversity.value().item(), diversity, 1e-12);
  EXPECT_NEAR(b.total.value().item(), ce - lambda * diversity, 1e-10);
}

TEST(Recomposition, EveryKindRebuildsTotalFromParts) {
  const Problem p = make_problem(3, 11);
  const double lambda = 0.3;
  for (LossKind kind : {LossKind::kIndependent, LossKind::kGncl, LossKind::kBalanced,
                        LossKind::kGnclMasked, LossKind::kAttributionDiv}) {
    ad::Graph g;
    std::vector<std::vector<Var>> params;
    for (const Model& m : p.members) params.push_back(m.bind(g, false));
    const LossBreakdown b = compute_loss(config(kind, lambda), g, p.members, params, p.x, p.y);
    double sum = 0.0;
    for (const Var& l : b.member_losses) sum += l.value().item();
    const double penalty = b.penalty.value().item();
    EXPECT_NEAR(penalty, lambda * b.diversity.value().item(), 1e-12);
    double expected = 0.0;
    switch (kind) {
      case LossKind::kIndependent: expected = sum / 3.0; break;
      case LossKind::kGncl:
      case LossKind::kGnclMasked: expected = sum - penalty; break;
      case LossKind::kBalanced:
        expected = lambda * b.ensemble_loss.value().item() + (1 - lambda) / 3.0 * sum;
        break;
      case LossKind::kAttributionDiv: expected = sum / 3.0 - penalty; break;
    }
    EXPECT_NEAR(b.total.value().item(), expected, 1e-12) << to_string(kind);
  }
}

TEST(Gradients, FirstOrderLossesMatchFiniteDifferences) {
  const Problem p = make_problem(3, 12);
  const std::vector<LossConfig> configs = {
      config(LossKind::kIndependent, 0.0),
      config(LossKind::kGncl, 0.4, Curvature::kMseIdentity),
      config(LossKind::kGncl, 0.4, Curvature::kCeSoftmaxHessian),
      config(LossKind::kGncl, 0.4, Curvature::kMseIdentity, ConsensusKind::kMedian),
      config(LossKind::kGncl, 0.4, Curvature::kCeSoftmaxHessian, ConsensusKind::kGeometricMean),
      config(LossKind::kGnclMasked, 0.4, Curvature::kCeSoftmaxHessian),
      config(LossKind::kBalanced, 0.5),
  };
  for (const LossConfig& c : configs) {
    EXPECT_LT(gradient_error(c, p), 1e-4)
        << to_string(c.kind) << " " << to_string(c.curvature) << " " << to_string(c.consensus);
  }
}

TEST(Gradients, AttributionDiversitySecondOrder) {
  const Problem p = make_problem(3, 13, {4});
  EXPECT_LT(gradient_error(config(LossKind::kAttributionDiv, 0.5), p), 1e-3);
}

TEST(Config, JsonRoundTripAndValidation) {
  const LossConfig c =
      config(LossKind::kGnclMasked, 0.2, Curvature::kMseIdentity, ConsensusKind::kMedian);
  const LossConfig back = nlohmann::json(c).get<LossConfig>();
  EXPECT_EQ(back.kind, c.kind);
  EXPECT_EQ(back.lambda, c.lambda);
  EXPECT_EQ(back.curvature, c.curvature);
  EXPECT_EQ(back.consensus, c.consensus);
  EXPECT_TRUE(throws_code([] { config(LossKind::kBalanced, 1.2).validate(); }, ErrorCode::kConfig));
  EXPECT_TRUE(throws_code(
      [] { config(LossKind::kGncl, 0.2, Curvature::kMseIdentity, ConsensusKind::kVote).validate(); },
      ErrorCode::kConfig));
}

}  // namespace
}  // namespace ensdiv
