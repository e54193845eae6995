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


// Ensemble training losses. Every loss returns a LossBreakdown whose parts
// recompose into `total`:
//
//   independent      total = mean_i l_i            objective = sum_i l_i
//   gncl             total = sum_i l_i - penalty
//   gncl-masked      as gncl, penalty terms of misclassified rows dropped
//   balanced         total = lambda l(f) + (1 - lambda) / M sum_i l_i
//   attribution-div  total = mean_i l_i - penalty
//
// with penalty = lambda * diversity. l is mean cross-entropy over the batch.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "ensdiv/autodiff.hpp"
#include "ensdiv/consensus.hpp"
#include "ensdiv/model.hpp"
#include "json.hpp"

namespace ensdiv {

enum class LossKind { kIndependent, kGncl, kBalanced, kGnclMasked, kAttributionDiv };

/// Curvature used in the negative-correlation penalty d^T D d.
///   mse-identity:       D = 2I, d over logits.
///   ce-softmax-hessian: D = diag(p) - p p^T at the consensus probabilities
///                       p, d over member probabilities.
enum class Curvature { kMseIdentity, kCeSoftmaxHessian };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& s);
std::string to_string(Curvature c);
Curvature curvature_from_string(const std::string& s);

struct LossConfig {
  LossKind kind = LossKind::kIndependent;
  double lambda = 0.2;
  ConsensusKind consensus = ConsensusKind::kAverage;
  Curvature curvature = Curvature::kCeSoftmaxHessian;

  /// kConfig on a negative lambda, lambda > 1 for balanced, or vote
  /// consensus for a loss that differentiates through the consensus.
  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

struct LossBreakdown {
  /// Reported loss value.
  ad::Var total;
  /// What the optimizer minimizes. Equals `total` except for the
  /// independent loss, where it is the member sum so that per-member
  /// gradients match gncl at lambda = 0 exactly.
  ad::Var objective;
  std::vector<ad::Var> member_losses;
  /// lambda * diversity; zero for losses without an explicit penalty.
  ad::Var penalty;
  /// Unweighted diversity term (gncl: sum_i mean_n d_i^T D d_i / 2M;
  /// attribution-div: mean per-sample attribution variance).
  ad::Var diversity;
  /// l(f, y) for the consensus f.
  ad::Var ensemble_loss;
};

/// Mean cross-entropy of n x S logits against labels in [0, S).
ad::Var cross_entropy(const ad::Var& logits, std::span<const std::size_t> labels);

LossBreakdown loss_independent(std::span<const ad::Var> member_logits,
                               std::span<const std::size_t> labels);

/// The penalty's diversity term only. `row_mask`, when given, holds M x n
/// entries in {0, 1} multiplying each member's per-row quadratic form.
ad::Var gncl_diversity(std::span<const ad::Var> member_logits, Curvature curvature,
                       ConsensusKind consensus, const Tensor* row_mask = nullptr);

LossBreakdown loss_gncl(std::span<const ad::Var> member_logits,
                        std::span<const std::size_t> labels, double lambda,
                        Curvature curvature, ConsensusKind consensus = ConsensusKind::kAverage);

/// gncl with each member's penalty rows dropped where its argmax != label.
LossBreakdown loss_gncl_masked(std::span<const ad::Var> member_logits,
                               std::span<const std::size_t> labels, double lambda,
                               Curvature curvature,
                               ConsensusKind consensus = ConsensusKind::kAverage);

LossBreakdown loss_balanced(std::span<const ad::Var> member_logits,
                            std::span<const std::size_t> labels, double lambda,
                            ConsensusKind consensus = ConsensusKind::kAverage);

/// Saliency maps |d logit[pred_i] / dx| of every member are recorded with
/// create_graph, so the returned loss can be differentiated w.r.t. the
/// parameters. Throws kNonFinite when the diversity term is not finite.
LossBreakdown loss_attribution_div(ad::Graph& graph, std::span<const Model> members,
                                   std::span<const std::vector<ad::Var>> params,
                                   const Tensor& batch, std::span<const std::size_t> labels,
                                   double lambda);

/// Dispatches on config.kind. `params[i]` are member i's bound parameters.
LossBreakdown compute_loss(const LossConfig& config, ad::Graph& graph,
                           std::span<const Model> members,
                           std::span<const std::vector<ad::Var>> params, const Tensor& batch,
                           std::span<const std::size_t> labels);

}  // namespace ensdiv
