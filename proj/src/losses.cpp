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

#include <cmath>

#include "ensdiv/error.hpp"
#include "ensdiv/kernels.hpp"

namespace ensdiv {
namespace {

using ad::Var;

constexpr LossKind kAllKinds[] = {LossKind::kIndependent, LossKind::kGncl, LossKind::kBalanced,
                                  LossKind::kGnclMasked, LossKind::kAttributionDiv};

Var fold_sum(std::span<const Var> xs) {
  Var acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
  return acc;
}

Var zero() { return Var(Tensor::scalar(0.0)); }

std::vector<Var> member_losses(std::span<const Var> logits, std::span<const std::size_t> labels) {
  std::vector<Var> out;
  for (const Var& h : logits) out.push_back(cross_entropy(h, labels));
  return out;
}

void require_members(std::size_t m, std::size_t min, const char* what) {
  if (m < min) {
    fail(ErrorCode::kInvalidArgument,
         std::string(what) + " needs at least " + std::to_string(min) + " members");
  }
}

void require_nonnegative(double lambda, const char* what) {
  if (!(lambda >= 0.0)) {
    fail(ErrorCode::kInvalidArgument, std::string(what) + ": lambda must be >= 0");
  }
}

Tensor one_hot(std::span<const std::size_t> classes, std::size_t s) {
  Tensor t({classes.size(), s});
  for (std::size_t r = 0; r < classes.size(); ++r) t[r * s + classes[r]] = 1.0;
  return t;
}

LossBreakdown gncl_like(std::span<const Var> logits, std::span<const std::size_t> labels,
                        double lambda, Curvature curvature, ConsensusKind consensus,
                        const Tensor* mask) {
  require_members(logits.size(), 2, "gncl");
  require_nonnegative(lambda, "gncl");
  LossBreakdown out;
  out.member_losses = member_losses(logits, labels);
  out.diversity = gncl_diversity(logits, curvature, consensus, mask);
  out.penalty = out.diversity * lambda;
  out.total = fold_sum(out.member_losses) - out.penalty;
  out.objective = out.total;
  out.ensemble_loss = cross_entropy(consensus_logits(logits, consensus), labels);
  return out;
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kIndependent: return "independent";
    case LossKind::kGncl: return "gncl";
    case LossKind::kBalanced: return "balanced";
    case LossKind::kGnclMasked: return "gncl-masked";
    case LossKind::kAttributionDiv: return "attribution-div";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& s) {
  for (LossKind k : kAllKinds) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::kConfig, "unknown loss kind '" + s + "'");
}

std::string to_string(Curvature c) {
  return c == Curvature::kMseIdentity ? "mse-identity" : "ce-softmax-hessian";
}

Curvature curvature_from_string(const std::string& s) {
  if (s == "mse-identity") return Curvature::kMseIdentity;
  if (s == "ce-softmax-hessian") return Curvature::kCeSoftmaxHessian;
  fail(ErrorCode::kConfig, "unknown curvature mode '" + s + "'");
}

void LossConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0.0) fail(ErrorCode::kConfig, "lambda must be >= 0");
  if (kind == LossKind::kBalanced && lambda > 1.0) {
    fail(ErrorCode::kConfig, "balanced loss needs lambda in [0, 1]");
  }
  const bool uses_consensus = kind == LossKind::kGncl || kind == LossKind::kGnclMasked ||
                              kind == LossKind::kBalanced;
  if (uses_consensus && consensus == ConsensusKind::kVote) {
    fail(ErrorCode::kConfig, "vote consensus is not differentiable; pick another for " +
                                 to_string(kind));
  }
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},
                     {"lambda", c.lambda},
                     {"consensus", to_string(c.consensus)},
                     {"curvature", to_string(c.curvature)}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  c = LossConfig{};
  if (j.contains("kind")) c.kind = loss_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.contains("consensus")) {
    try {
      c.consensus = consensus_from_string(j.at("consensus").get<std::string>());
    } catch (const Error& e) {
      fail(ErrorCode::kConfig, e.what());
    }
  }
  if (j.contains("curvature")) {
    c.curvature = curvature_from_string(j.at("curvature").get<std::string>());
  }
  c.validate();
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  if (logits.shape().size() != 2 || logits.shape()[0] != labels.size()) {
    fail(ErrorCode::kShapeMismatch, "cross-entropy: logits " + shape_str(logits.shape()) +
                                        " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t s = logits.shape()[1];
  for (std::size_t y : labels) {
    if (y >= s) {
      fail(ErrorCode::kInvalidArgument, "label " + std::to_string(y) + " out of range for " +
                                            std::to_string(s) + " classes");
    }
  }
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  return -(ad::sum(ad::log_softmax(logits) * Var(one_hot(labels, s))) * inv_n);
}

LossBreakdown loss_independent(std::span<const Var> member_logits,
                               std::span<const std::size_t> labels) {
  require_members(member_logits.size(), 1, "independent loss");
  LossBreakdown out;
  out.member_losses = member_losses(member_logits, labels);
  out.objective = fold_sum(out.member_losses);
  out.total = out.objective * (1.0 / static_cast<double>(member_logits.size()));
  out.penalty = zero();
  out.diversity = zero();
  out.ensemble_loss =
      cross_entropy(consensus_logits(member_logits, ConsensusKind::kAverage), labels);
  return out;
}

Var gncl_diversity(std::span<const Var> member_logits, Curvature curvature,
                   ConsensusKind consensus, const Tensor* row_mask) {
  const std::size_t m = member_logits.size();
  require_members(m, 2, "gncl");
  const Var f = consensus_logits(member_logits, consensus);
  const std::size_t n = f.shape()[0];
  if (row_mask != nullptr && row_mask->shape() != Shape{m, n}) {
    fail(ErrorCode::kShapeMismatch, "gncl mask " + shape_str(row_mask->shape()) +
                                        " for " + std::to_string(m) + " members x " +
                                        std::to_string(n) + " rows");
  }
  const Var f_prob = curvature == Curvature::kCeSoftmaxHessian ? ad::softmax(f) : Var();
  std::vector<Var> terms;
  for (std::size_t i = 0; i < m; ++i) {
    Var q;
    if (curvature == Curvature::kMseIdentity) {
      // The geometric-mean consensus lives in log-probability space.
      const Var h = consensus == ConsensusKind::kGeometricMean
                        ? ad::log_softmax(member_logits[i])
                        : member_logits[i];
      q = ad::sum(ad::square(h - f), 1) * 2.0;
    } else {
      const Var d = ad::softmax(member_logits[i]) - f_prob;
      q = ad::sum(f_prob * ad::square(d), 1) - ad::square(ad::sum(f_prob * d, 1));
    }
    if (row_mask != nullptr) q = q * Var(kernels::slice(*row_mask, 0, i, i + 1).reshaped({n}));
    terms.push_back(ad::mean(q));
  }
  return fold_sum(terms) * (1.0 / (2.0 * static_cast<double>(m)));
}

LossBreakdown loss_gncl(std::span<const Var> member_logits, std::span<const std::size_t> labels,
                        double lambda, Curvature curvature, ConsensusKind consensus) {
  return gncl_like(member_logits, labels, lambda, curvature, consensus, nullptr);
}

LossBreakdown loss_gncl_masked(std::span<const Var> member_logits,
                               std::span<const std::size_t> labels, double lambda,
                               Curvature curvature, ConsensusKind consensus) {
  const std::size_t m = member_logits.size();
  const std::size_t n = labels.size();
  Tensor mask({std::max<std::size_t>(m, 1), std::max<std::size_t>(n, 1)});
  for (std::size_t i = 0; i < m; ++i) {
    const auto pred = kernels::argmax_rows(member_logits[i].value());
    if (pred.size() != n) {
      fail(ErrorCode::kShapeMismatch, "masked gncl: logits rows do not match labels");
    }
    for (std::size_t r = 0; r < n; ++r) mask[i * n + r] = pred[r] == labels[r] ? 1.0 : 0.0;
  }
  return gncl_like(member_logits, labels, lambda, curvature, consensus, &mask);
}

LossBreakdown loss_balanced(std::span<const Var> member_logits,
                            std::span<const std::size_t> labels, double lambda,
                            ConsensusKind consensus) {
  require_members(member_logits.size(), 2, "balanced loss");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "balanced loss: lambda must lie in [0, 1]");
  }
  const double m = static_cast<double>(member_logits.size());
  LossBreakdown out;
  out.member_losses = member_losses(member_logits, labels);
  out.ensemble_loss = cross_entropy(consensus_logits(member_logits, consensus), labels);
  out.total = out.ensemble_loss * lambda + fold_sum(out.member_losses) * ((1.0 - lambda) / m);
  out.objective = out.total;
  out.penalty = zero();
  out.diversity = zero();
  return out;
}

LossBreakdown loss_attribution_div(ad::Graph& graph, std::span<const Model> members,
                                   std::span<const std::vector<Var>> params, const Tensor& batch,
                                   std::span<const std::size_t> labels, double lambda) {
  require_members(members.size(), 2, "attribution-diversity loss");
  require_nonnegative(lambda, "attribution-diversity loss");
  if (params.size() != members.size()) {
    fail(ErrorCode::kShapeMismatch, "attribution-diversity loss: one parameter set per member");
  }
  const Var x = graph.leaf(batch);
  const std::size_t n = batch.dim(0);
  std::vector<Var> logits, maps;
  for (std::size_t i = 0; i < members.size(); ++i) {
    logits.push_back(members[i].forward(params[i], x));
    const auto pred = kernels::argmax_rows(logits.back().value());
    // Rows are independent, so the input gradient of the summed target
    // logits holds every row's own saliency.
    const Var target = ad::sum(logits.back() * Var(one_hot(pred, logits.back().shape()[1])));
    const Var wrt[] = {x};
    maps.push_back(ad::abs(graph.grad(target, wrt, {.create_graph = true}).front()));
  }
  LossBreakdown out;
  out.member_losses = member_losses(logits, labels);
  out.diversity = ad::sum(ad::variance_leading(ad::stack(maps))) * (1.0 / static_cast<double>(n));
  if (!std::isfinite(out.diversity.value().item())) {
    fail(ErrorCode::kNonFinite, "attribution diversity is not finite");
  }
  out.penalty = out.diversity * lambda;
  out.total =
      fold_sum(out.member_losses) * (1.0 / static_cast<double>(members.size())) - out.penalty;
  out.objective = out.total;
  out.ensemble_loss = cross_entropy(consensus_logits(logits, ConsensusKind::kAverage), labels);
  return out;
}

LossBreakdown compute_loss(const LossConfig& config, ad::Graph& graph,
                           std::span<const Model> members,
                           std::span<const std::vector<Var>> params, const Tensor& batch,
                           std::span<const std::size_t> labels) {
  config.validate();
  if (config.kind == LossKind::kAttributionDiv) {
    return loss_attribution_div(graph, members, params, batch, labels, config.lambda);
  }
  if (params.size() != members.size()) {
    fail(ErrorCode::kShapeMismatch, "compute_loss: one parameter set per member");
  }
  const Var x(batch);
  std::vector<Var> logits;
  for (std::size_t i = 0; i < members.size(); ++i) {
    logits.push_back(members[i].forward(params[i], x));
  }
  switch (config.kind) {
    case LossKind::kIndependent: return loss_independent(logits, labels);
    case LossKind::kGncl:
      return loss_gncl(logits, labels, config.lambda, config.curvature, config.consensus);
    case LossKind::kGnclMasked:
      return loss_gncl_masked(logits, labels, config.lambda, config.curvature, config.consensus);
    case LossKind::kBalanced: return loss_balanced(logits, labels, config.lambda, config.consensus);
    case LossKind::kAttributionDiv: break;
  }
  fail(ErrorCode::kConfig, "unhandled loss kind");
}

}  // namespace ensdiv
