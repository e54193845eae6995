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


#include "ensdiv/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ensdiv/error.hpp"
#include "ensdiv/kernels.hpp"
#include "ensdiv/rng.hpp"

namespace ensdiv {
namespace {

void check_members(std::span<const Shape> shapes) {
  if (shapes.empty()) fail(ErrorCode::kInvalidArgument, "consensus needs at least one member");
  const Shape& first = shapes.front();
  if (first.size() != 2) {
    fail(ErrorCode::kShapeMismatch, "member logits must be n x S, got " + shape_str(first));
  }
  for (const Shape& s : shapes) {
    if (s != first) {
      fail(ErrorCode::kShapeMismatch,
           "member logits disagree: " + shape_str(first) + " vs " + shape_str(s));
    }
  }
}

template <typename T, typename ShapeOf>
std::vector<Shape> shapes_of(std::span<const T> xs, ShapeOf shape_of) {
  std::vector<Shape> out;
  for (const T& x : xs) out.push_back(shape_of(x));
  return out;
}

/// Per-element member weights selecting the median (one member for odd M,
/// half of each middle member for even M). Ties order by member index.
std::vector<Tensor> median_weights(std::span<const Tensor> values) {
  const std::size_t m = values.size();
  const std::size_t numel = values.front().numel();
  std::vector<Tensor> weights(m, Tensor(values.front().shape()));
  std::vector<std::size_t> order(m);
  for (std::size_t e = 0; e < numel; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a][e] < values[b][e]; });
    if (m % 2 == 1) {
      weights[order[m / 2]][e] = 1.0;
    } else {
      weights[order[m / 2 - 1]][e] += 0.5;
      weights[order[m / 2]][e] += 0.5;
    }
  }
  return weights;
}

Tensor average(std::span<const Tensor> xs) {
  Tensor acc(xs.front().shape());
  for (const Tensor& x : xs) acc = kernels::binary(acc, x, kernels::BinaryOp::kAdd);
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (double& v : acc.data()) v *= inv;
  return acc;
}

Tensor geometric_mean(std::span<const Tensor> logits) {
  const Shape& shape = logits.front().shape();
  const double floor_log = std::log(kProbabilityFloor);
  Tensor log_mean(shape);
  for (const Tensor& x : logits) {
    const Tensor lp = kernels::log_softmax(x);
    for (std::size_t i = 0; i < lp.numel(); ++i) log_mean[i] += std::max(lp[i], floor_log);
  }
  const double inv = 1.0 / static_cast<double>(logits.size());
  const std::size_t n = shape[0], s = shape[1];
  Tensor out(shape);
  for (std::size_t r = 0; r < n; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < s; ++c) {
      out[r * s + c] = std::exp(log_mean[r * s + c] * inv);
      total += out[r * s + c];
    }
    for (std::size_t c = 0; c < s; ++c) out[r * s + c] /= total;
  }
  return out;
}

}  // namespace

std::string to_string(ConsensusKind kind) {
  switch (kind) {
    case ConsensusKind::kAverage: return "average";
    case ConsensusKind::kMedian: return "median";
    case ConsensusKind::kGeometricMean: return "geometric-mean";
    case ConsensusKind::kVote: return "vote";
  }
  return "unknown";
}

ConsensusKind consensus_from_string(const std::string& s) {
  for (ConsensusKind k : {ConsensusKind::kAverage, ConsensusKind::kMedian,
                          ConsensusKind::kGeometricMean, ConsensusKind::kVote}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::kInvalidArgument, "unknown consensus kind '" + s + "'");
}

ConsensusResult combine(std::span<const Tensor> member_logits, ConsensusKind kind,
                        std::uint64_t seed) {
  check_members(shapes_of(member_logits, [](const Tensor& t) { return t.shape(); }));
  ConsensusResult out;
  switch (kind) {
    case ConsensusKind::kAverage:
      out.scores = average(member_logits);
      break;
    case ConsensusKind::kMedian: {
      const auto weights = median_weights(member_logits);
      out.scores = Tensor(member_logits.front().shape());
      for (std::size_t i = 0; i < member_logits.size(); ++i) {
        for (std::size_t e = 0; e < out.scores.numel(); ++e) {
          out.scores[e] += weights[i][e] * member_logits[i][e];
        }
      }
      break;
    }
    case ConsensusKind::kGeometricMean:
      out.scores = geometric_mean(member_logits);
      break;
    case ConsensusKind::kVote: {
      const std::size_t n = member_logits.front().dim(0), s = member_logits.front().dim(1);
      out.scores = Tensor(member_logits.front().shape());
      for (const Tensor& x : member_logits) {
        const auto pred = kernels::argmax_rows(x);
        for (std::size_t r = 0; r < n; ++r) out.scores[r * s + pred[r]] += 1.0;
      }
      out.predictions.resize(n);
      std::vector<std::size_t> tied;
      for (std::size_t r = 0; r < n; ++r) {
        const auto row = out.scores.data().subspan(r * s, s);
        const double best = *std::max_element(row.begin(), row.end());
        tied.clear();
        for (std::size_t c = 0; c < s; ++c) {
          if (row[c] == best) tied.push_back(c);
        }
        if (tied.size() == 1) {
          out.predictions[r] = tied.front();
        } else {
          Rng rng = make_rng(seed, r);
          std::uniform_int_distribution<std::size_t> pick(0, tied.size() - 1);
          out.predictions[r] = tied[pick(rng)];
        }
      }
      return out;
    }
  }
  out.predictions = kernels::argmax_rows(out.scores);
  return out;
}

ad::Var consensus_logits(std::span<const ad::Var> member_logits, ConsensusKind kind) {
  check_members(shapes_of(member_logits, [](const ad::Var& v) { return v.shape(); }));
  const double inv = 1.0 / static_cast<double>(member_logits.size());
  switch (kind) {
    case ConsensusKind::kAverage: {
      ad::Var acc = member_logits.front();
      for (std::size_t i = 1; i < member_logits.size(); ++i) acc = acc + member_logits[i];
      return acc * inv;
    }
    case ConsensusKind::kMedian: {
      std::vector<Tensor> values;
      for (const ad::Var& v : member_logits) values.push_back(v.value());
      const auto weights = median_weights(values);
      ad::Var acc = member_logits.front() * ad::Var(weights.front());
      for (std::size_t i = 1; i < member_logits.size(); ++i) {
        acc = acc + member_logits[i] * ad::Var(weights[i]);
      }
      return acc;
    }
    case ConsensusKind::kGeometricMean: {
      // Mean of floored log-probabilities; floored entries become constants.
      const double floor_log = std::log(kProbabilityFloor);
      ad::Var acc;
      for (std::size_t i = 0; i < member_logits.size(); ++i) {
        ad::Var lp = ad::log_softmax(member_logits[i]);
        Tensor keep(lp.shape()), fill(lp.shape());
        for (std::size_t e = 0; e < keep.numel(); ++e) {
          const bool above = lp.value()[e] >= floor_log;
          keep[e] = above ? 1.0 : 0.0;
          fill[e] = above ? 0.0 : floor_log;
        }
        lp = lp * ad::Var(keep) + ad::Var(fill);
        acc = i == 0 ? lp : acc + lp;
      }
      // log of the renormalized geometric mean is log_softmax of the mean.
      return ad::log_softmax(acc * inv);
    }
    case ConsensusKind::kVote:
      break;
  }
  fail(ErrorCode::kConfig, "vote consensus cannot be used inside a differentiable loss");
}

}  // namespace ensdiv
