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


// Combining member outputs into one ensemble prediction.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensdiv/autodiff.hpp"
#include "ensdiv/tensor.hpp"

namespace ensdiv {

enum class ConsensusKind { kAverage, kMedian, kGeometricMean, kVote };

std::string to_string(ConsensusKind kind);
/// Accepts "average", "median", "geometric-mean" and "vote".
ConsensusKind consensus_from_string(const std::string& s);

/// Probability floor applied before taking logs in the geometric mean.
inline constexpr double kProbabilityFloor = 1e-12;

struct ConsensusResult {
  /// n x S. Mean or median logits, renormalized geometric-mean
  /// probabilities, or vote counts depending on the kind.
  Tensor scores;
  std::vector<std::size_t> predictions;
};

/// `member_logits` holds M tensors of shape n x S. Score ties resolve to
/// the lowest class; vote ties are drawn uniformly with a generator keyed by
/// (seed, sample index), so member order never matters.
ConsensusResult combine(std::span<const Tensor> member_logits, ConsensusKind kind,
                        std::uint64_t seed = 0);

/// Differentiable consensus used inside training losses, returned in logit
/// space: mean or median logits, or the log of the renormalized geometric
/// mean of probabilities. Voting has no useful gradient and throws kConfig.
ad::Var consensus_logits(std::span<const ad::Var> member_logits, ConsensusKind kind);

}  // namespace ensdiv
