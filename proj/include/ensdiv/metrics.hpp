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


// Ensemble diversity and analysis metrics.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensdiv/model.hpp"
#include "ensdiv/tensor.hpp"

namespace ensdiv {

/// Per-sample correctness of one classifier (1 = correct).
using Correctness = std::vector<std::uint8_t>;

Correctness correctness(std::span<const std::size_t> predictions,
                        std::span<const std::size_t> labels);
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Counts n_ab where a / b say whether the first / second classifier is
/// correct.
struct CorrectnessPair {
  std::size_t n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  std::size_t total() const { return n11 + n10 + n01 + n00; }
};

CorrectnessPair correctness_pair(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

double disagreement(const CorrectnessPair& p);
double disagreement(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
/// kUndefinedMetric when the denominator vanishes.
double q_statistic(const CorrectnessPair& p);
double rho(const CorrectnessPair& p);

/// Means over all M(M-1)/2 member pairs.
double mean_pairwise_disagreement(std::span<const Correctness> members);
double mean_pairwise_q(std::span<const Correctness> members);
double mean_pairwise_rho(std::span<const Correctness> members);

/// Shannon equitability of one sample's member predictions: entropy of the
/// predicted-class proportions divided by ln(observed classes); 0 when all
/// members agree.
double shannon_equitability(std::span<const std::size_t> member_predictions);

struct ShannonSplit {
  /// Mean equitability over samples the ensemble gets right / wrong;
  /// nullopt when that partition is empty.
  std::optional<double> correct;
  std::optional<double> incorrect;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
};

/// `predictions[i][r]` is member i's class for sample r (M >= 2).
ShannonSplit shannon_split(std::span<const std::vector<std::size_t>> predictions,
                           std::span<const std::uint8_t> ensemble_correct);

/// Biased HSIC of two n x n kernel matrices: tr(K H L H) / (n - 1)^2.
double hsic(const Tensor& k, const Tensor& l);
/// Linear CKA of two feature matrices with the same row count n >= 3.
/// kUndefinedMetric if either side has zero variance.
double cka(const Tensor& x, const Tensor& y);
/// Entry (i, j) = cka(layer i of a, layer j of b).
Tensor cka_map(const ActivationCapture& a, const ActivationCapture& b);

struct AttributionDiversity {
  std::vector<double> per_sample;
  double mean = 0.0;
};

/// `maps` is M x n x (features...). Per sample: sum over features of the
/// population variance across members.
AttributionDiversity attribution_diversity(const Tensor& maps);

/// Ensemble accuracy minus the best member accuracy.
double improvement(double ensemble_accuracy, std::span<const double> member_accuracies);

/// (x - min) / (max - min). All-equal input maps to 0.5 with a warning on
/// stderr.
std::vector<double> minmax_normalize(std::span<const double> values);

struct TrendReport {
  double r = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t n = 0;
};

/// Pearson r and least-squares line of y on x; n >= 3, both nonconstant.
TrendReport pearson_trend(std::span<const double> x, std::span<const double> y);

/// Offline prediction log: one row per sample with each member's class and
/// one or more consensus predictions.
///   sample_id,label,member_0,...,member_{M-1},consensus_<kind>,...
struct PredictionLog {
  std::vector<std::size_t> sample_ids;
  std::vector<std::size_t> labels;
  /// member_predictions[i][r]
  std::vector<std::vector<std::size_t>> member_predictions;
  std::vector<std::string> consensus_kinds;
  /// consensus_predictions[k][r]
  std::vector<std::vector<std::size_t>> consensus_predictions;

  std::size_t samples() const { return labels.size(); }
  std::size_t members() const { return member_predictions.size(); }
};

void write_prediction_log(const std::filesystem::path& path, const PredictionLog& log);
PredictionLog read_prediction_log(const std::filesystem::path& path);

struct MetricValue {
  std::string name;
  /// nullopt renders as an empty field (e.g. an empty Shannon partition).
  std::optional<double> value;
};

/// Accuracies, improvement per consensus kind, pairwise diversity and the
/// Shannon split (partitioned by the first consensus column, normally
/// "average"). `attribution_maps`, when given, adds attribution diversity.
std::vector<MetricValue> log_metrics(const PredictionLog& log,
                                     const Tensor* attribution_maps = nullptr);

}  // namespace ensdiv
