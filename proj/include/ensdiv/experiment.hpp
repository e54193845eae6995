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

// Experiment orchestration: configuration, joint training, ensemble
// enumeration, evaluation over clean/shifted/corrupted splits, reports.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensdiv/attribution.hpp"
#include "ensdiv/consensus.hpp"
#include "ensdiv/csv.hpp"
#include "ensdiv/data.hpp"
#include "ensdiv/losses.hpp"
#include "ensdiv/metrics.hpp"
#include "ensdiv/model.hpp"
#include "ensdiv/optim.hpp"
#include "json.hpp"

namespace ensdiv {

struct DataConfig {
  std::size_t train = 1600;
  std::size_t val = 400;
  std::size_t test = 400;
  std::size_t classes = 8;
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;

  InputShape input() const { return {channels, image_size, image_size}; }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;  // batch order
  DataConfig data;
  /// Models trained together by `train`; the model pool for enumeration.
  std::vector<ModelSpec> members;
  LossConfig loss;
  OptimConfig optimizer;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  /// Members per enumerated ensemble.
  std::size_t ensemble_size = 3;
  std::vector<CorruptionSpec> corruptions = reference_corruptions(0);
  std::vector<ConsensusKind> consensus = {ConsensusKind::kAverage, ConsensusKind::kVote};
  AttributionSpec attribution;
  /// Leading samples of each split used for attribution diversity.
  std::size_t attribution_samples = 100;
  std::filesystem::path output_dir = "ensdiv-out";

  /// kConfig on inconsistent settings (member shapes vs data, empty lists).
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Replaces every seed in the config: batch order and data use `seed`,
/// member i uses derive_seed(seed, i + 1), corruptions use `seed`.
void override_seed(ExperimentConfig& config, std::uint64_t seed);

/// Small configuration used by the demo pipeline and smoke tests.
ExperimentConfig demo_config();

struct Splits {
  Dataset train;
  Dataset val;
  /// clean test split, shifted ("v2") split, then one per corruption.
  std::vector<Dataset> eval;
};

Splits make_splits(const ExperimentConfig& config);

// ---- training --------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double penalty = 0.0;
  double diversity = 0.0;
  double ensemble_loss = 0.0;
  double val_ensemble_accuracy = 0.0;
  std::vector<double> val_member_accuracy;
};

struct TrainResult {
  std::vector<Model> final_members;
  std::vector<Model> best_members;
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  /// Set when a non-finite loss or gradient stopped training.
  std::optional<std::size_t> diverged_epoch;
  std::string divergence;
};

/// Trains config.members jointly under config.loss, one optimizer per
/// member. Validation accuracy uses the first consensus kind. Deterministic
/// for a fixed config.
TrainResult train_ensemble(const ExperimentConfig& config, const Dataset& train,
                           const Dataset& val, std::ostream* progress = nullptr);

/// Writes checkpoints/member_<i>.{final,best}.ckpt, train_log.csv and
/// train_summary.json under `dir`.
void save_training(const std::filesystem::path& dir, const TrainResult& result);
/// Reads checkpoints/member_<i>.<which>.ckpt for i = 0.. until one is missing.
std::vector<Model> load_members(const std::filesystem::path& dir, const std::string& which);

csv::Table training_table(const TrainResult& result);

// ---- enumeration and evaluation -------------------------------------------

/// All k-subsets of {0..n-1} in lexicographic order; kInvalidArgument when
/// k > n or k == 0.
std::vector<std::vector<std::size_t>> enumerate_ensembles(std::size_t n, std::size_t k);

/// "0-3-5"
std::string ensemble_id(std::span<const std::size_t> members);

struct EnsembleReportRow {
  std::string ensemble;
  std::vector<std::size_t> members;
  std::size_t parameters = 0;
  std::string split;
  std::string consensus;
  double ensemble_accuracy = 0.0;
  double top_member_accuracy = 0.0;
  double improvement = 0.0;
  double mean_member_accuracy = 0.0;
  std::optional<double> disagreement;
  std::optional<double> q_statistic;
  std::optional<double> rho;
  std::optional<double> shannon_correct;
  std::optional<double> shannon_incorrect;
  std::optional<double> attribution_diversity;
  /// Min-max normalized within the rows sharing (split, consensus).
  std::optional<double> disagreement_norm;
  std::optional<double> attribution_diversity_norm;
  std::optional<double> mean_member_accuracy_norm;
};

/// Per-split predictions and attribution maps of every pool model, computed
/// once and shared by all enumerated ensembles.
struct PoolEvaluation {
  std::vector<std::size_t> parameters;
  std::vector<std::string> splits;
  std::vector<std::vector<std::size_t>> labels;  // [split][sample]
  std::vector<std::vector<std::vector<std::size_t>>> predictions;  // [split][model][sample]
  std::vector<std::vector<Tensor>> logits;  // [split][model]
  std::vector<Tensor> attributions;  // [split]: pool x samples x C x H x W
};

PoolEvaluation evaluate_pool(std::span<const Model> pool, std::span<const Dataset> splits,
                             const AttributionSpec& attribution, std::size_t attribution_samples);

/// Prediction log of one ensemble on one split with a column per consensus.
PredictionLog ensemble_log(const PoolEvaluation& pool, std::size_t split,
                           std::span<const std::size_t> members,
                           std::span<const ConsensusKind> consensus, std::uint64_t vote_seed);

/// Report rows for every (ensemble, split, consensus), then normalization.
std::vector<EnsembleReportRow> evaluate_ensembles(
    const PoolEvaluation& pool, std::span<const std::vector<std::size_t>> ensembles,
    std::span<const ConsensusKind> consensus, std::uint64_t vote_seed,
    const std::filesystem::path* log_dir = nullptr);

/// Fills the *_norm fields per (split, consensus) group.
void normalize_rows(std::vector<EnsembleReportRow>& rows);

// ---- reports --------------------------------------------------------------

/// Column order of the ensemble report; stable across versions.
const std::vector<std::string>& report_columns();
csv::Table report_table(std::span<const EnsembleReportRow> rows);
std::vector<EnsembleReportRow> rows_from_table(const csv::Table& table);

/// Trend of improvement on each normalized metric (attribution diversity,
/// disagreement, mean member accuracy) per (split, consensus). Groups with
/// fewer than 3 usable rows or an undefined r get empty r/slope/intercept.
csv::Table trend_table(std::span<const EnsembleReportRow> rows);

/// Writes ensembles.csv, trends.csv and one gnuplot data file per
/// (metric, split, consensus) under `dir/plots`.
void write_report(const std::filesystem::path& dir, std::span<const EnsembleReportRow> rows);

// ---- attribution method comparison -----------------------------------------

struct AttribComparison {
  std::vector<std::string> methods;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  /// scores[m][p]: normalized attribution diversity of pair p under method m.
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<double>> raw_scores;
  /// Pearson correlation between methods over pairs.
  std::vector<std::vector<double>> correlation;
  /// Mean off-diagonal correlation; 1 for a single method.
  double mean_correlation = 1.0;
};

AttribComparison attrib_compare(std::span<const Model> pool, const Tensor& images,
                                std::span<const AttributionSpec> methods);
void write_attrib_comparison(const std::filesystem::path& dir, const AttribComparison& result);

// ---- demo pipeline ---------------------------------------------------------

struct DemoOutputs {
  TrainResult training;
  std::vector<EnsembleReportRow> rows;
  AttribComparison attribution;
};

/// Generates data, trains the pool, enumerates and evaluates every ensemble,
/// writes reports and the attribution comparison to config.output_dir.
DemoOutputs run_demo(const ExperimentConfig& config, std::ostream* progress = nullptr);

}  // namespace ensdiv
