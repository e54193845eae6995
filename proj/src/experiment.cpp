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

#include "ensdiv/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include "ensdiv/error.hpp"
#include "ensdiv/kernels.hpp"
#include "ensdiv/rng.hpp"
#include "ensdiv/tensor_io.hpp"

namespace ensdiv {
namespace {

namespace fs = std::filesystem;

std::string fmt(double v) { return csv::format_number(v); }
std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

Tensor gather_rows(const Tensor& images, std::span<const std::size_t> rows) {
  Shape shape = images.shape();
  const std::size_t stride = images.numel() / shape[0];
  shape[0] = rows.size();
  Tensor out(shape);
  auto dst = out.data();
  const auto src = images.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[r] * stride), stride,
                dst.begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return out;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

ConsensusKind validation_consensus(const ExperimentConfig& c) {
  return c.consensus.empty() ? ConsensusKind::kAverage : c.consensus.front();
}

std::vector<std::size_t> predictions_of(const std::vector<Tensor>& logits, ConsensusKind kind,
                                        std::uint64_t seed) {
  return combine(logits, kind, seed).predictions;
}

}  // namespace

// ---- configuration ---------------------------------------------------------

void ExperimentConfig::validate() const {
  if (members.empty()) fail(ErrorCode::kConfig, "config lists no member models");
  if (data.train == 0 || data.val == 0 || data.test == 0) {
    fail(ErrorCode::kConfig, "train, val and test sizes must be >= 1");
  }
  for (std::size_t i = 0; i < members.size(); ++i) {
    members[i].validate();
    if (members[i].input != data.input() || members[i].classes != data.classes) {
      fail(ErrorCode::kConfig, "member " + std::to_string(i) + " (" + members[i].label() +
                                   ") does not match the data shape or class count");
    }
  }
  loss.validate();
  optimizer.validate();
  if (epochs == 0) fail(ErrorCode::kConfig, "epochs must be >= 1");
  if (batch_size == 0) fail(ErrorCode::kConfig, "batch size must be >= 1");
  if (ensemble_size == 0 || ensemble_size > members.size()) {
    fail(ErrorCode::kConfig, "ensemble size must lie in [1, number of members]");
  }
  if (consensus.empty()) fail(ErrorCode::kConfig, "at least one consensus kind is required");
  if (attribution_samples == 0) fail(ErrorCode::kConfig, "attribution samples must be >= 1");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json members = nlohmann::json::array();
  for (const ModelSpec& m : c.members) members.push_back(m);
  nlohmann::json corruptions = nlohmann::json::array();
  for (const CorruptionSpec& s : c.corruptions) corruptions.push_back(s.str());
  nlohmann::json consensus = nlohmann::json::array();
  for (ConsensusKind k : c.consensus) consensus.push_back(to_string(k));
  j = nlohmann::json{
      {"seed", c.seed},
      {"data",
       {{"train", c.data.train},
        {"val", c.data.val},
        {"test", c.data.test},
        {"classes", c.data.classes},
        {"channels", c.data.channels},
        {"image_size", c.data.image_size},
        {"seed", c.data.seed}}},
      {"members", members},
      {"loss", c.loss},
      {"optimizer", c.optimizer},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"ensemble_size", c.ensemble_size},
      {"corruptions", corruptions},
      {"consensus", consensus},
      {"attribution", c.attribution.tag()},
      {"attribution_samples", c.attribution_samples},
      {"output_dir", c.output_dir.generic_string()}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (d.contains("train")) c.data.train = d.at("train").get<std::size_t>();
      if (d.contains("val")) c.data.val = d.at("val").get<std::size_t>();
      if (d.contains("test")) c.data.test = d.at("test").get<std::size_t>();
      if (d.contains("classes")) c.data.classes = d.at("classes").get<std::size_t>();
      if (d.contains("channels")) c.data.channels = d.at("channels").get<std::size_t>();
      if (d.contains("image_size")) c.data.image_size = d.at("image_size").get<std::size_t>();
      if (d.contains("seed")) c.data.seed = d.at("seed").get<std::uint64_t>();
    }
    c.members.clear();
    for (const auto& m : j.at("members")) {
      ModelSpec spec = m.get<ModelSpec>();
      // Input shape and class count default to the data settings.
      if (!m.contains("input")) spec.input = c.data.input();
      if (!m.contains("classes")) spec.classes = c.data.classes;
      c.members.push_back(spec);
    }
    if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
    if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<OptimConfig>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("ensemble_size")) c.ensemble_size = j.at("ensemble_size").get<std::size_t>();
    if (j.contains("corruptions")) {
      c.corruptions.clear();
      for (const auto& s : j.at("corruptions")) {
        c.corruptions.push_back(parse_corruption(s.get<std::string>()));
      }
    }
    if (j.contains("consensus")) {
      c.consensus.clear();
      for (const auto& s : j.at("consensus")) {
        c.consensus.push_back(consensus_from_string(s.get<std::string>()));
      }
    }
    if (j.contains("attribution")) {
      c.attribution = attribution_from_tag(j.at("attribution").get<std::string>());
    }
    if (j.contains("attribution_samples")) {
      c.attribution_samples = j.at("attribution_samples").get<std::size_t>();
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("experiment config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    fail(ErrorCode::kConfig, std::string("experiment config: ") + e.what());
  }
  c.validate();
}

ExperimentConfig load_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return j.get<ExperimentConfig>();
}

void save_config(const fs::path& path, const ExperimentConfig& config) {
  io::write_file(path, nlohmann::json(config).dump(2) + "\n");
}

void override_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.data.seed = seed;
  for (std::size_t i = 0; i < config.members.size(); ++i) {
    config.members[i].seed = derive_seed(seed, i + 1);
  }
  for (CorruptionSpec& s : config.corruptions) s.seed = seed;
}

ExperimentConfig demo_config() {
  ExperimentConfig c;
  c.data.train = 2400;
  c.data.val = 400;
  c.data.test = 400;
  c.data.image_size = 16;
  const InputShape input = c.data.input();
  const std::vector<std::vector<std::size_t>> widths = {{48}, {64}, {96}, {64, 32}, {32}, {80}};
  for (std::size_t i = 0; i < widths.size(); ++i) {
    ModelSpec m;
    m.kind = ModelKind::kMlp;
    m.hidden = widths[i];
    m.input = input;
    m.classes = c.data.classes;
    m.seed = i + 1;
    c.members.push_back(m);
  }
  c.loss.kind = LossKind::kIndependent;
  c.optimizer.lr = 2e-3;
  c.epochs = 15;
  c.batch_size = 32;
  c.output_dir = "ensdiv-demo";
  return c;
}

Splits make_splits(const ExperimentConfig& config) {
  const DataConfig& d = config.data;
  auto options = [&](std::size_t n, std::uint64_t stream, const std::string& split) {
    ShapesOptions o;
    o.n = n;
    o.classes = d.classes;
    o.channels = d.channels;
    o.size = d.image_size;
    o.seed = stream == 0 ? d.seed : derive_seed(d.seed, stream);
    o.split = split;
    return o;
  };
  Splits s;
  s.train = gen_shapes(options(d.train, 0, "train"));
  s.val = gen_shapes(options(d.val, 1, "val"));
  Dataset clean = gen_shapes(options(d.test, 2, "clean"));
  ShapesOptions shifted = options(d.test, 3, "shifted");
  shifted.shifted = true;
  s.eval.push_back(clean);
  s.eval.push_back(gen_shapes(shifted));
  for (const CorruptionSpec& spec : config.corruptions) {
    Dataset c = corrupt(clean, spec);
    c.split = spec.label();
    s.eval.push_back(std::move(c));
  }
  return s;
}

// ---- training --------------------------------------------------------------

TrainResult train_ensemble(const ExperimentConfig& config, const Dataset& train,
                           const Dataset& val, std::ostream* progress) {
  config.validate();
  if (train.images.shape() != config.data.input().batch_shape(train.size()) ||
      val.images.shape() != config.data.input().batch_shape(val.size())) {
    fail(ErrorCode::kShapeMismatch, "datasets do not match the configured input shape");
  }
  const std::size_t members = config.members.size();
  TrainResult result;
  std::vector<Model> models;
  std::vector<Optimizer> optimizers;
  for (const ModelSpec& spec : config.members) {
    models.push_back(Model::build(spec));
    optimizers.emplace_back(config.optimizer, models.back().parameters());
  }
  double best_accuracy = -1.0;
  result.best_members = models;
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < config.epochs && !result.diverged_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(config.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at_epoch(config.optimizer, epoch);
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::span<const std::size_t> rows(order.data() + b,
                                              std::min(config.batch_size, order.size() - b));
      const Tensor batch = gather_rows(train.images, rows);
      std::vector<std::size_t> labels;
      for (std::size_t r : rows) labels.push_back(train.labels[r]);
      try {
        ad::Graph graph;
        std::vector<std::vector<ad::Var>> params;
        for (const Model& m : models) params.push_back(m.bind(graph));
        const LossBreakdown loss = compute_loss(config.loss, graph, models, params, batch, labels);
        const double objective = loss.objective.value().item();
        if (!std::isfinite(objective)) {
          fail(ErrorCode::kNonFinite, "non-finite loss " + fmt(objective));
        }
        const ad::Gradients grads = graph.backward(loss.objective);
        // Check every member before stepping any, so a failure leaves the
        // ensemble in a consistent state.
        std::vector<std::vector<Tensor>> member_grads(members);
        for (std::size_t i = 0; i < members; ++i) {
          for (const ad::Var& p : params[i]) {
            member_grads[i].push_back(grads[p]);
            if (!member_grads[i].back().all_finite()) {
              fail(ErrorCode::kNonFinite, "non-finite gradient in member " + std::to_string(i));
            }
          }
        }
        for (std::size_t i = 0; i < members; ++i) {
          optimizers[i].step(models[i].parameters(), member_grads[i], lr);
        }
        const double weight = static_cast<double>(rows.size());
        record.loss += weight * loss.total.value().item();
        record.penalty += weight * loss.penalty.value().item();
        record.diversity += weight * loss.diversity.value().item();
        record.ensemble_loss += weight * loss.ensemble_loss.value().item();
        seen += rows.size();
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        result.diverged_epoch = epoch;
        result.divergence = e.what();
        break;
      }
    }
    if (result.diverged_epoch) {
      if (progress != nullptr) {
        *progress << "epoch " << epoch << ": diverged (" << result.divergence << ")\n";
      }
      break;
    }
    const double n = static_cast<double>(seen);
    record.loss /= n;
    record.penalty /= n;
    record.diversity /= n;
    record.ensemble_loss /= n;
    std::vector<Tensor> logits;
    for (const Model& m : models) {
      logits.push_back(predict_logits(m, val.images));
      record.val_member_accuracy.push_back(accuracy(kernels::argmax_rows(logits.back()), val.labels));
    }
    record.val_ensemble_accuracy =
        accuracy(predictions_of(logits, validation_consensus(config), config.seed), val.labels);
    if (record.val_ensemble_accuracy > best_accuracy) {
      best_accuracy = record.val_ensemble_accuracy;
      result.best_epoch = epoch;
      result.best_members = models;
    }
    if (progress != nullptr) {
      *progress << "epoch " << epoch << ": loss " << fmt(record.loss) << " val_ensemble_acc "
                << fmt(record.val_ensemble_accuracy) << "\n";
    }
    result.log.push_back(std::move(record));
  }
  result.final_members = std::move(models);
  return result;
}

csv::Table training_table(const TrainResult& result) {
  csv::Table t;
  t.header = {"epoch", "lr", "loss", "penalty", "diversity", "ensemble_loss",
              "val_ensemble_accuracy"};
  const std::size_t members = result.final_members.size();
  for (std::size_t i = 0; i < members; ++i) {
    t.header.push_back("val_member_" + std::to_string(i) + "_accuracy");
  }
  for (const EpochRecord& r : result.log) {
    std::vector<std::string> row = {std::to_string(r.epoch), fmt(r.lr),        fmt(r.loss),
                                    fmt(r.penalty),          fmt(r.diversity), fmt(r.ensemble_loss),
                                    fmt(r.val_ensemble_accuracy)};
    for (double a : r.val_member_accuracy) row.push_back(fmt(a));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void save_training(const fs::path& dir, const TrainResult& result) {
  fs::create_directories(dir / "checkpoints");
  for (std::size_t i = 0; i < result.final_members.size(); ++i) {
    const std::string stem = "member_" + std::to_string(i);
    save_checkpoint(result.final_members[i], dir / "checkpoints" / (stem + ".final.ckpt"));
    save_checkpoint(result.best_members[i], dir / "checkpoints" / (stem + ".best.ckpt"));
  }
  csv::write(dir / "train_log.csv", training_table(result));
  nlohmann::json summary = {{"status", result.diverged_epoch ? "diverged" : "completed"},
                            {"epochs_completed", result.log.size()},
                            {"best_epoch", result.best_epoch}};
  if (result.diverged_epoch) {
    summary["diverged_epoch"] = *result.diverged_epoch;
    summary["divergence"] = result.divergence;
  }
  io::write_file(dir / "train_summary.json", summary.dump(2) + "\n");
}

std::vector<Model> load_members(const fs::path& dir, const std::string& which) {
  std::vector<Model> out;
  for (std::size_t i = 0;; ++i) {
    const fs::path path = dir / "checkpoints" / ("member_" + std::to_string(i) + "." + which + ".ckpt");
    if (!fs::exists(path)) break;
    out.push_back(load_checkpoint(path));
  }
  if (out.empty()) {
    fail(ErrorCode::kNotFound, "no " + which + " checkpoints under " + (dir / "checkpoints").string());
  }
  return out;
}

// ---- enumeration and evaluation -------------------------------------------

std::vector<std::vector<std::size_t>> enumerate_ensembles(std::size_t n, std::size_t k) {
  if (k == 0 || k > n) {
    fail(ErrorCode::kInvalidArgument, "cannot choose " + std::to_string(k) + " of " +
                                          std::to_string(n) + " models");
  }
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> current(k);
  std::iota(current.begin(), current.end(), 0);
  while (true) {
    out.push_back(current);
    // Advance the rightmost index that still has room.
    std::size_t i = k;
    while (i > 0 && current[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) break;
    ++current[i - 1];
    for (std::size_t j = i; j < k; ++j) current[j] = current[j - 1] + 1;
  }
  return out;
}

std::string ensemble_id(std::span<const std::size_t> members) {
  std::string id;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (i > 0) id += "-";
    id += std::to_string(members[i]);
  }
  return id;
}

PoolEvaluation evaluate_pool(std::span<const Model> pool, std::span<const Dataset> splits,
                             const AttributionSpec& attribution, std::size_t attribution_samples) {
  if (pool.empty()) fail(ErrorCode::kInvalidArgument, "empty model pool");
  PoolEvaluation out;
  for (const Model& m : pool) {
    if (m.spec().input != pool.front().spec().input ||
        m.spec().classes != pool.front().spec().classes) {
      fail(ErrorCode::kShapeMismatch, "pool models disagree on input shape or classes");
    }
    out.parameters.push_back(m.parameter_count());
  }
  for (const Dataset& d : splits) {
    if (d.images.shape() != pool.front().spec().input.batch_shape(d.size())) {
      fail(ErrorCode::kShapeMismatch, "split " + d.split + " has images " +
                                          shape_str(d.images.shape()) + " unsuited to the pool");
    }
    out.splits.push_back(d.split);
    out.labels.push_back(d.labels);
    std::vector<Tensor> logits;
    std::vector<std::vector<std::size_t>> preds;
    for (const Model& m : pool) {
      logits.push_back(predict_logits(m, d.images));
      preds.push_back(kernels::argmax_rows(logits.back()));
    }
    out.logits.push_back(std::move(logits));
    out.predictions.push_back(std::move(preds));
    const std::size_t n = std::min(attribution_samples, d.size());
    out.attributions.push_back(
        attribution_batch(pool, kernels::slice(d.images, 0, 0, n), attribution).maps);
  }
  return out;
}

PredictionLog ensemble_log(const PoolEvaluation& pool, std::size_t split,
                           std::span<const std::size_t> members,
                           std::span<const ConsensusKind> consensus, std::uint64_t vote_seed) {
  if (split >= pool.splits.size()) fail(ErrorCode::kNotFound, "split index out of range");
  PredictionLog log;
  log.labels = pool.labels[split];
  log.sample_ids.resize(log.labels.size());
  std::iota(log.sample_ids.begin(), log.sample_ids.end(), 0);
  std::vector<Tensor> logits;
  for (std::size_t m : members) {
    if (m >= pool.parameters.size()) fail(ErrorCode::kNotFound, "pool model index out of range");
    log.member_predictions.push_back(pool.predictions[split][m]);
    logits.push_back(pool.logits[split][m]);
  }
  for (ConsensusKind k : consensus) {
    log.consensus_kinds.push_back(to_string(k));
    log.consensus_predictions.push_back(predictions_of(logits, k, vote_seed));
  }
  return log;
}

std::vector<EnsembleReportRow> evaluate_ensembles(
    const PoolEvaluation& pool, std::span<const std::vector<std::size_t>> ensembles,
    std::span<const ConsensusKind> consensus, std::uint64_t vote_seed, const fs::path* log_dir) {
  std::vector<EnsembleReportRow> rows;
  for (const auto& members : ensembles) {
    const std::string id = ensemble_id(members);
    std::size_t parameters = 0;
    for (std::size_t m : members) parameters += pool.parameters.at(m);
    for (std::size_t s = 0; s < pool.splits.size(); ++s) {
      const PredictionLog log = ensemble_log(pool, s, members, consensus, vote_seed);
      if (log_dir != nullptr) {
        write_prediction_log(*log_dir / pool.splits[s] / ("ensemble_" + id + ".csv"), log);
      }
      std::vector<double> member_acc;
      std::vector<Correctness> member_correct;
      for (const auto& p : log.member_predictions) {
        member_acc.push_back(accuracy(p, log.labels));
        member_correct.push_back(correctness(p, log.labels));
      }
      const bool pairwise = members.size() >= 2;
      auto maybe = [&](auto fn) -> std::optional<double> {
        if (!pairwise) return std::nullopt;
        try {
          return fn();
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kUndefinedMetric) throw;
          return std::nullopt;
        }
      };
      std::optional<double> attr;
      if (pairwise) {
        std::vector<Tensor> maps;
        for (std::size_t m : members) {
          maps.push_back(kernels::slice(pool.attributions[s], 0, m, m + 1));
        }
        attr = attribution_diversity(kernels::concat(maps, 0)).mean;
      }
      for (std::size_t k = 0; k < consensus.size(); ++k) {
        EnsembleReportRow row;
        row.ensemble = id;
        row.members = members;
        row.parameters = parameters;
        row.split = pool.splits[s];
        row.consensus = log.consensus_kinds[k];
        row.ensemble_accuracy = accuracy(log.consensus_predictions[k], log.labels);
        row.top_member_accuracy = *std::max_element(member_acc.begin(), member_acc.end());
        row.improvement = improvement(row.ensemble_accuracy, member_acc);
        row.mean_member_accuracy = mean_of(member_acc);
        row.disagreement = maybe([&] { return mean_pairwise_disagreement(member_correct); });
        row.q_statistic = maybe([&] { return mean_pairwise_q(member_correct); });
        row.rho = maybe([&] { return mean_pairwise_rho(member_correct); });
        if (pairwise) {
          const ShannonSplit split = shannon_split(
              log.member_predictions, correctness(log.consensus_predictions[k], log.labels));
          row.shannon_correct = split.correct;
          row.shannon_incorrect = split.incorrect;
        }
        row.attribution_diversity = attr;
        rows.push_back(std::move(row));
      }
    }
  }
  normalize_rows(rows);
  return rows;
}

void normalize_rows(std::vector<EnsembleReportRow>& rows) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    groups[{rows[i].split, rows[i].consensus}].push_back(i);
  }
  using Field = std::optional<double> EnsembleReportRow::*;
  auto normalize = [&](const std::vector<std::size_t>& group, auto get, Field out) {
    std::vector<std::size_t> defined;
    std::vector<double> values;
    for (std::size_t i : group) {
      if (const std::optional<double> v = get(rows[i])) {
        defined.push_back(i);
        values.push_back(*v);
      }
    }
    if (values.empty()) return;
    const std::vector<double> scaled = minmax_normalize(values);
    for (std::size_t j = 0; j < defined.size(); ++j) rows[defined[j]].*out = scaled[j];
  };
  for (const auto& [key, group] : groups) {
    normalize(group, [](const EnsembleReportRow& r) { return r.disagreement; },
              &EnsembleReportRow::disagreement_norm);
    normalize(group, [](const EnsembleReportRow& r) { return r.attribution_diversity; },
              &EnsembleReportRow::attribution_diversity_norm);
    normalize(group,
              [](const EnsembleReportRow& r) { return std::optional<double>(r.mean_member_accuracy); },
              &EnsembleReportRow::mean_member_accuracy_norm);
  }
}

// ---- reports --------------------------------------------------------------

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> columns = {
      "ensemble",           "parameters",           "split",
      "consensus",          "ensemble_accuracy",    "top_member_accuracy",
      "improvement",        "mean_member_accuracy", "disagreement",
      "q_statistic",        "rho",                  "shannon_correct",
      "shannon_incorrect",  "attribution_diversity", "disagreement_norm",
      "attribution_diversity_norm", "mean_member_accuracy_norm"};
  return columns;
}

csv::Table report_table(std::span<const EnsembleReportRow> rows) {
  csv::Table t;
  t.header = report_columns();
  for (const EnsembleReportRow& r : rows) {
    t.rows.push_back({r.ensemble, std::to_string(r.parameters), r.split, r.consensus,
                      fmt(r.ensemble_accuracy), fmt(r.top_member_accuracy), fmt(r.improvement),
                      fmt(r.mean_member_accuracy), fmt(r.disagreement), fmt(r.q_statistic),
                      fmt(r.rho), fmt(r.shannon_correct), fmt(r.shannon_incorrect),
                      fmt(r.attribution_diversity), fmt(r.disagreement_norm),
                      fmt(r.attribution_diversity_norm), fmt(r.mean_member_accuracy_norm)});
  }
  return t;
}

std::vector<EnsembleReportRow> rows_from_table(const csv::Table& table) {
  const auto& columns = report_columns();
  std::vector<std::size_t> idx;
  for (const std::string& c : columns) idx.push_back(table.column(c));
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return csv::parse_double(s);
  };
  std::vector<EnsembleReportRow> rows;
  for (const auto& f : table.rows) {
    EnsembleReportRow r;
    r.ensemble = f[idx[0]];
    std::size_t start = 0;
    while (start <= r.ensemble.size()) {
      const std::size_t end = std::min(r.ensemble.find('-', start), r.ensemble.size());
      r.members.push_back(csv::parse_index(r.ensemble.substr(start, end - start)));
      start = end + 1;
    }
    r.parameters = csv::parse_index(f[idx[1]]);
    r.split = f[idx[2]];
    r.consensus = f[idx[3]];
    r.ensemble_accuracy = csv::parse_double(f[idx[4]]);
    r.top_member_accuracy = csv::parse_double(f[idx[5]]);
    r.improvement = csv::parse_double(f[idx[6]]);
    r.mean_member_accuracy = csv::parse_double(f[idx[7]]);
    r.disagreement = opt(f[idx[8]]);
    r.q_statistic = opt(f[idx[9]]);
    r.rho = opt(f[idx[10]]);
    r.shannon_correct = opt(f[idx[11]]);
    r.shannon_incorrect = opt(f[idx[12]]);
    r.attribution_diversity = opt(f[idx[13]]);
    r.disagreement_norm = opt(f[idx[14]]);
    r.attribution_diversity_norm = opt(f[idx[15]]);
    r.mean_member_accuracy_norm = opt(f[idx[16]]);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

using TrendMetric = std::pair<std::string, std::optional<double> EnsembleReportRow::*>;

const std::vector<TrendMetric>& trend_metrics() {
  static const std::vector<TrendMetric> metrics = {
      {"attribution_diversity", &EnsembleReportRow::attribution_diversity_norm},
      {"disagreement", &EnsembleReportRow::disagreement_norm},
      {"mean_member_accuracy", &EnsembleReportRow::mean_member_accuracy_norm}};
  return metrics;
}

// Groups in first-appearance order so output follows the row order.
std::vector<std::pair<std::pair<std::string, std::string>, std::vector<std::size_t>>> group_rows(
    std::span<const EnsembleReportRow> rows) {
  std::vector<std::pair<std::pair<std::string, std::string>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::pair<std::string, std::string> key{rows[i].split, rows[i].consensus};
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.push_back({key, {}});
      it = std::prev(groups.end());
    }
    it->second.push_back(i);
  }
  return groups;
}

}  // namespace

csv::Table trend_table(std::span<const EnsembleReportRow> rows) {
  csv::Table t;
  t.header = {"metric", "split", "consensus", "n", "r", "slope", "intercept"};
  const auto groups = group_rows(rows);
  for (const auto& [metric, field] : trend_metrics()) {
    for (const auto& [key, group] : groups) {
      std::vector<double> x, y;
      for (std::size_t i : group) {
        if (const auto v = rows[i].*field) {
          x.push_back(*v);
          y.push_back(rows[i].improvement);
        }
      }
      std::vector<std::string> row = {metric, key.first, key.second, std::to_string(x.size())};
      try {
        const TrendReport trend = pearson_trend(x, y);
        row.insert(row.end(), {fmt(trend.r), fmt(trend.slope), fmt(trend.intercept)});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kUndefinedMetric && e.code() != ErrorCode::kInvalidArgument) {
          throw;
        }
        row.insert(row.end(), {"", "", ""});
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

void write_report(const fs::path& dir, std::span<const EnsembleReportRow> rows) {
  const csv::Table trends = trend_table(rows);
  fs::create_directories(dir / "plots");
  csv::write(dir / "ensembles.csv", report_table(rows));
  csv::write(dir / "trends.csv", trends);
  for (const auto& [metric, field] : trend_metrics()) {
    for (const auto& [key, group] : group_rows(rows)) {
      std::string text = "# " + metric + "_norm improvement ensemble (" + key.first + ", " +
                         key.second + ")\n";
      for (std::size_t i : group) {
        if (const auto v = rows[i].*field) {
          text += fmt(*v) + " " + fmt(rows[i].improvement) + " " + rows[i].ensemble + "\n";
        }
      }
      io::write_file(dir / "plots" / (metric + "__" + key.first + "__" + key.second + ".dat"), text);
    }
  }
}

// ---- attribution method comparison -----------------------------------------

AttribComparison attrib_compare(std::span<const Model> pool, const Tensor& images,
                                std::span<const AttributionSpec> methods) {
  if (pool.size() < 2) fail(ErrorCode::kInvalidArgument, "attribution comparison needs >= 2 models");
  if (methods.empty()) fail(ErrorCode::kInvalidArgument, "no attribution methods given");
  AttribComparison out;
  for (std::size_t a = 0; a < pool.size(); ++a) {
    for (std::size_t b = a + 1; b < pool.size(); ++b) out.pairs.emplace_back(a, b);
  }
  for (const AttributionSpec& spec : methods) {
    out.methods.push_back(spec.tag());
    const Tensor maps = attribution_batch(pool, images, spec).maps;
    std::vector<double> raw;
    for (const auto& [a, b] : out.pairs) {
      const Tensor parts[] = {kernels::slice(maps, 0, a, a + 1), kernels::slice(maps, 0, b, b + 1)};
      raw.push_back(attribution_diversity(kernels::concat(parts, 0)).mean);
    }
    out.scores.push_back(minmax_normalize(raw));
    out.raw_scores.push_back(std::move(raw));
  }
  const std::size_t m = methods.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.correlation.assign(m, std::vector<double>(m, nan));
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    out.correlation[i][i] = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      double r = nan;
      try {
        r = pearson_trend(out.scores[i], out.scores[j]).r;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kUndefinedMetric && e.code() != ErrorCode::kInvalidArgument) {
          throw;
        }
      }
      out.correlation[i][j] = out.correlation[j][i] = r;
      total += r;
      ++count;
    }
  }
  if (count > 0) out.mean_correlation = total / static_cast<double>(count);
  return out;
}

void write_attrib_comparison(const fs::path& dir, const AttribComparison& result) {
  csv::Table scores;
  scores.header = {"model_a", "model_b"};
  for (const std::string& m : result.methods) {
    scores.header.push_back(m);
    scores.header.push_back(m + "_raw");
  }
  for (std::size_t p = 0; p < result.pairs.size(); ++p) {
    std::vector<std::string> row = {std::to_string(result.pairs[p].first),
                                    std::to_string(result.pairs[p].second)};
    for (std::size_t m = 0; m < result.methods.size(); ++m) {
      row.push_back(fmt(result.scores[m][p]));
      row.push_back(fmt(result.raw_scores[m][p]));
    }
    scores.rows.push_back(std::move(row));
  }
  csv::Table corr;
  corr.header = {"method"};
  corr.header.insert(corr.header.end(), result.methods.begin(), result.methods.end());
  for (std::size_t i = 0; i < result.methods.size(); ++i) {
    std::vector<std::string> row = {result.methods[i]};
    for (double r : result.correlation[i]) row.push_back(std::isnan(r) ? "" : fmt(r));
    corr.rows.push_back(std::move(row));
  }
  corr.rows.push_back({"mean_offdiagonal", std::isnan(result.mean_correlation)
                                               ? std::string()
                                               : fmt(result.mean_correlation)});
  corr.rows.back().resize(corr.header.size());
  fs::create_directories(dir);
  csv::write(dir / "attribution_scores.csv", scores);
  csv::write(dir / "attribution_correlation.csv", corr);
}

// ---- demo pipeline ---------------------------------------------------------

DemoOutputs run_demo(const ExperimentConfig& config, std::ostream* progress) {
  config.validate();
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  save_config(out / "config.json", config);
  const Splits splits = make_splits(config);
  DemoOutputs result;
  result.training = train_ensemble(config, splits.train, splits.val, progress);
  save_training(out / "train", result.training);
  if (result.training.diverged_epoch) {
    fail(ErrorCode::kDivergence, "training diverged at epoch " +
                                     std::to_string(*result.training.diverged_epoch) + ": " +
                                     result.training.divergence);
  }
  const std::vector<Model>& pool = result.training.final_members;
  const auto ensembles = enumerate_ensembles(pool.size(), config.ensemble_size);
  const PoolEvaluation evaluation =
      evaluate_pool(pool, splits.eval, config.attribution, config.attribution_samples);
  const fs::path logs = out / "logs";
  result.rows = evaluate_ensembles(evaluation, ensembles, config.consensus, config.seed, &logs);
  write_report(out / "report", result.rows);
  const std::size_t n = std::min(config.attribution_samples, splits.eval.front().size());
  const std::vector<AttributionSpec> methods = {
      attribution_from_tag("saliency"), attribution_from_tag("ig-2"),
      attribution_from_tag("ig-10"), attribution_from_tag("ig-50")};
  result.attribution =
      attrib_compare(pool, kernels::slice(splits.eval.front().images, 0, 0, n), methods);
  write_attrib_comparison(out / "attribution", result.attribution);
  if (progress != nullptr) {
    *progress << "evaluated " << ensembles.size() << " ensembles on " << splits.eval.size()
              << " splits; mean attribution-method correlation "
              << fmt(result.attribution.mean_correlation) << "\n";
  }
  return result;
}

}  // namespace ensdiv
