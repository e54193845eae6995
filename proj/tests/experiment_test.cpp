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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "ensdiv/kernels.hpp"
#include "ensdiv/tensor_io.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace ensdiv {
namespace {

namespace fs = std::filesystem;
using testing::throws_code;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ensdiv_experiment_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.data.train = 120;
  c.data.val = 40;
  c.data.test = 30;
  c.data.classes = 4;
  c.data.image_size = 8;
  for (std::size_t i = 0; i < 3; ++i) {
    ModelSpec m;
    m.hidden = {12 + 4 * i};
    m.input = c.data.input();
    m.classes = c.data.classes;
    m.seed = 10 + i;
    c.members.push_back(m);
  }
  c.epochs = 2;
  c.batch_size = 32;
  c.optimizer.lr = 3e-3;
  c.attribution_samples = 12;
  c.corruptions = {{CorruptionKind::kLines, 1.6, 1}};
  return c;
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = tiny_config();
  c.loss.kind = LossKind::kGncl;
  c.loss.lambda = 0.3;
  c.consensus = {ConsensusKind::kMedian, ConsensusKind::kVote};
  c.attribution = attribution_from_tag("ig-10");
  c.members[1].kind = ModelKind::kCnn;
  c.members[1].hidden.clear();
  c.members[1].channels = {4};
  const nlohmann::json j = c;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  EXPECT_EQ(back.members, c.members);
  EXPECT_EQ(back.attribution.tag(), "ig-10");
  const fs::path path = fresh_dir("config") / "c.json";
  save_config(path, c);
  EXPECT_EQ(nlohmann::json(load_config(path)).dump(), j.dump());
}

TEST(Config, MemberShapeDefaultsToData) {
  nlohmann::json j = tiny_config();
  for (auto& m : j["members"]) {
    m.erase("input");
    m.erase("classes");
  }
  const ExperimentConfig c = j.get<ExperimentConfig>();
  EXPECT_EQ(c.members[0].input, c.data.input());
  EXPECT_EQ(c.members[0].classes, 4u);
}

TEST(Config, Validation) {
  ExperimentConfig c = tiny_config();
  c.members[0].classes = 5;
  EXPECT_TRUE(throws_code([&] { c.validate(); }, ErrorCode::kConfig));
  c = tiny_config();
  c.ensemble_size = 4;
  EXPECT_TRUE(throws_code([&] { c.validate(); }, ErrorCode::kConfig));
  c = tiny_config();
  c.consensus.clear();
  EXPECT_TRUE(throws_code([&] { c.validate(); }, ErrorCode::kConfig));
  nlohmann::json j = tiny_config();
  j["corruptions"] = {"kind=fog,strength=1"};
  EXPECT_TRUE(throws_code([&] { j.get<ExperimentConfig>(); }, ErrorCode::kConfig));
  j = tiny_config();
  j["epochs"] = "many";
  EXPECT_TRUE(throws_code([&] { j.get<ExperimentConfig>(); }, ErrorCode::kConfig));
}

TEST(Config, SeedOverrideReachesEverySeed) {
  ExperimentConfig c = tiny_config();
  override_seed(c, 77);
  EXPECT_EQ(c.seed, 77u);
  EXPECT_EQ(c.data.seed, 77u);
  EXPECT_EQ(c.corruptions[0].seed, 77u);
  EXPECT_NE(c.members[0].seed, c.members[1].seed);
  ExperimentConfig d = tiny_config();
  override_seed(d, 77);
  EXPECT_EQ(nlohmann::json(c).dump(), nlohmann::json(d).dump());
}

TEST(Splits, NamesAndShapes) {
  const ExperimentConfig c = tiny_config();
  const Splits s = make_splits(c);
  EXPECT_EQ(s.train.size(), 120u);
  EXPECT_EQ(s.val.size(), 40u);
  ASSERT_EQ(s.eval.size(), 3u);
  EXPECT_EQ(s.eval[0].split, "clean");
  EXPECT_EQ(s.eval[1].split, "shifted");
  EXPECT_EQ(s.eval[2].split, "lines-1.6");
  EXPECT_EQ(s.eval[2].labels, s.eval[0].labels);
  EXPECT_NE(s.train.images, s.val.images);
}

TEST(Enumerate, PaperCounts) {
  EXPECT_EQ(enumerate_ensembles(14, 3).size(), 364u);
  EXPECT_EQ(enumerate_ensembles(11, 3).size(), 165u);
  EXPECT_EQ(enumerate_ensembles(3, 3).size(), 1u);
  EXPECT_TRUE(throws_code([] { enumerate_ensembles(3, 4); }, ErrorCode::kInvalidArgument));
  EXPECT_TRUE(throws_code([] { enumerate_ensembles(3, 0); }, ErrorCode::kInvalidArgument));
}

TEST(Enumerate, MatchesBinomialAndIsLexicographic) {
  for (std::size_t n = 1; n <= 20; ++n) {
    for (std::size_t k = 1; k <= std::min<std::size_t>(5, n); ++k) {
      const auto combos = enumerate_ensembles(n, k);
      ASSERT_EQ(static_cast<double>(combos.size()), oracle::binomial(n, k)) << n << " " << k;
      for (std::size_t i = 1; i < combos.size(); ++i) ASSERT_LT(combos[i - 1], combos[i]);
      for (const auto& c : combos) {
        for (std::size_t j = 1; j < c.size(); ++j) ASSERT_LT(c[j - 1], c[j]);
        ASSERT_LT(c.back(), n);
      }
    }
  }
  EXPECT_EQ(ensemble_id(enumerate_ensembles(4, 2)[2]), "0-3");
}

TEST(Train, GnclAtZeroLambdaMatchesIndependent) {
  ExperimentConfig c = tiny_config();
  const Splits s = make_splits(c);
  c.loss.kind = LossKind::kIndependent;
  const TrainResult independent = train_ensemble(c, s.train, s.val);
  c.loss.kind = LossKind::kGncl;
  c.loss.lambda = 0.0;
  const TrainResult gncl = train_ensemble(c, s.train, s.val);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(gncl.final_members[i].parameters(), independent.final_members[i].parameters());
  }
}

TEST(Train, DeterministicLogsAndCheckpoints) {
  ExperimentConfig c = tiny_config();
  c.loss.kind = LossKind::kBalanced;
  c.loss.lambda = 0.5;
  const Splits s = make_splits(c);
  const TrainResult a = train_ensemble(c, s.train, s.val);
  const TrainResult b = train_ensemble(c, s.train, s.val);
  EXPECT_EQ(csv::to_string(training_table(a)), csv::to_string(training_table(b)));
  const fs::path da = fresh_dir("train_a"), db = fresh_dir("train_b");
  save_training(da, a);
  save_training(db, b);
  for (const char* f : {"train_log.csv", "train_summary.json", "checkpoints/member_2.best.ckpt",
                        "checkpoints/member_0.final.ckpt"}) {
    EXPECT_EQ(io::read_file(da / f), io::read_file(db / f)) << f;
  }
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.log[0].val_member_accuracy.size(), 3u);
  const auto loaded = load_members(da, "final");
  ASSERT_EQ(loaded.size(), 3u);
  EXPECT_EQ(loaded[1].parameters(), a.final_members[1].parameters());
}

TEST(Train, LearnsSomething) {
  ExperimentConfig c = tiny_config();
  c.data.train = 400;
  c.data.val = 100;
  c.epochs = 8;
  const Splits s = make_splits(c);
  const TrainResult r = train_ensemble(c, s.train, s.val);
  EXPECT_LT(r.log.back().loss, r.log.front().loss);
  EXPECT_GT(r.log.back().val_ensemble_accuracy, 1.0 / 4.0);
}

TEST(Train, DivergenceHaltsWithEpoch) {
  ExperimentConfig c = tiny_config();
  c.epochs = 5;
  c.optimizer.kind = OptimizerKind::kSgd;
  c.optimizer.lr = 1e300;
  const Splits s = make_splits(c);
  const TrainResult r = train_ensemble(c, s.train, s.val);
  ASSERT_TRUE(r.diverged_epoch.has_value());
  EXPECT_LT(*r.diverged_epoch, 5u);
  EXPECT_EQ(r.log.size(), *r.diverged_epoch);
  EXPECT_FALSE(r.divergence.empty());
  const fs::path dir = fresh_dir("diverged");
  save_training(dir, r);
  const auto summary = nlohmann::json::parse(io::read_file(dir / "train_summary.json"));
  EXPECT_EQ(summary["status"], "diverged");
  EXPECT_EQ(summary["diverged_epoch"], *r.diverged_epoch);
}

TEST(Train, MissingCheckpoints) {
  const fs::path dir = fresh_dir("missing");
  fs::create_directories(dir);
  EXPECT_TRUE(throws_code([&] { load_members(dir, "final"); }, ErrorCode::kNotFound));
}

struct Evaluated {
  std::vector<Model> pool;
  Splits splits;
  PoolEvaluation evaluation;
};

Evaluated evaluated_pool() {
  ExperimentConfig c = tiny_config();
  const Splits s = make_splits(c);
  TrainResult r = train_ensemble(c, s.train, s.val);
  std::vector<Model> pool = r.final_members;
  pool.push_back(pool[0]);  // a clone of member 0
  PoolEvaluation e = evaluate_pool(pool, s.eval, c.attribution, c.attribution_samples);
  return {pool, s, std::move(e)};
}

TEST(Evaluate, SingleMemberHasZeroImprovement) {
  const Evaluated ev = evaluated_pool();
  const std::vector<std::vector<std::size_t>> singles = {{0}, {1}, {2}};
  const std::vector<ConsensusKind> kinds = {ConsensusKind::kAverage, ConsensusKind::kVote,
                                            ConsensusKind::kMedian, ConsensusKind::kGeometricMean};
  for (const auto& row : evaluate_ensembles(ev.evaluation, singles, kinds, 0)) {
    EXPECT_EQ(row.improvement, 0.0) << row.ensemble << " " << row.split << " " << row.consensus;
    EXPECT_FALSE(row.disagreement.has_value());
    EXPECT_FALSE(row.attribution_diversity.has_value());
  }
}

TEST(Evaluate, ClonedMembersHaveNoDiversity) {
  const Evaluated ev = evaluated_pool();
  const std::vector<std::vector<std::size_t>> clones = {{0, 3}};
  const std::vector<ConsensusKind> kinds = {ConsensusKind::kAverage};
  for (const auto& row : evaluate_ensembles(ev.evaluation, clones, kinds, 0)) {
    EXPECT_EQ(row.disagreement, 0.0);
    EXPECT_EQ(row.attribution_diversity, 0.0);
    EXPECT_EQ(row.improvement, 0.0);
  }
}

TEST(Evaluate, RowsRecomputeFromLogs) {
  const Evaluated ev = evaluated_pool();
  const auto ensembles = enumerate_ensembles(ev.pool.size(), 3);
  const std::vector<ConsensusKind> kinds = {ConsensusKind::kAverage, ConsensusKind::kVote};
  const fs::path logs = fresh_dir("logs");
  const auto rows = evaluate_ensembles(ev.evaluation, ensembles, kinds, 4, &logs);
  ASSERT_EQ(rows.size(), ensembles.size() * ev.splits.eval.size() * kinds.size());
  for (const auto& row : rows) {
    EXPECT_NEAR(row.improvement, row.ensemble_accuracy - row.top_member_accuracy, 1e-12);
    // Independent recomputation straight from the CSV fields.
    const csv::Table t = csv::read(logs / row.split / ("ensemble_" + row.ensemble + ".csv"));
    const std::size_t label = t.column("label");
    const std::size_t cons = t.column("consensus_" + row.consensus);
    std::vector<double> member_hits(row.members.size(), 0.0);
    double ens_hits = 0.0;
    for (const auto& f : t.rows) {
      ens_hits += f[cons] == f[label];
      for (std::size_t m = 0; m < row.members.size(); ++m) {
        member_hits[m] += f[t.column("member_" + std::to_string(m))] == f[label];
      }
    }
    const double n = static_cast<double>(t.rows.size());
    const double top = *std::max_element(member_hits.begin(), member_hits.end()) / n;
    EXPECT_NEAR(row.improvement, ens_hits / n - top, 1e-12);
    for (const auto* norm : {&row.disagreement_norm, &row.attribution_diversity_norm,
                             &row.mean_member_accuracy_norm}) {
      if (norm->has_value()) {
        EXPECT_GE(**norm, 0.0);
        EXPECT_LE(**norm, 1.0);
      }
    }
  }
}

TEST(Evaluate, MatchesOfflineLogMetrics) {
  const Evaluated ev = evaluated_pool();
  const std::vector<std::size_t> members = {0, 1, 2};
  const std::vector<ConsensusKind> kinds = {ConsensusKind::kAverage};
  const std::vector<std::vector<std::size_t>> one = {members};
  const auto rows = evaluate_ensembles(ev.evaluation, one, kinds, 0);
  const PredictionLog log = ensemble_log(ev.evaluation, 0, members, kinds, 0);
  std::map<std::string, std::optional<double>> m;
  for (const auto& v : log_metrics(log)) m[v.name] = v.value;
  EXPECT_EQ(rows[0].improvement, m["improvement_average"]);
  EXPECT_EQ(rows[0].disagreement, m["disagreement"]);
  EXPECT_EQ(rows[0].shannon_correct, m["shannon_correct"]);
  EXPECT_EQ(rows[0].mean_member_accuracy, m["mean_member_accuracy"]);
}

EnsembleReportRow planted_row(std::size_t i, double metric) {
  EnsembleReportRow r;
  r.members = {i, i + 1};
  r.ensemble = ensemble_id(r.members);
  r.parameters = 100 + i;
  r.split = "clean";
  r.consensus = "average";
  r.ensemble_accuracy = 0.5 + metric;
  r.top_member_accuracy = 0.5;
  r.improvement = 2.0 * metric;
  r.ensemble_accuracy = r.top_member_accuracy + r.improvement;
  r.mean_member_accuracy = 0.25 + 0.125 * static_cast<double>(i);
  r.disagreement = metric;
  r.attribution_diversity = metric;
  return r;
}

TEST(Report, PlantedCorrelation) {
  std::vector<EnsembleReportRow> rows;
  for (std::size_t i = 0; i < 5; ++i) rows.push_back(planted_row(i, 0.02 * static_cast<double>(i * i)));
  normalize_rows(rows);
  const csv::Table t = trend_table(rows);
  ASSERT_EQ(t.rows.size(), 3u);
  for (const auto& f : t.rows) {
    if (f[0] == "mean_member_accuracy") continue;
    EXPECT_NEAR(csv::parse_double(f[t.column("r")]), 1.0, 1e-12) << f[0];
  }
  // Trend values agree with the metrics module.
  std::vector<double> x, y;
  for (const auto& r : rows) {
    x.push_back(*r.mean_member_accuracy_norm);
    y.push_back(r.improvement);
  }
  const TrendReport direct = pearson_trend(x, y);
  EXPECT_EQ(t.rows[2][t.column("r")], csv::format_number(direct.r));
  EXPECT_EQ(t.rows[2][t.column("slope")], csv::format_number(direct.slope));
}

TEST(Report, GoldenBytes) {
  std::vector<EnsembleReportRow> rows = {planted_row(0, 0.0), planted_row(1, 0.25),
                                         planted_row(2, 0.5)};
  rows[2].q_statistic = -0.5;
  normalize_rows(rows);
  const std::string expected =
      "ensemble,parameters,split,consensus,ensemble_accuracy,top_member_accuracy,improvement,"
      "mean_member_accuracy,disagreement,q_statistic,rho,shannon_correct,shannon_incorrect,"
      "attribution_diversity,disagreement_norm,attribution_diversity_norm,"
      "mean_member_accuracy_norm\n"
      "0-1,100,clean,average,0.5,0.5,0,0.25,0,,,,,0,0,0,0\n"
      "1-2,101,clean,average,1,0.5,0.5,0.375,0.25,,,,,0.25,0.5,0.5,0.5\n"
      "2-3,102,clean,average,1.5,0.5,1,0.5,0.5,-0.5,,,,0.5,1,1,1\n";
  EXPECT_EQ(csv::to_string(report_table(rows)), expected);
  const auto back = rows_from_table(report_table(rows));
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[2].members, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(back[2].q_statistic, -0.5);
  EXPECT_FALSE(back[0].rho.has_value());
  EXPECT_EQ(csv::to_string(report_table(back)), expected);
}

TEST(Report, WritesFilesAndLeavesShortGroupsEmpty) {
  std::vector<EnsembleReportRow> rows = {planted_row(0, 0.1), planted_row(1, 0.3),
                                         planted_row(2, 0.2)};
  normalize_rows(rows);
  const fs::path dir = fresh_dir("report");
  write_report(dir, rows);
  EXPECT_TRUE(fs::exists(dir / "ensembles.csv"));
  EXPECT_TRUE(fs::exists(dir / "trends.csv"));
  const std::string dat = io::read_file(dir / "plots" / "disagreement__clean__average.dat");
  EXPECT_NE(dat.find("0 0.2 0-1\n"), std::string::npos);
  rows.pop_back();
  const csv::Table t = trend_table(rows);
  for (const auto& f : t.rows) {
    EXPECT_EQ(f[t.column("n")], "2");
    EXPECT_EQ(f[t.column("r")], "");
    EXPECT_EQ(f[t.column("slope")], "");
  }
}

TEST(AttribCompare, IdenticalModelsScoreZero) {
  const ExperimentConfig c = tiny_config();
  const Splits s = make_splits(c);
  const Model m = Model::build(c.members[0]);
  const std::vector<Model> pool = {m, m, m};
  const std::vector<AttributionSpec> methods = {attribution_from_tag("saliency"),
                                                attribution_from_tag("ig-2")};
  const AttribComparison r = attrib_compare(pool, kernels::slice(s.eval[0].images, 0, 0, 6), methods);
  ASSERT_EQ(r.pairs.size(), 3u);
  for (const auto& method : r.raw_scores) {
    for (double v : method) EXPECT_EQ(v, 0.0);
  }
}

TEST(AttribCompare, SingleMethodCorrelationIsOne) {
  const ExperimentConfig c = tiny_config();
  const Splits s = make_splits(c);
  std::vector<Model> pool;
  for (const ModelSpec& spec : c.members) pool.push_back(Model::build(spec));
  const std::vector<AttributionSpec> methods = {attribution_from_tag("saliency")};
  const AttribComparison r = attrib_compare(pool, kernels::slice(s.eval[0].images, 0, 0, 6), methods);
  ASSERT_EQ(r.correlation.size(), 1u);
  EXPECT_EQ(r.correlation[0], std::vector<double>{1.0});
  EXPECT_EQ(r.mean_correlation, 1.0);
  const std::vector<Model> one = {pool[0]};
  EXPECT_TRUE(throws_code([&] { attrib_compare(one, s.eval[0].images, methods); },
                          ErrorCode::kInvalidArgument));
}

TEST(AttribCompare, ScoresNormalizedAndCorrelationSymmetric) {
  const ExperimentConfig c = tiny_config();
  const Splits s = make_splits(c);
  std::vector<Model> pool;
  for (const ModelSpec& spec : c.members) pool.push_back(Model::build(spec));
  const std::vector<AttributionSpec> methods = {attribution_from_tag("saliency"),
                                                attribution_from_tag("ig-2"),
                                                attribution_from_tag("ig-10")};
  const AttribComparison r = attrib_compare(pool, kernels::slice(s.eval[0].images, 0, 0, 6), methods);
  for (const auto& scores : r.scores) {
    EXPECT_EQ(*std::min_element(scores.begin(), scores.end()), 0.0);
    EXPECT_EQ(*std::max_element(scores.begin(), scores.end()), 1.0);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(r.correlation[i][j], r.correlation[j][i]);
  }
  EXPECT_LE(r.mean_correlation, 1.0);
}

}  // namespace
}  // namespace ensdiv
