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

// ensdiv command-line harness. Errors print "error: <category>: <message>"
// and exit with a per-category status (see error.hpp).

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ensdiv/data.hpp"
#include "ensdiv/error.hpp"
#include "ensdiv/experiment.hpp"
#include "ensdiv/kernels.hpp"
#include "ensdiv/lm.hpp"
#include "ensdiv/tensor_io.hpp"

namespace {

using namespace ensdiv;
namespace fs = std::filesystem;

struct ConfigArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> corruptions;
  std::string out;

  void attach(CLI::App* cmd, bool with_corruptions = true) {
    cmd->add_option("--config", config, "experiment config (JSON); default: demo config");
    cmd->add_option("--seed", seed, "override every seed in the config");
    if (with_corruptions) {
      cmd->add_option("--corrupt", corruptions,
                      "corruption spec kind=<k>,strength=<s>[,seed=<n>]; repeatable, replaces "
                      "the config list");
    }
    cmd->add_option("--out", out, "output directory (default: config output_dir)");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = config.empty() ? demo_config() : load_config(config);
    if (seed) override_seed(c, *seed);
    if (!corruptions.empty()) {
      c.corruptions.clear();
      for (const std::string& s : corruptions) c.corruptions.push_back(parse_corruption(s));
    }
    if (!out.empty()) c.output_dir = out;
    c.validate();
    return c;
  }
};

std::vector<AttributionSpec> parse_methods(const std::vector<std::string>& tags) {
  std::vector<AttributionSpec> out;
  for (const std::string& t : tags) out.push_back(attribution_from_tag(t));
  return out;
}

void print_rows_summary(const std::vector<EnsembleReportRow>& rows, const fs::path& dir) {
  std::cout << "wrote " << rows.size() << " report rows to " << (dir / "ensembles.csv").string()
            << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"ensdiv: ensemble diversity experiments"};
  app.require_subcommand(1);

  // gen-data
  ConfigArgs gen_args;
  bool gen_idx = false;
  auto* gen = app.add_subcommand("gen-data", "generate train/val/eval splits as tensor dumps");
  gen_args.attach(gen);
  gen->add_flag("--idx", gen_idx, "also write IDX image/label files");
  gen->callback([&] {
    const ExperimentConfig c = gen_args.load();
    const Splits s = make_splits(c);
    const fs::path dir = c.output_dir / "data";
    std::vector<const Dataset*> all = {&s.train, &s.val};
    for (const Dataset& d : s.eval) all.push_back(&d);
    for (const Dataset* d : all) {
      save_dataset(dir / (d->split + ".bin"), *d);
      if (gen_idx) {
        save_idx(*d, dir / (d->split + "-images.idx"), dir / (d->split + "-labels.idx"));
      }
      std::cout << d->split << ": " << d->size() << " images -> " << (dir / (d->split + ".bin")).string()
                << "\n";
    }
  });

  // train
  ConfigArgs train_args;
  auto* train = app.add_subcommand("train", "train the configured members jointly");
  train_args.attach(train, false);
  train->callback([&] {
    const ExperimentConfig c = train_args.load();
    const Splits s = make_splits(c);
    const TrainResult r = train_ensemble(c, s.train, s.val, &std::cerr);
    const fs::path dir = c.output_dir / "train";
    save_training(dir, r);
    save_config(c.output_dir / "config.json", c);
    if (r.diverged_epoch) {
      fail(ErrorCode::kDivergence, "training diverged at epoch " + std::to_string(*r.diverged_epoch) +
                                       " (" + r.divergence + "); logs in " + dir.string());
    }
    std::cout << "trained " << r.final_members.size() << " members for " << r.log.size()
              << " epochs; best epoch " << r.best_epoch << "; checkpoints in "
              << (dir / "checkpoints").string() << "\n";
  });

  // eval
  ConfigArgs eval_args;
  std::string eval_checkpoints, eval_which = "final";
  std::optional<std::size_t> eval_k;
  auto* eval = app.add_subcommand("eval", "evaluate every k-member ensemble of a trained pool");
  eval_args.attach(eval);
  eval->add_option("--checkpoints", eval_checkpoints, "training output directory")->required();
  eval->add_option("--which", eval_which, "checkpoint set: final or best")
      ->check(CLI::IsMember({"final", "best"}));
  eval->add_option("--ensemble-size", eval_k, "members per ensemble (default: config)");
  eval->callback([&] {
    ExperimentConfig c = eval_args.load();
    const std::vector<Model> pool = load_members(eval_checkpoints, eval_which);
    const std::size_t k = eval_k.value_or(std::min(c.ensemble_size, pool.size()));
    const Splits s = make_splits(c);
    const PoolEvaluation e = evaluate_pool(pool, s.eval, c.attribution, c.attribution_samples);
    const fs::path logs = c.output_dir / "logs";
    const auto rows = evaluate_ensembles(e, enumerate_ensembles(pool.size(), k), c.consensus,
                                         c.seed, &logs);
    write_report(c.output_dir / "report", rows);
    print_rows_summary(rows, c.output_dir / "report");
  });

  // enumerate
  std::size_t enum_n = 0, enum_k = 0;
  bool enum_count = false;
  auto* enumerate = app.add_subcommand("enumerate", "list all k-subsets of n pool models");
  enumerate->add_option("-n", enum_n, "pool size")->required();
  enumerate->add_option("-k", enum_k, "ensemble size")->required();
  enumerate->add_flag("--count", enum_count, "print only the number of ensembles");
  enumerate->callback([&] {
    const auto combos = enumerate_ensembles(enum_n, enum_k);
    if (enum_count) {
      std::cout << combos.size() << "\n";
      return;
    }
    for (const auto& c : combos) std::cout << ensemble_id(c) << "\n";
  });

  // attrib-compare
  ConfigArgs attr_args;
  std::string attr_checkpoints, attr_which = "final";
  std::vector<std::string> attr_methods = {"saliency", "ig-2", "ig-10", "ig-50"};
  std::optional<std::size_t> attr_samples;
  auto* attrib = app.add_subcommand("attrib-compare",
                                    "compare pairwise attribution diversity across methods");
  attr_args.attach(attrib, false);
  attrib->add_option("--checkpoints", attr_checkpoints, "training output directory")->required();
  attrib->add_option("--which", attr_which, "checkpoint set: final or best")
      ->check(CLI::IsMember({"final", "best"}));
  attrib->add_option("--methods", attr_methods, "saliency and/or ig-<steps>")->delimiter(',');
  attrib->add_option("--samples", attr_samples, "clean test images to explain");
  attrib->callback([&] {
    const ExperimentConfig c = attr_args.load();
    const std::vector<Model> pool = load_members(attr_checkpoints, attr_which);
    const Splits s = make_splits(c);
    const Dataset& clean = s.eval.front();
    const std::size_t n = std::min(attr_samples.value_or(c.attribution_samples), clean.size());
    const AttribComparison r =
        attrib_compare(pool, kernels::slice(clean.images, 0, 0, n), parse_methods(attr_methods));
    write_attrib_comparison(c.output_dir / "attribution", r);
    std::cout << "mean cross-method correlation: " << csv::format_number(r.mean_correlation)
              << "\n";
  });

  // lm-sim
  std::string lm_world, lm_a = "A", lm_b = "B";
  std::optional<std::uint64_t> lm_trials;
  std::uint64_t lm_seed = 0;
  bool lm_exact = false;
  auto* lm = app.add_subcommand("lm-sim", "joint failure probability in a design-diversity world");
  lm->add_option("--world", lm_world, "world description (JSON)")->required();
  lm->add_option("--a", lm_a, "first methodology");
  lm->add_option("--b", lm_b, "second methodology");
  lm->add_flag("--exact", lm_exact, "exact enumeration (default when --mc is absent)");
  lm->add_option("--mc", lm_trials, "Monte Carlo trials");
  lm->add_option("--seed", lm_seed, "Monte Carlo seed");
  lm->callback([&] {
    const lm::World w = lm::load_world(lm_world);
    const lm::Methodology& a = w.methodology(lm_a);
    const lm::Methodology& b = w.methodology(lm_b);
    nlohmann::json out;
    if (lm_exact || !lm_trials) {
      const lm::JointFailure j = lm::joint_failure(w, a, b);
      out["exact"] = {{"p_both", j.both},
                      {"mean_a", j.mean_a},
                      {"mean_b", j.mean_b},
                      {"product_of_means", j.mean_a * j.mean_b},
                      {"covariance", j.covariance}};
    }
    if (lm_trials) {
      const lm::MonteCarlo mc = lm::joint_failure_mc(w, a, b, *lm_trials, lm_seed);
      out["monte_carlo"] = {{"estimate", mc.estimate},
                            {"standard_error", mc.standard_error},
                            {"trials", mc.trials},
                            {"joint_failures", mc.failures}};
    }
    std::cout << out.dump(2) << "\n";
  });

  // report
  std::string report_rows, report_out;
  auto* report = app.add_subcommand("report", "rebuild trend CSV and plot data from report rows");
  report->add_option("--rows", report_rows, "ensembles.csv from eval or demo")->required();
  report->add_option("--out", report_out, "output directory")->required();
  report->callback([&] {
    std::vector<EnsembleReportRow> rows = rows_from_table(csv::read(report_rows));
    normalize_rows(rows);
    write_report(report_out, rows);
    print_rows_summary(rows, report_out);
  });

  // metrics
  std::string metrics_log, metrics_maps;
  auto* metrics = app.add_subcommand("metrics", "offline metrics from a prediction log");
  metrics->add_option("--log", metrics_log, "prediction log CSV")->required();
  metrics->add_option("--maps", metrics_maps, "attribution dump (M x n x ...) for the same log");
  metrics->callback([&] {
    const PredictionLog log = read_prediction_log(metrics_log);
    std::optional<AttributionSet> maps;
    if (!metrics_maps.empty()) maps = load_attributions(metrics_maps);
    csv::Table t;
    t.header = {"metric", "value"};
    for (const MetricValue& m : log_metrics(log, maps ? &maps->maps : nullptr)) {
      t.rows.push_back({m.name, m.value ? csv::format_number(*m.value) : ""});
    }
    std::cout << csv::to_string(t);
  });

  // demo
  ConfigArgs demo_args;
  auto* demo = app.add_subcommand("demo", "generate, train, enumerate, evaluate and report");
  demo_args.attach(demo);
  demo->callback([&] {
    const ExperimentConfig c = demo_args.load();
    const DemoOutputs r = run_demo(c, &std::cerr);
    print_rows_summary(r.rows, c.output_dir / "report");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ensdiv::Error& e) {
    std::cerr << "error: " << ensdiv::to_string(e.code()) << ": " << e.what() << "\n";
    return ensdiv::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
