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


#include "ensdiv/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iostream>

#include "ensdiv/csv.hpp"
#include "ensdiv/error.hpp"

namespace ensdiv {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_matrix(const Tensor& t) {
  const std::size_t rows = t.rank() == 0 ? 1 : t.dim(0);
  return {t.data().data(), static_cast<Eigen::Index>(rows),
          static_cast<Eigen::Index>(t.numel() / rows)};
}

template <typename Fn>
double mean_over_pairs(std::span<const Correctness> members, Fn metric) {
  if (members.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "pairwise metrics need at least 2 members");
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j = i + 1; j < members.size(); ++j) {
      total += metric(correctness_pair(members[i], members[j]));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double mean_of(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

std::optional<double> try_metric(auto fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kUndefinedMetric) return std::nullopt;
    throw;
  }
}

}  // namespace

Correctness correctness(std::span<const std::size_t> predictions,
                        std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) {
    fail(ErrorCode::kShapeMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                        std::to_string(labels.size()) + " labels");
  }
  Correctness out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) out[r] = predictions[r] == labels[r];
  return out;
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  const Correctness c = correctness(predictions, labels);
  if (c.empty()) fail(ErrorCode::kInvalidArgument, "accuracy of an empty dataset");
  return static_cast<double>(std::count(c.begin(), c.end(), 1)) / static_cast<double>(c.size());
}

CorrectnessPair correctness_pair(std::span<const std::uint8_t> a,
                                 std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kShapeMismatch, "correctness vectors of length " + std::to_string(a.size()) +
                                        " and " + std::to_string(b.size()));
  }
  if (a.empty()) fail(ErrorCode::kInvalidArgument, "correctness vectors are empty");
  CorrectnessPair p;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && b[i]) {
      ++p.n11;
    } else if (a[i]) {
      ++p.n10;
    } else if (b[i]) {
      ++p.n01;
    } else {
      ++p.n00;
    }
  }
  return p;
}

double disagreement(const CorrectnessPair& p) {
  if (p.total() == 0) fail(ErrorCode::kInvalidArgument, "disagreement of an empty table");
  return static_cast<double>(p.n01 + p.n10) / static_cast<double>(p.total());
}

double disagreement(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  return disagreement(correctness_pair(a, b));
}

double q_statistic(const CorrectnessPair& p) {
  const double same = static_cast<double>(p.n11) * static_cast<double>(p.n00);
  const double cross = static_cast<double>(p.n01) * static_cast<double>(p.n10);
  if (same + cross == 0.0) {
    fail(ErrorCode::kUndefinedMetric, "Q-statistic undefined: N11*N00 + N01*N10 = 0");
  }
  return (same - cross) / (same + cross);
}

double rho(const CorrectnessPair& p) {
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  const double denom =
      (d(p.n11) + d(p.n10)) * (d(p.n01) + d(p.n00)) * (d(p.n11) + d(p.n01)) * (d(p.n10) + d(p.n00));
  if (denom == 0.0) fail(ErrorCode::kUndefinedMetric, "rho undefined: a marginal count is zero");
  return (d(p.n11) * d(p.n00) - d(p.n01) * d(p.n10)) / std::sqrt(denom);
}

double mean_pairwise_disagreement(std::span<const Correctness> members) {
  return mean_over_pairs(members, [](const CorrectnessPair& p) { return disagreement(p); });
}

double mean_pairwise_q(std::span<const Correctness> members) {
  return mean_over_pairs(members, [](const CorrectnessPair& p) { return q_statistic(p); });
}

double mean_pairwise_rho(std::span<const Correctness> members) {
  return mean_over_pairs(members, [](const CorrectnessPair& p) { return rho(p); });
}

double shannon_equitability(std::span<const std::size_t> member_predictions) {
  if (member_predictions.empty()) {
    fail(ErrorCode::kInvalidArgument, "equitability needs at least one prediction");
  }
  std::vector<std::size_t> sorted(member_predictions.begin(), member_predictions.end());
  std::sort(sorted.begin(), sorted.end());
  const double m = static_cast<double>(sorted.size());
  double entropy = 0.0;
  std::size_t species = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double p = static_cast<double>(j - i) / m;
    entropy -= p * std::log(p);
    ++species;
    i = j;
  }
  if (species == 1) return 0.0;
  return entropy / std::log(static_cast<double>(species));
}

ShannonSplit shannon_split(std::span<const std::vector<std::size_t>> predictions,
                           std::span<const std::uint8_t> ensemble_correct) {
  if (predictions.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "Shannon equitability needs at least 2 members");
  }
  const std::size_t n = ensemble_correct.size();
  for (const auto& p : predictions) {
    if (p.size() != n) fail(ErrorCode::kShapeMismatch, "member predictions and samples differ");
  }
  double sum_correct = 0.0, sum_incorrect = 0.0;
  ShannonSplit out;
  std::vector<std::size_t> column(predictions.size());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < predictions.size(); ++i) column[i] = predictions[i][r];
    const double e = shannon_equitability(column);
    if (ensemble_correct[r]) {
      sum_correct += e;
      ++out.n_correct;
    } else {
      sum_incorrect += e;
      ++out.n_incorrect;
    }
  }
  if (out.n_correct) out.correct = sum_correct / static_cast<double>(out.n_correct);
  if (out.n_incorrect) out.incorrect = sum_incorrect / static_cast<double>(out.n_incorrect);
  return out;
}

double hsic(const Tensor& k, const Tensor& l) {
  if (k.rank() != 2 || k.dim(0) != k.dim(1) || l.shape() != k.shape()) {
    fail(ErrorCode::kShapeMismatch, "hsic needs two n x n kernels, got " + shape_str(k.shape()) +
                                        " and " + shape_str(l.shape()));
  }
  const std::size_t n = k.dim(0);
  if (n < 3) fail(ErrorCode::kInvalidArgument, "hsic needs n >= 3 samples");
  auto centered = [](const Eigen::Map<const RowMatrix>& m) -> RowMatrix {
    const Eigen::RowVectorXd col_mean = m.colwise().mean();
    const Eigen::VectorXd row_mean = m.rowwise().mean();
    RowMatrix c = m;
    c.rowwise() -= col_mean;
    c.colwise() -= row_mean;
    c.array() += m.mean();
    return c;
  };
  const RowMatrix kc = centered(as_matrix(k));
  const RowMatrix lc = centered(as_matrix(l));
  // tr(A B) = sum_ij A_ij B_ji.
  const double trace = (kc.array() * lc.transpose().array()).sum();
  const double denom = static_cast<double>(n - 1);
  return trace / (denom * denom);
}

double cka(const Tensor& x, const Tensor& y) {
  if (x.rank() < 2 || y.rank() < 2 || x.dim(0) != y.dim(0)) {
    fail(ErrorCode::kShapeMismatch, "cka needs feature matrices with equal rows, got " +
                                        shape_str(x.shape()) + " and " + shape_str(y.shape()));
  }
  const std::size_t n = x.dim(0);
  if (n < 3) fail(ErrorCode::kInvalidArgument, "cka needs n >= 3 samples");
  auto center = [](const Tensor& t, const char* side) -> RowMatrix {
    const auto m = as_matrix(t);
    RowMatrix c = m.rowwise() - m.colwise().mean();
    if (c.squaredNorm() <= 1e-24 * std::max(m.squaredNorm(), 1e-300)) {
      fail(ErrorCode::kUndefinedMetric, std::string("cka undefined: ") + side +
                                            " features have zero variance");
    }
    return c;
  };
  const RowMatrix xc = center(x, "first");
  const RowMatrix yc = center(y, "second");
  const double dx = static_cast<double>(xc.cols()), dy = static_cast<double>(yc.cols());
  const double nn = static_cast<double>(n);
  double hxy, hxx, hyy;
  // Linear kernels: tr(K H L H) = ||Xc^T Yc||_F^2 = <Xc Xc^T, Yc Yc^T>.
  // The common (n-1)^2 factor cancels in the ratio.
  if (dx * dy + dx * dx + dy * dy <= nn * (dx + dy)) {
    hxy = (xc.transpose() * yc).squaredNorm();
    hxx = (xc.transpose() * xc).squaredNorm();
    hyy = (yc.transpose() * yc).squaredNorm();
  } else {
    const RowMatrix kx = xc * xc.transpose();
    const RowMatrix ky = yc * yc.transpose();
    hxy = (kx.array() * ky.array()).sum();
    hxx = kx.squaredNorm();
    hyy = ky.squaredNorm();
  }
  return std::clamp(hxy / std::sqrt(hxx * hyy), 0.0, 1.0);
}

Tensor cka_map(const ActivationCapture& a, const ActivationCapture& b) {
  if (a.rows() != b.rows()) {
    fail(ErrorCode::kShapeMismatch, "cka map needs captures of the same samples");
  }
  Tensor out({a.layers.size(), b.layers.size()});
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    for (std::size_t j = 0; j < b.layers.size(); ++j) {
      out[i * b.layers.size() + j] = cka(a.matrices[i], b.matrices[j]);
    }
  }
  return out;
}

AttributionDiversity attribution_diversity(const Tensor& maps) {
  if (maps.rank() < 2) {
    fail(ErrorCode::kShapeMismatch, "attribution maps must be M x n x ..., got " +
                                        shape_str(maps.shape()));
  }
  const std::size_t m = maps.dim(0), n = maps.dim(1);
  if (m < 2) fail(ErrorCode::kInvalidArgument, "attribution diversity needs at least 2 members");
  const std::size_t f = maps.numel() / (m * n);
  const double inv_m = 1.0 / static_cast<double>(m);
  AttributionDiversity out;
  out.per_sample.assign(n, 0.0);
  const auto data = maps.data();
  for (std::size_t r = 0; r < n; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < f; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += data[(i * n + r) * f + k];
      mean *= inv_m;
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = data[(i * n + r) * f + k] - mean;
        var += d * d;
      }
      total += var * inv_m;
    }
    out.per_sample[r] = total;
  }
  out.mean = mean_of(out.per_sample);
  return out;
}

double improvement(double ensemble_accuracy, std::span<const double> member_accuracies) {
  if (member_accuracies.empty()) {
    fail(ErrorCode::kInvalidArgument, "improvement needs at least one member accuracy");
  }
  auto check = [](double a) {
    if (!(a >= 0.0 && a <= 1.0)) {
      fail(ErrorCode::kDomain, "accuracy " + csv::format_number(a) + " outside [0, 1]");
    }
  };
  check(ensemble_accuracy);
  for (double a : member_accuracies) check(a);
  return ensemble_accuracy - *std::max_element(member_accuracies.begin(), member_accuracies.end());
}

std::vector<double> minmax_normalize(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::kInvalidArgument, "cannot normalize an empty list");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) {
    std::cerr << "warning: min-max normalization of " << values.size()
              << " equal values; using 0.5\n";
    return std::vector<double>(values.size(), 0.5);
  }
  const double range = *hi - *lo;
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back((v - *lo) / range);
  return out;
}

TrendReport pearson_trend(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorCode::kShapeMismatch, "trend needs equal-length series, got " +
                                        std::to_string(x.size()) + " and " +
                                        std::to_string(y.size()));
  }
  if (x.size() < 3) fail(ErrorCode::kInvalidArgument, "trend needs at least 3 points");
  const double mx = mean_of(x), my = mean_of(y);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail(ErrorCode::kUndefinedMetric, "Pearson r undefined: a series has zero variance");
  }
  TrendReport t;
  t.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  t.slope = sxy / sxx;
  t.intercept = my - t.slope * mx;
  t.n = x.size();
  return t;
}

void write_prediction_log(const std::filesystem::path& path, const PredictionLog& log) {
  csv::Table table;
  table.header = {"sample_id", "label"};
  for (std::size_t i = 0; i < log.members(); ++i) table.header.push_back("member_" + std::to_string(i));
  for (const auto& k : log.consensus_kinds) table.header.push_back("consensus_" + k);
  for (std::size_t r = 0; r < log.samples(); ++r) {
    std::vector<std::string> row = {std::to_string(log.sample_ids[r]), std::to_string(log.labels[r])};
    for (const auto& m : log.member_predictions) row.push_back(std::to_string(m[r]));
    for (const auto& c : log.consensus_predictions) row.push_back(std::to_string(c[r]));
    table.rows.push_back(std::move(row));
  }
  csv::write(path, table);
}

PredictionLog read_prediction_log(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path);
  if (table.header.size() < 3 || table.header[0] != "sample_id" || table.header[1] != "label") {
    fail(ErrorCode::kFormat, path.string() + " is not a prediction log");
  }
  PredictionLog log;
  std::vector<std::size_t> member_cols, consensus_cols;
  for (std::size_t c = 2; c < table.header.size(); ++c) {
    const std::string& h = table.header[c];
    if (h == "member_" + std::to_string(member_cols.size())) {
      member_cols.push_back(c);
    } else if (h.starts_with("consensus_")) {
      consensus_cols.push_back(c);
      log.consensus_kinds.push_back(h.substr(10));
    } else {
      fail(ErrorCode::kFormat, path.string() + ": unexpected column '" + h + "'");
    }
  }
  if (member_cols.empty()) fail(ErrorCode::kFormat, path.string() + ": no member columns");
  log.member_predictions.resize(member_cols.size());
  log.consensus_predictions.resize(consensus_cols.size());
  for (const auto& row : table.rows) {
    log.sample_ids.push_back(csv::parse_index(row[0]));
    log.labels.push_back(csv::parse_index(row[1]));
    for (std::size_t i = 0; i < member_cols.size(); ++i) {
      log.member_predictions[i].push_back(csv::parse_index(row[member_cols[i]]));
    }
    for (std::size_t k = 0; k < consensus_cols.size(); ++k) {
      log.consensus_predictions[k].push_back(csv::parse_index(row[consensus_cols[k]]));
    }
  }
  return log;
}

std::vector<MetricValue> log_metrics(const PredictionLog& log, const Tensor* attribution_maps) {
  std::vector<MetricValue> out;
  std::vector<double> member_acc;
  std::vector<Correctness> member_correct;
  for (std::size_t i = 0; i < log.members(); ++i) {
    member_acc.push_back(accuracy(log.member_predictions[i], log.labels));
    member_correct.push_back(correctness(log.member_predictions[i], log.labels));
    out.push_back({"member_" + std::to_string(i) + "_accuracy", member_acc.back()});
  }
  out.push_back({"mean_member_accuracy", mean_of(member_acc)});
  out.push_back({"top_member_accuracy", *std::max_element(member_acc.begin(), member_acc.end())});
  for (std::size_t k = 0; k < log.consensus_kinds.size(); ++k) {
    const double acc = accuracy(log.consensus_predictions[k], log.labels);
    out.push_back({"ensemble_accuracy_" + log.consensus_kinds[k], acc});
    out.push_back({"improvement_" + log.consensus_kinds[k], improvement(acc, member_acc)});
  }
  const bool pairwise = log.members() >= 2;
  auto maybe = [&](auto fn) { return pairwise ? try_metric(fn) : std::nullopt; };
  out.push_back({"disagreement", maybe([&] { return mean_pairwise_disagreement(member_correct); })});
  out.push_back({"q_statistic", maybe([&] { return mean_pairwise_q(member_correct); })});
  out.push_back({"rho", maybe([&] { return mean_pairwise_rho(member_correct); })});
  std::optional<double> h_corr, h_inco;
  if (pairwise && !log.consensus_kinds.empty()) {
    const ShannonSplit s = shannon_split(log.member_predictions,
                                         correctness(log.consensus_predictions[0], log.labels));
    h_corr = s.correct;
    h_inco = s.incorrect;
  }
  out.push_back({"shannon_correct", h_corr});
  out.push_back({"shannon_incorrect", h_inco});
  if (attribution_maps != nullptr) {
    if (attribution_maps->rank() < 2 || attribution_maps->dim(0) != log.members() ||
        attribution_maps->dim(1) != log.samples()) {
      fail(ErrorCode::kShapeMismatch, "attribution maps " + shape_str(attribution_maps->shape()) +
                                          " do not match the prediction log");
    }
    out.push_back({"attribution_diversity", attribution_diversity(*attribution_maps).mean});
  }
  return out;
}

}  // namespace ensdiv
