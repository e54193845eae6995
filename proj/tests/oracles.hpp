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


// Brute-force reference implementations used as test oracles. Each one is
// computed along a different route than the library code (explicit
// matrices, alternative closed forms) so agreement is meaningful.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

namespace ensdiv::oracle {

using Matrix = std::vector<std::vector<double>>;

inline double disagreement(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  double differ = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) differ += (a[i] != b[i]) ? 1.0 : 0.0;
  return differ / static_cast<double>(a.size());
}

/// Yule's Q through the odds ratio; requires n10 * n01 > 0.
inline double q_statistic(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  double t[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < a.size(); ++i) t[a[i]][b[i]] += 1.0;
  const double odds = (t[1][1] * t[0][0]) / (t[1][0] * t[0][1]);
  return (odds - 1.0) / (odds + 1.0);
}

/// Pearson correlation of two series.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

inline double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// The correlation coefficient between two correctness vectors is the
/// Pearson correlation of their 0/1 indicators.
inline double rho(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  return pearson(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
}

/// Equitability from base-2 entropy; the base cancels in the ratio.
inline double equitability(const std::vector<std::size_t>& predictions) {
  std::map<std::size_t, double> counts;
  for (std::size_t p : predictions) counts[p] += 1.0;
  if (counts.size() == 1) return 0.0;
  double h = 0.0;
  for (const auto& [cls, c] : counts) {
    const double p = c / static_cast<double>(predictions.size());
    h -= p * std::log2(p);
  }
  return h / std::log2(static_cast<double>(counts.size()));
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

inline Matrix gram(const Matrix& x) {
  Matrix xt(x[0].size(), std::vector<double>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x[0].size(); ++j) xt[j][i] = x[i][j];
  }
  return multiply(x, xt);
}

/// tr(K H L H) / (n - 1)^2 with the centering matrix built explicitly.
inline double hsic(const Matrix& k, const Matrix& l) {
  const std::size_t n = k.size();
  Matrix h(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) h[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(n);
  }
  const Matrix prod = multiply(multiply(multiply(k, h), l), h);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += prod[i][i];
  return trace / (static_cast<double>(n - 1) * static_cast<double>(n - 1));
}

inline double cka(const Matrix& x, const Matrix& y) {
  const Matrix k = gram(x), l = gram(y);
  return hsic(k, l) / std::sqrt(hsic(k, k) * hsic(l, l));
}

/// Population variance via mean squared pairwise difference:
/// Var = sum_ij (a_i - a_j)^2 / (2 M^2).
inline double population_variance(const std::vector<double>& a) {
  double acc = 0.0;
  for (double x : a) {
    for (double y : a) acc += (x - y) * (x - y);
  }
  const double m = static_cast<double>(a.size());
  return acc / (2.0 * m * m);
}

inline double binomial(std::size_t n, std::size_t k) {
  double num = 1.0, den = 1.0;
  for (std::size_t i = 2; i <= n; ++i) num *= static_cast<double>(i);
  for (std::size_t i = 2; i <= k; ++i) den *= static_cast<double>(i);
  for (std::size_t i = 2; i <= n - k; ++i) den *= static_cast<double>(i);
  return num / den;
}

}  // namespace ensdiv::oracle
