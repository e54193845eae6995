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

#include "ensdiv/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "ensdiv/error.hpp"

namespace ensdiv {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kDomain: return "domain-error";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kNesting: return "nesting-too-deep";
    case ErrorCode::kNotOnGraph: return "not-on-graph";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kFormat: return "format-error";
    case ErrorCode::kIo: return "io-error";
    case ErrorCode::kConfig: return "config-error";
    case ErrorCode::kNotFound: return "not-found";
  }
  return "unknown";
}

int exit_code(ErrorCode code) { return 10 + static_cast<int>(code); }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    fail(ErrorCode::kInvalidArgument, "axis " + std::to_string(axis) +
                                          " out of range for rank " +
                                          std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) fail(ErrorCode::kShapeMismatch, "zero-sized dimension in " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) fail(ErrorCode::kShapeMismatch, "zero-sized dimension in " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    fail(ErrorCode::kShapeMismatch,
         "shape " + shape_str(shape_) + " needs " +
             std::to_string(shape_numel(shape_)) + " values, got " +
             std::to_string(data_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = value;
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& row : rows) {
    if (row.size() != m) fail(ErrorCode::kShapeMismatch, "ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{n, m}, std::move(data));
}

std::size_t Tensor::dim(int axis) const { return shape_[normalize_axis(axis, rank())]; }

double Tensor::item() const {
  if (data_.size() != 1) {
    fail(ErrorCode::kShapeMismatch, "item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    fail(ErrorCode::kShapeMismatch,
         "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ensdiv
