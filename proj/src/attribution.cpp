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


#include "ensdiv/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "ensdiv/autodiff.hpp"
#include "ensdiv/error.hpp"
#include "ensdiv/kernels.hpp"
#include "ensdiv/tensor_io.hpp"

namespace ensdiv {
namespace {

void check_batch(const Model& model, const Tensor& batch, std::size_t targets) {
  const Shape expected = model.spec().input.batch_shape(batch.rank() == 4 ? batch.dim(0) : 1);
  if (batch.shape() != expected) {
    fail(ErrorCode::kShapeMismatch, "attribution batch " + shape_str(batch.shape()) +
                                        " does not match model input " + shape_str(expected));
  }
  if (targets != batch.dim(0)) {
    fail(ErrorCode::kShapeMismatch, "attribution needs one target per row");
  }
}

Tensor add_row_axis(const Tensor& sample) {
  Shape s = sample.shape();
  s.insert(s.begin(), 1);
  return sample.reshaped(s);
}

Tensor drop_row_axis(const Tensor& rows) {
  return rows.reshaped(Shape(rows.shape().begin() + 1, rows.shape().end()));
}

const char* const kMapsPrefix = "maps.";

}  // namespace

std::string AttributionSpec::tag() const {
  if (method == AttributionMethod::kSaliency) return "saliency";
  return "ig-" + std::to_string(steps);
}

AttributionSpec attribution_from_tag(const std::string& tag) {
  AttributionSpec spec;
  if (tag == "saliency") return spec;
  if (tag.starts_with("ig-")) {
    const std::string digits = tag.substr(3);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
      spec.method = AttributionMethod::kIntegratedGradients;
      spec.steps = std::stoul(digits);
      if (spec.steps >= 1) return spec;
    }
  }
  fail(ErrorCode::kInvalidArgument,
       "unknown attribution method '" + tag + "' (expected saliency or ig-<steps>)");
}

Tensor input_gradients(const Model& model, const Tensor& batch,
                       std::span<const std::size_t> targets) {
  check_batch(model, batch, targets.size());
  const std::size_t classes = model.spec().classes;
  Tensor pick({targets.size(), classes});
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= classes) {
      fail(ErrorCode::kInvalidArgument, "target class " + std::to_string(targets[r]) +
                                            " out of range for " + std::to_string(classes) +
                                            " classes");
    }
    pick[r * classes + targets[r]] = 1.0;
  }
  ad::Graph graph;
  const auto params = model.bind(graph, false);
  const ad::Var x = graph.leaf(batch);
  const ad::Var score = ad::sum(model.forward(params, x) * ad::Var(pick));
  const ad::Var wrt[] = {x};
  return graph.grad(score, wrt).front().value();
}

Tensor saliency(const Model& model, const Tensor& batch, std::span<const std::size_t> targets) {
  return kernels::map(input_gradients(model, batch, targets),
                      [](double v) { return std::fabs(v); });
}

AttributionMap saliency(const Model& model, const Tensor& sample, std::size_t target) {
  const std::size_t t[] = {target};
  return {drop_row_axis(saliency(model, add_row_axis(sample), t)), target,
          AttributionMethod::kSaliency, 1};
}

Tensor integrated_gradients(const Model& model, const Tensor& batch, const Tensor& baseline,
                            std::span<const std::size_t> targets, std::size_t steps) {
  if (steps < 1) fail(ErrorCode::kInvalidArgument, "integrated gradients needs steps >= 1");
  if (baseline.shape() != batch.shape()) {
    fail(ErrorCode::kShapeMismatch, "baseline " + shape_str(baseline.shape()) +
                                        " does not match batch " + shape_str(batch.shape()));
  }
  const Tensor delta = kernels::binary(batch, baseline, kernels::BinaryOp::kSub);
  Tensor total(batch.shape());
  Tensor point(batch.shape());
  for (std::size_t k = 1; k <= steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t i = 0; i < point.numel(); ++i) point[i] = baseline[i] + alpha * delta[i];
    const Tensor g = input_gradients(model, point, targets);
    for (std::size_t i = 0; i < total.numel(); ++i) total[i] += g[i];
  }
  const double inv = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i < total.numel(); ++i) total[i] *= delta[i] * inv;
  return total;
}

AttributionMap integrated_gradients(const Model& model, const Tensor& sample,
                                    const Tensor& baseline, std::size_t target,
                                    std::size_t steps) {
  const std::size_t t[] = {target};
  return {drop_row_axis(integrated_gradients(model, add_row_axis(sample), add_row_axis(baseline),
                                             t, steps)),
          target, AttributionMethod::kIntegratedGradients, steps};
}

Tensor AttributionSet::member(std::size_t i) const {
  return kernels::slice(maps, 0, i, i + 1).reshaped(
      Shape(maps.shape().begin() + 1, maps.shape().end()));
}

AttributionSet attribution_batch(std::span<const Model> models, const Tensor& images,
                                 const AttributionSpec& spec,
                                 std::optional<std::span<const std::size_t>> labels,
                                 std::size_t chunk) {
  if (models.empty()) fail(ErrorCode::kInvalidArgument, "attribution batch needs a model");
  if (chunk == 0) fail(ErrorCode::kInvalidArgument, "attribution chunk must be >= 1");
  if (spec.method == AttributionMethod::kIntegratedGradients && spec.steps < 1) {
    fail(ErrorCode::kInvalidArgument, "integrated gradients needs steps >= 1");
  }
  const std::size_t n = images.rank() == 4 ? images.dim(0) : 0;
  for (const Model& m : models) check_batch(m, images, n);
  if (spec.target == TargetPolicy::kLabel && (!labels || labels->size() != n)) {
    fail(ErrorCode::kInvalidArgument, "label targets need one label per sample");
  }
  const std::size_t features = models.front().spec().input.features();
  Shape shape = images.shape();
  shape.insert(shape.begin(), models.size());
  AttributionSet out{spec, Tensor(shape), {}};
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::vector<std::size_t> targets =
        spec.target == TargetPolicy::kLabel
            ? std::vector<std::size_t>(labels->begin(), labels->end())
            : kernels::argmax_rows(predict_logits(models[i], images));
    for (std::size_t begin = 0; begin < n; begin += chunk) {
      const std::size_t end = std::min(n, begin + chunk);
      const Tensor rows = kernels::slice(images, 0, begin, end);
      const std::span<const std::size_t> t(targets.data() + begin, end - begin);
      const Tensor maps =
          spec.method == AttributionMethod::kSaliency
              ? saliency(models[i], rows, t)
              : integrated_gradients(models[i], rows, Tensor(rows.shape()), t, spec.steps);
      std::copy(maps.values().begin(), maps.values().end(),
                out.maps.data().begin() + static_cast<std::ptrdiff_t>((i * n + begin) * features));
    }
    out.targets.push_back(std::move(targets));
  }
  if (!out.maps.all_finite()) fail(ErrorCode::kNonFinite, "attribution map is not finite");
  return out;
}

void save_attributions(const std::filesystem::path& path, const AttributionSet& set) {
  Tensor targets({set.members(), set.samples()});
  for (std::size_t i = 0; i < set.members(); ++i) {
    for (std::size_t r = 0; r < set.samples(); ++r) {
      targets[i * set.samples() + r] = static_cast<double>(set.targets[i][r]);
    }
  }
  const std::vector<NamedTensor> tensors = {{kMapsPrefix + set.spec.tag(), set.maps},
                                            {"targets", targets}};
  io::save_tensors(path, tensors);
}

AttributionSet load_attributions(const std::filesystem::path& path) {
  const auto tensors = io::load_tensors(path);
  if (tensors.size() != 2 || !tensors[0].name.starts_with(kMapsPrefix) ||
      tensors[1].name != "targets" || tensors[0].tensor.rank() < 2 ||
      tensors[1].tensor.shape() != Shape{tensors[0].tensor.dim(0), tensors[0].tensor.dim(1)}) {
    fail(ErrorCode::kFormat, path.string() + " is not an attribution dump");
  }
  AttributionSet set;
  set.spec = attribution_from_tag(tensors[0].name.substr(std::string(kMapsPrefix).size()));
  set.maps = tensors[0].tensor;
  const Tensor& t = tensors[1].tensor;
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    std::vector<std::size_t> row;
    for (std::size_t r = 0; r < t.dim(1); ++r) row.push_back(static_cast<std::size_t>(t[i * t.dim(1) + r]));
    set.targets.push_back(std::move(row));
  }
  return set;
}

}  // namespace ensdiv
