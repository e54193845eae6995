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

#include "ensdiv/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ensdiv/error.hpp"
#include "ensdiv/rng.hpp"

namespace ensdiv {

std::string to_string(ModelKind kind) { return kind == ModelKind::kMlp ? "mlp" : "cnn"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "mlp") return ModelKind::kMlp;
  if (s == "cnn") return ModelKind::kCnn;
  fail(ErrorCode::kConfig, "unknown model kind '" + s + "'");
}

void ModelSpec::validate() const {
  if (classes < 2) fail(ErrorCode::kConfig, "model needs at least 2 classes");
  if (input.channels == 0 || input.height == 0 || input.width == 0) {
    fail(ErrorCode::kConfig, "model input dimensions must be >= 1");
  }
  if (kind == ModelKind::kMlp) {
    for (std::size_t w : hidden) {
      if (w == 0) fail(ErrorCode::kConfig, "mlp hidden widths must be >= 1");
    }
  } else {
    if (channels.empty()) fail(ErrorCode::kConfig, "cnn needs at least one conv layer");
    for (std::size_t c : channels) {
      if (c == 0) fail(ErrorCode::kConfig, "cnn channel counts must be >= 1");
    }
    if (kernel_size == 0 || kernel_size % 2 == 0) {
      fail(ErrorCode::kConfig, "cnn kernel size must be odd and >= 1");
    }
  }
}

std::string ModelSpec::label() const {
  std::ostringstream os;
  os << to_string(kind) << '[';
  const auto& widths = kind == ModelKind::kMlp ? hidden : channels;
  for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
  os << ']';
  if (kind == ModelKind::kCnn) os << 'k' << kernel_size;
  return os.str();
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"hidden", s.hidden},
                     {"channels", s.channels},
                     {"kernel_size", s.kernel_size},
                     {"input", {s.input.channels, s.input.height, s.input.width}},
                     {"classes", s.classes},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s = ModelSpec{};
  s.kind = model_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("hidden")) s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  if (j.contains("channels")) s.channels = j.at("channels").get<std::vector<std::size_t>>();
  if (j.contains("kernel_size")) s.kernel_size = j.at("kernel_size").get<std::size_t>();
  if (j.contains("input")) {
    const auto dims = j.at("input").get<std::vector<std::size_t>>();
    if (dims.size() != 3) fail(ErrorCode::kConfig, "model input must be [C, H, W]");
    s.input = {dims[0], dims[1], dims[2]};
  }
  if (j.contains("classes")) s.classes = j.at("classes").get<std::size_t>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
}

std::vector<ParamInfo> parameter_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamInfo> out;
  if (spec.kind == ModelKind::kMlp) {
    std::size_t in = spec.input.features();
    for (std::size_t i = 0; i <= spec.hidden.size(); ++i) {
      const std::size_t width = i < spec.hidden.size() ? spec.hidden[i] : spec.classes;
      const std::string name = "fc" + std::to_string(i);
      out.push_back({name + ".weight", {in, width}});
      out.push_back({name + ".bias", {width}});
      in = width;
    }
  } else {
    std::size_t in = spec.input.channels;
    const std::size_t k = spec.kernel_size;
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      const std::string name = "conv" + std::to_string(i);
      out.push_back({name + ".weight", {spec.channels[i], in, k, k}});
      out.push_back({name + ".bias", {spec.channels[i]}});
      in = spec.channels[i];
    }
    out.push_back({"head.weight", {in, spec.classes}});
    out.push_back({"head.bias", {spec.classes}});
  }
  return out;
}

std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const ParamInfo& p : parameter_layout(spec)) n += shape_numel(p.shape);
  return n;
}

std::vector<std::string> layer_names(const ModelSpec& spec) {
  std::vector<std::string> out;
  if (spec.kind == ModelKind::kMlp) {
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      out.push_back("fc" + std::to_string(i));
      out.push_back("relu" + std::to_string(i));
    }
    out.push_back("fc" + std::to_string(spec.hidden.size()));
  } else {
    for (std::size_t i = 0; i < spec.channels.size(); ++i) {
      out.push_back("conv" + std::to_string(i));
      out.push_back("relu" + std::to_string(i));
    }
    out.push_back("pool");
    out.push_back("head");
  }
  return out;
}

Model Model::build(const ModelSpec& spec) {
  Rng rng(spec.seed);
  std::vector<NamedTensor> params;
  for (const ParamInfo& info : parameter_layout(spec)) {
    Tensor t(info.shape);
    if (info.shape.size() > 1) {
      // fan_in: rows of a linear weight, c*k*k of a conv kernel.
      const std::size_t fan_in = info.shape.size() == 2
                                     ? info.shape[0]
                                     : info.shape[1] * info.shape[2] * info.shape[3];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : t.data()) v = u(rng);
    }
    params.push_back({info.name, std::move(t)});
  }
  return Model(spec, std::move(params));
}

Model::Model(ModelSpec spec, std::vector<NamedTensor> parameters)
    : spec_(std::move(spec)), params_(std::move(parameters)) {
  const auto layout = parameter_layout(spec_);
  if (layout.size() != params_.size()) {
    fail(ErrorCode::kShapeMismatch, "model " + spec_.label() + " expects " +
                                        std::to_string(layout.size()) + " parameter tensors, got " +
                                        std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params_[i].name != layout[i].name || params_[i].tensor.shape() != layout[i].shape) {
      fail(ErrorCode::kShapeMismatch,
           "parameter " + params_[i].name + " " + shape_str(params_[i].tensor.shape()) +
               " does not match " + layout[i].name + " " + shape_str(layout[i].shape));
    }
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const NamedTensor& p : params_) n += p.tensor.numel();
  return n;
}

std::vector<ad::Var> Model::bind(ad::Graph& graph, bool requires_grad) const {
  std::vector<ad::Var> out;
  out.reserve(params_.size());
  for (const NamedTensor& p : params_) out.push_back(graph.leaf(p.tensor, requires_grad));
  return out;
}

Tensor Model::forward(const Tensor& batch) const {
  std::vector<ad::Var> params;
  params.reserve(params_.size());
  for (const NamedTensor& p : params_) params.emplace_back(p.tensor);
  return forward(params, ad::Var(batch)).value();
}

ad::Var Model::forward(std::span<const ad::Var> params, const ad::Var& batch,
                       ActivationSink* sink) const {
  const Shape& shape = batch.shape();
  if (shape.size() != 4 || shape[1] != spec_.input.channels ||
      shape[2] != spec_.input.height || shape[3] != spec_.input.width) {
    fail(ErrorCode::kShapeMismatch, "batch " + shape_str(shape) + " does not match model input " +
                                        shape_str(spec_.input.batch_shape(0)).replace(1, 1, "n"));
  }
  if (params.size() != params_.size()) {
    fail(ErrorCode::kShapeMismatch, "forward got " + std::to_string(params.size()) +
                                        " parameters, model has " +
                                        std::to_string(params_.size()));
  }
  const std::size_t n = shape[0];
  auto keep = [&](const std::string& name, const ad::Var& v) {
    if (sink) (*sink)[name] = v.value();
  };
  if (spec_.kind == ModelKind::kMlp) {
    ad::Var h = ad::reshape(batch, {n, spec_.input.features()});
    const std::size_t layers = spec_.hidden.size() + 1;
    for (std::size_t i = 0; i < layers; ++i) {
      h = ad::add(ad::matmul(h, params[2 * i]), params[2 * i + 1]);
      keep("fc" + std::to_string(i), h);
      if (i + 1 < layers) {
        h = ad::relu(h);
        keep("relu" + std::to_string(i), h);
      }
    }
    return h;
  }
  const std::size_t pad = spec_.kernel_size / 2;
  ad::Var h = batch;
  for (std::size_t i = 0; i < spec_.channels.size(); ++i) {
    const std::size_t c = spec_.channels[i];
    h = ad::conv2d(h, params[2 * i], {1, pad});
    h = ad::add(h, ad::reshape(params[2 * i + 1], {c, 1, 1}));
    keep("conv" + std::to_string(i), h);
    h = ad::relu(h);
    keep("relu" + std::to_string(i), h);
  }
  const std::size_t c = spec_.channels.back();
  h = ad::mean(ad::reshape(h, {n, c, spec_.input.height * spec_.input.width}), 2);
  keep("pool", h);
  const std::size_t k = 2 * spec_.channels.size();
  h = ad::add(ad::matmul(h, params[k]), params[k + 1]);
  keep("head", h);
  return h;
}

Tensor predict_logits(const Model& model, const Tensor& images, std::size_t batch) {
  const std::size_t n = images.dim(0);
  if (n <= batch) return model.forward(images);
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < n; b += batch) {
    parts.push_back(model.forward(kernels::slice(images, 0, b, std::min(n, b + batch))));
  }
  return kernels::concat(parts, 0);
}

Ensemble::Ensemble(std::vector<Model> members) : members_(std::move(members)) {
  if (members_.size() < 2) fail(ErrorCode::kConfig, "an ensemble needs at least 2 members");
  for (const Model& m : members_) {
    if (m.spec().input != members_.front().spec().input ||
        m.spec().classes != members_.front().spec().classes) {
      fail(ErrorCode::kShapeMismatch, "ensemble members disagree on input shape or classes");
    }
  }
}

std::size_t Ensemble::parameter_count() const {
  std::size_t n = 0;
  for (const Model& m : members_) n += m.parameter_count();
  return n;
}

const Tensor& ActivationCapture::at(const std::string& layer) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] == layer) return matrices[i];
  }
  fail(ErrorCode::kNotFound, "no captured layer '" + layer + "'");
}

ActivationCapture capture_activations(const Model& model, const Tensor& images,
                                      std::span<const std::string> layers, std::size_t batch) {
  const auto known = layer_names(model.spec());
  for (const std::string& l : layers) {
    if (std::find(known.begin(), known.end(), l) == known.end()) {
      fail(ErrorCode::kNotFound, "unknown layer '" + l + "' for model " + model.spec().label());
    }
  }
  std::vector<ad::Var> params;
  for (const NamedTensor& p : model.parameters()) params.emplace_back(p.tensor);
  const std::size_t n = images.dim(0);
  std::vector<std::vector<Tensor>> chunks(layers.size());
  for (std::size_t b = 0; b < n; b += batch) {
    const std::size_t e = std::min(n, b + batch);
    ActivationSink sink;
    (void)model.forward(params, ad::Var(kernels::slice(images, 0, b, e)), &sink);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Tensor& a = sink.at(layers[i]);
      chunks[i].push_back(a.reshaped({e - b, a.numel() / (e - b)}));
    }
  }
  ActivationCapture out;
  out.layers.assign(layers.begin(), layers.end());
  for (auto& c : chunks) out.matrices.push_back(kernels::concat(c, 0));
  return out;
}

std::string checkpoint_header(const ModelSpec& spec) { return nlohmann::json(spec).dump(); }

std::size_t checkpoint_size(const ModelSpec& spec) {
  return kCheckpointMagic.size() + 4 + 8 + checkpoint_header(spec).size() +
         8 * parameter_count(spec);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ostringstream os(std::ios::binary);
  io::write_preamble(os, kCheckpointMagic, kCheckpointVersion, checkpoint_header(model.spec()));
  for (const NamedTensor& p : model.parameters()) io::write_f64s(os, p.tensor.data());
  io::write_file(path, os.str());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::istringstream is(io::read_file(path), std::ios::binary);
  const std::string header = io::read_preamble(is, kCheckpointMagic, kCheckpointVersion);
  ModelSpec spec;
  try {
    spec = nlohmann::json::parse(header).get<ModelSpec>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint spec header: ") + e.what());
  }
  std::vector<NamedTensor> params;
  for (const ParamInfo& info : parameter_layout(spec)) {
    Tensor t(info.shape);
    io::read_f64s(is, t.data(), info.name);
    params.push_back({info.name, std::move(t)});
  }
  io::expect_eof(is, "checkpoint " + path.string());
  return Model(spec, std::move(params));
}

Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Model m = load_checkpoint(path);
  if (!(m.spec() == expected)) {
    fail(ErrorCode::kShapeMismatch, "checkpoint " + path.string() + " holds " +
                                        m.spec().label() + ", expected " + expected.label());
  }
  return m;
}

}  // namespace ensdiv
