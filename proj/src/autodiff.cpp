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

#include "ensdiv/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "ensdiv/error.hpp"

namespace ensdiv::ad {
namespace k = ensdiv::kernels;

Var::Var() : value_(std::make_shared<const Tensor>()) {}

Var::Var(Tensor value) : value_(std::make_shared<const Tensor>(std::move(value))) {}

bool Gradients::contains(const Var& v) const { return grads_.count(v.id()) > 0; }

Tensor Gradients::operator[](const Var& v) const {
  auto it = grads_.find(v.id());
  if (v.id() < 0 || it == grads_.end()) return Tensor(v.shape());
  return it->second;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (!requires_grad) return Var(std::move(value));
  Node node;
  node.value = std::make_shared<const Tensor>(std::move(value));
  node.order = level_;
  nodes_.push_back(std::move(node));
  return handle(static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Graph::handle(std::int32_t id) const {
  Var v;
  v.value_ = nodes_[static_cast<std::size_t>(id)].value;
  v.graph_ = const_cast<Graph*>(this);
  v.id_ = id;
  return v;
}

int Graph::order(const Var& v) const {
  if (v.graph() != this || v.id() < 0) return 0;
  return nodes_[static_cast<std::size_t>(v.id())].order;
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool tracked = false;
  int order = level_;
  for (const Var& in : inputs) {
    if (in.graph() == nullptr) continue;
    if (in.graph() != this) {
      fail(ErrorCode::kNotOnGraph, "op mixes Vars from different graphs");
    }
    tracked = true;
    order = std::max(order, nodes_[static_cast<std::size_t>(in.id())].order);
  }
  if (!tracked || !recording_) return Var(std::move(value));
  Node node;
  node.value = std::make_shared<const Tensor>(std::move(value));
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  node.order = order;
  nodes_.push_back(std::move(node));
  return handle(static_cast<std::int32_t>(nodes_.size() - 1));
}

void Graph::check_root(const Var& root) const {
  if (root.graph() != this || root.id() < 0 ||
      static_cast<std::size_t>(root.id()) >= nodes_.size()) {
    fail(ErrorCode::kNotOnGraph, "backward root is not a node of this graph");
  }
}

std::vector<std::optional<Var>> Graph::run_backward(const Var& root, const Tensor& seed) {
  const auto last = static_cast<std::size_t>(root.id());
  std::vector<std::optional<Var>> grads(last + 1);
  grads[last] = Var(seed);
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!grads[i]) continue;
    // Copies: recording may append to nodes_ while the closure runs.
    const std::vector<Var> inputs = nodes_[i].inputs;
    const BackwardFn fn = nodes_[i].backward;
    if (!fn) continue;
    const Var out = handle(static_cast<std::int32_t>(i));
    std::vector<Var> in_grads = fn(inputs, out, *grads[i]);
    for (std::size_t j = 0; j < inputs.size(); ++j) {
      const Var& in = inputs[j];
      if (in.graph() != this || j >= in_grads.size()) continue;
      const auto p = static_cast<std::size_t>(in.id());
      if (in_grads[j].shape() != in.shape()) {
        fail(ErrorCode::kShapeMismatch, "internal: gradient shape " +
                                            shape_str(in_grads[j].shape()) +
                                            " for input " + shape_str(in.shape()));
      }
      grads[p] = grads[p] ? add(*grads[p], in_grads[j]) : in_grads[j];
    }
  }
  return grads;
}

namespace {

Tensor default_seed(const Var& root, std::optional<Tensor> seed) {
  if (seed) {
    if (seed->shape() != root.shape()) {
      fail(ErrorCode::kShapeMismatch, "seed " + shape_str(seed->shape()) +
                                          " does not match root " +
                                          shape_str(root.shape()));
    }
    return std::move(*seed);
  }
  if (root.value().numel() != 1) {
    fail(ErrorCode::kShapeMismatch,
         "backward from non-scalar root " + shape_str(root.shape()) + " needs a seed");
  }
  return Tensor::full(root.shape(), 1.0);
}

struct FlagGuard {
  FlagGuard(bool& flag, bool value) : ref(flag), saved(flag) { flag = value; }
  ~FlagGuard() { ref = saved; }
  bool& ref;
  bool saved;
};

struct LevelGuard {
  explicit LevelGuard(int& level) : ref(level) { ref = 1; }
  ~LevelGuard() { ref = 0; }
  int& ref;
};

}  // namespace

Gradients Graph::backward(const Var& root, std::optional<Tensor> seed) {
  check_root(root);
  const Tensor s = default_seed(root, std::move(seed));
  FlagGuard no_record(recording_, false);
  auto grads = run_backward(root, s);
  Gradients out;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i] && !nodes_[i].backward) {
      out.grads_.emplace(static_cast<std::int32_t>(i), grads[i]->value());
    }
  }
  return out;
}

std::vector<Var> Graph::grad(const Var& root, std::span<const Var> wrt,
                             GradOptions options, std::optional<Tensor> seed) {
  check_root(root);
  const Tensor s = default_seed(root, std::move(seed));
  std::vector<std::optional<Var>> grads;
  if (options.create_graph) {
    if (level_ != 0 || order(root) >= 1) {
      fail(ErrorCode::kNesting,
           "recorded backward through an already-differentiated value "
           "(derivative nesting deeper than one level)");
    }
    LevelGuard level(level_);
    grads = run_backward(root, s);
  } else {
    FlagGuard no_record(recording_, false);
    grads = run_backward(root, s);
  }
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.graph() != this) {
      fail(ErrorCode::kNotOnGraph, "grad() target is not a node of this graph");
    }
    const auto i = static_cast<std::size_t>(w.id());
    if (i < grads.size() && grads[i]) {
      out.push_back(*grads[i]);
    } else {
      out.emplace_back(Tensor(w.shape()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

Var make(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Graph* g = nullptr;
  for (const Var& v : inputs) {
    if (v.graph()) {
      g = v.graph();
      break;
    }
  }
  if (!g) return Var(std::move(value));
  return g->record(std::move(value), std::move(inputs), std::move(fn));
}

Var unbroadcast(const Var& g, const Shape& shape) {
  return g.shape() == shape ? g : sum_to(g, shape);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return make(k::binary(a.value(), b.value(), k::BinaryOp::kAdd), {a, b},
              [](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{unbroadcast(g, in[0].shape()),
                                        unbroadcast(g, in[1].shape())};
              });
}

Var sub(const Var& a, const Var& b) {
  return make(k::binary(a.value(), b.value(), k::BinaryOp::kSub), {a, b},
              [](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{unbroadcast(g, in[0].shape()),
                                        unbroadcast(neg(g), in[1].shape())};
              });
}

Var mul(const Var& a, const Var& b) {
  return make(k::binary(a.value(), b.value(), k::BinaryOp::kMul), {a, b},
              [](std::span<const Var> in, const Var&, const Var& g) {
                std::vector<Var> out(2);
                if (in[0].requires_grad()) out[0] = unbroadcast(mul(g, in[1]), in[0].shape());
                if (in[1].requires_grad()) out[1] = unbroadcast(mul(g, in[0]), in[1].shape());
                return out;
              });
}

Var div(const Var& a, const Var& b) {
  for (double v : b.value().data()) {
    if (v == 0.0) {
      fail(ErrorCode::kDomain, "division by zero (divisor shape " + shape_str(b.shape()) + ")");
    }
  }
  return make(k::binary(a.value(), b.value(), k::BinaryOp::kDiv), {a, b},
              [](std::span<const Var> in, const Var& out, const Var& g) {
                std::vector<Var> r(2);
                if (in[0].requires_grad()) r[0] = unbroadcast(div(g, in[1]), in[0].shape());
                if (in[1].requires_grad()) {
                  r[1] = unbroadcast(neg(div(mul(g, out), in[1])), in[1].shape());
                }
                return r;
              });
}

Var add(const Var& a, double b) { return add(a, Var(Tensor::scalar(b))); }
Var mul(const Var& a, double b) { return mul(a, Var(Tensor::scalar(b))); }
Var neg(const Var& a) { return mul(a, -1.0); }

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator*(double s, const Var& a) { return mul(a, s); }
Var operator*(const Var& a, double s) { return mul(a, s); }
Var operator+(const Var& a, double s) { return add(a, s); }
Var operator-(const Var& a, double s) { return add(a, -s); }
Var operator-(const Var& a) { return neg(a); }

Var matmul(const Var& a, const Var& b) {
  return make(k::matmul(a.value(), b.value()), {a, b},
              [](std::span<const Var> in, const Var&, const Var& g) {
                std::vector<Var> r(2);
                if (in[0].requires_grad()) r[0] = matmul(g, transpose(in[1]));
                if (in[1].requires_grad()) r[1] = matmul(transpose(in[0]), g);
                return r;
              });
}

Var transpose(const Var& a) {
  return make(k::transpose(a.value()), {a},
              [](std::span<const Var>, const Var&, const Var& g) {
                return std::vector<Var>{transpose(g)};
              });
}

Var conv2d(const Var& x, const Var& w, Conv2dParams p) {
  return make(k::conv2d(x.value(), w.value(), p), {x, w},
              [p](std::span<const Var> in, const Var&, const Var& g) {
                std::vector<Var> r(2);
                if (in[0].requires_grad()) r[0] = conv2d_input_grad(g, in[1], in[0].shape(), p);
                if (in[1].requires_grad()) r[1] = conv2d_weight_grad(in[0], g, in[1].shape(), p);
                return r;
              });
}

// z = A_w^T g, linear in both g and w:
//   <gz, z> = <conv(gz, w), g>, so dz/dg = conv(gz, w) and dz/dw = weight_grad(gz, g).
Var conv2d_input_grad(const Var& grad_out, const Var& w, const Shape& input_shape,
                      Conv2dParams p) {
  return make(k::conv2d_input_grad(grad_out.value(), w.value(), input_shape, p),
              {grad_out, w},
              [p](std::span<const Var> in, const Var&, const Var& g) {
                std::vector<Var> r(2);
                if (in[0].requires_grad()) r[0] = conv2d(g, in[1], p);
                if (in[1].requires_grad()) r[1] = conv2d_weight_grad(g, in[0], in[1].shape(), p);
                return r;
              });
}

// z = weight_grad(x, g): <gz, z> = <conv(x, gz), g>.
Var conv2d_weight_grad(const Var& x, const Var& grad_out, const Shape& weight_shape,
                       Conv2dParams p) {
  return make(k::conv2d_weight_grad(x.value(), grad_out.value(), weight_shape, p),
              {x, grad_out},
              [p](std::span<const Var> in, const Var&, const Var& g) {
                std::vector<Var> r(2);
                if (in[0].requires_grad()) r[0] = conv2d_input_grad(in[1], g, in[0].shape(), p);
                if (in[1].requires_grad()) r[1] = conv2d(in[0], g, p);
                return r;
              });
}

Var relu(const Var& x) {
  Tensor mask = k::map(x.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  Tensor out = k::binary(x.value(), mask, k::BinaryOp::kMul);
  auto shared = std::make_shared<const Tensor>(std::move(mask));
  return make(std::move(out), {x},
              [shared](std::span<const Var>, const Var&, const Var& g) {
                return std::vector<Var>{mul(g, Var(*shared))};
              });
}

Var abs(const Var& x) {
  Tensor sign = k::map(x.value(), [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
  Tensor out = k::map(x.value(), [](double v) { return std::fabs(v); });
  auto shared = std::make_shared<const Tensor>(std::move(sign));
  return make(std::move(out), {x},
              [shared](std::span<const Var>, const Var&, const Var& g) {
                return std::vector<Var>{mul(g, Var(*shared))};
              });
}

Var log(const Var& x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) fail(ErrorCode::kDomain, "log of non-positive value");
  }
  return make(k::map(x.value(), [](double v) { return std::log(v); }), {x},
              [](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{div(g, in[0])};
              });
}

Var exp(const Var& x) {
  return make(k::map(x.value(), [](double v) { return std::exp(v); }), {x},
              [](std::span<const Var>, const Var& out, const Var& g) {
                return std::vector<Var>{mul(g, out)};
              });
}

Var pow(const Var& x, double e) {
  if (e != std::floor(e)) {
    for (double v : x.value().data()) {
      if (v < 0.0) fail(ErrorCode::kDomain, "fractional power of negative value");
    }
  }
  return make(k::map(x.value(), [e](double v) { return std::pow(v, e); }), {x},
              [e](std::span<const Var> in, const Var&, const Var& g) {
                if (e == 1.0) return std::vector<Var>{g};
                return std::vector<Var>{mul(g, mul(pow(in[0], e - 1.0), e))};
              });
}

Var square(const Var& x) { return mul(x, x); }

Var sum(const Var& x) {
  return make(k::sum_all(x.value()), {x},
              [](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{broadcast_to(g, in[0].shape())};
              });
}

Var sum(const Var& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.value().rank());
  return make(k::sum_axis(x.value(), ax, keepdim), {x},
              [ax, keepdim](std::span<const Var> in, const Var&, const Var& g) {
                Var gk = g;
                if (!keepdim) {
                  Shape s = in[0].shape();
                  s[ax] = 1;
                  gk = reshape(g, s);
                }
                return std::vector<Var>{broadcast_to(gk, in[0].shape())};
              });
}

Var mean(const Var& x) {
  return mul(sum(x), 1.0 / static_cast<double>(x.value().numel()));
}

Var mean(const Var& x, int axis, bool keepdim) {
  const double n = static_cast<double>(x.value().dim(axis));
  return mul(sum(x, axis, keepdim), 1.0 / n);
}

Var max(const Var& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.value().rank());
  Tensor mask;
  Tensor value = k::max_axis(x.value(), ax, keepdim, &mask);
  auto shared = std::make_shared<const Tensor>(std::move(mask));
  return make(std::move(value), {x},
              [ax, keepdim, shared](std::span<const Var> in, const Var&, const Var& g) {
                Var gk = g;
                if (!keepdim) {
                  Shape s = in[0].shape();
                  s[ax] = 1;
                  gk = reshape(g, s);
                }
                return std::vector<Var>{mul(broadcast_to(gk, in[0].shape()), Var(*shared))};
              });
}

Var softmax(const Var& x) {
  return make(k::softmax(x.value()), {x},
              [](std::span<const Var>, const Var& out, const Var& g) {
                Var dot = sum(mul(g, out), -1, true);
                return std::vector<Var>{mul(out, sub(g, dot))};
              });
}

Var log_softmax(const Var& x) {
  return make(k::log_softmax(x.value()), {x},
              [](std::span<const Var> in, const Var&, const Var& g) {
                Var total = sum(g, -1, true);
                return std::vector<Var>{sub(g, mul(softmax(in[0]), total))};
              });
}

Var reshape(const Var& x, Shape shape) {
  if (x.shape() == shape) return x;
  return make(x.value().reshaped(std::move(shape)), {x},
              [](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{reshape(g, in[0].shape())};
              });
}

Var slice(const Var& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.value().rank());
  return make(k::slice(x.value(), ax, begin, end), {x},
              [ax, begin](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{
                    embed_slice(g, static_cast<int>(ax), begin, in[0].shape()[ax])};
              });
}

Var embed_slice(const Var& x, int axis, std::size_t begin, std::size_t full) {
  const std::size_t ax = normalize_axis(axis, x.value().rank());
  return make(k::embed_slice(x.value(), ax, begin, full), {x},
              [ax, begin](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{
                    slice(g, static_cast<int>(ax), begin, begin + in[0].shape()[ax])};
              });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts.front().value().rank());
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  return make(k::concat(values, ax), std::vector<Var>(parts.begin(), parts.end()),
              [ax](std::span<const Var> in, const Var&, const Var& g) {
                std::vector<Var> r(in.size());
                std::size_t begin = 0;
                for (std::size_t i = 0; i < in.size(); ++i) {
                  const std::size_t len = in[i].shape()[ax];
                  if (in[i].requires_grad()) r[i] = slice(g, static_cast<int>(ax), begin, begin + len);
                  begin += len;
                }
                return r;
              });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "stack of zero tensors");
  std::vector<Var> lifted;
  lifted.reserve(parts.size());
  for (const Var& p : parts) {
    if (p.shape() != parts.front().shape()) {
      fail(ErrorCode::kShapeMismatch, "stack of " + shape_str(p.shape()) + " and " +
                                          shape_str(parts.front().shape()));
    }
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, 0);
}

Var broadcast_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  return make(k::broadcast_to(x.value(), shape), {x},
              [](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{sum_to(g, in[0].shape())};
              });
}

Var sum_to(const Var& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  return make(k::sum_to(x.value(), shape), {x},
              [](std::span<const Var> in, const Var&, const Var& g) {
                return std::vector<Var>{broadcast_to(g, in[0].shape())};
              });
}

Var variance_leading(const Var& x) {
  if (x.value().rank() == 0) fail(ErrorCode::kShapeMismatch, "variance of a scalar");
  Var centered = sub(x, mean(x, 0, true));
  return mean(square(centered), 0, false);
}

}  // namespace ensdiv::ad
