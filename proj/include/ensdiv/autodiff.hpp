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

// Reverse-mode automatic differentiation with one level of nesting.
//
// A Graph is an append-only tape. Every differentiable op appends a node
// when at least one input requires a gradient; otherwise it returns a
// constant Var that lives outside any graph. Backward formulas are written
// in terms of the same Var ops, so running a backward pass with
// `create_graph` records the gradient computation itself and it can be
// differentiated once more. Nodes produced by such a recorded pass carry
// order 1; asking for a recorded backward through them is rejected.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ensdiv/kernels.hpp"
#include "ensdiv/tensor.hpp"

namespace ensdiv::ad {

class Graph;

/// Handle to a value, either a constant or a node of a live Graph. A Var
/// that belongs to a graph must not outlive it.
class Var {
 public:
  Var();
  /// Constant (no graph, no gradient).
  explicit Var(Tensor value);

  const Tensor& value() const { return *value_; }
  const Shape& shape() const { return value_->shape(); }
  bool requires_grad() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  std::int32_t id() const { return id_; }

 private:
  friend class Graph;
  std::shared_ptr<const Tensor> value_;
  Graph* graph_ = nullptr;
  std::int32_t id_ = -1;
};

using BackwardFn = std::function<std::vector<Var>(
    std::span<const Var> inputs, const Var& output, const Var& grad_output)>;

/// Leaf gradients from a first-order backward pass, keyed by Var.
class Gradients {
 public:
  bool contains(const Var& v) const;
  /// Gradient of `v`; zeros of v's shape when v did not influence the root.
  Tensor operator[](const Var& v) const;

 private:
  friend class Graph;
  std::unordered_map<std::int32_t, Tensor> grads_;
};

struct GradOptions {
  /// Record the backward computation so the result can be differentiated.
  bool create_graph = false;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf node. With `requires_grad == false` this is simply a constant.
  Var leaf(Tensor value, bool requires_grad = true);

  /// d(root)/d(leaf) for every requires-grad leaf reachable from root.
  /// `seed` defaults to ones for a one-element root and is required
  /// otherwise.
  Gradients backward(const Var& root, std::optional<Tensor> seed = std::nullopt);

  /// d(root)/d(w) for each w in `wrt`. With `create_graph` the returned
  /// Vars are graph nodes of order 1 and may be differentiated again.
  std::vector<Var> grad(const Var& root, std::span<const Var> wrt,
                        GradOptions options = {},
                        std::optional<Tensor> seed = std::nullopt);

  /// 1 while a recorded backward pass is running, else 0.
  int nesting_level() const { return level_; }
  std::size_t size() const { return nodes_.size(); }
  /// Derivative order of a node: 0 for forward values, 1 for anything
  /// computed from a recorded backward pass.
  int order(const Var& v) const;

  /// Used by op implementations. Returns a constant unless recording is on
  /// and some input is a node of this graph.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

 private:
  struct Node {
    std::shared_ptr<const Tensor> value;
    std::vector<Var> inputs;
    BackwardFn backward;
    int order = 0;
  };

  Var handle(std::int32_t id) const;
  std::vector<std::optional<Var>> run_backward(const Var& root, const Tensor& seed);
  void check_root(const Var& root) const;

  std::deque<Node> nodes_;
  int level_ = 0;
  bool recording_ = true;
};

using kernels::Conv2dParams;

// Elementwise arithmetic with numpy broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Throws kDomain when any divisor entry is zero.
Var div(const Var& a, const Var& b);
Var add(const Var& a, double b);
Var mul(const Var& a, double b);
Var neg(const Var& a);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator*(double s, const Var& a);
Var operator*(const Var& a, double s);
Var operator+(const Var& a, double s);
Var operator-(const Var& a, double s);
Var operator-(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var conv2d(const Var& x, const Var& w, Conv2dParams p = {});
Var conv2d_input_grad(const Var& grad_out, const Var& w, const Shape& input_shape,
                      Conv2dParams p);
Var conv2d_weight_grad(const Var& x, const Var& grad_out, const Shape& weight_shape,
                       Conv2dParams p);

/// Subgradient 0 at the kink.
Var relu(const Var& x);
/// Subgradient 0 at the kink.
Var abs(const Var& x);
/// Throws kDomain on non-positive entries.
Var log(const Var& x);
Var exp(const Var& x);
Var pow(const Var& x, double exponent);
Var square(const Var& x);

Var sum(const Var& x);
Var sum(const Var& x, int axis, bool keepdim = false);
Var mean(const Var& x);
Var mean(const Var& x, int axis, bool keepdim = false);
/// Gradient flows to the first maximal element of each fibre.
Var max(const Var& x, int axis, bool keepdim = false);

/// Over the last axis.
Var softmax(const Var& x);
Var log_softmax(const Var& x);

Var reshape(const Var& x, Shape shape);
Var slice(const Var& x, int axis, std::size_t begin, std::size_t end);
Var embed_slice(const Var& x, int axis, std::size_t begin, std::size_t full);
Var concat(std::span<const Var> parts, int axis);
/// Stacks equally shaped tensors along a new leading axis.
Var stack(std::span<const Var> parts);
Var broadcast_to(const Var& x, const Shape& shape);
Var sum_to(const Var& x, const Shape& shape);

/// Population variance over axis 0: mean((x - mean(x))^2).
Var variance_leading(const Var& x);

}  // namespace ensdiv::ad
