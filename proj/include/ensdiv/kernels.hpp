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

// Non-differentiable tensor kernels. The autodiff layer composes these for
// both the forward values and the backward formulas.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ensdiv/tensor.hpp"

namespace ensdiv::kernels {

/// Numpy-style broadcast of two shapes; throws kShapeMismatch with both
/// shapes in the message when they do not conform.
Shape broadcast_shapes(const Shape& a, const Shape& b);

enum class BinaryOp { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op);
Tensor map(const Tensor& x, const std::function<double(double)>& f);

Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Sums `x` down to `shape`, the adjoint of broadcast_to.
Tensor sum_to(const Tensor& x, const Shape& shape);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: [n, c, h, w], w: [o, c, kh, kw] -> [n, o, oh, ow]. No bias.
Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dParams p);
/// Adjoint of conv2d with respect to its input.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& w,
                         const Shape& input_shape, Conv2dParams p);
/// Adjoint of conv2d with respect to its kernel.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out,
                          const Shape& weight_shape, Conv2dParams p);

Tensor sum_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim);
/// Max along `axis`; `argmax_mask` (same shape as x) receives a one-hot of
/// the first maximal element in every reduced fibre.
Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim,
                Tensor* argmax_mask = nullptr);

/// Softmax and log-softmax over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Places `x` at [begin, begin + x.dim(axis)) of a zero tensor whose `axis`
/// has length `full`. Adjoint of slice.
Tensor embed_slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t full);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

/// Row-wise argmax of a 2-D tensor, lowest index on ties.
std::vector<std::size_t> argmax_rows(const Tensor& x);

}  // namespace ensdiv::kernels
