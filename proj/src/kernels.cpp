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

#include "ensdiv/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ensdiv/error.hpp"

namespace ensdiv::kernels {
namespace {

// Splits `shape` around `axis` into (outer, length, inner) for strided loops.
struct AxisView {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape pad_left(const Shape& s, std::size_t rank) {
  Shape out(rank - s.size(), 1);
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Strides of `src` (padded to out's rank) with zeros on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& src, const Shape& out) {
  const Shape padded = pad_left(src, out.size());
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = out.size(); i-- > 0;) {
    strides[i] = padded[i] == 1 && out[i] != 1 ? 0 : stride;
    stride *= padded[i];
  }
  return strides;
}

// True when `src` broadcasts to `out` by repeating itself as a suffix, so
// that element i of the output reads src[i % src.numel()].
bool is_suffix_broadcast(const Shape& src, const Shape& out) {
  const Shape padded = pad_left(src, out.size());
  std::size_t i = 0;
  while (i < padded.size() && padded[i] == 1) ++i;
  for (; i < padded.size(); ++i) {
    if (padded[i] != out[i]) return false;
  }
  return true;
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t total = shape_numel(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k < total; ++k) {
    f(k, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * idx[d];
      ib -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

inline double apply(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::kAdd: return a + b;
    case BinaryOp::kSub: return a - b;
    case BinaryOp::kMul: return a * b;
    case BinaryOp::kDiv: return a / b;
  }
  return 0.0;
}

void check_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + " expects rank " +
                                        std::to_string(rank) + ", got " +
                                        shape_str(t.shape()));
  }
}

std::size_t conv_out(std::size_t in, std::size_t k, Conv2dParams p) {
  if (in + 2 * p.padding < k) {
    fail(ErrorCode::kShapeMismatch, "conv2d kernel larger than padded input");
  }
  return (in + 2 * p.padding - k) / p.stride + 1;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  const Shape pa = pad_left(a, rank);
  const Shape pb = pad_left(b, rank);
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      out[i] = pa[i];
    } else if (pa[i] == 1) {
      out[i] = pb[i];
    } else {
      fail(ErrorCode::kShapeMismatch,
           "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
  }
  return out;
}

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    auto o = out.data();
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], y[i]);
    return out;
  }
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  Tensor out(shape);
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  const bool a_full = a.shape() == shape || pad_left(a.shape(), shape.size()) == shape;
  const bool b_full = b.shape() == shape || pad_left(b.shape(), shape.size()) == shape;
  if (a_full && is_suffix_broadcast(b.shape(), shape)) {
    const std::size_t m = y.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], y[i % m]);
    return out;
  }
  if (b_full && is_suffix_broadcast(a.shape(), shape)) {
    const std::size_t m = x.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i % m], y[i]);
    return out;
  }
  const auto sa = broadcast_strides(a.shape(), shape);
  const auto sb = broadcast_strides(b.shape(), shape);
  for_each_broadcast(shape, sa, sb, [&](std::size_t k, std::size_t ia, std::size_t ib) {
    o[k] = apply(op, x[ia], y[ib]);
  });
  return out;
}

Tensor map(const Tensor& x, const std::function<double(double)>& f) {
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape) {
    fail(ErrorCode::kShapeMismatch,
         "cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  if (x.shape() == shape) return x;
  Tensor out(shape);
  auto o = out.data();
  auto in = x.data();
  if (is_suffix_broadcast(x.shape(), shape)) {
    const std::size_t m = in.size();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i % m];
    return out;
  }
  const auto sx = broadcast_strides(x.shape(), shape);
  const std::vector<std::size_t> zero(shape.size(), 0);
  for_each_broadcast(shape, sx, zero,
                     [&](std::size_t k, std::size_t ia, std::size_t) { o[k] = in[ia]; });
  return out;
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  if (broadcast_shapes(shape, x.shape()) != x.shape()) {
    fail(ErrorCode::kShapeMismatch,
         "cannot sum " + shape_str(x.shape()) + " down to " + shape_str(shape));
  }
  Tensor out(shape);
  auto o = out.data();
  auto in = x.data();
  if (is_suffix_broadcast(shape, x.shape())) {
    const std::size_t m = o.size();
    for (std::size_t i = 0; i < in.size(); ++i) o[i % m] += in[i];
    return out;
  }
  const auto so = broadcast_strides(shape, x.shape());
  const std::vector<std::size_t> zero(x.rank(), 0);
  for_each_broadcast(x.shape(), so, zero,
                     [&](std::size_t k, std::size_t io, std::size_t) { o[io] += in[k]; });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorCode::kShapeMismatch, "matmul of " + shape_str(a.shape()) +
                                        " and " + shape_str(b.shape()));
  }
  Tensor out(Shape{n, m});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    double* row = o.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = x[i * k + p];
      if (s == 0.0) continue;
      const double* yr = y.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += s * yr[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  check_rank(a, 2, "transpose");
  const std::size_t n = a.dim(0), m = a.dim(1);
  Tensor out(Shape{m, n});
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) o[j * n + i] = x[i * m + j];
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, Conv2dParams p) {
  check_rank(x, 4, "conv2d input");
  check_rank(w, 4, "conv2d kernel");
  if (x.dim(1) != w.dim(1)) {
    fail(ErrorCode::kShapeMismatch, "conv2d input " + shape_str(x.shape()) +
                                        " vs kernel " + shape_str(w.shape()));
  }
  if (p.stride == 0) fail(ErrorCode::kInvalidArgument, "conv2d stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = conv_out(h, kh, p), ow = conv_out(wd, kw, p);
  Tensor out(Shape{n, o, oh, ow});
  auto dst = out.data();
  auto src = x.data();
  auto ker = w.data();
  const long pad = static_cast<long>(p.padding);
  const long s = static_cast<long>(p.stride);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      double* plane = dst.data() + (b * o + oc) * oh * ow;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* in = src.data() + (b * c + ic) * h * wd;
        for (std::size_t ki = 0; ki < kh; ++ki) {
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const double kv = ker[((oc * c + ic) * kh + ki) * kw + kj];
            for (std::size_t r = 0; r < oh; ++r) {
              const long ir = static_cast<long>(r) * s - pad + static_cast<long>(ki);
              if (ir < 0 || ir >= static_cast<long>(h)) continue;
              const double* in_row = in + ir * static_cast<long>(wd);
              double* out_row = plane + r * ow;
              for (std::size_t q = 0; q < ow; ++q) {
                const long iq = static_cast<long>(q) * s - pad + static_cast<long>(kj);
                if (iq < 0 || iq >= static_cast<long>(wd)) continue;
                out_row[q] += kv * in_row[iq];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& w,
                         const Shape& input_shape, Conv2dParams p) {
  check_rank(grad_out, 4, "conv2d_input_grad");
  check_rank(w, 4, "conv2d_input_grad kernel");
  const std::size_t n = input_shape[0], c = input_shape[1], h = input_shape[2],
                    wd = input_shape[3];
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  if (grad_out.dim(0) != n || grad_out.dim(1) != o || w.dim(1) != c ||
      oh != conv_out(h, kh, p) || ow != conv_out(wd, kw, p)) {
    fail(ErrorCode::kShapeMismatch, "conv2d_input_grad: grad " +
                                        shape_str(grad_out.shape()) + " kernel " +
                                        shape_str(w.shape()) + " input " +
                                        shape_str(input_shape));
  }
  Tensor out(input_shape);
  auto dst = out.data();
  auto g = grad_out.data();
  auto ker = w.data();
  const long pad = static_cast<long>(p.padding);
  const long s = static_cast<long>(p.stride);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      const double* gplane = g.data() + (b * o + oc) * oh * ow;
      for (std::size_t ic = 0; ic < c; ++ic) {
        double* in = dst.data() + (b * c + ic) * h * wd;
        for (std::size_t ki = 0; ki < kh; ++ki) {
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const double kv = ker[((oc * c + ic) * kh + ki) * kw + kj];
            for (std::size_t r = 0; r < oh; ++r) {
              const long ir = static_cast<long>(r) * s - pad + static_cast<long>(ki);
              if (ir < 0 || ir >= static_cast<long>(h)) continue;
              double* in_row = in + ir * static_cast<long>(wd);
              const double* g_row = gplane + r * ow;
              for (std::size_t q = 0; q < ow; ++q) {
                const long iq = static_cast<long>(q) * s - pad + static_cast<long>(kj);
                if (iq < 0 || iq >= static_cast<long>(wd)) continue;
                in_row[iq] += kv * g_row[q];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out,
                          const Shape& weight_shape, Conv2dParams p) {
  check_rank(x, 4, "conv2d_weight_grad input");
  check_rank(grad_out, 4, "conv2d_weight_grad");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = weight_shape[0], kh = weight_shape[2], kw = weight_shape[3];
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  if (grad_out.dim(0) != n || grad_out.dim(1) != o || weight_shape[1] != c ||
      oh != conv_out(h, kh, p) || ow != conv_out(wd, kw, p)) {
    fail(ErrorCode::kShapeMismatch, "conv2d_weight_grad: input " +
                                        shape_str(x.shape()) + " grad " +
                                        shape_str(grad_out.shape()) + " kernel " +
                                        shape_str(weight_shape));
  }
  Tensor out(weight_shape);
  auto dst = out.data();
  auto g = grad_out.data();
  auto src = x.data();
  const long pad = static_cast<long>(p.padding);
  const long s = static_cast<long>(p.stride);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      const double* gplane = g.data() + (b * o + oc) * oh * ow;
      for (std::size_t ic = 0; ic < c; ++ic) {
        const double* in = src.data() + (b * c + ic) * h * wd;
        for (std::size_t ki = 0; ki < kh; ++ki) {
          for (std::size_t kj = 0; kj < kw; ++kj) {
            double acc = 0.0;
            for (std::size_t r = 0; r < oh; ++r) {
              const long ir = static_cast<long>(r) * s - pad + static_cast<long>(ki);
              if (ir < 0 || ir >= static_cast<long>(h)) continue;
              const double* in_row = in + ir * static_cast<long>(wd);
              const double* g_row = gplane + r * ow;
              for (std::size_t q = 0; q < ow; ++q) {
                const long iq = static_cast<long>(q) * s - pad + static_cast<long>(kj);
                if (iq < 0 || iq >= static_cast<long>(wd)) continue;
                acc += in_row[iq] * g_row[q];
              }
            }
            dst[((oc * c + ic) * kh + ki) * kw + kj] += acc;
          }
        }
      }
    }
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::scalar(s);
}

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<long>(axis));
  }
  Tensor out(std::move(shape));
  auto o = out.data();
  auto in = x.data();
  for (std::size_t a = 0; a < v.outer; ++a)
    for (std::size_t l = 0; l < v.length; ++l)
      for (std::size_t b = 0; b < v.inner; ++b)
        o[a * v.inner + b] += in[(a * v.length + l) * v.inner + b];
  return out;
}

Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim, Tensor* argmax_mask) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<long>(axis));
  }
  Tensor out(std::move(shape));
  if (argmax_mask) *argmax_mask = Tensor(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    for (std::size_t b = 0; b < v.inner; ++b) {
      std::size_t best = 0;
      double best_value = in[a * v.length * v.inner + b];
      for (std::size_t l = 1; l < v.length; ++l) {
        const double value = in[(a * v.length + l) * v.inner + b];
        if (value > best_value) {
          best_value = value;
          best = l;
        }
      }
      o[a * v.inner + b] = best_value;
      if (argmax_mask) (*argmax_mask)[(a * v.length + best) * v.inner + b] = 1.0;
    }
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) return Tensor::scalar(1.0);
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * len;
    double* dst = o.data() + r * len;
    const double m = *std::max_element(row, row + len);
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      dst[j] = std::exp(row[j] - m);
      z += dst[j];
    }
    for (std::size_t j = 0; j < len; ++j) dst[j] /= z;
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) return Tensor::scalar(0.0);
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  Tensor out(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * len;
    double* dst = o.data() + r * len;
    const double m = *std::max_element(row, row + len);
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < len; ++j) dst[j] = row[j] - lse;
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.dim(static_cast<int>(axis))) {
    fail(ErrorCode::kShapeMismatch, "slice [" + std::to_string(begin) + "," +
                                        std::to_string(end) + ") of axis " +
                                        std::to_string(axis) + " in " +
                                        shape_str(x.shape()));
  }
  const AxisView v = axis_view(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = end - begin;
  Tensor out(std::move(shape));
  auto o = out.data();
  auto in = x.data();
  const std::size_t len = end - begin;
  for (std::size_t a = 0; a < v.outer; ++a) {
    std::copy_n(in.data() + (a * v.length + begin) * v.inner, len * v.inner,
                o.data() + a * len * v.inner);
  }
  return out;
}

Tensor embed_slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t full) {
  const std::size_t len = x.dim(static_cast<int>(axis));
  if (begin + len > full) {
    fail(ErrorCode::kShapeMismatch, "embed_slice overflows target axis");
  }
  Shape shape = x.shape();
  shape[axis] = full;
  const AxisView v = axis_view(shape, axis);
  Tensor out(std::move(shape));
  auto o = out.data();
  auto in = x.data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    std::copy_n(in.data() + a * len * v.inner, len * v.inner,
                o.data() + (a * full + begin) * v.inner);
  }
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "concat of zero tensors");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) fail(ErrorCode::kInvalidArgument, "concat axis out of range");
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    Shape a = t.shape();
    Shape b = shape;
    if (a.size() != b.size()) {
      fail(ErrorCode::kShapeMismatch, "concat of " + shape_str(a) + " and " + shape_str(b));
    }
    a[axis] = b[axis] = 0;
    if (a != b) {
      fail(ErrorCode::kShapeMismatch,
           "concat of " + shape_str(t.shape()) + " and " + shape_str(shape));
    }
    total += t.shape()[axis];
  }
  shape[axis] = total;
  const AxisView v = axis_view(shape, axis);
  Tensor out(shape);
  auto o = out.data();
  std::size_t begin = 0;
  for (const Tensor& t : parts) {
    const std::size_t len = t.shape()[axis];
    auto in = t.data();
    for (std::size_t a = 0; a < v.outer; ++a) {
      std::copy_n(in.data() + a * len * v.inner, len * v.inner,
                  o.data() + (a * total + begin) * v.inner);
    }
    begin += len;
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  check_rank(x, 2, "argmax_rows");
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<std::size_t> out(n, 0);
  auto in = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (in[i * m + j] > in[i * m + best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

}  // namespace ensdiv::kernels
