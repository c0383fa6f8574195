// Copyright 2026 The starflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "starflow/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "starflow/kernels.hpp"

namespace starflow {

namespace {

std::atomic<int64_t> g_node_counter{0};
thread_local bool g_grad_enabled = true;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// True if the op should record parents / a backprop closure.
bool recording(const std::vector<Tensor>& parents) {
  if (!g_grad_enabled) return false;
  for (const auto& p : parents) {
    if (p.requires_grad()) return true;
  }
  return false;
}

// Allocates a grad buffer on the parent (if it participates) and returns
// it, or nullptr when the parent does not require grad.
double* grad_of(const std::shared_ptr<TensorImpl>& p) {
  if (!p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

namespace detail {

int64_t next_node_id() { return g_node_counter.fetch_add(1); }

Tensor make_node(std::vector<int> shape, const std::vector<Tensor>& parents) {
  auto impl = std::make_shared<TensorImpl>();
  impl->id = next_node_id();
  impl->values.assign(numel_of(shape), 0.0);
  impl->shape = std::move(shape);
  if (recording(parents)) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (const auto& p : parents) impl->parents.push_back(p.impl());
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->id = detail::next_node_id();
  impl->values.assign(numel_of(shape), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> values,
                         bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != numel_of(shape)) {
    throw DimensionError("from_data: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->id = detail::next_node_id();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = rng.normal() * stddev;
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, Rng& rng, double lo, double hi,
                       bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.size() != impl_->values.size()) {
    throw ContractError("grad requested before backward reached node " +
                        std::to_string(impl_->id));
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const auto& s = impl_->shape;
  if (idx.size() != s.size()) {
    throw DimensionError("at(): " + std::to_string(idx.size()) +
                         " indices for shape " + shape_str(s));
  }
  int64_t flat = 0;
  int axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[axis]) {
      throw DimensionError("at(): index " + std::to_string(i) +
                           " out of range on axis " + std::to_string(axis) +
                           " of " + shape_str(s));
    }
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->values[flat];
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->id = detail::next_node_id();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = false;
  return Tensor(std::move(impl));
}

// ---- elementwise ops -----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = detail::make_node(a.shape(), {a, b});
  const auto& k = kernels::ops();
  k.add(a.numel(), a.data(), b.data(), out.data());
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, bi, oi] {
      const auto& k2 = kernels::ops();
      int64_t n = oi->numel();
      if (double* ga = grad_of(ai)) k2.axpy(n, 1.0, oi->grad.data(), ga);
      if (double* gb = grad_of(bi)) k2.axpy(n, 1.0, oi->grad.data(), gb);
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = detail::make_node(a.shape(), {a, b});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, bi, oi] {
      const auto& k2 = kernels::ops();
      int64_t n = oi->numel();
      if (double* ga = grad_of(ai)) k2.axpy(n, 1.0, oi->grad.data(), ga);
      if (double* gb = grad_of(bi)) k2.axpy(n, -1.0, oi->grad.data(), gb);
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = detail::make_node(a.shape(), {a, b});
  kernels::ops().mul(a.numel(), a.data(), b.data(), out.data());
  if (out.requires_grad()) {
    auto ai = a.impl(), bi = b.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, bi, oi] {
      int64_t n = oi->numel();
      const double* g = oi->grad.data();
      if (double* ga = grad_of(ai)) {
        const double* pb = bi->values.data();
        for (int64_t i = 0; i < n; ++i) ga[i] = std::fma(g[i], pb[i], ga[i]);
      }
      if (double* gb = grad_of(bi)) {
        const double* pa = ai->values.data();
        for (int64_t i = 0; i < n; ++i) gb[i] = std::fma(g[i], pa[i], gb[i]);
      }
    };
  }
  return out;
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi] {
      if (double* ga = grad_of(ai)) {
        kernels::ops().axpy(oi->numel(), 1.0, oi->grad.data(), ga);
      }
    };
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi, c] {
      if (double* ga = grad_of(ai)) {
        kernels::ops().axpy(oi->numel(), c, oi->grad.data(), ga);
      }
    };
  }
  return out;
}

Tensor rsub_scalar(double c, const Tensor& a) {
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = c - pa[i];
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi] {
      if (double* ga = grad_of(ai)) {
        kernels::ops().axpy(oi->numel(), -1.0, oi->grad.data(), ga);
      }
    };
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = detail::make_node({1}, {a});
  const double* pa = a.data();
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += pa[i];
  out.data()[0] = s;
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi] {
      if (double* ga = grad_of(ai)) {
        double g = oi->grad[0];
        for (int64_t i = 0; i < ai->numel(); ++i) ga[i] += g;
      }
    };
  }
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::log(pa[i]);
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        const double* x = ai->values.data();
        for (int64_t i = 0; i < oi->numel(); ++i) ga[i] += g[i] / x[i];
      }
    };
  }
  return out;
}

Tensor sqrt(const Tensor& a) {
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::sqrt(pa[i]);
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    // Subgradient 0 at x == 0 keeps norms of exactly-zero residuals finite.
    out->backprop = [ai, oi] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        const double* y = oi->values.data();
        for (int64_t i = 0; i < oi->numel(); ++i) {
          if (y[i] > 0.0) ga[i] += g[i] / (2.0 * y[i]);
        }
      }
    };
  }
  return out;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) {
    throw ContractError("clamp: lo " + std::to_string(lo) + " > hi " +
                        std::to_string(hi));
  }
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    po[i] = std::min(std::max(pa[i], lo), hi);
  }
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi, lo, hi] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        const double* x = ai->values.data();
        for (int64_t i = 0; i < oi->numel(); ++i) {
          if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
        }
      }
    };
  }
  return out;
}

Tensor reciprocal(const Tensor& a) {
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = 1.0 / pa[i];
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        const double* y = oi->values.data();
        for (int64_t i = 0; i < oi->numel(); ++i) {
          ga[i] -= g[i] * y[i] * y[i];
        }
      }
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = detail::make_node(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    // Split by sign for stability at large |x|.
    double x = pa[i];
    if (x >= 0.0) {
      po[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      double e = std::exp(x);
      po[i] = e / (1.0 + e);
    }
  }
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        const double* y = oi->values.data();
        for (int64_t i = 0; i < oi->numel(); ++i) {
          ga[i] = std::fma(g[i], y[i] * (1.0 - y[i]), ga[i]);
        }
      }
    };
  }
  return out;
}

Tensor leaky_relu(const Tensor& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu: slope " + std::to_string(slope) +
                      " outside (0, 1)");
  }
  Tensor out = detail::make_node(a.shape(), {a});
  kernels::ops().leaky_relu_fwd(a.numel(), slope, a.data(), out.data());
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi, slope] {
      if (double* ga = grad_of(ai)) {
        kernels::ops().leaky_relu_bwd(oi->numel(), slope, ai->values.data(),
                                      oi->grad.data(), ga);
      }
    };
  }
  return out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw DimensionError("scale_by: scale has shape " + shape_str(s.shape()) +
                         ", want a single element");
  }
  Tensor out = detail::make_node(x.shape(), {x, s});
  const double c = s.data()[0];
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * c;
  if (out.requires_grad()) {
    auto xi = x.impl(), si = s.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [xi, si, oi] {
      const double* g = oi->grad.data();
      int64_t n = oi->numel();
      if (double* gx = grad_of(xi)) {
        kernels::ops().axpy(n, si->values[0], g, gx);
      }
      if (double* gs = grad_of(si)) {
        const double* px = xi->values.data();
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc = std::fma(g[i], px[i], acc);
        gs[0] += acc;
      }
    };
  }
  return out;
}

// ---- shape ops -----------------------------------------------------------

namespace {

// Collapses a shape around `axis` into [outer, axis, inner].
void split_axis(const std::vector<int>& shape, int axis, int64_t* outer,
                int64_t* inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= shape[i];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) {
    *inner *= shape[i];
  }
}

}  // namespace

Tensor concat(const std::vector<Tensor>& inputs, int axis) {
  if (inputs.empty()) throw DimensionError("concat: no inputs");
  const auto& s0 = inputs[0].shape();
  int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) {
    throw DimensionError("concat: axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  int axis_total = 0;
  for (const auto& t : inputs) {
    const auto& s = t.shape();
    if (static_cast<int>(s.size()) != rank) {
      throw DimensionError("concat: rank mismatch " + shape_str(s) + " vs " +
                           shape_str(s0));
    }
    for (int i = 0; i < rank; ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw DimensionError("concat: axis " + std::to_string(i) +
                             " mismatch " + shape_str(s) + " vs " +
                             shape_str(s0));
      }
    }
    axis_total += s[axis];
  }
  std::vector<int> out_shape = s0;
  out_shape[axis] = axis_total;
  Tensor out = detail::make_node(out_shape, inputs);

  int64_t outer, inner;
  split_axis(out_shape, axis, &outer, &inner);
  double* po = out.data();
  int64_t out_stride = static_cast<int64_t>(axis_total) * inner;
  int64_t offset = 0;
  for (const auto& t : inputs) {
    int64_t block = static_cast<int64_t>(t.shape()[axis]) * inner;
    const double* pt = t.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(pt + o * block, pt + (o + 1) * block,
                po + o * out_stride + offset);
    }
    offset += block;
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl().get();
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& t : inputs) ins.push_back(t.impl());
    out->backprop = [oi, ins, outer, inner, out_stride, axis] {
      const double* g = oi->grad.data();
      int64_t offset2 = 0;
      for (const auto& p : ins) {
        int64_t block = static_cast<int64_t>(p->shape[axis]) * inner;
        if (double* gp = grad_of(p)) {
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = g + o * out_stride + offset2;
            double* dst = gp + o * block;
            for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        offset2 += block;
      }
    };
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, int start, int stop) {
  const auto& s = a.shape();
  int rank = static_cast<int>(s.size());
  if (axis < 0 || axis >= rank) {
    throw DimensionError("slice: axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  if (start < 0 || stop > s[axis] || start >= stop) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " +
                         std::to_string(stop) + ") invalid on axis " +
                         std::to_string(axis) + " of " + shape_str(s));
  }
  std::vector<int> out_shape = s;
  out_shape[axis] = stop - start;
  Tensor out = detail::make_node(out_shape, {a});

  int64_t outer, inner;
  split_axis(s, axis, &outer, &inner);
  int64_t in_stride = static_cast<int64_t>(s[axis]) * inner;
  int64_t block = static_cast<int64_t>(stop - start) * inner;
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(pa + o * in_stride + start * inner,
              pa + o * in_stride + start * inner + block, po + o * block);
  }
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi, outer, inner, in_stride, block, start] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          double* dst = ga + o * in_stride + start * inner;
          const double* src = g + o * block;
          for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return out;
}

// ---- conv2d ---------------------------------------------------------------

namespace {

struct ConvDims {
  int B, Cin, H, W, Cout, k, stride, padding, dilation, OH, OW;
  int64_t col_rows() const { return static_cast<int64_t>(Cin) * k * k; }
  int64_t col_cols() const { return static_cast<int64_t>(OH) * OW; }
};

int conv_out_extent(int in, int pad, int k, int stride, int dilation,
                    const char* axis_name) {
  int span = in + 2 * pad - (dilation * (k - 1) + 1);
  if (span < 0 || span % stride != 0) {
    throw DimensionError(
        std::string("conv2d: ") + axis_name + " extent " + std::to_string(in) +
        " with padding " + std::to_string(pad) + ", kernel " +
        std::to_string(k) + ", stride " + std::to_string(stride) +
        ", dilation " + std::to_string(dilation) +
        " does not produce an integral output size");
  }
  return span / stride + 1;
}

ConvDims conv_dims(const Tensor& input, const Tensor& weight,
                   const Tensor& bias, int stride, int padding, int dilation) {
  if (input.shape().size() != 4) {
    throw DimensionError("conv2d: input rank " +
                         std::to_string(input.shape().size()) + ", want 4");
  }
  if (weight.shape().size() != 4) {
    throw DimensionError("conv2d: weight rank " +
                         std::to_string(weight.shape().size()) + ", want 4");
  }
  ConvDims d;
  d.B = input.dim(0);
  d.Cin = input.dim(1);
  d.H = input.dim(2);
  d.W = input.dim(3);
  d.Cout = weight.dim(0);
  d.k = weight.dim(2);
  if (weight.dim(3) != d.k) {
    throw DimensionError("conv2d: non-square kernel " +
                         shape_str(weight.shape()));
  }
  if (d.k % 2 == 0) {
    throw DimensionError("conv2d: even kernel size " + std::to_string(d.k));
  }
  if (weight.dim(1) != d.Cin) {
    throw DimensionError("conv2d: weight expects " +
                         std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(d.Cin));
  }
  if (bias.numel() != d.Cout) {
    throw DimensionError("conv2d: bias numel " + std::to_string(bias.numel()) +
                         " != output channels " + std::to_string(d.Cout));
  }
  if (stride < 1 || padding < 0 || dilation < 1) {
    throw ConfigError("conv2d: stride " + std::to_string(stride) +
                      ", padding " + std::to_string(padding) + ", dilation " +
                      std::to_string(dilation) + " out of range");
  }
  d.stride = stride;
  d.padding = padding;
  d.dilation = dilation;
  d.OH = conv_out_extent(d.H, padding, d.k, stride, dilation, "height");
  d.OW = conv_out_extent(d.W, padding, d.k, stride, dilation, "width");
  return d;
}

// Unfolds one batch image [Cin,H,W] into col [Cin*k*k, OH*OW]; out-of-image
// taps are zero.
void im2col(const double* x, const ConvDims& d, double* col) {
  const int64_t plane = static_cast<int64_t>(d.H) * d.W;
  int64_t r = 0;
  for (int ci = 0; ci < d.Cin; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx, ++r) {
        double* row = col + r * d.col_cols();
        const double* xc = x + ci * plane;
        int64_t o = 0;
        for (int oy = 0; oy < d.OH; ++oy) {
          int iy = oy * d.stride - d.padding + ky * d.dilation;
          for (int ox = 0; ox < d.OW; ++ox, ++o) {
            int ix = ox * d.stride - d.padding + kx * d.dilation;
            row[o] = (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W)
                         ? xc[static_cast<int64_t>(iy) * d.W + ix]
                         : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-adds col-layout gradients back into one batch image.
void col2im_add(const double* col, const ConvDims& d, double* gx) {
  const int64_t plane = static_cast<int64_t>(d.H) * d.W;
  int64_t r = 0;
  for (int ci = 0; ci < d.Cin; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx, ++r) {
        const double* row = col + r * d.col_cols();
        double* xc = gx + ci * plane;
        int64_t o = 0;
        for (int oy = 0; oy < d.OH; ++oy) {
          int iy = oy * d.stride - d.padding + ky * d.dilation;
          for (int ox = 0; ox < d.OW; ++ox, ++o) {
            int ix = ox * d.stride - d.padding + kx * d.dilation;
            if (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W) {
              xc[static_cast<int64_t>(iy) * d.W + ix] += row[o];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int dilation) {
  ConvDims d = conv_dims(input, weight, bias, stride, padding, dilation);
  Tensor out =
      detail::make_node({d.B, d.Cout, d.OH, d.OW}, {input, weight, bias});

  const int64_t K = d.col_rows();
  const int64_t N = d.col_cols();
  std::vector<double> col(K * N);
  const double* pb = bias.data();
  const auto& k = kernels::ops();
  for (int b = 0; b < d.B; ++b) {
    im2col(input.data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W, d,
           col.data());
    double* ob = out.data() + static_cast<int64_t>(b) * d.Cout * N;
    for (int co = 0; co < d.Cout; ++co) {
      std::fill(ob + co * N, ob + (co + 1) * N, pb[co]);
    }
    k.gemm_nn(d.Cout, static_cast<int>(N), static_cast<int>(K), weight.data(),
              static_cast<int>(K), col.data(), static_cast<int>(N), ob,
              static_cast<int>(N), /*accumulate=*/true);
  }

  if (out.requires_grad()) {
    auto xi = input.impl(), wi = weight.impl(), bi = bias.impl();
    TensorImpl* oi = out.impl().get();
    // col is rebuilt in the backward pass instead of caching B of them.
    out->backprop = [xi, wi, bi, oi, d] {
      const int64_t K2 = d.col_rows();
      const int64_t N2 = d.col_cols();
      const double* g = oi->grad.data();
      const auto& k2 = kernels::ops();
      double* gx = grad_of(xi);
      double* gw = grad_of(wi);
      double* gb = grad_of(bi);
      if (gb) {
        for (int b = 0; b < d.B; ++b) {
          const double* gbat = g + static_cast<int64_t>(b) * d.Cout * N2;
          for (int co = 0; co < d.Cout; ++co) {
            double acc = 0.0;
            const double* row = gbat + co * N2;
            for (int64_t i = 0; i < N2; ++i) acc += row[i];
            gb[co] += acc;
          }
        }
      }
      if (!gx && !gw) return;
      std::vector<double> col(K2 * N2);
      std::vector<double> gcol(gx ? K2 * N2 : 0);
      for (int b = 0; b < d.B; ++b) {
        const double* gbat = g + static_cast<int64_t>(b) * d.Cout * N2;
        if (gw) {
          im2col(xi->values.data() + static_cast<int64_t>(b) * d.Cin * d.H * d.W,
                 d, col.data());
          k2.gemm_nt(d.Cout, static_cast<int>(K2), static_cast<int>(N2), gbat,
                     static_cast<int>(N2), col.data(), static_cast<int>(N2),
                     gw, static_cast<int>(K2), /*accumulate=*/true);
        }
        if (gx) {
          k2.gemm_tn(static_cast<int>(K2), static_cast<int>(N2), d.Cout,
                     wi->values.data(), static_cast<int>(K2), gbat,
                     static_cast<int>(N2), gcol.data(), static_cast<int>(N2),
                     /*accumulate=*/false);
          col2im_add(gcol.data(), d,
                     gx + static_cast<int64_t>(b) * d.Cin * d.H * d.W);
        }
      }
    };
  }
  return out;
}

// ---- resampling ops --------------------------------------------------------

namespace {

// Bilinear tap for scale-2 align-corners-false sampling: output index i reads
// source coordinate (i + 0.5)/2 - 0.5, clamped to the valid range (border
// replicate).
struct Tap {
  int lo, hi;
  double frac;  // weight of hi
};

Tap up_tap(int i, int extent) {
  double src = (i + 0.5) / 2.0 - 0.5;
  if (src < 0.0) src = 0.0;
  double cap = static_cast<double>(extent - 1);
  if (src > cap) src = cap;
  int lo = static_cast<int>(src);
  Tap t;
  t.lo = lo;
  t.hi = std::min(lo + 1, extent - 1);
  t.frac = src - lo;
  return t;
}

void check_4d(const Tensor& a, const char* op) {
  if (a.shape().size() != 4) {
    throw DimensionError(std::string(op) + ": input rank " +
                         std::to_string(a.shape().size()) + ", want 4");
  }
}

}  // namespace

Tensor upsample2x(const Tensor& a) {
  check_4d(a, "upsample2x");
  int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  Tensor out = detail::make_node({B, C, 2 * H, 2 * W}, {a});
  std::vector<Tap> ty(2 * H), tx(2 * W);
  for (int i = 0; i < 2 * H; ++i) ty[i] = up_tap(i, H);
  for (int j = 0; j < 2 * W; ++j) tx[j] = up_tap(j, W);
  const double* pa = a.data();
  double* po = out.data();
  int64_t planes = static_cast<int64_t>(B) * C;
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = pa + p * H * W;
    double* dst = po + p * 4 * H * W;
    for (int i = 0; i < 2 * H; ++i) {
      const Tap& y = ty[i];
      for (int j = 0; j < 2 * W; ++j) {
        const Tap& x = tx[j];
        double top = src[y.lo * W + x.lo] * (1.0 - x.frac) +
                     src[y.lo * W + x.hi] * x.frac;
        double bot = src[y.hi * W + x.lo] * (1.0 - x.frac) +
                     src[y.hi * W + x.hi] * x.frac;
        dst[static_cast<int64_t>(i) * 2 * W + j] =
            top * (1.0 - y.frac) + bot * y.frac;
      }
    }
  }
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi, ty, tx, H, W, planes] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        for (int64_t p = 0; p < planes; ++p) {
          const double* gsrc = g + p * 4 * H * W;
          double* gdst = ga + p * H * W;
          for (int i = 0; i < 2 * H; ++i) {
            const Tap& y = ty[i];
            for (int j = 0; j < 2 * W; ++j) {
              const Tap& x = tx[j];
              double gv = gsrc[static_cast<int64_t>(i) * 2 * W + j];
              gdst[y.lo * W + x.lo] += gv * (1.0 - y.frac) * (1.0 - x.frac);
              gdst[y.lo * W + x.hi] += gv * (1.0 - y.frac) * x.frac;
              gdst[y.hi * W + x.lo] += gv * y.frac * (1.0 - x.frac);
              gdst[y.hi * W + x.hi] += gv * y.frac * x.frac;
            }
          }
        }
      }
    };
  }
  return out;
}

Tensor avgpool2x(const Tensor& a) {
  check_4d(a, "avgpool2x");
  int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw DimensionError("avgpool2x: spatial extent " + std::to_string(H) +
                         "x" + std::to_string(W) + " not even");
  }
  int OH = H / 2, OW = W / 2;
  Tensor out = detail::make_node({B, C, OH, OW}, {a});
  const double* pa = a.data();
  double* po = out.data();
  int64_t planes = static_cast<int64_t>(B) * C;
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = pa + p * H * W;
    double* dst = po + p * OH * OW;
    for (int i = 0; i < OH; ++i) {
      for (int j = 0; j < OW; ++j) {
        const double* s = src + static_cast<int64_t>(2 * i) * W + 2 * j;
        dst[static_cast<int64_t>(i) * OW + j] =
            (s[0] + s[1] + s[W] + s[W + 1]) * 0.25;
      }
    }
  }
  if (out.requires_grad()) {
    auto ai = a.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [ai, oi, H, W, OH, OW, planes] {
      if (double* ga = grad_of(ai)) {
        const double* g = oi->grad.data();
        for (int64_t p = 0; p < planes; ++p) {
          const double* gsrc = g + p * OH * OW;
          double* gdst = ga + p * H * W;
          for (int i = 0; i < OH; ++i) {
            for (int j = 0; j < OW; ++j) {
              double gv = gsrc[static_cast<int64_t>(i) * OW + j] * 0.25;
              double* t = gdst + static_cast<int64_t>(2 * i) * W + 2 * j;
              t[0] += gv;
              t[1] += gv;
              t[W] += gv;
              t[W + 1] += gv;
            }
          }
        }
      }
    };
  }
  return out;
}

// ---- backward sweep --------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss has shape " + shape_str(loss.shape()) +
                        ", want a single element");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not require grad");
  }

  // Iterative post-order DFS; post-order then reversed is a valid reverse
  // topological order of the DAG.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl().get(), 0});
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  // Interior grads are per-sweep scratch; only leaves accumulate across
  // repeated backward calls. Without the reset a second sweep would push
  // stale interior grads downstream twice.
  for (TensorImpl* n : order) {
    if (n->backprop) n->grad.assign(n->values.size(), 0.0);
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

}  // namespace starflow
