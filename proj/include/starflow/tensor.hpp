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

#ifndef STARFLOW_TENSOR_HPP
#define STARFLOW_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "starflow/common.hpp"

namespace starflow {

// Dense 64-bit float tensor and reverse-mode graph node. Values are
// immutable once an op consumed them (by convention); grad buffers
// accumulate across backward() calls until zero_grad(). The graph is a DAG
// of child -> parent shared_ptr links, so it lives exactly as long as some
// output tensor references it.
struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first needed; same numel as values
  bool requires_grad = false;
  int64_t id = 0;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Pulls this->grad into the parents' grads. Only set on non-leaf nodes.
  // The lambda may capture parent impls by shared_ptr, but must refer to its
  // own node through a raw pointer: the node owns the lambda, so a shared_ptr
  // self-capture would form a cycle and leak every graph ever built.
  std::function<void()> backprop;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false);
  // N(0, stddev^2) entries drawn from rng.
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(std::vector<int> shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[i]; }
  int64_t numel() const { return impl_->numel(); }
  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }
  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }
  int64_t node_id() const { return impl_->id; }

  // Gradient buffer; throws if backward never reached this tensor.
  const std::vector<double>& grad() const;
  // Whether a backward pass has populated the gradient buffer (a leaf cut
  // off from the loss, e.g. an unconsumed temporal state, never gets one).
  bool has_grad() const { return impl_->grad.size() == impl_->values.size(); }
  void zero_grad();

  // Value of a single-element tensor.
  double item() const;
  double at(std::initializer_list<int> idx) const;

  // Leaf copy sharing no graph history.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  TensorImpl* operator->() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Named trainable tensor. Sharing a Parameter between graph sites is
// ordinary aliasing of the underlying node; its grad accumulates across
// all sites.
struct Parameter {
  std::string name;
  Tensor tensor;
};

// Scoped switch that stops ops from recording graph edges (inference /
// gradient-stopped passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

namespace detail {
// Creates the result node of an op: allocates values, links parents and
// decides requires_grad from them and the global grad mode.
Tensor make_node(std::vector<int> shape, const std::vector<Tensor>& parents);
int64_t next_node_id();
}  // namespace detail

// ---- primitive ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
// c - x
Tensor rsub_scalar(double c, const Tensor& a);
// Sum of all elements, result shape {1}.
Tensor sum_all(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor reciprocal(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Elementwise max(x, slope*x); the subgradient at 0 is the negative-side
// slope.
Tensor leaky_relu(const Tensor& a, double slope = 0.1);
// x * s where s has shape {1}.
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor concat(const std::vector<Tensor>& inputs, int axis);
// Half-open [start, stop) along axis.
Tensor slice(const Tensor& a, int axis, int start, int stop);
// Cross-correlation conv. weight [Cout,Cin,k,k] with k odd; output size
// (H + 2*padding - dilation*(k-1) - 1) / stride + 1 must divide exactly.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 1, int dilation = 1);
// Bilinear x2 upsampling, align-corners-false, border replicate.
Tensor upsample2x(const Tensor& a);
// Non-overlapping 2x2 mean pooling.
Tensor avgpool2x(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Reverse-mode sweep from a scalar loss. Visits each node once in reverse
// topological order; repeated calls without zero_grad accumulate.
void backward(const Tensor& loss);

}  // namespace starflow

#endif  // STARFLOW_TENSOR_HPP
