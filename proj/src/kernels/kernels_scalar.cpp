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

#include "starflow/kernels.hpp"

#include <cmath>

// Scalar reference kernels. These define the arithmetic contract; the AVX2
// variants must reproduce them bit for bit. Reductions therefore spell out
// their association explicitly instead of relying on the optimizer.

namespace starflow::kernels {
namespace {

void gemm_nn_scalar(int m, int n, int k, const double* a, int lda,
                    const double* b, int ldb, double* c, int ldc,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * ldc + j] : 0.0;
      for (int p = 0; p < k; ++p) {
        acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
      }
      c[i * ldc + j] = acc;
    }
  }
}

void gemm_tn_scalar(int m, int n, int k, const double* a, int lda,
                    const double* b, int ldb, double* c, int ldc,
                    bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = accumulate ? c[i * ldc + j] : 0.0;
      for (int p = 0; p < k; ++p) {
        acc = std::fma(a[p * lda + i], b[p * ldb + j], acc);
      }
      c[i * ldc + j] = acc;
    }
  }
}

void gemm_nt_scalar(int m, int n, int k, const double* a, int lda,
                    const double* b, int ldb, double* c, int ldc,
                    bool accumulate) {
  const int k4 = k & ~3;
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<int64_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<int64_t>(j) * ldb;
      // Four interleaved partial sums, matching one AVX2 register lane each.
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (int p = 0; p < k4; p += 4) {
        s0 = std::fma(arow[p + 0], brow[p + 0], s0);
        s1 = std::fma(arow[p + 1], brow[p + 1], s1);
        s2 = std::fma(arow[p + 2], brow[p + 2], s2);
        s3 = std::fma(arow[p + 3], brow[p + 3], s3);
      }
      double tail = 0.0;
      for (int p = k4; p < k; ++p) {
        tail = std::fma(arow[p], brow[p], tail);
      }
      const double dot = ((s0 + s2) + (s1 + s3)) + tail;
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + dot : dot;
    }
  }
}

void add_scalar(int64_t n, const double* x, const double* y, double* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_scalar(int64_t n, const double* x, const double* y, double* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void axpy_scalar(int64_t n, double a, const double* x, double* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_scalar(int64_t n, double a, double* x) {
  for (int64_t i = 0; i < n; ++i) x[i] *= a;
}

void leaky_relu_fwd_scalar(int64_t n, double slope, const double* x,
                           double* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_bwd_scalar(int64_t n, double slope, const double* x,
                           const double* g, double* gx) {
  for (int64_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : slope * g[i];
}

}  // namespace

namespace detail {
const Ops scalar_ops = {
    gemm_nn_scalar, gemm_tn_scalar,        gemm_nt_scalar,
    add_scalar,     mul_scalar,            axpy_scalar,
    scale_scalar,   leaky_relu_fwd_scalar, leaky_relu_bwd_scalar,
};
}  // namespace detail

}  // namespace starflow::kernels
