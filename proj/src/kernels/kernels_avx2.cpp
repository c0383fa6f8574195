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

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

// AVX2/FMA variants. Compiled with -mavx2 -mfma; only reached when the
// dispatcher confirmed support. Each output element sees the exact fma
// sequence of the scalar reference (see kernels.hpp), so equivalence tests
// compare bitwise.

namespace starflow::kernels {
namespace {

// 4x8 register tile: one broadcast of A per row per k, two B vectors shared
// by all four rows.
void gemm_nn_tile4x8(int k, const double* a, int lda, const double* b,
                     int ldb, double* c, int ldc, bool accumulate) {
  __m256d acc[4][2];
  for (int r = 0; r < 4; ++r) {
    if (accumulate) {
      acc[r][0] = _mm256_loadu_pd(c + r * ldc);
      acc[r][1] = _mm256_loadu_pd(c + r * ldc + 4);
    } else {
      acc[r][0] = _mm256_setzero_pd();
      acc[r][1] = _mm256_setzero_pd();
    }
  }
  for (int p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + static_cast<int64_t>(p) * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + static_cast<int64_t>(p) * ldb + 4);
    for (int r = 0; r < 4; ++r) {
      const __m256d av = _mm256_set1_pd(a[static_cast<int64_t>(r) * lda + p]);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

void gemm_nn_tile1x8(int k, const double* a, const double* b, int ldb,
                     double* c, bool accumulate) {
  __m256d a0 = accumulate ? _mm256_loadu_pd(c) : _mm256_setzero_pd();
  __m256d a1 = accumulate ? _mm256_loadu_pd(c + 4) : _mm256_setzero_pd();
  for (int p = 0; p < k; ++p) {
    const __m256d av = _mm256_set1_pd(a[p]);
    a0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + static_cast<int64_t>(p) * ldb), a0);
    a1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + static_cast<int64_t>(p) * ldb + 4), a1);
  }
  _mm256_storeu_pd(c, a0);
  _mm256_storeu_pd(c + 4, a1);
}

// Scalar fallback for ragged edges; identical fma chain.
void gemm_nn_edge(int m, int n, int k, const double* a, int lda,
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

void gemm_nn_avx2(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc,
                  bool accumulate) {
  const int n8 = n & ~7;
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    for (int j = 0; j < n8; j += 8) {
      gemm_nn_tile4x8(k, a + static_cast<int64_t>(i) * lda, lda, b + j, ldb,
                      c + static_cast<int64_t>(i) * ldc + j, ldc, accumulate);
    }
  }
  for (; i < m; ++i) {
    for (int j = 0; j < n8; j += 8) {
      gemm_nn_tile1x8(k, a + static_cast<int64_t>(i) * lda, b + j, ldb,
                      c + static_cast<int64_t>(i) * ldc + j, accumulate);
    }
  }
  if (n8 < n) {
    gemm_nn_edge(m, n - n8, k, a, lda, b + n8, ldb, c + n8, ldc, accumulate);
  }
}

void gemm_tn_tile4x8(int k, const double* a, int lda, const double* b,
                     int ldb, double* c, int ldc, bool accumulate) {
  __m256d acc[4][2];
  for (int r = 0; r < 4; ++r) {
    if (accumulate) {
      acc[r][0] = _mm256_loadu_pd(c + r * ldc);
      acc[r][1] = _mm256_loadu_pd(c + r * ldc + 4);
    } else {
      acc[r][0] = _mm256_setzero_pd();
      acc[r][1] = _mm256_setzero_pd();
    }
  }
  for (int p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + static_cast<int64_t>(p) * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + static_cast<int64_t>(p) * ldb + 4);
    const double* arow = a + static_cast<int64_t>(p) * lda;
    for (int r = 0; r < 4; ++r) {
      const __m256d av = _mm256_set1_pd(arow[r]);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

void gemm_tn_edge(int m, int n, int k, const double* a, int lda,
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

void gemm_tn_avx2(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc,
                  bool accumulate) {
  const int n8 = n & ~7;
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    for (int j = 0; j < n8; j += 8) {
      gemm_tn_tile4x8(k, a + i, lda, b + j, ldb,
                      c + static_cast<int64_t>(i) * ldc + j, ldc, accumulate);
    }
  }
  if (i < m) {
    gemm_tn_edge(m - i, n8, k, a + i, lda, b, ldb,
                 c + static_cast<int64_t>(i) * ldc, ldc, accumulate);
  }
  if (n8 < n) {
    gemm_tn_edge(m, n - n8, k, a, lda, b + n8, ldb, c + n8, ldc, accumulate);
  }
}

// Horizontal combine fixed as ((s0+s2)+(s1+s3)); the scalar reference
// mirrors it.
inline double hsum4(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);  // lanes: s0+s2, s1+s3
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void gemm_nt_avx2(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc,
                  bool accumulate) {
  const int k4 = k & ~3;
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<int64_t>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<int64_t>(j) * ldb;
      __m256d acc = _mm256_setzero_pd();
      for (int p = 0; p < k4; p += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p),
                              _mm256_loadu_pd(brow + p), acc);
      }
      double tail = 0.0;
      for (int p = k4; p < k; ++p) {
        tail = std::fma(arow[p], brow[p], tail);
      }
      const double dot = hsum4(acc) + tail;
      c[i * ldc + j] = accumulate ? c[i * ldc + j] + dot : dot;
    }
  }
}

void add_avx2(int64_t n, const double* x, const double* y, double* out) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_avx2(int64_t n, const double* x, const double* y, double* out) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void axpy_avx2(int64_t n, double a, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(a, x[i], y[i]);
}

void scale_avx2(int64_t n, double a, double* x) {
  const __m256d av = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

void leaky_relu_fwd_avx2(int64_t n, double slope, const double* x,
                         double* y) {
  const __m256d sv = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d mask = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i,
                     _mm256_blendv_pd(_mm256_mul_pd(sv, xv), xv, mask));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_bwd_avx2(int64_t n, double slope, const double* x,
                         const double* g, double* gx) {
  const __m256d sv = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d gv = _mm256_loadu_pd(g + i);
    const __m256d mask = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    const __m256d pick = _mm256_blendv_pd(_mm256_mul_pd(sv, gv), gv, mask);
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), pick));
  }
  for (; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : slope * g[i];
}

}  // namespace

namespace detail {
const Ops avx2_ops = {
    gemm_nn_avx2, gemm_tn_avx2,        gemm_nt_avx2,
    add_avx2,     mul_avx2,            axpy_avx2,
    scale_avx2,   leaky_relu_fwd_avx2, leaky_relu_bwd_avx2,
};
}  // namespace detail

}  // namespace starflow::kernels

#endif  // x86_64
