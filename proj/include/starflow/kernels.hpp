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

#ifndef STARFLOW_KERNELS_HPP
#define STARFLOW_KERNELS_HPP

#include <cstdint>

// Arithmetic inner loops behind the tensor ops. Every kernel exists twice:
// a scalar reference and an AVX2 variant, selected at runtime. The two are
// bit-identical by construction, which the kernel tests assert with exact
// comparisons:
//   * gemm_nn / gemm_tn accumulate each output element with a serial fma
//    chain over k; vectorizing across output columns does not reorder it.
//   * gemm_nt reduces over k with four interleaved partial sums (lane j
//    takes k = j mod 4), a serial tail from floor(K/4)*4, and the final
//    combine ((s0+s2)+(s1+s3)) + tail. The scalar reference implements the
//    same schedule.
// All matrices are row-major with explicit leading dimensions.
namespace starflow::kernels {

enum class Backend { scalar, avx2 };

// Highest backend this CPU supports.
Backend best_supported();
// Currently active backend. Defaults to best_supported(), overridable with
// the STARFLOW_KERNELS environment variable ("scalar" or "avx2").
Backend active();
// Returns false (and leaves the selection unchanged) if unsupported.
bool set_backend(Backend b);
const char* backend_name(Backend b);

struct Ops {
  // C[M,N] = (accumulate ? C : 0) + A[M,K] * B[K,N]
  void (*gemm_nn)(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc,
                  bool accumulate);
  // C[M,N] = (accumulate ? C : 0) + A^T * B, with A stored [K,M]
  void (*gemm_tn)(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc,
                  bool accumulate);
  // C[M,N] = (accumulate ? C : 0) + A * B^T, with B stored [N,K]
  void (*gemm_nt)(int m, int n, int k, const double* a, int lda,
                  const double* b, int ldb, double* c, int ldc,
                  bool accumulate);

  void (*add)(int64_t n, const double* x, const double* y, double* out);
  void (*mul)(int64_t n, const double* x, const double* y, double* out);
  // y += a * x
  void (*axpy)(int64_t n, double a, const double* x, double* y);
  // x *= a
  void (*scale)(int64_t n, double a, double* x);
  void (*leaky_relu_fwd)(int64_t n, double slope, const double* x, double* y);
  // gx += (x > 0 ? g : slope * g)
  void (*leaky_relu_bwd)(int64_t n, double slope, const double* x,
                         const double* g, double* gx);
};

const Ops& ops();

namespace detail {
extern const Ops scalar_ops;
#if defined(__x86_64__) || defined(_M_X64)
extern const Ops avx2_ops;
#endif
}  // namespace detail

}  // namespace starflow::kernels

#endif  // STARFLOW_KERNELS_HPP
