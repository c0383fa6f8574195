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

// Micro-benchmark for the GEMM kernels at conv-typical shapes. Used to size
// the synthetic training suites against the CPU budget; not part of the test
// suite.

#include <chrono>
#include <cstdio>
#include <vector>

#include "starflow/common.hpp"
#include "starflow/kernels.hpp"

namespace {

double bench_gemm(starflow::kernels::Backend backend, int m, int n, int k,
                  int repeats) {
  starflow::kernels::set_backend(backend);
  const auto& ops = starflow::kernels::ops();
  starflow::Rng rng(7);
  std::vector<double> a(static_cast<size_t>(m) * k);
  std::vector<double> b(static_cast<size_t>(k) * n);
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (auto& v : a) v = rng.uniform(-1.0, 1.0);
  for (auto& v : b) v = rng.uniform(-1.0, 1.0);

  ops.gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, false);  // warm
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < repeats; ++r) {
    ops.gemm_nn(m, n, k, a.data(), k, b.data(), n, c.data(), n, true);
  }
  auto t1 = std::chrono::steady_clock::now();
  double secs = std::chrono::duration<double>(t1 - t0).count();
  double macs = static_cast<double>(m) * n * k * repeats;
  return macs / secs * 1e-9;  // GMAC/s
}

}  // namespace

int main() {
  struct Shape {
    int m, n, k;
  };
  // Conv-as-GEMM shapes from the toy model: M=Cout, N=OH*OW, K=Cin*9.
  const Shape shapes[] = {{32, 1024, 288}, {32, 256, 396}, {16, 64, 288},
                          {3, 256, 144},   {64, 4096, 576}};
  for (const auto& s : shapes) {
    double scalar =
        bench_gemm(starflow::kernels::Backend::scalar, s.m, s.n, s.k, 50);
    double best = scalar;
    const char* best_name = "scalar";
    if (starflow::kernels::best_supported() ==
        starflow::kernels::Backend::avx2) {
      best = bench_gemm(starflow::kernels::Backend::avx2, s.m, s.n, s.k, 50);
      best_name = "avx2";
    }
    std::printf("gemm_nn %4dx%5dx%4d  scalar %7.2f GMAC/s  %s %7.2f GMAC/s\n",
                s.m, s.n, s.k, scalar, best_name, best);
  }
  return 0;
}
