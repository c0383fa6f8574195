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

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace starflow::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<const Ops*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::scalar};
std::once_flag g_init;

const Ops* table_for(Backend b) {
#if defined(__x86_64__) || defined(_M_X64)
  if (b == Backend::avx2) return &detail::avx2_ops;
#endif
  (void)b;
  return &detail::scalar_ops;
}

void init() {
  Backend b = cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
  if (const char* env = std::getenv("STARFLOW_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) {
      b = Backend::scalar;
    } else if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) {
      b = Backend::avx2;
    }
  }
  g_backend.store(b);
  g_active.store(table_for(b));
}

}  // namespace

Backend best_supported() {
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend active() {
  std::call_once(g_init, init);
  return g_backend.load();
}

bool set_backend(Backend b) {
  std::call_once(g_init, init);
  if (b == Backend::avx2 && !cpu_has_avx2()) return false;
  g_backend.store(b);
  g_active.store(table_for(b));
  return true;
}

const char* backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

const Ops& ops() {
  std::call_once(g_init, init);
  return *g_active.load();
}

}  // namespace starflow::kernels
