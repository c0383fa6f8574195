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

#ifndef STARFLOW_GRADCHECK_HPP
#define STARFLOW_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "starflow/tensor.hpp"

namespace starflow {

struct FdReport {
  std::string op;
  double max_rel_err = 0.0;
  double threshold = 1e-4;
  int checked = 0;  // number of scalars compared
  bool pass() const { return max_rel_err < threshold; }
};

// Central finite-difference check of d(forward)/d(wrt) against reverse-mode
// gradients. `forward` must rebuild its graph from the current values of the
// `wrt` tensors (they are perturbed in place). When max_samples > 0 only a
// deterministic evenly-strided subset of each tensor's scalars is probed.
FdReport check_gradients(const std::string& op,
                         const std::function<Tensor()>& forward,
                         const std::vector<Tensor>& wrt, double eps = 1e-5,
                         double threshold = 1e-4, int max_samples = 0);

// Full verification sweep: every differentiable primitive once, the loss
// stack, and an end-to-end 3-frame sequence probed on a few scalars of each
// parameter group. `inject_fault` corrupts the warp entry's analytic
// gradient before comparison — a self-test that the harness actually fails.
std::vector<FdReport> run_gradcheck_suite(int samples, bool inject_fault);

}  // namespace starflow

#endif  // STARFLOW_GRADCHECK_HPP
