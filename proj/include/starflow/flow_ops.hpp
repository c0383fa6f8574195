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

#ifndef STARFLOW_FLOW_OPS_HPP
#define STARFLOW_FLOW_OPS_HPP

#include "starflow/tensor.hpp"

namespace starflow {

// Backward warping: output(x) = features(x + flow(x)) by bilinear sampling.
// flow is [B,2,H,W] with channel 0 = horizontal (x, rightward) and channel 1
// = vertical (y, downward) displacement in pixels. Taps outside the image
// read as zero. Differentiable w.r.t. both inputs; at integer sample
// coordinates the flow gradient is the one-sided bilinear slope.
Tensor warp(const Tensor& features, const Tensor& flow);

// Correlation cost volume. Output channel (dy+D)*(2D+1)+(dx+D), D=max_disp,
// holds (1/C) * sum_c f1(x) * f2(x + (dx,dy)); displacements that leave the
// image contribute zero.
Tensor correlation(const Tensor& f1, const Tensor& f2, int max_disp);

}  // namespace starflow

#endif  // STARFLOW_FLOW_OPS_HPP
