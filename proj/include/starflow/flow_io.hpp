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

#ifndef STARFLOW_FLOW_IO_HPP
#define STARFLOW_FLOW_IO_HPP

#include <string>
#include <utility>

#include "starflow/png_io.hpp"
#include "starflow/tensor.hpp"

namespace starflow {

// Middlebury .flo container: float magic 202021.25, int32 width, int32
// height, then row-major interleaved (u,v) float32 pairs. Flow tensors are
// [2,H,W]; writing narrows to 32-bit.
Tensor read_flo(const std::string& path);
void write_flo(const std::string& path, const Tensor& flow);

// 16-bit 3-channel PNG flow encoding: ch1 = u*64 + 2^15, ch2 = v*64 + 2^15,
// ch3 = validity (0/1). Exact for flows on the 1/64 px grid within the
// encodable range. valid may be undefined on write (all pixels valid);
// read returns (flow [2,H,W], valid [1,H,W]).
std::pair<Tensor, Tensor> read_kitti_png(const std::string& path);
void write_kitti_png(const std::string& path, const Tensor& flow,
                     const Tensor& valid = Tensor());

// Direction-to-hue, magnitude-to-saturation color wheel rendering.
// max_mag <= 0 normalizes by the field's own maximum magnitude.
Image8 flow_to_color(const Tensor& flow, double max_mag = 0.0);

}  // namespace starflow

#endif  // STARFLOW_FLOW_IO_HPP
