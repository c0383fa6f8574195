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

#ifndef STARFLOW_SYNTH_HPP
#define STARFLOW_SYNTH_HPP

#include <string>
#include <vector>

#include "starflow/tensor.hpp"

namespace starflow {

// A textured moving shape. Position at frame t is
// (x + vx*t + ax*t^2/2, y + vy*t + ay*t^2/2); motion is rigid translation,
// so every pixel of the sprite shares the sprite's per-frame displacement.
struct Sprite {
  enum class Shape { rect, ellipse };
  // noise: value-noise lattice (rich, bit-exact under integer motion).
  // affine: linear color ramp (smooth; photometrically consistent under
  // fractional motion even after bilinear resampling).
  enum class Texture { noise, affine };
  Shape shape = Shape::rect;
  Texture texture = Texture::noise;
  double x = 0.0, y = 0.0;  // top-left of the bounding box at t = 0
  double w = 8.0, h = 8.0;
  double vx = 0.0, vy = 0.0;  // px/frame
  double ax = 0.0, ay = 0.0;  // px/frame^2
  uint64_t texture_seed = 0;

  bool operator==(const Sprite&) const = default;
};

struct Degradation {
  double blur_sigma = 0.0;   // Gaussian blur; 0 = off
  double noise_sigma = 0.0;  // additive Gaussian pixel noise; 0 = off

  bool operator==(const Degradation&) const = default;
};

// Complete scene description. The background is an infinite textured plane
// moving at (bg_vx, bg_vy); sprites are listed back to front (the last one
// is nearest the camera and wins overlaps).
struct SceneSpec {
  int width = 32, height = 32;
  uint64_t background_seed = 0;
  Sprite::Texture background_texture = Sprite::Texture::noise;
  double bg_vx = 0.0, bg_vy = 0.0;
  std::vector<Sprite> sprites;
  Degradation degradation;
  // Per-frame speed bound checked during generation, so every ground-truth
  // displacement stays representable by the estimator's pyramid.
  double max_speed = 6.0;

  void validate() const;  // throws SpecError
  std::string to_json() const;
  static SceneSpec from_json(const std::string& text);
  bool operator==(const SceneSpec&) const = default;
};

// Frames plus exact ground truth. flow_gt[t] maps frame t to t+1; occ_gt[t]
// marks pixels of frame t whose target is out of frame or covered by a
// different surface at t+1 (z-buffer, not photometric).
struct SequenceSample {
  std::vector<Tensor> frames;   // N x [3,H,W] in [0,1]
  std::vector<Tensor> flow_gt;  // N-1 x [2,H,W]
  std::vector<Tensor> occ_gt;   // N-1 x [1,H,W] binary
  SceneSpec meta;
};

// Deterministic given (spec, n, seed); seed only drives the degradation
// noise. Throws SpecError when a sprite exceeds the canvas or any per-frame
// displacement exceeds spec.max_speed.
SequenceSample generate(const SceneSpec& spec, int n, uint64_t seed);

// Scene families used by the toy training suites.
//   shift:    one rectangle with integer velocity over a static background.
//   ablation: moving background plus two sprites with parallax and an
//             accelerating occluder - produces informative occlusion bands.
enum class ScenePreset { shift, ablation };
const char* scene_preset_name(ScenePreset p);
ScenePreset scene_preset_from_name(const std::string& name);
SceneSpec random_scene(ScenePreset preset, Rng& rng);

// On-disk layout: <dir>/frame_%02d.png (8-bit RGB), flow_%02d.flo,
// occ_%02d.png (8-bit gray 0/255), sample.json (the SceneSpec + frame
// count). Frames are quantized to 8 bits; flow and occlusion round-trip
// exactly for the dyadic velocities the presets use.
void write_sequence(const std::string& dir, const SequenceSample& sample);
SequenceSample read_sequence(const std::string& dir);

// Dataset root: numbered seq_%05d directories plus manifest.json.
void generate_dataset(const std::string& root, ScenePreset preset, int count,
                      int frames, uint64_t seed);
std::vector<SequenceSample> load_dataset(const std::string& root);

// Same sampling as generate_dataset without the PNG quantization; the
// training/ablation harness consumes this directly.
std::vector<SequenceSample> generate_dataset_in_memory(ScenePreset preset,
                                                       int count, int frames,
                                                       uint64_t seed);

}  // namespace starflow

#endif  // STARFLOW_SYNTH_HPP
