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

#ifndef STARFLOW_MODEL_HPP
#define STARFLOW_MODEL_HPP

#include <map>
#include <string>
#include <vector>

#include "starflow/tensor.hpp"

namespace starflow {

enum class TemporalMode { none, trflow, trfeat };

const char* temporal_mode_name(TemporalMode m);
TemporalMode temporal_mode_from_name(const std::string& name);

// Architecture hyperparameters. All convolutions are 3x3 except the 1x1
// feature adapters and the 1x1 temporal compression.
struct ModelConfig {
  int levels = 4;
  // Channel width per pyramid stage, finest (input/2) to coarsest.
  std::vector<int> encoder_widths = {16, 32, 32, 32};
  // Width the per-level 1x1 adapters project encoder features to before the
  // (optionally scale-shared) decoder consumes them.
  int adapter_width = 16;
  std::vector<int> estimator_widths = {32, 32, 16};
  std::vector<int> context_widths = {16, 16, 16};
  // One dilation per context conv: len(context_widths) hidden + 1 output.
  std::vector<int> context_dilations = {1, 2, 4, 1};
  int max_disp = 2;
  int temporal_channels = 16;  // C_t, TRFeat state width
  bool use_occlusion = true;
  TemporalMode temporal_mode = TemporalMode::trfeat;
  bool share_decoder_across_scales = true;
  // The reversed-time pass is treated as an auxiliary geometry estimate and
  // not differentiated through unless this flag is set.
  bool backprop_through_backward_flow = false;
  int sequence_length = 4;  // N, training sequence length

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

// Per-pair outputs: one entry per pyramid level, coarse to fine. Flow values
// are in pixels at each level's own resolution (finest = input/2). occs
// holds sigmoid probabilities; when use_occlusion is off it is empty.
struct PairOutput {
  std::vector<Tensor> flows;
  std::vector<Tensor> occs;
  // TRFeat temporal state (1x1-compressed penultimate activations) per
  // level; empty for other modes. An empty vector is the invalid state.
  std::vector<Tensor> state;
};

struct ParamCount {
  int64_t total = 0;
  std::map<std::string, int64_t> by_group;  // encoder / adapter / decoder
};

class Model {
 public:
  Model(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // Feature pyramid, coarse to fine; H and W must divide by 2^levels.
  std::vector<Tensor> encode(const Tensor& image) const;

  // One time step over an already-encoded pair. temporal holds the per-level
  // lane described by temporal_mode (empty = invalid/initial state).
  PairOutput run_pyramid(const std::vector<Tensor>& pyr1,
                         const std::vector<Tensor>& pyr2,
                         const std::vector<Tensor>& temporal) const;

  PairOutput forward_pair(const Tensor& img1, const Tensor& img2,
                          const std::vector<Tensor>& temporal = {}) const;

  // Full doubly-recurrent pass over N frames; element t of the result is the
  // estimate for the pair (t, t+1). Time recurrence threads the temporal
  // state, re-aligned into each new frame's geometry with the backward flow.
  std::vector<PairOutput> forward_sequence(
      const std::vector<Tensor>& frames) const;

  // Finest-level flow of the reversed pair (t, t-1); temporal lane invalid.
  // Gradient-stopped unless config.backprop_through_backward_flow.
  Tensor estimate_backward_flow(const Tensor& img_t,
                                const Tensor& img_tm1) const;

  // TRFlow temporal lane: previous finest flow warped by the backward flow,
  // then pooled to every level with values halved per octave.
  std::vector<Tensor> temporal_connect_trflow(const Tensor& prev_flow,
                                              const Tensor& backward_flow) const;

  // Upsample a finest-level field to input resolution (flow values x2).
  static Tensor full_res_flow(const Tensor& finest_flow);
  static Tensor full_res_occ(const Tensor& finest_occ);

  ParamCount count_parameters() const;

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

  void zero_grads();

 private:
  struct Conv {
    Tensor weight, bias;
    int stride = 1, padding = 1, dilation = 1;
  };
  struct Decoder {
    std::vector<Conv> estimator;  // hidden convs, leaky-relu between
    Conv head;                    // 2 or 3 output channels, no activation
    std::vector<Conv> context;    // dilated refinement, residual output
    Conv compression;             // 1x1 penult -> C_t (TRFeat only)
  };

  Tensor apply(const Conv& c, const Tensor& x) const;
  const Decoder& decoder_at(int level) const;
  // Star cell at one level. temporal_feat may be undefined (lane of zeros).
  void star_cell(int level, const Tensor& feat1, const Tensor& feat2,
                 const Tensor& up_flow, const Tensor& up_occ,
                 const Tensor& temporal_feat, Tensor* flow, Tensor* occ,
                 Tensor* state) const;
  std::vector<Tensor> temporal_lane_trfeat(const std::vector<Tensor>& state,
                                           const Tensor& backward_flow) const;
  Tensor backward_flow_from_pyramids(const std::vector<Tensor>& pyr_t,
                                     const std::vector<Tensor>& pyr_tm1) const;

  Conv make_conv(const std::string& name, int in_ch, int out_ch, int k,
                 int padding, int dilation, double weight_scale, Rng& rng);

  ModelConfig config_;
  std::vector<std::vector<Conv>> encoder_;  // [stage][conv_a, conv_b]
  std::vector<Conv> adapters_;              // per level, coarse to fine
  std::vector<Decoder> decoders_;           // 1 if shared, else per level
  std::vector<Parameter> params_;
};

}  // namespace starflow

#endif  // STARFLOW_MODEL_HPP
