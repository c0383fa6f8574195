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

#ifndef STARFLOW_LOSS_HPP
#define STARFLOW_LOSS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "starflow/model.hpp"
#include "starflow/tensor.hpp"

namespace starflow {

// Multi-scale / multi-task loss weighting. alpha runs coarse to fine, one
// entry per pyramid level. lambda balances occlusion BCE against the flow
// term; in auto mode it is recomputed every call so that lambda * L_occ is
// auto_fraction of L_flow (no gradient flows through lambda).
struct LossWeights {
  std::vector<double> alpha = {0.32, 0.08, 0.02, 0.01};
  double lambda = 0.05;
  enum class LambdaMode { fixed, auto_balance };
  LambdaMode lambda_mode = LambdaMode::fixed;
  double auto_fraction = 0.5;
  // Swaps prediction and ground truth inside the BCE logarithms (the
  // degenerate printed form of the occlusion loss, kept for inspection).
  bool printed_bce = false;

  void validate() const;
};

// Sum over batch and pixels of the non-squared L2 flow error
// sqrt(du^2 + dv^2). pred and gt are [B,2,H,W] at the same level.
Tensor flow_loss(const Tensor& pred, const Tensor& gt);

// Self-balancing binary cross-entropy for occlusion maps [B,1,H,W]:
//   -1/2 * sum( w * gt * log p  +  wbar * (1-gt) * log(1-p) )
// with w = numel / (sum p + sum gt), wbar = numel / (sum(1-p) + sum(1-gt)).
// p is pred clamped to [1e-7, 1-1e-7]; the weights are part of the graph.
// pred must lie in [0,1] and gt must be binary.
Tensor occ_loss(const Tensor& pred, const Tensor& gt,
                bool printed_variant = false);

// Ground truth for one predicted time step at input resolution. has_gt =
// false marks an unannotated step (contributes zero loss).
struct StepGroundTruth {
  Tensor flow;  // [B,2,H,W]
  Tensor occ;   // [B,1,H,W] binary; may be undefined when occlusion is off
  bool has_gt = true;
};

// Per-level ground truth at prediction resolutions, coarse to fine (finest
// = input/2). Flow is average-pooled with values halved per octave;
// occlusion is max-pooled (occluded if any child pixel is).
struct GtPyramid {
  std::vector<Tensor> flow;
  std::vector<Tensor> occ;  // empty when the input occ was undefined
};
GtPyramid build_gt_pyramid(const Tensor& flow, const Tensor& occ, int levels);

struct SequenceLossResult {
  Tensor total;        // scalar, carries the graph
  double flow_part = 0.0;  // alpha-weighted flow term over supervised steps
  double occ_part = 0.0;   // alpha-weighted occlusion term (pre-lambda)
  double lambda_used = 0.0;
  int supervised_steps = 0;
};

// (1/T) * sum_t sum_l alpha_l * (L_flow + lambda * L_occ) over the T
// supervised steps. preds and gts are index-aligned per frame pair.
SequenceLossResult sequence_loss(const std::vector<PairOutput>& preds,
                                 const std::vector<StepGroundTruth>& gts,
                                 const LossWeights& weights);

// ---- evaluation metrics (plain scalars, no graph) --------------------------

// Mean endpoint error over pixels where mask != 0; mask may be undefined
// (all pixels). Empty selection -> absent.
std::optional<double> epe(const Tensor& pred, const Tensor& gt,
                          const Tensor& mask = Tensor());

// Percentage of valid pixels with endpoint error > 3 px.
std::optional<double> fl_all(const Tensor& pred, const Tensor& gt,
                             const Tensor& valid = Tensor());

// F1 of the occluded class after thresholding pred. By convention 1.0 when
// neither prediction nor ground truth contains a positive.
double occlusion_f1(const Tensor& pred, const Tensor& gt,
                    double threshold = 0.5);

// key=value lines, one metric per line, absent values spelled "absent".
std::string format_metrics(
    const std::map<std::string, std::optional<double>>& metrics);

}  // namespace starflow

#endif  // STARFLOW_LOSS_HPP
