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

#ifndef STARFLOW_TRAINER_HPP
#define STARFLOW_TRAINER_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "starflow/loss.hpp"
#include "starflow/model.hpp"
#include "starflow/synth.hpp"

namespace starflow {

// Adam with bias correction. Gradients are read from the parameters'
// accumulated buffers; a parameter the backward pass never reached counts
// as zero gradient. Non-finite gradients raise DivergenceError.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // One update across all parameters. clip_norm > 0 rescales the step's
  // gradients so their global norm is at most clip_norm (the stored
  // buffers are untouched). Returns the pre-clip global gradient norm.
  double step(const std::vector<Parameter>& params, double lr,
              double clip_norm = 0.0);

  int64_t steps() const { return t_; }
  void reset();

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

enum class TrainStage { pretrain_2frame, multiframe };
const char* train_stage_name(TrainStage s);
TrainStage train_stage_from_name(const std::string& name);

// One optimization stage. The toy default mirrors the reference protocol's
// shape at desk scale: lr 1e-4 halved at iteration 1000 and every 500
// after, batches of 4.
struct TrainConfig {
  TrainStage stage = TrainStage::multiframe;
  int iterations = 2000;
  int batch_size = 4;
  double lr = 1e-4;
  int halve_at = 1000;     // first halving (0-based iteration index)
  int halve_period = 500;  // and every this many afterwards
  // Frames per training sequence; pretrain_2frame always uses 2 so the
  // temporal connection never engages.
  int sequence_length = 4;
  uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double clip_norm = 10.0;
  // KITTI-style sparse supervision: ground truth only on the last step.
  bool last_step_only = false;
  LossWeights loss;
  // Metric rows appended to the curve every this many iterations (0 = off).
  int eval_every = 0;

  void validate() const;  // throws ConfigError
  int effective_sequence_length() const;
  double lr_at(int iteration) const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct TrainPoint {
  int iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<TrainPoint> curve;  // one entry per iteration
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Runs one stage over the dataset. Deterministic given (seed, config,
// dataset). When out_dir is non-empty, writes curve.csv there, plus
// diverged.ckpt before raising DivergenceError on a non-finite loss or
// gradient.
TrainResult train(Model& model, const std::vector<SequenceSample>& dataset,
                  const TrainConfig& config, const std::string& out_dir = "");

// Metrics of the flow estimated between frames n_prime-1 and n_prime,
// pooled over every sequence (earlier pairs only feed the recurrence).
struct EvalResult {
  std::optional<double> epe_all, epe_noc, epe_occ;
  std::optional<double> fl_all;
  std::optional<double> occ_f1;  // absent when the model has no occlusion head
  int sequences = 0;

  std::map<std::string, std::optional<double>> as_map() const;
};

EvalResult evaluate(const Model& model,
                    const std::vector<SequenceSample>& dataset, int n_prime);

// One row of the comparison matrix: a named model variant trained with the
// shared two-stage protocol and scored on held-out data.
struct AblationArm {
  std::string name;
  ModelConfig model;
};

struct AblationRow {
  std::string name;
  int64_t params = 0;
  double relative_params = 0.0;  // percent vs the first (baseline) arm
  EvalResult eval;               // median-seed result
  std::vector<EvalResult> per_seed;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string table;  // printable analog of the comparison table
};

// Trains every arm for every seed (pretrain_2frame stage, then multiframe,
// fresh optimizer per stage), evaluates at eval_frames, and reports the
// per-arm median over seeds (median by occ-region EPE, falling back to
// all-EPE). All arms see identical data and seeds.
AblationReport run_ablation(const std::vector<AblationArm>& arms,
                            const std::vector<SequenceSample>& train_set,
                            const std::vector<SequenceSample>& eval_set,
                            const TrainConfig& pretrain_cfg,
                            const TrainConfig& multiframe_cfg,
                            const std::vector<uint64_t>& seeds,
                            int eval_frames, const std::string& out_dir = "");

// The canonical comparison matrix over (temporal mode) x (occlusion) with a
// shared decoder, baseline first.
std::vector<AblationArm> default_ablation_arms(const ModelConfig& base);

}  // namespace starflow

#endif  // STARFLOW_TRAINER_HPP
