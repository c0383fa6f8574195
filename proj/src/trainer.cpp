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

#include "starflow/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace starflow {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Stacks per-sample [C,H,W] tensors into one [B,C,H,W] batch.
Tensor stack(const std::vector<const Tensor*>& items) {
  const Tensor& first = *items[0];
  Tensor out = Tensor::zeros({static_cast<int>(items.size()), first.dim(0),
                              first.dim(1), first.dim(2)});
  const size_t chw = first.values().size();
  for (size_t b = 0; b < items.size(); ++b) {
    if (items[b]->shape() != first.shape()) {
      throw ContractError("batch mixes shapes " + shape_str(first.shape()) +
                          " and " + shape_str(items[b]->shape()));
    }
    std::copy(items[b]->values().begin(), items[b]->values().end(),
              out.values().begin() + b * chw);
  }
  return out;
}

}  // namespace

Adam::Adam(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 ||
      eps <= 0.0) {
    throw ConfigError("adam: betas must lie in [0,1) and eps must be > 0");
  }
}

void Adam::reset() {
  t_ = 0;
  m_.clear();
  v_.clear();
}

double Adam::step(const std::vector<Parameter>& params, double lr,
                  double clip_norm) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].tensor.values().size(), 0.0);
      v_[i].assign(params[i].tensor.values().size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw ContractError("adam: parameter list changed size mid-run");
  }

  // Validate every gradient and measure the global norm before touching any
  // parameter, so a divergence abort leaves the model in its last good
  // state. A parameter the backward pass never reached contributes zero.
  double sq = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i].tensor;
    if (m_[i].size() != t.values().size()) {
      throw ContractError("adam: parameter " + params[i].name +
                          " changed shape mid-run");
    }
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) {
        throw DivergenceError("non-finite gradient in " + params[i].name);
      }
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  const double scale =
      clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;  // aliases the parameter's storage
    const bool reached = t.has_grad();
    double* w = t.data();
    for (size_t k = 0; k < m_[i].size(); ++k) {
      const double g = reached ? t.grad()[k] * scale : 0.0;
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i][k] / bc1;
      const double vhat = v_[i][k] / bc2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
      if (!std::isfinite(w[k])) {
        throw DivergenceError("parameter " + params[i].name +
                              " became non-finite after the update");
      }
    }
  }
  return norm;
}

const char* train_stage_name(TrainStage s) {
  return s == TrainStage::pretrain_2frame ? "pretrain_2frame" : "multiframe";
}

TrainStage train_stage_from_name(const std::string& name) {
  if (name == "pretrain_2frame") return TrainStage::pretrain_2frame;
  if (name == "multiframe") return TrainStage::multiframe;
  throw ConfigError("unknown train stage \"" + name +
                    "\" (want pretrain_2frame|multiframe)");
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (halve_at < 0) throw ConfigError("halve_at must be >= 0");
  if (halve_period < 1) throw ConfigError("halve_period must be >= 1");
  if (sequence_length < 2) throw ConfigError("sequence_length must be >= 2");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
  Adam probe(beta1, beta2, eps);  // shares the betas/eps validation
  loss.validate();
}

int TrainConfig::effective_sequence_length() const {
  return stage == TrainStage::pretrain_2frame ? 2 : sequence_length;
}

double TrainConfig::lr_at(int iteration) const {
  if (iteration < halve_at) return lr;
  const int halvings = 1 + (iteration - halve_at) / halve_period;
  return lr * std::pow(0.5, halvings);
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = train_stage_name(stage);
  j["iterations"] = iterations;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["halve_at"] = halve_at;
  j["halve_period"] = halve_period;
  j["sequence_length"] = sequence_length;
  j["seed"] = seed;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["clip_norm"] = clip_norm;
  j["last_step_only"] = last_step_only;
  j["eval_every"] = eval_every;
  j["loss"] = {{"alpha", loss.alpha},
               {"lambda", loss.lambda},
               {"lambda_mode",
                loss.lambda_mode == LossWeights::LambdaMode::fixed
                    ? "fixed"
                    : "auto_balance"},
               {"auto_fraction", loss.auto_fraction},
               {"printed_bce", loss.printed_bce}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") +
                      e.what());
  }
  static const std::vector<std::string> known = {
      "stage",      "iterations", "batch_size",     "lr",
      "halve_at",   "halve_period", "sequence_length", "seed",
      "beta1",      "beta2",      "eps",            "clip_norm",
      "last_step_only", "eval_every", "loss"};
  static const std::vector<std::string> known_loss = {
      "alpha", "lambda", "lambda_mode", "auto_fraction", "printed_bce"};
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw ConfigError("train config has unknown key \"" + key + "\"");
      }
    }
    if (j.contains("stage")) {
      cfg.stage = train_stage_from_name(j["stage"].get<std::string>());
    }
    if (j.contains("iterations")) cfg.iterations = j["iterations"].get<int>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("halve_at")) cfg.halve_at = j["halve_at"].get<int>();
    if (j.contains("halve_period")) {
      cfg.halve_period = j["halve_period"].get<int>();
    }
    if (j.contains("sequence_length")) {
      cfg.sequence_length = j["sequence_length"].get<int>();
    }
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
    if (j.contains("eps")) cfg.eps = j["eps"].get<double>();
    if (j.contains("clip_norm")) cfg.clip_norm = j["clip_norm"].get<double>();
    if (j.contains("last_step_only")) {
      cfg.last_step_only = j["last_step_only"].get<bool>();
    }
    if (j.contains("eval_every")) cfg.eval_every = j["eval_every"].get<int>();
    if (j.contains("loss")) {
      const auto& lj = j["loss"];
      for (const auto& [key, value] : lj.items()) {
        if (std::find(known_loss.begin(), known_loss.end(), key) ==
            known_loss.end()) {
          throw ConfigError("train config has unknown loss key \"" + key +
                            "\"");
        }
      }
      if (lj.contains("alpha")) {
        cfg.loss.alpha = lj["alpha"].get<std::vector<double>>();
      }
      if (lj.contains("lambda")) cfg.loss.lambda = lj["lambda"].get<double>();
      if (lj.contains("lambda_mode")) {
        const std::string m = lj["lambda_mode"].get<std::string>();
        if (m == "fixed") {
          cfg.loss.lambda_mode = LossWeights::LambdaMode::fixed;
        } else if (m == "auto_balance") {
          cfg.loss.lambda_mode = LossWeights::LambdaMode::auto_balance;
        } else {
          throw ConfigError("unknown lambda_mode \"" + m + "\"");
        }
      }
      if (lj.contains("auto_fraction")) {
        cfg.loss.auto_fraction = lj["auto_fraction"].get<double>();
      }
      if (lj.contains("printed_bce")) {
        cfg.loss.printed_bce = lj["printed_bce"].get<bool>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config field mistyped: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

TrainResult train(Model& model, const std::vector<SequenceSample>& dataset,
                  const TrainConfig& config, const std::string& out_dir) {
  config.validate();
  if (dataset.empty()) throw ContractError("train: empty dataset");
  const int n = config.effective_sequence_length();
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (static_cast<int>(dataset[i].frames.size()) < n) {
      throw ContractError("train: sequence " + std::to_string(i) + " has " +
                          std::to_string(dataset[i].frames.size()) +
                          " frames, need " + std::to_string(n));
    }
  }
  if (!out_dir.empty()) fs::create_directories(out_dir);

  const bool with_occ = model.config().use_occlusion;
  Rng rng(config.seed);
  Adam adam(config.beta1, config.beta2, config.eps);
  TrainResult result;
  result.curve.reserve(static_cast<size_t>(config.iterations));

  std::ofstream metrics_csv;
  if (!out_dir.empty() && config.eval_every > 0) {
    metrics_csv.open(fs::path(out_dir) / "metrics.csv");
    metrics_csv << "iteration,epe_all,epe_noc,epe_occ,fl_all,occ_f1\n";
  }

  auto save_diagnostic = [&](int iteration) {
    if (out_dir.empty()) return std::string();
    const std::string path =
        (fs::path(out_dir) / "diverged.ckpt").string();
    model.save_checkpoint(path);
    return " (diagnostic checkpoint " + path + ", iteration " +
           std::to_string(iteration) + ")";
  };

  for (int iter = 0; iter < config.iterations; ++iter) {
    // Assemble a batch: random sequences, clipped to the stage's length.
    std::vector<size_t> pick(static_cast<size_t>(config.batch_size));
    for (size_t& p : pick) p = rng.randint(dataset.size());

    std::vector<Tensor> frames;
    for (int t = 0; t < n; ++t) {
      std::vector<const Tensor*> items;
      for (size_t p : pick) items.push_back(&dataset[p].frames[t]);
      frames.push_back(stack(items));
    }
    std::vector<StepGroundTruth> gts;
    for (int t = 0; t + 1 < n; ++t) {
      StepGroundTruth gt;
      std::vector<const Tensor*> items;
      for (size_t p : pick) items.push_back(&dataset[p].flow_gt[t]);
      gt.flow = stack(items);
      if (with_occ) {
        items.clear();
        for (size_t p : pick) items.push_back(&dataset[p].occ_gt[t]);
        gt.occ = stack(items);
      }
      gt.has_gt = !config.last_step_only || t == n - 2;
      gts.push_back(std::move(gt));
    }

    std::vector<PairOutput> preds = model.forward_sequence(frames);
    // Exploded parameters show up as non-finite predictions before the loss
    // is even computable (the occlusion BCE rejects NaN probabilities as a
    // domain violation), so the health check runs on the raw estimates.
    for (const PairOutput& p : preds) {
      for (double v : p.flows.back().values()) {
        if (!std::isfinite(v)) {
          throw DivergenceError(
              "predicted flow became non-finite at iteration " +
              std::to_string(iter) + save_diagnostic(iter));
        }
      }
    }
    SequenceLossResult loss = sequence_loss(preds, gts, config.loss);
    const double loss_value = loss.total.item();
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("loss became non-finite at iteration " +
                            std::to_string(iter) + save_diagnostic(iter));
    }

    const double lr = config.lr_at(iter);
    model.zero_grads();
    backward(loss.total);
    double grad_norm = 0.0;
    try {
      grad_norm = adam.step(model.parameters(), lr, config.clip_norm);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + save_diagnostic(iter));
    }

    result.curve.push_back({iter, loss_value, lr, grad_norm});

    if (config.eval_every > 0 && (iter + 1) % config.eval_every == 0 &&
        metrics_csv.is_open()) {
      const EvalResult ev = evaluate(model, dataset, n);
      auto cell = [](const std::optional<double>& v) {
        return v ? fmt(*v) : std::string("absent");
      };
      metrics_csv << iter << ',' << cell(ev.epe_all) << ',' << cell(ev.epe_noc)
                  << ',' << cell(ev.epe_occ) << ',' << cell(ev.fl_all) << ','
                  << cell(ev.occ_f1) << '\n';
    }
  }

  result.initial_loss = result.curve.front().loss;
  result.final_loss = result.curve.back().loss;

  if (!out_dir.empty()) {
    std::ofstream csv(fs::path(out_dir) / "curve.csv");
    if (!csv) throw IoError("cannot write curve.csv in " + out_dir);
    csv << "iteration,loss,lr\n";
    for (const TrainPoint& p : result.curve) {
      csv << p.iteration << ',' << fmt(p.loss) << ',' << fmt(p.lr) << '\n';
    }
  }
  return result;
}

std::map<std::string, std::optional<double>> EvalResult::as_map() const {
  return {{"epe_all", epe_all},
          {"epe_noc", epe_noc},
          {"epe_occ", epe_occ},
          {"fl_all", fl_all},
          {"occ_f1", occ_f1}};
}

EvalResult evaluate(const Model& model,
                    const std::vector<SequenceSample>& dataset, int n_prime) {
  if (n_prime < 2) {
    throw ContractError("evaluate: n_prime " + std::to_string(n_prime) +
                        " < 2");
  }
  if (dataset.empty()) throw ContractError("evaluate: empty dataset");
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (static_cast<int>(dataset[i].frames.size()) < n_prime) {
      throw ContractError("evaluate: sequence " + std::to_string(i) + " has " +
                          std::to_string(dataset[i].frames.size()) +
                          " frames, need " + std::to_string(n_prime));
    }
  }
  NoGradGuard guard;
  const bool with_occ = model.config().use_occlusion;

  // Pool every sequence's last-pair prediction into flat fields so the
  // metric kernels see one concatenated image.
  std::vector<double> pu, pv, gu, gv, occ_mask, occ_pred;
  for (const SequenceSample& sample : dataset) {
    std::vector<Tensor> frames;
    for (int t = 0; t < n_prime; ++t) {
      frames.push_back(stack({&sample.frames[t]}));
    }
    const std::vector<PairOutput> preds = model.forward_sequence(frames);
    const PairOutput& last = preds.back();
    const Tensor flow = Model::full_res_flow(last.flows.back());
    const Tensor& gt_flow = sample.flow_gt[static_cast<size_t>(n_prime) - 2];
    const Tensor& gt_occ = sample.occ_gt[static_cast<size_t>(n_prime) - 2];
    if (flow.dim(2) != gt_flow.dim(1) || flow.dim(3) != gt_flow.dim(2)) {
      throw ContractError("evaluate: prediction " + shape_str(flow.shape()) +
                          " does not cover ground truth " +
                          shape_str(gt_flow.shape()));
    }
    const size_t hw =
        static_cast<size_t>(gt_flow.dim(1)) * gt_flow.dim(2);
    pu.insert(pu.end(), flow.values().begin(), flow.values().begin() + hw);
    pv.insert(pv.end(), flow.values().begin() + hw,
              flow.values().begin() + 2 * hw);
    gu.insert(gu.end(), gt_flow.values().begin(),
              gt_flow.values().begin() + hw);
    gv.insert(gv.end(), gt_flow.values().begin() + hw,
              gt_flow.values().begin() + 2 * hw);
    occ_mask.insert(occ_mask.end(), gt_occ.values().begin(),
                    gt_occ.values().end());
    if (with_occ) {
      const Tensor occ = Model::full_res_occ(last.occs.back());
      occ_pred.insert(occ_pred.end(), occ.values().begin(),
                      occ.values().end());
    }
  }

  const int p = static_cast<int>(pu.size());
  Tensor pred = Tensor::zeros({1, 2, 1, p});
  Tensor gt = Tensor::zeros({1, 2, 1, p});
  Tensor occ = Tensor::zeros({1, 1, 1, p});
  Tensor noc = Tensor::zeros({1, 1, 1, p});
  std::copy(pu.begin(), pu.end(), pred.values().begin());
  std::copy(pv.begin(), pv.end(), pred.values().begin() + p);
  std::copy(gu.begin(), gu.end(), gt.values().begin());
  std::copy(gv.begin(), gv.end(), gt.values().begin() + p);
  std::copy(occ_mask.begin(), occ_mask.end(), occ.values().begin());
  for (int i = 0; i < p; ++i) noc.values()[i] = 1.0 - occ_mask[i];

  EvalResult result;
  result.sequences = static_cast<int>(dataset.size());
  result.epe_all = epe(pred, gt);
  result.epe_noc = epe(pred, gt, noc);
  result.epe_occ = epe(pred, gt, occ);
  result.fl_all = fl_all(pred, gt);
  if (with_occ) {
    Tensor po = Tensor::zeros({1, 1, 1, p});
    std::copy(occ_pred.begin(), occ_pred.end(), po.values().begin());
    result.occ_f1 = occlusion_f1(po, occ);
  }
  return result;
}

std::vector<AblationArm> default_ablation_arms(const ModelConfig& base) {
  std::vector<AblationArm> arms;
  for (TemporalMode mode :
       {TemporalMode::none, TemporalMode::trflow, TemporalMode::trfeat}) {
    for (bool occ : {false, true}) {
      ModelConfig cfg = base;
      cfg.temporal_mode = mode;
      cfg.use_occlusion = occ;
      std::string name = mode == TemporalMode::none
                             ? "2f"
                             : temporal_mode_name(mode);
      if (occ) name += "_occ";
      arms.push_back({name, cfg});
    }
  }
  return arms;
}

AblationReport run_ablation(const std::vector<AblationArm>& arms,
                            const std::vector<SequenceSample>& train_set,
                            const std::vector<SequenceSample>& eval_set,
                            const TrainConfig& pretrain_cfg,
                            const TrainConfig& multiframe_cfg,
                            const std::vector<uint64_t>& seeds,
                            int eval_frames, const std::string& out_dir) {
  if (arms.empty()) throw ContractError("run_ablation: no arms");
  if (seeds.empty()) throw ContractError("run_ablation: no seeds");
  if (pretrain_cfg.stage != TrainStage::pretrain_2frame ||
      multiframe_cfg.stage != TrainStage::multiframe) {
    throw ContractError(
        "run_ablation: stage configs must be (pretrain_2frame, multiframe)");
  }

  AblationReport report;
  for (const AblationArm& arm : arms) {
    AblationRow row;
    row.name = arm.name;
    for (uint64_t seed : seeds) {
      Model model(arm.model, seed);
      if (row.params == 0) row.params = model.count_parameters().total;

      std::string stage_dir;
      if (!out_dir.empty()) {
        stage_dir = (fs::path(out_dir) / arm.name /
                     ("seed_" + std::to_string(seed)))
                        .string();
      }
      TrainConfig pre = pretrain_cfg;
      TrainConfig multi = multiframe_cfg;
      pre.seed = seed;
      multi.seed = seed + 1;  // fresh batch stream per stage
      train(model, train_set, pre,
            stage_dir.empty() ? "" : stage_dir + "/pretrain");
      train(model, train_set, multi,
            stage_dir.empty() ? "" : stage_dir + "/multiframe");
      if (!stage_dir.empty()) {
        model.save_checkpoint(stage_dir + "/model.ckpt");
      }
      row.per_seed.push_back(evaluate(model, eval_set, eval_frames));
    }

    // Median seed, ranked by occluded-region EPE (the quantity the
    // temporal arms exist to improve), falling back to all-EPE.
    std::vector<size_t> order(row.per_seed.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto key = [&](size_t i) {
      const EvalResult& e = row.per_seed[i];
      if (e.epe_occ) return *e.epe_occ;
      return e.epe_all ? *e.epe_all : 0.0;
    };
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return key(a) < key(b); });
    row.eval = row.per_seed[order[order.size() / 2]];
    report.rows.push_back(std::move(row));
  }

  const double base = static_cast<double>(report.rows[0].params);
  for (AblationRow& row : report.rows) {
    row.relative_params =
        100.0 * (static_cast<double>(row.params) - base) / base;
  }

  char line[256];
  std::string table =
      "arm              params   relative    epe_all    epe_noc    epe_occ  "
      "   fl_all     occ_f1\n";
  for (const AblationRow& row : report.rows) {
    auto cell = [](const std::optional<double>& v) {
      if (!v) return std::string("    absent");
      char buf[32];
      std::snprintf(buf, sizeof buf, "%10.4f", *v);
      return std::string(buf);
    };
    std::snprintf(line, sizeof line, "%-15s %7lld %+9.2f%% %s %s %s %s %s\n",
                  row.name.c_str(), static_cast<long long>(row.params),
                  row.relative_params, cell(row.eval.epe_all).c_str(),
                  cell(row.eval.epe_noc).c_str(),
                  cell(row.eval.epe_occ).c_str(), cell(row.eval.fl_all).c_str(),
                  cell(row.eval.occ_f1).c_str());
    table += line;
  }
  report.table = table;

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream os(fs::path(out_dir) / "report.txt");
    if (!os) throw IoError("cannot write report.txt in " + out_dir);
    os << table;
  }
  return report;
}

}  // namespace starflow
