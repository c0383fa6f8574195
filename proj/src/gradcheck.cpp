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

#include "starflow/gradcheck.hpp"

#include <cmath>

#include "starflow/flow_ops.hpp"
#include "starflow/loss.hpp"
#include "starflow/model.hpp"

namespace starflow {

FdReport check_gradients(const std::string& op,
                         const std::function<Tensor()>& forward,
                         const std::vector<Tensor>& wrt, double eps,
                         double threshold, int max_samples) {
  FdReport report;
  report.op = op;
  report.threshold = threshold;

  for (const auto& t : wrt) {
    if (!t.requires_grad()) {
      throw ContractError("check_gradients(" + op +
                          "): a probed tensor does not require grad");
    }
  }

  // One clean analytic pass. Leaf grads accumulate across backward calls, so
  // they are cleared first.
  for (const auto& t : wrt) const_cast<Tensor&>(t).zero_grad();
  Tensor loss = forward();
  if (loss.numel() != 1) {
    throw ContractError("check_gradients(" + op + "): loss has shape " +
                        shape_str(loss.shape()));
  }
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(wrt.size());
  for (const auto& t : wrt) analytic.push_back(t.grad());

  for (size_t ti = 0; ti < wrt.size(); ++ti) {
    Tensor t = wrt[ti];
    const int64_t n = t.numel();
    int64_t stride = 1;
    if (max_samples > 0 && n > max_samples) {
      stride = (n + max_samples - 1) / max_samples;
    }
    for (int64_t i = 0; i < n; i += stride) {
      double* v = t.data() + i;
      const double saved = *v;
      *v = saved + eps;
      const double f_plus = forward().item();
      *v = saved - eps;
      const double f_minus = forward().item();
      *v = saved;
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double g = analytic[ti][i];
      const double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
      const double rel = std::abs(fd - g) / denom;
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      ++report.checked;
    }
  }
  return report;
}

namespace {

// Pushes every value of t that sits within `margin` of `point` away from it,
// so a central difference of half-width ~1e-5 stays on one side of the kink.
void nudge_away_from(Tensor& t, double point, double margin) {
  double* v = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (std::abs(v[i] - point) < margin) v[i] += 4.0 * margin;
  }
}

// Same, but for every integer (bilinear-sampling kinks of the warp).
void nudge_away_from_integers(Tensor& t, double margin) {
  double* v = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (std::abs(v[i] - std::round(v[i])) < margin) v[i] += 5.0 * margin;
  }
}

Tensor rg(std::vector<int> shape, Rng& rng, double lo, double hi) {
  return Tensor::uniform(std::move(shape), rng, lo, hi, true);
}

// Sum of squares: gives each checked op a non-constant upstream gradient, so
// a wrong backward cannot hide behind an all-ones seed.
Tensor sq_sum(const Tensor& z) { return sum_all(mul(z, z)); }

}  // namespace

std::vector<FdReport> run_gradcheck_suite(int samples, bool inject_fault) {
  std::vector<FdReport> out;
  Rng rng(20260815);

  auto check = [&](const std::string& op, const std::function<Tensor()>& fwd,
                   const std::vector<Tensor>& wrt, double eps = 1e-5,
                   double threshold = 1e-4) {
    out.push_back(check_gradients(op, fwd, wrt, eps, threshold, 0));
  };

  // ---- tensor core primitives, random inputs in [-1, 1] --------------------
  {
    Tensor a = rg({2, 3, 4}, rng, -1.0, 1.0);
    Tensor b = rg({2, 3, 4}, rng, -1.0, 1.0);
    check("add", [&] { return sq_sum(add(a, b)); }, {a, b});
    check("sub", [&] { return sq_sum(sub(a, b)); }, {a, b});
    check("mul", [&] { return sq_sum(mul(a, b)); }, {a, b});
    check("neg", [&] { return sq_sum(neg(a)); }, {a});
    check("add_scalar", [&] { return sq_sum(add_scalar(a, 0.7)); }, {a});
    check("mul_scalar", [&] { return sq_sum(mul_scalar(a, -1.3)); }, {a});
    check("rsub_scalar", [&] { return sq_sum(rsub_scalar(0.4, a)); }, {a});
    check("sum_all", [&] { Tensor z = sum_all(a); return mul(z, z); }, {a});
    check("sigmoid", [&] { return sq_sum(sigmoid(a)); }, {a});
  }
  {
    Tensor a = rg({2, 3, 4}, rng, 0.5, 1.5);  // positive domain
    check("log", [&] { return sq_sum(log(a)); }, {a});
    check("sqrt", [&] { return sq_sum(sqrt(a)); }, {a});
    check("reciprocal", [&] { return sq_sum(reciprocal(a)); }, {a});
  }
  {
    Tensor a = rg({2, 3, 4}, rng, -1.0, 1.0);
    nudge_away_from(a, -0.5, 0.02);
    nudge_away_from(a, 0.5, 0.02);
    check("clamp", [&] { return sq_sum(clamp(a, -0.5, 0.5)); }, {a});
  }
  {
    Tensor a = rg({2, 3, 4}, rng, -1.0, 1.0);
    nudge_away_from(a, 0.0, 1e-3);  // kink of max(x, slope*x)
    check("leaky_relu", [&] { return sq_sum(leaky_relu(a)); }, {a});
  }
  {
    Tensor x = rg({2, 3, 4}, rng, -1.0, 1.0);
    Tensor s = rg({1}, rng, 0.5, 1.5);
    check("scale_by", [&] { return sq_sum(scale_by(x, s)); }, {x, s});
  }
  {
    Tensor a = rg({1, 2, 3, 2}, rng, -1.0, 1.0);
    Tensor b = rg({1, 1, 3, 2}, rng, -1.0, 1.0);
    Tensor c = rg({1, 3, 3, 2}, rng, -1.0, 1.0);
    check("concat", [&] { return sq_sum(concat({a, b, c}, 1)); }, {a, b, c});
  }
  {
    Tensor a = rg({2, 5, 3}, rng, -1.0, 1.0);
    check("slice", [&] { return sq_sum(slice(a, 1, 1, 4)); }, {a});
  }
  {
    Tensor input = rg({1, 2, 5, 5}, rng, -1.0, 1.0);
    Tensor weight = rg({3, 2, 3, 3}, rng, -1.0, 1.0);
    Tensor bias = rg({3}, rng, -1.0, 1.0);
    check("conv2d", [&] { return sq_sum(conv2d(input, weight, bias)); },
          {input, weight, bias});
  }
  {
    Tensor a = rg({1, 2, 3, 3}, rng, -1.0, 1.0);
    check("upsample2x", [&] { return sq_sum(upsample2x(a)); }, {a});
  }
  {
    Tensor a = rg({1, 2, 4, 4}, rng, -1.0, 1.0);
    check("avgpool2x", [&] { return sq_sum(avgpool2x(a)); }, {a});
  }

  // ---- flow ops -------------------------------------------------------------
  {
    Tensor feat = rg({1, 2, 5, 5}, rng, -1.0, 1.0);
    // Fractional displacements keep the sampled coordinates away from the
    // bilinear kinks at integer positions.
    Tensor flow = rg({1, 2, 5, 5}, rng, -0.45, 0.45);
    for (int64_t i = 0; i < flow.numel(); ++i) flow.data()[i] += 0.3;
    nudge_away_from_integers(flow, 0.02);
    // When asked to, corrupt the analytic pass of this entry only: the first
    // evaluation (the one backward() runs on) is scaled by 1.05, while every
    // finite-difference probe sees the true function. The harness must
    // detect the mismatch and name this op.
    int calls = 0;
    auto fwd = [&]() -> Tensor {
      Tensor z = sq_sum(warp(feat, flow));
      if (inject_fault && calls++ == 0) z = mul_scalar(z, 1.05);
      return z;
    };
    check("warp", fwd, {feat, flow});
  }
  {
    Tensor f1 = rg({1, 3, 4, 4}, rng, -1.0, 1.0);
    Tensor f2 = rg({1, 3, 4, 4}, rng, -1.0, 1.0);
    check("correlation", [&] { return sq_sum(correlation(f1, f2, 1)); },
          {f1, f2});
  }

  // ---- loss stack -----------------------------------------------------------
  {
    Tensor pred = rg({1, 2, 3, 3}, rng, -1.0, 1.0);
    Tensor gt = rg({1, 2, 3, 3}, rng, 1.5, 2.5);  // pred != gt: sqrt kink
    check("flow_loss", [&] { return flow_loss(pred, gt); }, {pred, gt});
  }
  {
    Tensor pred = rg({1, 1, 4, 4}, rng, 0.1, 0.9);
    Tensor gt = Tensor::zeros({1, 1, 4, 4});
    for (int64_t i = 0; i < gt.numel(); ++i) {
      gt.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
    check("occ_loss", [&] { return occ_loss(pred, gt); }, {pred});
  }
  {
    // Two supervised steps, two levels (input 8x8 -> level sides 2 and 4).
    const int levels = 2;
    std::vector<PairOutput> preds(2);
    std::vector<Tensor> wrt;
    for (auto& p : preds) {
      for (int l = 0; l < levels; ++l) {
        const int side = 2 << l;
        p.flows.push_back(rg({1, 2, side, side}, rng, -1.0, 1.0));
        p.occs.push_back(rg({1, 1, side, side}, rng, 0.1, 0.9));
        wrt.push_back(p.flows.back());
        wrt.push_back(p.occs.back());
      }
    }
    std::vector<StepGroundTruth> gts(2);
    for (auto& g : gts) {
      g.flow = Tensor::uniform({1, 2, 8, 8}, rng, 1.5, 2.5);
      g.occ = Tensor::zeros({1, 1, 8, 8});
      for (int64_t i = 0; i < g.occ.numel(); ++i) {
        g.occ.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      }
    }
    LossWeights weights;
    weights.alpha = {0.32, 0.08};
    weights.lambda = 0.05;
    check("sequence_loss",
          [&] { return sequence_loss(preds, gts, weights).total; }, wrt);
  }

  // ---- end-to-end: 3-frame sequence through the full network ---------------
  {
    ModelConfig cfg;
    cfg.levels = 3;
    cfg.encoder_widths = {6, 8, 8};
    cfg.adapter_width = 6;
    cfg.estimator_widths = {8, 6};
    cfg.context_widths = {6};
    cfg.context_dilations = {1, 2};
    cfg.max_disp = 1;
    cfg.temporal_channels = 3;
    cfg.temporal_mode = TemporalMode::trfeat;
    cfg.use_occlusion = true;
    // The reversed-time pass is normally gradient-stopped; finite differences
    // would still see it, so the check runs with that path differentiable.
    cfg.backprop_through_backward_flow = true;
    cfg.sequence_length = 3;
    Model model(cfg, 3);
    // The residual heads are initialized near zero, which parks every warp
    // sample within ~1e-3 of its integer-coordinate kink; a finite difference
    // straddling a kink disagrees with the analytic slope no matter how
    // correct the backward is. Scaling the heads up moves the check to a
    // generic point in parameter space.
    for (const Parameter& p : model.parameters()) {
      if (p.name.find(".head") != std::string::npos ||
          p.name.find(".ctx_out") != std::string::npos) {
        Tensor t = p.tensor;
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] *= 100.0;
      }
    }

    std::vector<Tensor> frames;
    for (int t = 0; t < 3; ++t) {
      frames.push_back(Tensor::uniform({1, 3, 16, 16}, rng, 0.0, 1.0));
    }
    std::vector<StepGroundTruth> gts(2);
    for (auto& g : gts) {
      g.flow = Tensor::uniform({1, 2, 16, 16}, rng, -1.0, 1.0);
      g.occ = Tensor::zeros({1, 1, 16, 16});
      for (int64_t i = 0; i < g.occ.numel(); ++i) {
        g.occ.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      }
    }
    LossWeights weights;
    weights.alpha = {0.32, 0.08, 0.02};
    weights.lambda = 0.05;

    std::vector<Tensor> wrt;
    for (const Parameter& p : model.parameters()) wrt.push_back(p.tensor);
    const int per_tensor = samples > 0 ? samples : 5;
    auto fwd = [&]() -> Tensor {
      model.zero_grads();
      return sequence_loss(model.forward_sequence(frames), gts, weights).total;
    };
    out.push_back(check_gradients("end_to_end_n3", fwd, wrt, 1e-5, 1e-3,
                                  per_tensor));
  }

  return out;
}

}  // namespace starflow
