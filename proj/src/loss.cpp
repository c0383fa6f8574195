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

#include "starflow/loss.hpp"

#include <cmath>
#include <cstdio>

namespace starflow {

namespace {

constexpr double kBceClamp = 1e-7;

void require_field(const Tensor& t, int channels, const char* what) {
  if (!t.defined() || t.shape().size() != 4 || t.dim(1) != channels) {
    throw DimensionError(std::string(what) + " must be [B," +
                         std::to_string(channels) + ",H,W], got " +
                         (t.defined() ? shape_str(t.shape()) : "undefined"));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_binary(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (v != 0.0 && v != 1.0) {
      throw ContractError(std::string(what) + " must be binary, found " +
                          std::to_string(v));
    }
  }
}

// 2x2 max pooling on raw values (ground-truth transform, no graph).
Tensor maxpool2x_values(const Tensor& t) {
  const int b = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2x: odd extent " + shape_str(t.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<size_t>(b) * c * oh * ow);
  const std::vector<double>& in = t.values();
  for (int bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      const size_t ib = (static_cast<size_t>(bi) * c + ci) * h * w;
      const size_t ob = (static_cast<size_t>(bi) * c + ci) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          const size_t p = ib + static_cast<size_t>(2 * y) * w + 2 * x;
          double m = in[p];
          m = std::max(m, in[p + 1]);
          m = std::max(m, in[p + w]);
          m = std::max(m, in[p + w + 1]);
          out[ob + static_cast<size_t>(y) * ow + x] = m;
        }
      }
    }
  }
  return Tensor::from_data({b, c, oh, ow}, std::move(out));
}

}  // namespace

void LossWeights::validate() const {
  if (alpha.empty()) throw ConfigError("loss alpha list is empty");
  for (double a : alpha) {
    if (!(a > 0.0)) {
      throw ConfigError("loss alpha " + std::to_string(a) + " must be > 0");
    }
  }
  if (!(lambda >= 0.0)) {
    throw ConfigError("loss lambda " + std::to_string(lambda) +
                      " must be >= 0");
  }
  if (!(auto_fraction > 0.0)) {
    throw ConfigError("loss auto_fraction must be > 0");
  }
}

Tensor flow_loss(const Tensor& pred, const Tensor& gt) {
  require_field(pred, 2, "flow_loss pred");
  require_field(gt, 2, "flow_loss gt");
  require_same_shape(pred, gt, "flow_loss");
  Tensor d = sub(pred, gt);
  Tensor u = slice(d, 1, 0, 1);
  Tensor v = slice(d, 1, 1, 2);
  return sum_all(sqrt(add(mul(u, u), mul(v, v))));
}

Tensor occ_loss(const Tensor& pred, const Tensor& gt, bool printed_variant) {
  require_field(pred, 1, "occ_loss pred");
  require_field(gt, 1, "occ_loss gt");
  require_same_shape(pred, gt, "occ_loss");
  for (double v : pred.values()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError("occ_loss pred must lie in [0,1], found " +
                          std::to_string(v));
    }
  }
  require_binary(gt, "occ_loss gt");

  const double n = static_cast<double>(pred.numel());
  Tensor p = clamp(pred, kBceClamp, 1.0 - kBceClamp);
  Tensor one_minus_p = rsub_scalar(1.0, p);
  Tensor one_minus_gt = rsub_scalar(1.0, gt);

  // Self-balancing weights from the current prediction and label mass; the
  // occluded and non-occluded classes each contribute on the same scale.
  Tensor w = mul_scalar(reciprocal(add(sum_all(p), sum_all(gt))), n);
  Tensor wbar = mul_scalar(
      reciprocal(add(sum_all(one_minus_p), sum_all(one_minus_gt))), n);

  Tensor pos, neg;
  if (!printed_variant) {
    pos = mul(gt, log(p));
    neg = mul(one_minus_gt, log(one_minus_p));
  } else {
    // Degenerate variant with prediction and label swapped in the logs.
    Tensor g = clamp(gt, kBceClamp, 1.0 - kBceClamp);
    pos = mul(p, log(g));
    neg = mul(one_minus_p, log(rsub_scalar(1.0, g)));
  }
  Tensor term = add(scale_by(pos, w), scale_by(neg, wbar));
  return mul_scalar(sum_all(term), -0.5);
}

GtPyramid build_gt_pyramid(const Tensor& flow, const Tensor& occ, int levels) {
  require_field(flow, 2, "gt flow");
  if (levels < 1) throw ConfigError("gt pyramid levels < 1");
  const int div = 1 << levels;
  if (flow.dim(2) % div != 0 || flow.dim(3) % div != 0) {
    throw DimensionError("gt pyramid: " + shape_str(flow.shape()) +
                         " not divisible by 2^levels = " +
                         std::to_string(div));
  }
  if (occ.defined()) {
    require_field(occ, 1, "gt occ");
    if (occ.dim(0) != flow.dim(0) || occ.dim(2) != flow.dim(2) ||
        occ.dim(3) != flow.dim(3)) {
      throw DimensionError("gt occ " + shape_str(occ.shape()) +
                           " does not match flow " + shape_str(flow.shape()));
    }
  }

  NoGradGuard guard;
  GtPyramid pyr;
  std::vector<Tensor> flows_fine_first, occs_fine_first;
  Tensor f = flow, o = occ;
  for (int l = 0; l < levels; ++l) {
    f = mul_scalar(avgpool2x(f), 0.5);
    flows_fine_first.push_back(f);
    if (o.defined()) {
      o = maxpool2x_values(o);
      occs_fine_first.push_back(o);
    }
  }
  pyr.flow.assign(flows_fine_first.rbegin(), flows_fine_first.rend());
  pyr.occ.assign(occs_fine_first.rbegin(), occs_fine_first.rend());
  return pyr;
}

SequenceLossResult sequence_loss(const std::vector<PairOutput>& preds,
                                 const std::vector<StepGroundTruth>& gts,
                                 const LossWeights& weights) {
  weights.validate();
  if (preds.empty()) throw ContractError("sequence_loss: no predictions");
  if (preds.size() != gts.size()) {
    throw ContractError("sequence_loss: " + std::to_string(preds.size()) +
                        " predictions vs " + std::to_string(gts.size()) +
                        " ground-truth steps");
  }
  const int levels = static_cast<int>(preds[0].flows.size());
  if (static_cast<int>(weights.alpha.size()) != levels) {
    throw ContractError("sequence_loss: alpha has " +
                        std::to_string(weights.alpha.size()) +
                        " entries for " + std::to_string(levels) + " levels");
  }

  Tensor flow_total = Tensor::zeros({1});
  Tensor occ_total = Tensor::zeros({1});
  int supervised = 0;
  for (size_t t = 0; t < preds.size(); ++t) {
    if (!gts[t].has_gt) continue;
    ++supervised;
    const PairOutput& pred = preds[t];
    const bool with_occ = !pred.occs.empty();
    if (!gts[t].flow.defined()) {
      throw ContractError("sequence_loss: step " + std::to_string(t) +
                          " is supervised but has no flow ground truth");
    }
    if (with_occ && !gts[t].occ.defined()) {
      throw ContractError("sequence_loss: step " + std::to_string(t) +
                          " is supervised but has no occlusion ground truth");
    }
    GtPyramid pyr = build_gt_pyramid(gts[t].flow,
                                     with_occ ? gts[t].occ : Tensor(), levels);
    for (int l = 0; l < levels; ++l) {
      flow_total = add(flow_total,
                       mul_scalar(flow_loss(pred.flows[l], pyr.flow[l]),
                                  weights.alpha[l]));
      if (with_occ) {
        occ_total = add(
            occ_total,
            mul_scalar(occ_loss(pred.occs[l], pyr.occ[l], weights.printed_bce),
                       weights.alpha[l]));
      }
    }
  }
  if (supervised == 0) {
    throw ContractError("sequence_loss: no supervised steps");
  }

  SequenceLossResult res;
  res.supervised_steps = supervised;
  const double inv_t = 1.0 / static_cast<double>(supervised);
  res.flow_part = flow_total.item() * inv_t;
  res.occ_part = occ_total.item() * inv_t;

  double lambda = weights.lambda;
  if (weights.lambda_mode == LossWeights::LambdaMode::auto_balance) {
    // Rebalanced per call from the detached loss values.
    lambda = occ_total.item() > 0.0
                 ? weights.auto_fraction * flow_total.item() / occ_total.item()
                 : weights.lambda;
  }
  res.lambda_used = lambda;
  res.total =
      mul_scalar(add(flow_total, mul_scalar(occ_total, lambda)), inv_t);
  return res;
}

// ---- metrics ---------------------------------------------------------------

namespace {

// Applies fn(norm, valid) at every pixel; mask may be undefined = all valid.
template <typename Fn>
void for_each_epe(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                  Fn&& fn) {
  require_field(pred, 2, "epe pred");
  require_field(gt, 2, "epe gt");
  require_same_shape(pred, gt, "epe");
  const int b = pred.dim(0), h = pred.dim(2), w = pred.dim(3);
  if (mask.defined() &&
      (mask.shape() != std::vector<int>{b, 1, h, w})) {
    throw DimensionError("epe mask " + shape_str(mask.shape()) +
                         " does not match flow " + shape_str(pred.shape()));
  }
  const int hw = h * w;
  for (int bi = 0; bi < b; ++bi) {
    const size_t base = static_cast<size_t>(bi) * 2 * hw;
    for (int i = 0; i < hw; ++i) {
      const double du = pred.values()[base + i] - gt.values()[base + i];
      const double dv =
          pred.values()[base + hw + i] - gt.values()[base + hw + i];
      const bool valid =
          !mask.defined() ||
          mask.values()[static_cast<size_t>(bi) * hw + i] != 0.0;
      fn(std::sqrt(du * du + dv * dv), valid);
    }
  }
}

}  // namespace

std::optional<double> epe(const Tensor& pred, const Tensor& gt,
                          const Tensor& mask) {
  double sum = 0.0;
  int64_t count = 0;
  for_each_epe(pred, gt, mask, [&](double e, bool valid) {
    if (valid) {
      sum += e;
      ++count;
    }
  });
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

std::optional<double> fl_all(const Tensor& pred, const Tensor& gt,
                             const Tensor& valid) {
  int64_t outliers = 0, count = 0;
  for_each_epe(pred, gt, valid, [&](double e, bool v) {
    if (v) {
      ++count;
      if (e > 3.0) ++outliers;
    }
  });
  if (count == 0) return std::nullopt;
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(count);
}

double occlusion_f1(const Tensor& pred, const Tensor& gt, double threshold) {
  require_field(pred, 1, "occlusion_f1 pred");
  require_field(gt, 1, "occlusion_f1 gt");
  require_same_shape(pred, gt, "occlusion_f1");
  require_binary(gt, "occlusion_f1 gt");
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = pred.values()[i] > threshold;
    const bool g = gt.values()[i] != 0.0;
    if (p && g) ++tp;
    if (p && !g) ++fp;
    if (!p && g) ++fn;
  }
  const int64_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 1.0;  // no positives anywhere: perfect by convention
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

std::string format_metrics(
    const std::map<std::string, std::optional<double>>& metrics) {
  std::string out;
  char buf[64];
  for (const auto& [key, value] : metrics) {
    out += key;
    out += '=';
    if (value.has_value()) {
      std::snprintf(buf, sizeof buf, "%.17g", *value);
      out += buf;
    } else {
      out += "absent";
    }
    out += '\n';
  }
  return out;
}

}  // namespace starflow
