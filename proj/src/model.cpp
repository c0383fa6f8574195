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

#include "starflow/model.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

#include "starflow/flow_ops.hpp"

namespace starflow {

namespace {

constexpr double kLeakySlope = 0.1;
constexpr char kCheckpointMagic[4] = {'S', 'F', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

// ---- ModelConfig -----------------------------------------------------------

const char* temporal_mode_name(TemporalMode m) {
  switch (m) {
    case TemporalMode::none:
      return "none";
    case TemporalMode::trflow:
      return "trflow";
    case TemporalMode::trfeat:
      return "trfeat";
  }
  return "none";
}

TemporalMode temporal_mode_from_name(const std::string& name) {
  if (name == "none") return TemporalMode::none;
  if (name == "trflow") return TemporalMode::trflow;
  if (name == "trfeat") return TemporalMode::trfeat;
  throw ConfigError("unknown temporal_mode \"" + name +
                    "\" (want none|trflow|trfeat)");
}

void ModelConfig::validate() const {
  if (levels < 2) {
    throw ConfigError("levels " + std::to_string(levels) + " < 2");
  }
  if (static_cast<int>(encoder_widths.size()) != levels) {
    throw ConfigError("encoder_widths has " +
                      std::to_string(encoder_widths.size()) +
                      " entries for " + std::to_string(levels) + " levels");
  }
  for (int w : encoder_widths) {
    if (w < 1) throw ConfigError("encoder width " + std::to_string(w) + " < 1");
  }
  if (adapter_width < 1) {
    throw ConfigError("adapter_width " + std::to_string(adapter_width) +
                      " < 1");
  }
  if (estimator_widths.empty()) throw ConfigError("estimator_widths empty");
  for (int w : estimator_widths) {
    if (w < 1) {
      throw ConfigError("estimator width " + std::to_string(w) + " < 1");
    }
  }
  if (context_widths.empty()) throw ConfigError("context_widths empty");
  for (int w : context_widths) {
    if (w < 1) throw ConfigError("context width " + std::to_string(w) + " < 1");
  }
  if (context_dilations.size() != context_widths.size() + 1) {
    throw ConfigError("context_dilations has " +
                      std::to_string(context_dilations.size()) +
                      " entries, want context_widths + 1 = " +
                      std::to_string(context_widths.size() + 1));
  }
  for (int d : context_dilations) {
    if (d < 1) throw ConfigError("context dilation " + std::to_string(d) +
                                 " < 1");
  }
  if (max_disp < 1) {
    throw ConfigError("max_disp " + std::to_string(max_disp) + " < 1");
  }
  if (temporal_channels < 1) {
    throw ConfigError("temporal_channels " +
                      std::to_string(temporal_channels) + " < 1");
  }
  if (sequence_length < 2) {
    throw ConfigError("sequence_length " + std::to_string(sequence_length) +
                      " < 2");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["levels"] = levels;
  j["encoder_widths"] = encoder_widths;
  j["adapter_width"] = adapter_width;
  j["estimator_widths"] = estimator_widths;
  j["context_widths"] = context_widths;
  j["context_dilations"] = context_dilations;
  j["max_disp"] = max_disp;
  j["temporal_channels"] = temporal_channels;
  j["use_occlusion"] = use_occlusion;
  j["temporal_mode"] = temporal_mode_name(temporal_mode);
  j["share_decoder_across_scales"] = share_decoder_across_scales;
  j["backprop_through_backward_flow"] = backprop_through_backward_flow;
  j["sequence_length"] = sequence_length;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") +
                      e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");

  static const char* known[] = {
      "levels",          "encoder_widths",
      "adapter_width",   "estimator_widths",
      "context_widths",  "context_dilations",
      "max_disp",        "temporal_channels",
      "use_occlusion",   "temporal_mode",
      "share_decoder_across_scales", "backprop_through_backward_flow",
      "sequence_length"};
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown model config key \"" + key + "\"");
  }

  ModelConfig c;
  try {
    if (j.contains("levels")) c.levels = j["levels"].get<int>();
    if (j.contains("encoder_widths")) {
      c.encoder_widths = j["encoder_widths"].get<std::vector<int>>();
    }
    if (j.contains("adapter_width")) {
      c.adapter_width = j["adapter_width"].get<int>();
    }
    if (j.contains("estimator_widths")) {
      c.estimator_widths = j["estimator_widths"].get<std::vector<int>>();
    }
    if (j.contains("context_widths")) {
      c.context_widths = j["context_widths"].get<std::vector<int>>();
    }
    if (j.contains("context_dilations")) {
      c.context_dilations = j["context_dilations"].get<std::vector<int>>();
    }
    if (j.contains("max_disp")) c.max_disp = j["max_disp"].get<int>();
    if (j.contains("temporal_channels")) {
      c.temporal_channels = j["temporal_channels"].get<int>();
    }
    if (j.contains("use_occlusion")) {
      c.use_occlusion = j["use_occlusion"].get<bool>();
    }
    if (j.contains("temporal_mode")) {
      c.temporal_mode =
          temporal_mode_from_name(j["temporal_mode"].get<std::string>());
    }
    if (j.contains("share_decoder_across_scales")) {
      c.share_decoder_across_scales =
          j["share_decoder_across_scales"].get<bool>();
    }
    if (j.contains("backprop_through_backward_flow")) {
      c.backprop_through_backward_flow =
          j["backprop_through_backward_flow"].get<bool>();
    }
    if (j.contains("sequence_length")) {
      c.sequence_length = j["sequence_length"].get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config field has wrong type: ") +
                      e.what());
  }
  c.validate();
  return c;
}

// ---- construction ----------------------------------------------------------

Model::Conv Model::make_conv(const std::string& name, int in_ch, int out_ch,
                             int k, int padding, int dilation,
                             double weight_scale, Rng& rng) {
  Conv c;
  // Kaiming-style fan-in scaling; biases start at zero.
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
  c.weight = Tensor::randn({out_ch, in_ch, k, k}, rng, stddev * weight_scale,
                           true);
  c.bias = Tensor::zeros({out_ch}, true);
  c.padding = padding;
  c.dilation = dilation;
  params_.push_back({name + ".weight", c.weight});
  params_.push_back({name + ".bias", c.bias});
  return c;
}

Model::Model(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const int L = config_.levels;

  // Encoder: per stage avgpool2x then two 3x3 convs, so the finest level
  // lives at half input resolution. Stage order is fine to coarse.
  encoder_.resize(L);
  for (int s = 0; s < L; ++s) {
    const int in_ch = s == 0 ? 3 : config_.encoder_widths[s - 1];
    const int out_ch = config_.encoder_widths[s];
    const std::string base = "encoder.stage" + std::to_string(s);
    encoder_[s].push_back(make_conv(base + ".a", in_ch, out_ch, 3, 1, 1, 1.0,
                                    rng));
    encoder_[s].push_back(make_conv(base + ".b", out_ch, out_ch, 3, 1, 1, 1.0,
                                    rng));
  }

  // Per-level 1x1 adapters bring unequal encoder widths to one decoder input
  // width; they are the only per-level weights when the decoder is shared.
  // Level order is coarse to fine (level l uses stage L-1-l features).
  adapters_.reserve(L);
  for (int l = 0; l < L; ++l) {
    const int in_ch = config_.encoder_widths[L - 1 - l];
    adapters_.push_back(make_conv("adapter.level" + std::to_string(l), in_ch,
                                  config_.adapter_width, 1, 0, 1, 1.0, rng));
  }

  // Decoder: flow+occlusion estimator, context network, and the TRFeat 1x1
  // temporal compression. One instance when scale-shared, else one per level.
  const int side = 2 * config_.max_disp + 1;
  int lane = 0;
  if (config_.temporal_mode == TemporalMode::trflow) lane = 2;
  if (config_.temporal_mode == TemporalMode::trfeat) {
    lane = config_.temporal_channels;
  }
  // Estimator input: cost volume, adapted features, up_flow, up_occ lane
  // (always present so the occlusion flag moves head parameters only), then
  // the temporal lane last so zeroed temporal weights reduce bit-exactly to
  // the lane-less network.
  const int est_in = side * side + config_.adapter_width + 2 + 1 + lane;
  const int head_out = config_.use_occlusion ? 3 : 2;
  const int penult = config_.estimator_widths.back();
  const int ctx_in = penult + 2 + 1;  // penult, flow, occlusion logit

  const int instances = config_.share_decoder_across_scales ? 1 : L;
  for (int d = 0; d < instances; ++d) {
    const std::string base =
        config_.share_decoder_across_scales
            ? std::string("decoder.shared")
            : "decoder.level" + std::to_string(d);
    Decoder dec;
    int in_ch = est_in;
    for (size_t i = 0; i < config_.estimator_widths.size(); ++i) {
      dec.estimator.push_back(make_conv(base + ".est" + std::to_string(i),
                                        in_ch, config_.estimator_widths[i], 3,
                                        1, 1, 1.0, rng));
      in_ch = config_.estimator_widths[i];
    }
    // Residual heads start near zero so an untrained model predicts almost
    // no flow (the compounding x2 of the scale recurrence amplifies any
    // coarse-level bias).
    dec.head = make_conv(base + ".head", penult, head_out, 3, 1, 1, 0.001, rng);
    int cin = ctx_in;
    for (size_t i = 0; i < config_.context_widths.size(); ++i) {
      const int dil = config_.context_dilations[i];
      dec.context.push_back(make_conv(base + ".ctx" + std::to_string(i), cin,
                                      config_.context_widths[i], 3, dil, dil,
                                      1.0, rng));
      cin = config_.context_widths[i];
    }
    const int out_dil = config_.context_dilations.back();
    dec.context.push_back(make_conv(base + ".ctx_out", cin, 3, 3, out_dil,
                                    out_dil, 0.001, rng));
    if (config_.temporal_mode == TemporalMode::trfeat) {
      dec.compression = make_conv(base + ".compress", penult,
                                  config_.temporal_channels, 1, 0, 1, 1.0,
                                  rng);
    }
    decoders_.push_back(std::move(dec));
  }
}

Tensor Model::apply(const Conv& c, const Tensor& x) const {
  return conv2d(x, c.weight, c.bias, c.stride, c.padding, c.dilation);
}

const Model::Decoder& Model::decoder_at(int level) const {
  return config_.share_decoder_across_scales ? decoders_[0] : decoders_[level];
}

// ---- forward ---------------------------------------------------------------

std::vector<Tensor> Model::encode(const Tensor& image) const {
  if (image.shape().size() != 4) {
    throw DimensionError("encode: image rank " +
                         std::to_string(image.shape().size()) + ", want 4");
  }
  const int L = config_.levels;
  const int div = 1 << L;
  if (image.dim(2) % div != 0 || image.dim(3) % div != 0) {
    throw ConfigError("encode: spatial size " + std::to_string(image.dim(2)) +
                      "x" + std::to_string(image.dim(3)) +
                      " not divisible by 2^levels = " + std::to_string(div));
  }
  std::vector<Tensor> fine_to_coarse;
  Tensor x = image;
  for (int s = 0; s < L; ++s) {
    x = avgpool2x(x);
    x = leaky_relu(apply(encoder_[s][0], x), kLeakySlope);
    x = leaky_relu(apply(encoder_[s][1], x), kLeakySlope);
    fine_to_coarse.push_back(x);
  }
  return {fine_to_coarse.rbegin(), fine_to_coarse.rend()};
}

void Model::star_cell(int level, const Tensor& feat1, const Tensor& feat2,
                      const Tensor& up_flow, const Tensor& up_occ,
                      const Tensor& temporal_feat, Tensor* flow, Tensor* occ,
                      Tensor* state) const {
  const Decoder& dec = decoder_at(level);
  const int B = feat1.dim(0), H = feat1.dim(2), W = feat1.dim(3);

  Tensor warped2 = warp(feat2, up_flow);
  Tensor cost =
      leaky_relu(correlation(feat1, warped2, config_.max_disp), kLeakySlope);
  Tensor fa = leaky_relu(apply(adapters_[level], feat1), kLeakySlope);

  std::vector<Tensor> lanes = {cost, fa, up_flow, up_occ};
  if (config_.temporal_mode != TemporalMode::none) {
    if (temporal_feat.defined()) {
      const int want = config_.temporal_mode == TemporalMode::trflow
                           ? 2
                           : config_.temporal_channels;
      if (temporal_feat.shape() != std::vector<int>{B, want, H, W}) {
        throw ContractError("star_cell: temporal state shape " +
                            shape_str(temporal_feat.shape()) + ", want " +
                            shape_str({B, want, H, W}));
      }
      lanes.push_back(temporal_feat);
    } else {
      const int want = config_.temporal_mode == TemporalMode::trflow
                           ? 2
                           : config_.temporal_channels;
      lanes.push_back(Tensor::zeros({B, want, H, W}));
    }
  }

  Tensor x = concat(lanes, 1);
  for (const Conv& c : dec.estimator) {
    x = leaky_relu(apply(c, x), kLeakySlope);
  }
  Tensor penult = x;
  Tensor head = apply(dec.head, penult);

  Tensor f = add(up_flow, slice(head, 1, 0, 2));
  Tensor occ_logit = config_.use_occlusion ? slice(head, 1, 2, 3)
                                           : Tensor::zeros({B, 1, H, W});

  // Context network: joint residual refinement of flow and occlusion.
  Tensor cx = concat({penult, f, occ_logit}, 1);
  for (size_t i = 0; i + 1 < dec.context.size(); ++i) {
    cx = leaky_relu(apply(dec.context[i], cx), kLeakySlope);
  }
  Tensor r = apply(dec.context.back(), cx);
  *flow = add(f, slice(r, 1, 0, 2));
  if (config_.use_occlusion) {
    *occ = sigmoid(add(occ_logit, slice(r, 1, 2, 3)));
  }
  if (config_.temporal_mode == TemporalMode::trfeat && state != nullptr) {
    *state = apply(dec.compression, penult);
  }
}

PairOutput Model::run_pyramid(const std::vector<Tensor>& pyr1,
                              const std::vector<Tensor>& pyr2,
                              const std::vector<Tensor>& temporal) const {
  const int L = config_.levels;
  if (static_cast<int>(pyr1.size()) != L ||
      static_cast<int>(pyr2.size()) != L) {
    throw ContractError("run_pyramid: pyramid has " +
                        std::to_string(pyr1.size()) + " levels, want " +
                        std::to_string(L));
  }
  if (!temporal.empty() && config_.temporal_mode == TemporalMode::none) {
    throw ContractError(
        "run_pyramid: temporal state passed but temporal_mode is none");
  }
  if (!temporal.empty() && static_cast<int>(temporal.size()) != L) {
    throw ContractError("run_pyramid: temporal lane has " +
                        std::to_string(temporal.size()) + " levels, want " +
                        std::to_string(L));
  }
  PairOutput out;
  Tensor up_flow, up_occ;
  for (int l = 0; l < L; ++l) {
    const int B = pyr1[l].dim(0), H = pyr1[l].dim(2), W = pyr1[l].dim(3);
    if (l == 0) {
      up_flow = Tensor::zeros({B, 2, H, W});
      up_occ = Tensor::zeros({B, 1, H, W});
    } else {
      up_flow = mul_scalar(upsample2x(out.flows.back()), 2.0);
      up_occ = config_.use_occlusion ? upsample2x(out.occs.back())
                                     : Tensor::zeros({B, 1, H, W});
    }
    Tensor flow, occ, state;
    star_cell(l, pyr1[l], pyr2[l], up_flow, up_occ,
              temporal.empty() ? Tensor() : temporal[l], &flow, &occ, &state);
    out.flows.push_back(flow);
    if (config_.use_occlusion) out.occs.push_back(occ);
    if (config_.temporal_mode == TemporalMode::trfeat) {
      out.state.push_back(state);
    }
  }
  return out;
}

PairOutput Model::forward_pair(const Tensor& img1, const Tensor& img2,
                               const std::vector<Tensor>& temporal) const {
  if (img1.shape() != img2.shape()) {
    throw DimensionError("forward_pair: " + shape_str(img1.shape()) + " vs " +
                         shape_str(img2.shape()));
  }
  return run_pyramid(encode(img1), encode(img2), temporal);
}

Tensor Model::backward_flow_from_pyramids(
    const std::vector<Tensor>& pyr_t, const std::vector<Tensor>& pyr_tm1) const {
  if (!config_.backprop_through_backward_flow) {
    NoGradGuard guard;
    return run_pyramid(pyr_t, pyr_tm1, {}).flows.back();
  }
  return run_pyramid(pyr_t, pyr_tm1, {}).flows.back();
}

Tensor Model::estimate_backward_flow(const Tensor& img_t,
                                     const Tensor& img_tm1) const {
  if (img_t.shape() != img_tm1.shape()) {
    throw DimensionError("estimate_backward_flow: " +
                         shape_str(img_t.shape()) + " vs " +
                         shape_str(img_tm1.shape()));
  }
  if (!config_.backprop_through_backward_flow) {
    NoGradGuard guard;
    return run_pyramid(encode(img_t), encode(img_tm1), {}).flows.back();
  }
  return run_pyramid(encode(img_t), encode(img_tm1), {}).flows.back();
}

std::vector<Tensor> Model::temporal_lane_trfeat(
    const std::vector<Tensor>& state, const Tensor& backward_flow) const {
  const int L = config_.levels;
  if (static_cast<int>(state.size()) != L) {
    throw ContractError("temporal_lane_trfeat: state has " +
                        std::to_string(state.size()) + " levels, want " +
                        std::to_string(L));
  }
  std::vector<Tensor> lane(L);
  Tensor bwd = backward_flow;  // finest level first, then halved per octave
  for (int l = L - 1; l >= 0; --l) {
    lane[l] = warp(state[l], bwd);
    if (l > 0) bwd = mul_scalar(avgpool2x(bwd), 0.5);
  }
  return lane;
}

std::vector<Tensor> Model::temporal_connect_trflow(
    const Tensor& prev_flow, const Tensor& backward_flow) const {
  if (config_.temporal_mode != TemporalMode::trflow) {
    throw ContractError("temporal_connect_trflow called in temporal_mode " +
                        std::string(temporal_mode_name(config_.temporal_mode)));
  }
  if (!prev_flow.defined() || !backward_flow.defined()) {
    throw ContractError("temporal_connect_trflow: undefined input flow");
  }
  const int L = config_.levels;
  std::vector<Tensor> lane(L);
  Tensor f = warp(prev_flow, backward_flow);
  lane[L - 1] = f;
  for (int l = L - 2; l >= 0; --l) {
    f = mul_scalar(avgpool2x(f), 0.5);
    lane[l] = f;
  }
  return lane;
}

std::vector<PairOutput> Model::forward_sequence(
    const std::vector<Tensor>& frames) const {
  if (frames.size() < 2) {
    throw ContractError("forward_sequence: " + std::to_string(frames.size()) +
                        " frames, want at least 2");
  }
  std::vector<std::vector<Tensor>> pyrs;
  pyrs.reserve(frames.size());
  for (const Tensor& f : frames) {
    if (f.shape() != frames[0].shape()) {
      throw DimensionError("forward_sequence: frame shape " +
                           shape_str(f.shape()) + " vs " +
                           shape_str(frames[0].shape()));
    }
    pyrs.push_back(encode(f));
  }

  std::vector<PairOutput> outputs;
  std::vector<Tensor> state;
  Tensor prev_finest;
  for (size_t t = 0; t + 1 < frames.size(); ++t) {
    std::vector<Tensor> temporal;
    if (t > 0 && config_.temporal_mode != TemporalMode::none) {
      Tensor bwd = backward_flow_from_pyramids(pyrs[t], pyrs[t - 1]);
      if (config_.temporal_mode == TemporalMode::trfeat) {
        temporal = temporal_lane_trfeat(state, bwd);
      } else {
        temporal = temporal_connect_trflow(prev_finest, bwd);
      }
    }
    PairOutput out = run_pyramid(pyrs[t], pyrs[t + 1], temporal);
    if (config_.temporal_mode == TemporalMode::trfeat) state = out.state;
    if (config_.temporal_mode == TemporalMode::trflow) {
      prev_finest = out.flows.back();
    }
    outputs.push_back(std::move(out));
  }
  return outputs;
}

Tensor Model::full_res_flow(const Tensor& finest_flow) {
  return mul_scalar(upsample2x(finest_flow), 2.0);
}

Tensor Model::full_res_occ(const Tensor& finest_occ) {
  return upsample2x(finest_occ);
}

// ---- parameters ------------------------------------------------------------

ParamCount Model::count_parameters() const {
  ParamCount pc;
  for (const Parameter& p : params_) {
    const std::string group = p.name.substr(0, p.name.find('.'));
    pc.by_group[group] += p.tensor.numel();
    pc.total += p.tensor.numel();
  }
  return pc;
}

void Model::zero_grads() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

// ---- checkpoint ------------------------------------------------------------

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t read_u32(std::istream& is, const char* what) {
  uint32_t v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError(std::string("checkpoint truncated reading ") + what);
  }
  return v;
}
uint64_t read_u64(std::istream& is, const char* what) {
  uint64_t v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError(std::string("checkpoint truncated reading ") + what);
  }
  return v;
}

}  // namespace

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  write_u32(os, kCheckpointVersion);
  const std::string cfg = config_.to_json();
  write_u64(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u64(os, params_.size());
  for (const Parameter& p : params_) {
    write_u64(os, p.name.size());
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(os, static_cast<uint32_t>(p.tensor.shape().size()));
    for (int d : p.tensor.shape()) write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(p.tensor.data()),
             static_cast<std::streamsize>(p.tensor.numel() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint file: " + path);
  }
  const uint32_t version = read_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw IncompatibleError("checkpoint version " + std::to_string(version) +
                            ", this build reads " +
                            std::to_string(kCheckpointVersion));
  }
  const uint64_t cfg_len = read_u64(is, "config length");
  std::string cfg(cfg_len, '\0');
  if (!is.read(cfg.data(), static_cast<std::streamsize>(cfg_len))) {
    throw FormatError("checkpoint truncated reading config");
  }
  Model model(ModelConfig::from_json(cfg), /*seed=*/0);

  const uint64_t n = read_u64(is, "parameter count");
  if (n != model.params_.size()) {
    throw IncompatibleError("checkpoint has " + std::to_string(n) +
                            " parameters, config builds " +
                            std::to_string(model.params_.size()));
  }
  for (uint64_t i = 0; i < n; ++i) {
    const uint64_t name_len = read_u64(is, "parameter name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw FormatError("checkpoint truncated reading parameter name");
    }
    Parameter& p = model.params_[i];
    if (name != p.name) {
      throw IncompatibleError("checkpoint parameter \"" + name +
                              "\" does not match \"" + p.name + "\"");
    }
    const uint32_t rank = read_u32(is, "parameter rank");
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(read_u32(is, "parameter extent"));
    }
    if (shape != p.tensor.shape()) {
      throw IncompatibleError("checkpoint parameter \"" + name + "\" shape " +
                              shape_str(shape) + " vs model " +
                              shape_str(p.tensor.shape()));
    }
    if (!is.read(reinterpret_cast<char*>(p.tensor.data()),
                 static_cast<std::streamsize>(p.tensor.numel() *
                                              sizeof(double)))) {
      throw FormatError("checkpoint truncated reading parameter values");
    }
  }
  return model;
}

}  // namespace starflow
