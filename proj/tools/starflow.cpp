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
//
// Command-line entry point: dataset generation, training, evaluation,
// inference, gradient verification, and parameter accounting. Outputs are
// files and metrics; exit codes are a stable contract:
//   0 success, 2 input error, 3 divergence, 4 incompatibility,
//   5 verification failure.

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "starflow/common.hpp"
#include "starflow/flow_io.hpp"
#include "starflow/gradcheck.hpp"
#include "starflow/loss.hpp"
#include "starflow/model.hpp"
#include "starflow/png_io.hpp"
#include "starflow/synth.hpp"
#include "starflow/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace starflow;

namespace {

// ---- small file / environment helpers --------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << text;
}

std::string out_root() {
  const char* env = std::getenv("STARFLOW_OUT_ROOT");
  return env && *env ? std::string(env) : std::string(".");
}

// Default output location <root>/<name> when --out is not given.
std::string resolve_out(const std::string& out, const std::string& name) {
  if (!out.empty()) return out;
  return (fs::path(out_root()) / name).string();
}

// Manifest timestamps default to wall-clock UTC; setting
// STARFLOW_DETERMINISTIC_TIME pins them so identical reruns are
// byte-identical including their manifests.
std::string timestamp() {
  if (const char* env = std::getenv("STARFLOW_DETERMINISTIC_TIME")) {
    return std::string(env);
  }
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return std::string(buf);
}

std::string sha1_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha1(),
                 nullptr) != 1) {
    throw IoError("sha1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// Content hash of a command's inputs: file paths hash their bytes, dataset
// directories hash their manifest, plain strings (presets, inline configs)
// hash verbatim. Each item is framed with its label so permutations differ.
std::string hash_inputs(const std::vector<std::pair<std::string, std::string>>&
                            labeled /* label -> path-or-literal */) {
  std::string acc;
  for (const auto& [label, item] : labeled) {
    acc += label;
    acc.push_back('\0');
    fs::path p(item);
    if (fs::is_regular_file(p)) {
      acc += read_file(item);
    } else if (fs::is_directory(p) && fs::is_regular_file(p / "manifest.json")) {
      acc += read_file((p / "manifest.json").string());
    } else {
      acc += item;
    }
    acc.push_back('\0');
  }
  return sha1_hex(acc);
}

// `outputs` are recorded relative to the manifest's own directory, so two
// runs of the same command into different directories produce byte-identical
// trees.
void write_run_manifest(
    const std::string& path, const std::string& command,
    const ordered_json& config, uint64_t seed,
    const std::vector<std::pair<std::string, std::string>>& inputs,
    const std::vector<std::string>& outputs) {
  ordered_json m;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["input_hash"] = hash_inputs(inputs);
  m["timestamp"] = timestamp();
  m["outputs"] = outputs;
  write_file(path, m.dump(2) + "\n");
}

// ---- full run configuration -------------------------------------------------

// Everything a training run needs, dumped with full defaults so manifests
// have no hidden settings. The sub-config names force their stages: the
// "pretrain" block always runs 2-frame, "multiframe" always runs the full
// sequence length.
struct FullConfig {
  uint64_t seed = 0;
  ModelConfig model;
  TrainConfig pretrain;
  TrainConfig multiframe;

  FullConfig() {
    pretrain.stage = TrainStage::pretrain_2frame;
    multiframe.stage = TrainStage::multiframe;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["seed"] = seed;
    j["model"] = ordered_json::parse(model.to_json());
    j["pretrain"] = ordered_json::parse(pretrain.to_json());
    j["multiframe"] = ordered_json::parse(multiframe.to_json());
    return j;
  }

  static FullConfig from_json(const std::string& text) {
    ordered_json j;
    try {
      j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    FullConfig cfg;
    for (const auto& [key, value] : j.items()) {
      if (key == "seed") {
        cfg.seed = value.get<uint64_t>();
      } else if (key == "model") {
        cfg.model = ModelConfig::from_json(value.dump());
      } else if (key == "pretrain") {
        cfg.pretrain = TrainConfig::from_json(value.dump());
      } else if (key == "multiframe") {
        cfg.multiframe = TrainConfig::from_json(value.dump());
      } else {
        throw ConfigError("unknown config key: " + key);
      }
    }
    cfg.pretrain.stage = TrainStage::pretrain_2frame;
    cfg.multiframe.stage = TrainStage::multiframe;
    return cfg;
  }
};

FullConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return FullConfig();
  return FullConfig::from_json(read_file(path));
}

// The model half of a config file: accepts either a full run config or a
// bare model config.
ModelConfig load_model_config(const std::string& path) {
  const std::string text = read_file(path);
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (j.contains("model")) return FullConfig::from_json(text).model;
  return ModelConfig::from_json(text);
}

// ---- image <-> tensor for inference/visualization ---------------------------

Tensor frame_to_tensor(const std::string& path) {
  Image8 img = read_png8(path);
  if (img.channels != 3) {
    throw FormatError("frame " + path + " is not RGB");
  }
  const size_t hw = static_cast<size_t>(img.height) * img.width;
  Tensor t = Tensor::zeros({1, 3, img.height, img.width});
  for (size_t q = 0; q < hw; ++q) {
    for (int c = 0; c < 3; ++c) {
      t.values()[c * hw + q] = img.pixels[q * 3 + c] / 255.0;
    }
  }
  return t;
}

// [1,2,H,W] batched flow -> [2,H,W] for the file writers.
Tensor debatch_flow(const Tensor& flow) {
  const int h = flow.dim(2), w = flow.dim(3);
  return Tensor::from_data({2, h, w}, flow.values());
}

void write_gray_png(const std::string& path, const Tensor& field) {
  // field is [1,1,H,W] in [0,1].
  Image8 img;
  img.height = field.dim(2);
  img.width = field.dim(3);
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(img.height) * img.width);
  for (size_t q = 0; q < img.pixels.size(); ++q) {
    const double v = std::min(1.0, std::max(0.0, field.values()[q]));
    img.pixels[q] = static_cast<uint8_t>(v * 255.0 + 0.5);
  }
  write_png8(path, img);
}

std::string seq_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%05d", i);
  return std::string(buf);
}

// ---- generate ----------------------------------------------------------------

struct GenerateOpts {
  std::string spec_file;
  std::string preset = "shift";
  int count = 1;
  int frames = 4;
  uint64_t seed = 0;
  std::string out;
};

void cmd_generate(const GenerateOpts& o) {
  const std::string out = resolve_out(o.out, "dataset");
  std::vector<std::pair<std::string, std::string>> inputs;
  ordered_json config;
  config["count"] = o.count;
  config["frames"] = o.frames;
  config["seed"] = o.seed;

  if (!o.spec_file.empty()) {
    // Fixed scene: every sequence shares the geometry; only the degradation
    // noise is re-seeded per index.
    const SceneSpec spec = SceneSpec::from_json(read_file(o.spec_file));
    config["spec"] = ordered_json::parse(spec.to_json());
    inputs.emplace_back("spec", o.spec_file);

    fs::create_directories(out);
    ordered_json manifest;
    manifest["preset"] = "spec";
    manifest["count"] = o.count;
    manifest["frames"] = o.frames;
    manifest["seed"] = o.seed;
    manifest["sequences"] = ordered_json::array();
    Rng rng(o.seed);
    for (int i = 0; i < o.count; ++i) {
      const SequenceSample sample = generate(spec, o.frames, rng.fork(0));
      write_sequence((fs::path(out) / seq_name(i)).string(), sample);
      manifest["sequences"].push_back(seq_name(i));
    }
    write_file((fs::path(out) / "manifest.json").string(),
               manifest.dump(2) + "\n");
  } else {
    const ScenePreset preset = scene_preset_from_name(o.preset);
    config["preset"] = o.preset;
    inputs.emplace_back("preset", o.preset);
    generate_dataset(out, preset, o.count, o.frames, o.seed);
  }

  std::vector<std::string> outputs = {"manifest.json"};
  for (int i = 0; i < o.count; ++i) outputs.push_back(seq_name(i));
  write_run_manifest((fs::path(out) / "run_manifest.json").string(),
                     "generate", config, o.seed, inputs, outputs);
  std::cout << "wrote " << o.count << " sequences to " << out << "\n";
}

// ---- train -------------------------------------------------------------------

struct TrainOpts {
  std::string config_file;
  std::string data_dir;
  std::string out;
  std::string stage = "both";
  std::string init_checkpoint;
};

void cmd_train(const TrainOpts& o) {
  const std::string out = resolve_out(o.out, "train_out");
  FullConfig cfg = load_config_or_default(o.config_file);

  Model model = [&] {
    if (!o.init_checkpoint.empty()) {
      Model m = Model::load_checkpoint(o.init_checkpoint);
      if (!o.config_file.empty() && !(m.config() == cfg.model)) {
        throw IncompatibleError(
            "checkpoint " + o.init_checkpoint +
            " was built with a different model config than " + o.config_file);
      }
      return m;
    }
    return Model(cfg.model, cfg.seed);
  }();

  const std::vector<SequenceSample> data = load_dataset(o.data_dir);

  if (o.stage != "both" && o.stage != "pretrain" && o.stage != "multiframe") {
    throw ConfigError("unknown stage: " + o.stage);
  }
  std::vector<std::string> outputs = {"model.ckpt"};
  if (o.stage == "both" || o.stage == "pretrain") {
    train(model, data, cfg.pretrain, (fs::path(out) / "pretrain").string());
    outputs.push_back("pretrain/curve.csv");
  }
  if (o.stage == "both" || o.stage == "multiframe") {
    train(model, data, cfg.multiframe,
          (fs::path(out) / "multiframe").string());
    outputs.push_back("multiframe/curve.csv");
  }
  const std::string ckpt = (fs::path(out) / "model.ckpt").string();
  model.save_checkpoint(ckpt);

  ordered_json config = cfg.to_json();
  config["stage"] = o.stage;
  write_run_manifest((fs::path(out) / "run_manifest.json").string(), "train",
                     config, cfg.seed,
                     {{"config", o.config_file.empty() ? "<defaults>"
                                                       : o.config_file},
                      {"data", o.data_dir},
                      {"init", o.init_checkpoint.empty() ? "<fresh>"
                                                         : o.init_checkpoint}},
                     outputs);
  std::cout << "checkpoint written to " << ckpt << "\n";
}

// ---- eval --------------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string data_dir;
  std::string config_file;  // optional compatibility check
  int frames = 4;
  bool viz = false;
  std::string out;
};

void cmd_eval(const EvalOpts& o) {
  const std::string out = resolve_out(o.out, "eval_out");
  Model model = Model::load_checkpoint(o.checkpoint);
  if (!o.config_file.empty()) {
    const ModelConfig expected = load_model_config(o.config_file);
    if (!(model.config() == expected)) {
      throw IncompatibleError("checkpoint " + o.checkpoint +
                              " does not match the config in " +
                              o.config_file);
    }
  }
  const std::vector<SequenceSample> data = load_dataset(o.data_dir);

  const EvalResult total = evaluate(model, data, o.frames);
  fs::create_directories(out);
  const std::string summary = format_metrics(total.as_map());
  write_file((fs::path(out) / "metrics.txt").string(), summary);
  ordered_json mj;
  for (const auto& [k, v] : total.as_map()) {
    if (v.has_value()) {
      mj[k] = *v;
    } else {
      mj[k] = nullptr;
    }
  }
  mj["sequences"] = total.sequences;
  mj["frames"] = o.frames;
  write_file((fs::path(out) / "metrics.json").string(), mj.dump(2) + "\n");

  // Per-sample rows; empty cells for metrics a sample cannot provide.
  std::ostringstream csv;
  csv << "index,epe_all,epe_noc,epe_occ,fl_all,occ_f1\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };
  for (size_t i = 0; i < data.size(); ++i) {
    const EvalResult one =
        evaluate(model, {data[i]}, o.frames);
    csv << i << ',' << cell(one.epe_all) << ',' << cell(one.epe_noc) << ','
        << cell(one.epe_occ) << ',' << cell(one.fl_all) << ','
        << cell(one.occ_f1) << "\n";
  }
  write_file((fs::path(out) / "per_sample.csv").string(), csv.str());

  std::vector<std::string> outputs = {"metrics.txt", "metrics.json",
                                      "per_sample.csv"};
  if (o.viz) {
    outputs.push_back("viz");
    NoGradGuard guard;
    const std::string viz_dir = (fs::path(out) / "viz").string();
    fs::create_directories(viz_dir);
    for (size_t i = 0; i < data.size(); ++i) {
      std::vector<Tensor> frames;
      for (int t = 0; t < o.frames; ++t) {
        const Tensor& f = data[i].frames[static_cast<size_t>(t)];
        Tensor b = Tensor::zeros({1, f.dim(0), f.dim(1), f.dim(2)});
        b.values() = f.values();
        frames.push_back(b);
      }
      const std::vector<PairOutput> outs = model.forward_sequence(frames);
      const Tensor flow =
          Model::full_res_flow(outs.back().flows.back());
      const Image8 color = flow_to_color(debatch_flow(flow));
      write_png8(
          (fs::path(viz_dir) / (seq_name(static_cast<int>(i)) + "_flow.png"))
              .string(),
          color);
      if (model.config().use_occlusion) {
        const Tensor occ = Model::full_res_occ(outs.back().occs.back());
        write_gray_png((fs::path(viz_dir) /
                        (seq_name(static_cast<int>(i)) + "_occ.png"))
                           .string(),
                       occ);
      }
    }
  }

  ordered_json config;
  config["model"] = ordered_json::parse(model.config().to_json());
  config["frames"] = o.frames;
  config["viz"] = o.viz;
  write_run_manifest((fs::path(out) / "run_manifest.json").string(), "eval",
                     config, 0,
                     {{"checkpoint", o.checkpoint}, {"data", o.data_dir}},
                     outputs);
  std::cout << summary;
}

// ---- infer -------------------------------------------------------------------

struct InferOpts {
  std::string checkpoint;
  std::vector<std::string> frames;
  std::string out;
  std::string occ_out;
};

void cmd_infer(const InferOpts& o) {
  const std::string out =
      o.out.empty() ? (fs::path(out_root()) / "flow.flo").string() : o.out;
  Model model = Model::load_checkpoint(o.checkpoint);
  if (o.frames.size() < 2) {
    throw ContractError("inference needs at least 2 frames, got " +
                        std::to_string(o.frames.size()));
  }
  if (!o.occ_out.empty() && !model.config().use_occlusion) {
    throw IncompatibleError(
        "occlusion output requested but the checkpoint has no occlusion "
        "head");
  }

  std::vector<Tensor> frames;
  for (const std::string& path : o.frames) {
    frames.push_back(frame_to_tensor(path));
  }
  const int h = frames[0].dim(2), w = frames[0].dim(3);
  const int div = 1 << model.config().levels;
  for (size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].dim(2) != h || frames[i].dim(3) != w) {
      throw DimensionError("frame " + o.frames[i] + " is " +
                           std::to_string(frames[i].dim(3)) + "x" +
                           std::to_string(frames[i].dim(2)) +
                           ", expected every frame to be " +
                           std::to_string(w) + "x" + std::to_string(h));
    }
  }
  if (h % div != 0 || w % div != 0) {
    throw DimensionError("frame size " + std::to_string(w) + "x" +
                         std::to_string(h) + " is not divisible by 2^" +
                         std::to_string(model.config().levels));
  }

  NoGradGuard guard;
  const std::vector<PairOutput> outs = model.forward_sequence(frames);
  const Tensor flow = Model::full_res_flow(outs.back().flows.back());
  fs::path op(out);
  if (op.has_parent_path()) fs::create_directories(op.parent_path());
  write_flo(out, debatch_flow(flow));
  std::vector<std::string> outputs = {op.filename().string()};
  if (!o.occ_out.empty()) {
    const Tensor occ = Model::full_res_occ(outs.back().occs.back());
    write_gray_png(o.occ_out, occ);
    outputs.push_back(fs::path(o.occ_out).filename().string());
  }

  ordered_json config;
  config["model"] = ordered_json::parse(model.config().to_json());
  config["frames"] = o.frames;
  std::vector<std::pair<std::string, std::string>> inputs = {
      {"checkpoint", o.checkpoint}};
  for (const std::string& f : o.frames) inputs.emplace_back("frame", f);
  write_run_manifest(out + ".manifest.json", "infer", config, 0, inputs,
                     outputs);
  std::cout << "flow written to " << out << "\n";
}

// ---- gradcheck ---------------------------------------------------------------

struct GradcheckOpts {
  int samples = 5;
  bool inject_fault = false;
  std::string out;
};

void cmd_gradcheck(const GradcheckOpts& o) {
  const std::vector<FdReport> reports =
      run_gradcheck_suite(o.samples, o.inject_fault);
  std::ostringstream table;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %-6s %-12s %-9s %s\n", "op",
                "status", "max_rel_err", "checked", "threshold");
  table << line;
  bool all = true;
  for (const FdReport& r : reports) {
    std::snprintf(line, sizeof line, "%-16s %-6s %-12.3e %-9d %g\n",
                  r.op.c_str(), r.pass() ? "pass" : "FAIL", r.max_rel_err,
                  r.checked, r.threshold);
    table << line;
    all = all && r.pass();
  }
  table << (all ? "gradient check: PASS" : "gradient check: FAIL") << " ("
        << reports.size() << " entries)\n";
  std::cout << table.str();
  if (!o.out.empty()) write_file(o.out, table.str());
  if (!all) {
    throw VerificationError("gradient check failed; see the report above");
  }
}

// ---- params ------------------------------------------------------------------

struct ParamsOpts {
  std::string config_file;
  std::string out;
};

void cmd_params(const ParamsOpts& o) {
  const ModelConfig base = o.config_file.empty()
                               ? ModelConfig()
                               : load_model_config(o.config_file);
  std::ostringstream table;

  // Group breakdown of the configured model.
  const ParamCount pc = Model(base, 0).count_parameters();
  table << "parameter groups (configured model)\n";
  char line[160];
  for (const auto& [group, n] : pc.by_group) {
    std::snprintf(line, sizeof line, "  %-12s %10lld\n", group.c_str(),
                  static_cast<long long>(n));
    table << line;
  }
  std::snprintf(line, sizeof line, "  %-12s %10lld\n", "total",
                static_cast<long long>(pc.total));
  table << line;

  // Decoder sharing: the same model with per-level decoders.
  ModelConfig unshared = base;
  unshared.share_decoder_across_scales = false;
  const ParamCount upc = Model(unshared, 0).count_parameters();
  const int64_t shared_dec = pc.by_group.at("decoder");
  const int64_t unshared_dec = upc.by_group.at("decoder");
  std::snprintf(line, sizeof line,
                "\ndecoder sharing: decoder %lld shared | %lld per-level "
                "(factor %.2fx) | model total %lld vs %lld (relative "
                "%+.1f %%)\n\n",
                static_cast<long long>(shared_dec),
                static_cast<long long>(unshared_dec),
                static_cast<double>(unshared_dec) /
                    static_cast<double>(shared_dec),
                static_cast<long long>(pc.total),
                static_cast<long long>(upc.total),
                100.0 * (static_cast<double>(pc.total) -
                         static_cast<double>(upc.total)) /
                    static_cast<double>(upc.total));
  table << line;

  // Ablation arms relative to the two-frame base, paper-table style.
  table << "arm            params     relative\n";
  const std::vector<AblationArm> arms = default_ablation_arms(base);
  int64_t base_total = 0;
  for (size_t i = 0; i < arms.size(); ++i) {
    const int64_t total = Model(arms[i].model, 0).count_parameters().total;
    if (i == 0) base_total = total;
    const double rel = 100.0 *
                       (static_cast<double>(total) -
                        static_cast<double>(base_total)) /
                       static_cast<double>(base_total);
    std::snprintf(line, sizeof line, "%-12s %10lld   %+8.2f %%\n",
                  arms[i].name.c_str(), static_cast<long long>(total), rel);
    table << line;
  }
  std::cout << table.str();
  if (!o.out.empty()) write_file(o.out, table.str());
}

// ---- ablate ------------------------------------------------------------------

struct AblateOpts {
  std::string config_file;
  std::string train_data;
  std::string eval_data;
  std::vector<std::string> arm_names;
  std::vector<uint64_t> seeds = {0, 1, 2};
  int frames = 4;
  std::string out;
};

void cmd_ablate(const AblateOpts& o) {
  const std::string out = resolve_out(o.out, "ablation_out");
  FullConfig cfg = load_config_or_default(o.config_file);

  std::vector<AblationArm> arms = default_ablation_arms(cfg.model);
  if (!o.arm_names.empty()) {
    std::vector<AblationArm> picked;
    for (const std::string& name : o.arm_names) {
      bool found = false;
      for (const AblationArm& arm : arms) {
        if (arm.name == name) {
          picked.push_back(arm);
          found = true;
          break;
        }
      }
      if (!found) throw ConfigError("unknown ablation arm: " + name);
    }
    arms = std::move(picked);
  }

  const std::vector<SequenceSample> train_set = load_dataset(o.train_data);
  const std::vector<SequenceSample> eval_set = load_dataset(o.eval_data);
  const AblationReport report =
      run_ablation(arms, train_set, eval_set, cfg.pretrain, cfg.multiframe,
                   o.seeds, o.frames, out);
  std::cout << report.table;

  ordered_json config = cfg.to_json();
  config["frames"] = o.frames;
  config["seeds"] = o.seeds;
  {
    ordered_json names = ordered_json::array();
    for (const AblationArm& arm : arms) names.push_back(arm.name);
    config["arms"] = names;
  }
  std::vector<std::string> outputs = {"report.txt"};
  for (const AblationArm& arm : arms) outputs.push_back(arm.name);
  write_run_manifest((fs::path(out) / "run_manifest.json").string(), "ablate",
                     config, cfg.seed,
                     {{"config", o.config_file.empty() ? "<defaults>"
                                                       : o.config_file},
                      {"train_data", o.train_data},
                      {"eval_data", o.eval_data}},
                     outputs);
}

// ---- dump-config ---------------------------------------------------------------

void cmd_dump_config(const std::string& out) {
  const std::string text = FullConfig().to_json().dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "starflow: multi-frame optical flow with occlusion estimation.\n"
      "Doubly recurrent (over scales and time) pyramid network, trained and\n"
      "evaluated on synthetic scenes with exact ground truth."};
  app.require_subcommand(1);

  GenerateOpts gen;
  CLI::App* cg = app.add_subcommand(
      "generate", "Render synthetic sequences with ground-truth flow");
  cg->add_option("--spec", gen.spec_file,
                 "Scene spec JSON; every sequence reuses this exact scene");
  cg->add_option("--preset", gen.preset, "Random-scene preset")
      ->check(CLI::IsMember({"shift", "ablation"}));
  cg->add_option("--count", gen.count, "Number of sequences");
  cg->add_option("--frames", gen.frames, "Frames per sequence");
  cg->add_option("--seed", gen.seed, "Base RNG seed");
  cg->add_option("--out", gen.out, "Output dataset directory");
  cg->callback([&] { cmd_generate(gen); });

  TrainOpts tr;
  CLI::App* ct = app.add_subcommand("train", "Train a model on a dataset");
  ct->add_option("--config", tr.config_file, "Run config JSON (full dump)");
  ct->add_option("--data", tr.data_dir, "Dataset directory")->required();
  ct->add_option("--out", tr.out, "Output directory");
  ct->add_option("--stage", tr.stage, "both | pretrain | multiframe")
      ->check(CLI::IsMember({"both", "pretrain", "multiframe"}));
  ct->add_option("--init", tr.init_checkpoint,
                 "Continue from this checkpoint");
  ct->callback([&] { cmd_train(tr); });

  EvalOpts ev;
  CLI::App* ce = app.add_subcommand("eval", "Evaluate a checkpoint");
  ce->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")
      ->required();
  ce->add_option("--data", ev.data_dir, "Dataset directory")->required();
  ce->add_option("--config", ev.config_file,
                 "Verify the checkpoint matches this config");
  ce->add_option("--frames", ev.frames,
                 "Frames fed per sequence (metrics use the last pair)");
  ce->add_flag("--viz", ev.viz, "Write flow-color (and occlusion) PNGs");
  ce->add_option("--out", ev.out, "Output directory");
  ce->callback([&] { cmd_eval(ev); });

  InferOpts in;
  CLI::App* ci = app.add_subcommand("infer", "Run a checkpoint on frames");
  ci->add_option("--checkpoint", in.checkpoint, "Model checkpoint")
      ->required();
  ci->add_option("frames", in.frames, "Input frame PNGs (at least 2)")
      ->required();
  ci->add_option("--out", in.out, "Output .flo path");
  ci->add_option("--occ", in.occ_out, "Also write the occlusion map PNG");
  ci->callback([&] { cmd_infer(in); });

  GradcheckOpts gc;
  CLI::App* cgc = app.add_subcommand(
      "gradcheck", "Verify analytic gradients against finite differences");
  cgc->add_option("--samples", gc.samples,
                  "Scalars probed per parameter tensor in the end-to-end "
                  "check");
  cgc->add_flag("--inject-fault", gc.inject_fault,
                "Corrupt the warp gradient to prove the harness catches it")
      ->group("");  // hidden: test fixture
  cgc->add_option("--out", gc.out, "Also write the report to this file");
  cgc->callback([&] { cmd_gradcheck(gc); });

  ParamsOpts pa;
  CLI::App* cp = app.add_subcommand(
      "params", "Parameter counts per group and across ablation arms");
  cp->add_option("--config", pa.config_file, "Model or run config JSON");
  cp->add_option("--out", pa.out, "Also write the table to this file");
  cp->callback([&] { cmd_params(pa); });

  AblateOpts ab;
  CLI::App* ca = app.add_subcommand(
      "ablate", "Train and score ablation arms (median over seeds)");
  ca->add_option("--config", ab.config_file, "Run config JSON");
  ca->add_option("--train-data", ab.train_data, "Training dataset")
      ->required();
  ca->add_option("--eval-data", ab.eval_data, "Evaluation dataset")
      ->required();
  ca->add_option("--arms", ab.arm_names,
                 "Subset of arms (default: all six)")
      ->delimiter(',');
  ca->add_option("--seeds", ab.seeds, "Seeds for the per-arm median")
      ->delimiter(',');
  ca->add_option("--frames", ab.frames, "Frames fed at evaluation");
  ca->add_option("--out", ab.out, "Output directory");
  ca->callback([&] { cmd_ablate(ab); });

  std::string dump_out;
  CLI::App* cd = app.add_subcommand(
      "dump-config", "Print the full default run config as JSON");
  cd->add_option("--out", dump_out, "Write to this file instead of stdout");
  cd->callback([&] { cmd_dump_config(dump_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IncompatibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const VerificationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
