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
// Subprocess tests of the command-line binary: the exit-code contract
// (0 success, 2 input error, 3 divergence, 4 incompatibility, 5 verification
// failure), artifact layout, and manifest-level reproducibility.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "starflow/flow_io.hpp"
#include "starflow/png_io.hpp"
#include "starflow/tensor.hpp"

namespace fs = std::filesystem;
using starflow::Tensor;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("starflow_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

// Runs the binary with a pinned manifest timestamp; returns the exit code
// and captures stdout+stderr into `log`.
int run_cli(const std::string& args, const TempDir& dir, std::string* log,
            const std::string& tag) {
  const std::string log_path = dir.file("log_" + tag + ".txt");
  const std::string cmd = "STARFLOW_DETERMINISTIC_TIME=2026-01-01T00:00:00Z " +
                          std::string(STARFLOW_CLI) + " " + args + " > " +
                          log_path + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (log) *log = read_text(log_path);
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

// A 3-level model with matching loss pyramid and a 2-iteration schedule:
// enough to exercise every code path in seconds.
std::string tiny_config_json(int iterations) {
  std::ostringstream ss;
  ss << R"({
  "seed": 7,
  "model": {
    "levels": 3, "encoder_widths": [8, 12, 12], "adapter_width": 8,
    "estimator_widths": [12, 8], "context_widths": [8],
    "context_dilations": [1, 1], "max_disp": 1, "temporal_channels": 4,
    "sequence_length": 4
  },
  "pretrain": { "iterations": )"
     << iterations << R"(, "batch_size": 2,
    "loss": { "alpha": [0.32, 0.08, 0.02] } },
  "multiframe": { "iterations": )"
     << iterations << R"(, "batch_size": 2, "sequence_length": 4,
    "loss": { "alpha": [0.32, 0.08, 0.02] } }
})";
  return ss.str();
}

// A static one-sprite-free scene: no motion anywhere.
const char* kStaticSpec = R"({
  "width": 32, "height": 32,
  "background_seed": 3, "background_texture": "noise",
  "bg_vx": 0.0, "bg_vy": 0.0,
  "sprites": [],
  "degradation": { "blur_sigma": 0.0, "noise_sigma": 0.0 },
  "max_speed": 6.0
})";

}  // namespace

TEST_CASE("generate: static spec yields frames and all-zero flow files") {
  TempDir dir("gen_static");
  write_text(dir.file("static.json"), kStaticSpec);
  std::string log;
  const int code = run_cli("generate --spec " + dir.file("static.json") +
                               " --count 1 --frames 3 --seed 1 --out " +
                               dir.file("ds"),
                           dir, &log, "gen");
  CHECK(code == 0);

  const fs::path seq = fs::path(dir.file("ds")) / "seq_00000";
  for (int t = 0; t < 3; ++t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%02d.png", t);
    CHECK(fs::exists(seq / buf));
  }
  for (int t = 0; t < 2; ++t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "flow_%02d.flo", t);
    const Tensor flow = starflow::read_flo((seq / buf).string());
    for (double v : flow.values()) CHECK(v == 0.0);
  }
  CHECK(fs::exists(fs::path(dir.file("ds")) / "run_manifest.json"));
}

TEST_CASE("generate: invalid spec exits 2; reruns hash identically") {
  TempDir dir("gen_bad");
  write_text(dir.file("bad.json"), "{\"width\": -4}");
  std::string log;
  CHECK(run_cli("generate --spec " + dir.file("bad.json") + " --out " +
                    dir.file("x"),
                dir, &log, "bad") == 2);

  // Same preset/seed twice -> byte-identical datasets including manifests.
  CHECK(run_cli("generate --preset shift --count 2 --frames 3 --seed 9 "
                "--out " +
                    dir.file("a"),
                dir, &log, "a") == 0);
  CHECK(run_cli("generate --preset shift --count 2 --frames 3 --seed 9 "
                "--out " +
                    dir.file("b"),
                dir, &log, "b") == 0);
  CHECK(read_text(dir.file("a/run_manifest.json")) ==
        read_text(dir.file("b/run_manifest.json")));
  CHECK(read_text(dir.file("a/seq_00001/flow_00.flo")) ==
        read_text(dir.file("b/seq_00001/flow_00.flo")));
  CHECK(read_text(dir.file("a/seq_00001/frame_01.png")) ==
        read_text(dir.file("b/seq_00001/frame_01.png")));
}

TEST_CASE("train/eval/infer pipeline with exit-code contract") {
  TempDir dir("pipeline");
  std::string log;
  REQUIRE(run_cli("generate --preset shift --count 3 --frames 4 --seed 5 "
                  "--out " +
                      dir.file("ds"),
                  dir, &log, "gen") == 0);
  write_text(dir.file("tiny.json"), tiny_config_json(2));

  SUBCASE("missing data directory exits 2") {
    CHECK(run_cli("train --config " + dir.file("tiny.json") + " --data " +
                      dir.file("nope") + " --out " + dir.file("r"),
                  dir, &log, "nodata") == 2);
  }

  SUBCASE("train, evaluate, infer") {
    REQUIRE(run_cli("train --config " + dir.file("tiny.json") + " --data " +
                        dir.file("ds") + " --out " + dir.file("run"),
                    dir, &log, "train") == 0);
    CHECK(fs::exists(dir.file("run/model.ckpt")));
    CHECK(fs::exists(dir.file("run/pretrain/curve.csv")));
    CHECK(fs::exists(dir.file("run/multiframe/curve.csv")));
    CHECK(fs::exists(dir.file("run/run_manifest.json")));

    // eval with viz: metrics plus one flow PNG per sequence.
    REQUIRE(run_cli("eval --checkpoint " + dir.file("run/model.ckpt") +
                        " --data " + dir.file("ds") +
                        " --frames 4 --viz --out " + dir.file("ev"),
                    dir, &log, "eval") == 0);
    CHECK(fs::exists(dir.file("ev/metrics.txt")));
    CHECK(fs::exists(dir.file("ev/metrics.json")));
    CHECK(fs::exists(dir.file("ev/per_sample.csv")));
    int flow_pngs = 0;
    for (const auto& e : fs::directory_iterator(dir.file("ev/viz"))) {
      if (e.path().filename().string().find("_flow.png") !=
          std::string::npos) {
        ++flow_pngs;
      }
    }
    CHECK(flow_pngs == 3);
    const std::string csv = read_text(dir.file("ev/per_sample.csv"));
    CHECK(csv.find("index,epe_all,epe_noc,epe_occ,fl_all,occ_f1") == 0);

    // config compatibility: a different model config must exit 4.
    std::string other = tiny_config_json(2);
    const size_t pos = other.find("\"max_disp\": 1");
    REQUIRE(pos != std::string::npos);
    other.replace(pos, 13, "\"max_disp\": 2");
    write_text(dir.file("other.json"), other);
    CHECK(run_cli("eval --checkpoint " + dir.file("run/model.ckpt") +
                      " --data " + dir.file("ds") + " --config " +
                      dir.file("other.json") + " --out " + dir.file("ev4"),
                  dir, &log, "mismatch") == 4);
    CHECK(run_cli("eval --checkpoint " + dir.file("run/model.ckpt") +
                      " --data " + dir.file("ds") + " --config " +
                      dir.file("tiny.json") + " --out " + dir.file("ev0"),
                  dir, &log, "match") == 0);

    // infer: flow round-trips through the reader; occlusion map optional.
    REQUIRE(run_cli("infer --checkpoint " + dir.file("run/model.ckpt") + " " +
                        dir.file("ds/seq_00000/frame_00.png") + " " +
                        dir.file("ds/seq_00000/frame_01.png") + " " +
                        dir.file("ds/seq_00000/frame_02.png") + " --out " +
                        dir.file("out/flow.flo") + " --occ " +
                        dir.file("out/occ.png"),
                    dir, &log, "infer") == 0);
    const Tensor flow = starflow::read_flo(dir.file("out/flow.flo"));
    CHECK(flow.shape() == std::vector<int>{2, 32, 32});
    CHECK(fs::exists(dir.file("out/occ.png")));
    CHECK(fs::exists(dir.file("out/flow.flo.manifest.json")));

    // infer with frames whose size is not divisible by 2^levels.
    starflow::Image8 odd;
    odd.width = 30;
    odd.height = 30;
    odd.channels = 3;
    odd.pixels.assign(30 * 30 * 3, 128);
    starflow::write_png8(dir.file("odd.png"), odd);
    CHECK(run_cli("infer --checkpoint " + dir.file("run/model.ckpt") + " " +
                      dir.file("odd.png") + " " + dir.file("odd.png") +
                      " --out " + dir.file("odd.flo"),
                  dir, &log, "odd") == 2);

    // fewer than two frames is an input error.
    CHECK(run_cli("infer --checkpoint " + dir.file("run/model.ckpt") + " " +
                      dir.file("ds/seq_00000/frame_00.png") + " --out " +
                      dir.file("one.flo"),
                  dir, &log, "one") == 2);
  }
}

TEST_CASE("train: exploding loss exits 3 with a diagnostic checkpoint") {
  TempDir dir("diverge");
  std::string log;
  REQUIRE(run_cli("generate --preset shift --count 2 --frames 3 --seed 3 "
                  "--out " +
                      dir.file("ds"),
                  dir, &log, "gen") == 0);
  // An absurd learning rate sends the parameters to overflow within a few
  // steps.
  std::string cfg = tiny_config_json(40);
  const size_t pos = cfg.find("\"pretrain\": { \"iterations\": 40,");
  REQUIRE(pos != std::string::npos);
  cfg.insert(pos + std::string("\"pretrain\": {").size(),
             " \"lr\": 1e18, \"clip_norm\": 0.0,");
  write_text(dir.file("hot.json"), cfg);
  CHECK(run_cli("train --config " + dir.file("hot.json") + " --data " +
                    dir.file("ds") + " --out " + dir.file("run"),
                dir, &log, "hot") == 3);
  CHECK(log.find("diverged") != std::string::npos);
}

TEST_CASE("gradcheck: exit 0 clean, exit 5 with a planted warp fault") {
  TempDir dir("gradcheck");
  std::string log;
  CHECK(run_cli("gradcheck --samples 2", dir, &log, "ok") == 0);
  CHECK(log.find("gradient check: PASS") != std::string::npos);
  // Every op appears exactly once.
  for (const char* op : {"conv2d", "warp", "correlation", "flow_loss",
                         "occ_loss", "sequence_loss", "end_to_end_n3"}) {
    const size_t first = log.find(std::string(op) + " ");
    CHECK(first != std::string::npos);
    CHECK(log.find(std::string(op) + " ", first + 1) == std::string::npos);
  }

  CHECK(run_cli("gradcheck --samples 2 --inject-fault", dir, &log, "fault") ==
        5);
  CHECK(log.find("warp") != std::string::npos);
  CHECK(log.find("FAIL") != std::string::npos);
}

TEST_CASE("params: stable output with sharing factor and occlusion delta") {
  TempDir dir("params");
  std::string a, b;
  CHECK(run_cli("params", dir, &a, "a") == 0);
  CHECK(run_cli("params", dir, &b, "b") == 0);
  CHECK(a == b);
  CHECK(a.find("factor 4.00x") != std::string::npos);   // default L=4
  CHECK(a.find("relative -") != std::string::npos);     // shared < unshared
  CHECK(a.find("2f_occ") != std::string::npos);
  CHECK(a.find("trfeat_occ") != std::string::npos);

  // The occlusion head adds under a percent at the default width.
  const size_t row = a.find("2f_occ");
  const size_t pct = a.find('%', row);
  REQUIRE(pct != std::string::npos);
  const std::string rel = a.substr(row + 6, pct - row - 6);
  CHECK(std::abs(std::atof(rel.c_str() + rel.find('+'))) < 1.0);
}

TEST_CASE("usage errors exit 2, help exits 0") {
  TempDir dir("usage");
  std::string log;
  CHECK(run_cli("--help", dir, &log, "help") == 0);
  CHECK(run_cli("no-such-command", dir, &log, "bad") == 2);
  CHECK(run_cli("train --data", dir, &log, "badopt") == 2);
  CHECK(run_cli("generate --preset nope --out x", dir, &log, "badpreset") ==
        2);
}
