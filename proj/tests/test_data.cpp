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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "starflow/common.hpp"
#include "starflow/flow_io.hpp"
#include "starflow/flow_ops.hpp"
#include "starflow/png_io.hpp"
#include "starflow/synth.hpp"

using namespace starflow;
namespace fs = std::filesystem;

namespace {

// Scratch directory removed at scope exit, so test reruns start clean.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("starflow_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(is)),
                              std::istreambuf_iterator<char>());
}

void append_f32(std::vector<uint8_t>& out, float v) {
  uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

void append_i32(std::vector<uint8_t>& out, int32_t v) {
  uint8_t b[4];
  std::memcpy(b, &v, 4);
  out.insert(out.end(), b, b + 4);
}

// The differentiable warp is batched; wrap/unwrap the [C,H,W] tensors the
// generator produces.
Tensor warp3(const Tensor& img, const Tensor& flow) {
  Tensor fi = Tensor::zeros({1, img.dim(0), img.dim(1), img.dim(2)});
  fi.values() = img.values();
  Tensor fl = Tensor::zeros({1, 2, flow.dim(1), flow.dim(2)});
  fl.values() = flow.values();
  Tensor out4 = warp(fi, fl);
  Tensor out = Tensor::zeros({out4.dim(1), out4.dim(2), out4.dim(3)});
  out.values() = out4.values();
  return out;
}

double px(const Tensor& t, int c, int y, int x) {
  const int h = t.dim(1), w = t.dim(2);
  (void)h;
  return t.values()[static_cast<size_t>(c) * t.dim(1) * w +
                    static_cast<size_t>(y) * w + x];
}

// Hand-built 28-byte Middlebury file for a 2x1 field with u=(1,-1),
// v=(0.5,0): magic, width, height, then per-pixel (u,v) float pairs.
std::vector<uint8_t> fixture_flo_bytes() {
  std::vector<uint8_t> bytes;
  append_f32(bytes, 202021.25f);
  append_i32(bytes, 2);
  append_i32(bytes, 1);
  append_f32(bytes, 1.0f);
  append_f32(bytes, 0.5f);
  append_f32(bytes, -1.0f);
  append_f32(bytes, 0.0f);
  return bytes;
}

SceneSpec single_rect_scene() {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.background_seed = 11;
  Sprite s;
  s.shape = Sprite::Shape::rect;
  s.texture = Sprite::Texture::noise;
  s.texture_seed = 22;
  s.x = 10;
  s.y = 10;
  s.w = 8;
  s.h = 8;
  s.vx = 2;
  s.vy = 0;
  spec.sprites.push_back(s);
  return spec;
}

}  // namespace

TEST_CASE("flo fixture matches the hand-assembled 28-byte layout") {
  TempDir dir("flo_fixture");
  const std::vector<uint8_t> expected = fixture_flo_bytes();
  REQUIRE(expected.size() == 28);

  // Reading the hand-built bytes yields the right field.
  write_bytes(dir.file("hand.flo"), expected);
  Tensor flow = read_flo(dir.file("hand.flo"));
  REQUIRE(flow.dim(0) == 2);
  REQUIRE(flow.dim(1) == 1);
  REQUIRE(flow.dim(2) == 2);
  CHECK(px(flow, 0, 0, 0) == 1.0);
  CHECK(px(flow, 0, 0, 1) == -1.0);
  CHECK(px(flow, 1, 0, 0) == 0.5);
  CHECK(px(flow, 1, 0, 1) == 0.0);

  // Writing that field reproduces the byte string exactly.
  write_flo(dir.file("ours.flo"), flow);
  const std::vector<uint8_t> actual = read_bytes(dir.file("ours.flo"));
  REQUIRE(actual.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) {
    CAPTURE(i);
    CHECK(actual[i] == expected[i]);
  }
}

TEST_CASE("flo round-trips random flows at 32-bit precision") {
  TempDir dir("flo_roundtrip");
  Rng rng(3);
  Tensor flow = Tensor::zeros({2, 5, 7});
  for (double& v : flow.values()) v = rng.uniform(-40.0, 40.0);
  write_flo(dir.file("r.flo"), flow);
  Tensor back = read_flo(dir.file("r.flo"));
  REQUIRE(back.shape() == flow.shape());
  for (size_t i = 0; i < flow.values().size(); ++i) {
    CHECK(back.values()[i] ==
          static_cast<double>(static_cast<float>(flow.values()[i])));
  }
}

TEST_CASE("flo rejects malformed files") {
  TempDir dir("flo_bad");

  SUBCASE("bad magic") {
    std::vector<uint8_t> bytes = fixture_flo_bytes();
    bytes[0] = 0;
    bytes[1] = 0;
    bytes[2] = 0;
    bytes[3] = 0;
    write_bytes(dir.file("bad.flo"), bytes);
    CHECK_THROWS_AS(read_flo(dir.file("bad.flo")), FormatError);
  }
  SUBCASE("truncated payload reports the byte offset") {
    std::vector<uint8_t> bytes = fixture_flo_bytes();
    bytes.resize(20);  // header + 2 of 4 payload floats
    write_bytes(dir.file("trunc.flo"), bytes);
    try {
      read_flo(dir.file("trunc.flo"));
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("byte offset") != std::string::npos);
      CHECK(msg.find("20") != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    std::vector<uint8_t> bytes = fixture_flo_bytes();
    bytes.resize(6);
    write_bytes(dir.file("hdr.flo"), bytes);
    CHECK_THROWS_AS(read_flo(dir.file("hdr.flo")), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_flo(dir.file("nope.flo")), IoError);
  }
  SUBCASE("implausible size") {
    std::vector<uint8_t> bytes;
    append_f32(bytes, 202021.25f);
    append_i32(bytes, -3);
    append_i32(bytes, 1);
    write_bytes(dir.file("neg.flo"), bytes);
    CHECK_THROWS_AS(read_flo(dir.file("neg.flo")), FormatError);
  }
}

TEST_CASE("kitti png fixed-point encoding") {
  TempDir dir("kitti");

  SUBCASE("zero flow encodes as 32768 with validity 1") {
    Tensor flow = Tensor::zeros({2, 3, 4});
    write_kitti_png(dir.file("zero.png"), flow);
    Image16 img = read_png16(dir.file("zero.png"));
    REQUIRE(img.channels == 3);
    for (size_t q = 0; q < img.pixels.size(); q += 3) {
      CHECK(img.pixels[q] == 32768);
      CHECK(img.pixels[q + 1] == 32768);
      CHECK(img.pixels[q + 2] == 1);
    }
  }
  SUBCASE("u=1 encodes as 32832") {
    Tensor flow = Tensor::zeros({2, 1, 1});
    flow.values()[0] = 1.0;
    write_kitti_png(dir.file("one.png"), flow);
    Image16 img = read_png16(dir.file("one.png"));
    CHECK(img.pixels[0] == 32832);
    CHECK(img.pixels[1] == 32768);
  }
  SUBCASE("grid-aligned flows round-trip exactly, valid mask preserved") {
    Rng rng(9);
    Tensor flow = Tensor::zeros({2, 6, 5});
    Tensor valid = Tensor::zeros({1, 6, 5});
    for (double& v : flow.values()) {
      v = (static_cast<double>(rng.randint(65536)) - 32768.0) / 64.0;
    }
    for (double& v : valid.values()) v = rng.randint(2) ? 1.0 : 0.0;
    write_kitti_png(dir.file("grid.png"), flow, valid);
    auto [back, vback] = read_kitti_png(dir.file("grid.png"));
    REQUIRE(back.shape() == flow.shape());
    const size_t hw = 6 * 5;
    for (size_t q = 0; q < hw; ++q) {
      CHECK(vback.values()[q] == valid.values()[q]);
      if (valid.values()[q] != 0.0) {
        CHECK(back.values()[q] == flow.values()[q]);
        CHECK(back.values()[hw + q] == flow.values()[hw + q]);
      } else {
        CHECK(back.values()[q] == 0.0);  // invalid pixels read as zero flow
        CHECK(back.values()[hw + q] == 0.0);
      }
    }
  }
  SUBCASE("out-of-range flow is a contract error") {
    Tensor flow = Tensor::zeros({2, 1, 1});
    flow.values()[0] = 600.0;  // 600*64 + 32768 > 65535
    CHECK_THROWS_AS(write_kitti_png(dir.file("oob.png"), flow), ContractError);
  }
  SUBCASE("8-bit input is a format error") {
    Image8 img;
    img.width = 2;
    img.height = 2;
    img.channels = 3;
    img.pixels.assign(12, 128);
    write_png8(dir.file("eight.png"), img);
    CHECK_THROWS_AS(read_kitti_png(dir.file("eight.png")), FormatError);
  }
  SUBCASE("wrong channel count is a format error") {
    Image16 img;
    img.width = 2;
    img.height = 2;
    img.channels = 1;
    img.pixels.assign(4, 7);
    write_png16(dir.file("gray16.png"), img);
    CHECK_THROWS_AS(read_kitti_png(dir.file("gray16.png")), FormatError);
  }
}

TEST_CASE("png io round-trips and enforces bit depth") {
  TempDir dir("png");
  Rng rng(5);

  SUBCASE("8-bit rgb") {
    Image8 img;
    img.width = 7;
    img.height = 4;
    img.channels = 3;
    img.pixels.resize(7 * 4 * 3);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.randint(256));
    write_png8(dir.file("rgb.png"), img);
    Image8 back = read_png8(dir.file("rgb.png"));
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == img.channels);
    CHECK(back.pixels == img.pixels);
    CHECK_THROWS_AS(read_png16(dir.file("rgb.png")), FormatError);
  }
  SUBCASE("8-bit gray") {
    Image8 img;
    img.width = 3;
    img.height = 5;
    img.channels = 1;
    img.pixels.resize(15);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.randint(256));
    write_png8(dir.file("gray.png"), img);
    Image8 back = read_png8(dir.file("gray.png"));
    CHECK(back.channels == 1);
    CHECK(back.pixels == img.pixels);
  }
  SUBCASE("16-bit rgb") {
    Image16 img;
    img.width = 4;
    img.height = 3;
    img.channels = 3;
    img.pixels.resize(4 * 3 * 3);
    for (auto& p : img.pixels) p = static_cast<uint16_t>(rng.randint(65536));
    write_png16(dir.file("rgb16.png"), img);
    Image16 back = read_png16(dir.file("rgb16.png"));
    CHECK(back.width == img.width);
    CHECK(back.channels == 3);
    CHECK(back.pixels == img.pixels);
    CHECK_THROWS_AS(read_png8(dir.file("rgb16.png")), FormatError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_png8(dir.file("missing.png")), IoError);
  }
}

TEST_CASE("flow colorization") {
  SUBCASE("zero flow renders white") {
    Tensor flow = Tensor::zeros({2, 3, 3});
    Image8 img = flow_to_color(flow);
    for (uint8_t p : img.pixels) CHECK(p == 255);
  }
  SUBCASE("(m,0) at max_mag=m renders saturated red") {
    Tensor flow = Tensor::zeros({2, 2, 2});
    for (size_t q = 0; q < 4; ++q) flow.values()[q] = 7.5;
    for (Image8 img : {flow_to_color(flow, 7.5), flow_to_color(flow)}) {
      for (size_t q = 0; q < 4; ++q) {
        CHECK(img.pixels[q * 3 + 0] == 255);
        CHECK(img.pixels[q * 3 + 1] == 0);
        CHECK(img.pixels[q * 3 + 2] < 64);
      }
    }
  }
  SUBCASE("rotating unit field sweeps hues without seams") {
    const int w = 64, h = 4;
    Tensor flow = Tensor::zeros({2, h, w});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double theta = 2.0 * M_PI * x / w;
        flow.values()[static_cast<size_t>(y) * w + x] = std::cos(theta);
        flow.values()[static_cast<size_t>(h) * w + y * w + x] =
            std::sin(theta);
      }
    }
    Image8 img = flow_to_color(flow, 1.0);
    // Continuity: adjacent columns move at most a modest step per channel.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x + 1 < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          const int a = img.pixels[(static_cast<size_t>(y) * w + x) * 3 + c];
          const int b =
              img.pixels[(static_cast<size_t>(y) * w + x + 1) * 3 + c];
          CHECK(std::abs(a - b) <= 60);
        }
      }
    }
    // All rows identical (flow depends only on x).
    for (int y = 1; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          CHECK(img.pixels[(static_cast<size_t>(y) * w + x) * 3 + c] ==
                img.pixels[static_cast<size_t>(x) * 3 + c]);
        }
      }
    }
    // Frozen content hash: any palette or indexing change must be deliberate.
    const uint64_t hash = fnv1a64(img.pixels.data(), img.pixels.size());
    CHECK(hash == 0x8bf789a28cff5435ull);
    // Determinism: a second render is bit-identical.
    Image8 again = flow_to_color(flow, 1.0);
    CHECK(again.pixels == img.pixels);
  }
}

TEST_CASE("generator: zero-velocity scene has zero flow and no occlusion") {
  SceneSpec spec = single_rect_scene();
  spec.sprites[0].vx = 0;
  SequenceSample s = generate(spec, 3, 0);
  REQUIRE(s.frames.size() == 3);
  REQUIRE(s.flow_gt.size() == 2);
  REQUIRE(s.occ_gt.size() == 2);
  for (const Tensor& f : s.flow_gt) {
    for (double v : f.values()) CHECK(v == 0.0);
  }
  for (const Tensor& o : s.occ_gt) {
    for (double v : o.values()) CHECK(v == 0.0);
  }
  CHECK(s.frames[0].values() == s.frames[1].values());
  CHECK(s.frames[1].values() == s.frames[2].values());
}

TEST_CASE("generator: single sprite moving (2,0) gives exact flow and band") {
  SceneSpec spec = single_rect_scene();
  SequenceSample s = generate(spec, 2, 0);
  const Tensor& flow = s.flow_gt[0];
  const Tensor& occ = s.occ_gt[0];
  const int w = 32;
  const size_t hw = 32 * 32;
  int occ_count = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      CAPTURE(x);
      CAPTURE(y);
      const size_t q = static_cast<size_t>(y) * w + x;
      const bool on_sprite =
          x >= 10 && x < 18 && y >= 10 && y < 18;  // pose at t=0
      CHECK(flow.values()[q] == (on_sprite ? 2.0 : 0.0));
      CHECK(flow.values()[hw + q] == 0.0);
      // Newly covered background: the 2-px band ahead of the sprite's
      // leading edge, [18,20) x [10,18).
      const bool band = x >= 18 && x < 20 && y >= 10 && y < 18;
      CHECK(occ.values()[q] == (band ? 1.0 : 0.0));
      occ_count += occ.values()[q] != 0.0;
    }
  }
  CHECK(occ_count == 16);
}

TEST_CASE("generator: same seed is bit-identical, spec errors are caught") {
  SceneSpec spec = single_rect_scene();
  spec.degradation.blur_sigma = 1.5;
  spec.degradation.noise_sigma = 0.02;

  SequenceSample a = generate(spec, 4, 77);
  SequenceSample b = generate(spec, 4, 77);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].values() == b.frames[i].values());
  }
  for (size_t i = 0; i < a.flow_gt.size(); ++i) {
    CHECK(a.flow_gt[i].values() == b.flow_gt[i].values());
    CHECK(a.occ_gt[i].values() == b.occ_gt[i].values());
  }
  SequenceSample c = generate(spec, 4, 78);  // different degradation noise
  CHECK(a.frames[0].values() != c.frames[0].values());

  SUBCASE("sprite larger than canvas") {
    SceneSpec bad = single_rect_scene();
    bad.sprites[0].w = 40;
    CHECK_THROWS_AS(generate(bad, 2, 0), SpecError);
  }
  SUBCASE("velocity exceeding the speed bound") {
    SceneSpec bad = single_rect_scene();
    bad.sprites[0].vx = 7.0;  // > max_speed 6
    CHECK_THROWS_AS(generate(bad, 2, 0), SpecError);
  }
  SUBCASE("acceleration pushing a later step over the bound") {
    SceneSpec bad = single_rect_scene();
    bad.sprites[0].vx = 5.0;
    bad.sprites[0].ax = 1.0;  // step t displacement 5 + (t+0.5)
    CHECK_NOTHROW(generate(bad, 2, 0));
    CHECK_THROWS_AS(generate(bad, 4, 0), SpecError);
  }
  SUBCASE("too few frames") {
    CHECK_THROWS_AS(generate(spec, 1, 0), ContractError);
  }
}

TEST_CASE("ground-truth consistency: integer motion is bit-exact off occlusions") {
  // Static noise background, two integer-velocity sprites whose paths
  // interact, several frames.
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.background_seed = 5;
  Sprite a;
  a.x = 4;
  a.y = 6;
  a.w = 10;
  a.h = 9;
  a.vx = 2;
  a.vy = 1;
  a.texture_seed = 6;
  Sprite b;
  b.shape = Sprite::Shape::ellipse;
  b.x = 18;
  b.y = 12;
  b.w = 9;
  b.h = 11;
  b.vx = -1;
  b.vy = 0;
  b.texture_seed = 7;
  spec.sprites = {a, b};

  SequenceSample s = generate(spec, 4, 0);
  const int w = 32, h = 32;
  const size_t hw = static_cast<size_t>(w) * h;

  int occluded = 0, checked = 0;
  for (size_t t = 0; t + 1 < s.frames.size(); ++t) {
    // The differentiable warp reproduces frame t exactly where occ=0.
    Tensor warped = warp3(s.frames[t + 1], s.flow_gt[t]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t q = static_cast<size_t>(y) * w + x;
        const int dx = static_cast<int>(s.flow_gt[t].values()[q]);
        const int dy = static_cast<int>(s.flow_gt[t].values()[hw + q]);
        CHECK(s.flow_gt[t].values()[q] == dx);  // integer motion throughout
        CHECK(s.flow_gt[t].values()[hw + q] == dy);

        const bool inside =
            x + dx >= 0 && x + dx < w && y + dy >= 0 && y + dy < h;
        bool photometric_match = inside;
        if (inside) {
          for (int c = 0; c < 3 && photometric_match; ++c) {
            photometric_match =
                px(s.frames[t + 1], c, y + dy, x + dx) ==
                px(s.frames[t], c, y, x);
          }
        }
        const bool occ = s.occ_gt[t].values()[q] != 0.0;
        occluded += occ;
        ++checked;
        CAPTURE(t);
        CAPTURE(x);
        CAPTURE(y);
        // Violations only where the mask says they may happen.
        if (!photometric_match) CHECK(occ);
        if (!occ) {
          REQUIRE(inside);
          for (int c = 0; c < 3; ++c) {
            CHECK(px(s.frames[t + 1], c, y + dy, x + dx) ==
                  px(s.frames[t], c, y, x));
            CHECK(px(warped, c, y, x) == px(s.frames[t], c, y, x));
          }
        }
      }
    }
  }
  // The scene must actually exercise occlusion for the test to mean much.
  CHECK(occluded > 30);
  CHECK(checked == 3 * 32 * 32);
}

TEST_CASE("ground-truth consistency: fractional motion under bilinear warp") {
  // Background-only scene with smooth ramp textures: bilinear resampling is
  // exact on affine images, so the photometric identity holds to roundoff
  // even for subpixel motion.
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.background_seed = 3;
  spec.background_texture = Sprite::Texture::affine;
  spec.bg_vx = 0.5;
  spec.bg_vy = 0.25;

  SequenceSample s = generate(spec, 3, 0);
  const int w = 32, h = 32;
  int interior = 0;
  for (size_t t = 0; t + 1 < s.frames.size(); ++t) {
    Tensor warped = warp3(s.frames[t + 1], s.flow_gt[t]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t q = static_cast<size_t>(y) * w + x;
        if (s.occ_gt[t].values()[q] != 0.0) {
          // Only the leaving border band may be occluded here.
          CHECK((x + 0.5 > w - 1 || y + 0.25 > h - 1));
          continue;
        }
        ++interior;
        for (int c = 0; c < 3; ++c) {
          CHECK(std::abs(px(warped, c, y, x) - px(s.frames[t], c, y, x)) <
                1e-6);
        }
      }
    }
  }
  CHECK(interior == 2 * 31 * 31);
}

TEST_CASE("degradation changes frames but never ground truth") {
  SceneSpec clean = single_rect_scene();
  SceneSpec final_like = clean;
  final_like.degradation.blur_sigma = 1.5;
  final_like.degradation.noise_sigma = 0.02;

  SequenceSample a = generate(clean, 3, 123);
  SequenceSample b = generate(final_like, 3, 123);
  for (size_t t = 0; t < a.flow_gt.size(); ++t) {
    CHECK(a.flow_gt[t].values() == b.flow_gt[t].values());
    CHECK(a.occ_gt[t].values() == b.occ_gt[t].values());
  }
  double max_diff = 0.0;
  for (size_t t = 0; t < a.frames.size(); ++t) {
    for (size_t i = 0; i < a.frames[t].values().size(); ++i) {
      max_diff = std::max(
          max_diff,
          std::abs(a.frames[t].values()[i] - b.frames[t].values()[i]));
      CHECK(b.frames[t].values()[i] >= 0.0);
      CHECK(b.frames[t].values()[i] <= 1.0);
    }
  }
  CHECK(max_diff > 0.01);
}

TEST_CASE("scene spec json round-trip and rejection") {
  SceneSpec spec = single_rect_scene();
  spec.bg_vx = -0.5;
  spec.degradation.noise_sigma = 0.02;
  Sprite e;
  e.shape = Sprite::Shape::ellipse;
  e.texture = Sprite::Texture::affine;
  e.x = 3.5;
  e.y = 4;
  e.w = 6;
  e.h = 5;
  e.vx = -1.5;
  e.ay = 0.25;
  e.texture_seed = 99;
  spec.sprites.push_back(e);

  SceneSpec back = SceneSpec::from_json(spec.to_json());
  CHECK(back == spec);

  CHECK_THROWS_AS(SceneSpec::from_json("not json"), FormatError);
  CHECK_THROWS_AS(SceneSpec::from_json("{\"width\": 32}"), FormatError);
  CHECK_THROWS_AS(
      SceneSpec::from_json(
          "{\"width\": \"wide\", \"height\": 32, \"background_seed\": 0}"),
      FormatError);
  // Structurally valid JSON describing an invalid scene.
  std::string oversize = spec.to_json();
  const size_t at = oversize.find("\"w\": 8.0");
  REQUIRE(at != std::string::npos);
  oversize.replace(at, 8, "\"w\": 99.0");
  CHECK_THROWS_AS(SceneSpec::from_json(oversize), SpecError);
}

TEST_CASE("sequence and dataset files round-trip") {
  TempDir dir("dataset");

  SUBCASE("static spec writes all-zero flow files") {
    SceneSpec spec = single_rect_scene();
    spec.sprites[0].vx = 0;
    SequenceSample s = generate(spec, 3, 0);
    write_sequence(dir.file("static"), s);
    CHECK(fs::exists(dir.path / "static" / "frame_02.png"));
    for (int t = 0; t < 2; ++t) {
      Tensor f = read_flo(
          (dir.path / "static" / ("flow_0" + std::to_string(t) + ".flo"))
              .string());
      for (double v : f.values()) CHECK(v == 0.0);
    }
  }

  SUBCASE("generated dataset loads back exactly up to frame quantization") {
    generate_dataset(dir.file("set"), ScenePreset::shift, 3, 3, 42);
    REQUIRE(fs::exists(dir.path / "set" / "manifest.json"));
    std::vector<SequenceSample> loaded = load_dataset(dir.file("set"));
    std::vector<SequenceSample> mem =
        generate_dataset_in_memory(ScenePreset::shift, 3, 3, 42);
    REQUIRE(loaded.size() == 3);
    REQUIRE(mem.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(loaded[i].meta == mem[i].meta);
      REQUIRE(loaded[i].frames.size() == 3);
      for (size_t t = 0; t < 3; ++t) {
        REQUIRE(loaded[i].frames[t].shape() == mem[i].frames[t].shape());
        for (size_t p = 0; p < mem[i].frames[t].values().size(); ++p) {
          CHECK(std::abs(loaded[i].frames[t].values()[p] -
                         mem[i].frames[t].values()[p]) <= 0.5 / 255.0 + 1e-12);
        }
      }
      for (size_t t = 0; t < 2; ++t) {
        // Preset velocities are dyadic, so float32 flow files are lossless.
        CHECK(loaded[i].flow_gt[t].values() == mem[i].flow_gt[t].values());
        CHECK(loaded[i].occ_gt[t].values() == mem[i].occ_gt[t].values());
      }
    }
  }

  SUBCASE("missing manifest") {
    CHECK_THROWS_AS(load_dataset(dir.file("nowhere")), IoError);
  }
}

TEST_CASE("scene presets stay within generator contracts") {
  for (ScenePreset preset : {ScenePreset::shift, ScenePreset::ablation}) {
    CAPTURE(scene_preset_name(preset));
    Rng rng(2026);
    int with_occ = 0;
    for (int i = 0; i < 50; ++i) {
      SceneSpec spec = random_scene(preset, rng);
      CHECK_NOTHROW(spec.validate());
      // Long enough for the largest evaluation sweep.
      SequenceSample s = generate(spec, 6, rng.fork(1));
      double occ_px = 0.0;
      for (const Tensor& o : s.occ_gt) {
        for (double v : o.values()) occ_px += v;
      }
      with_occ += occ_px > 0.0;
      for (const Tensor& f : s.frames) {
        for (double v : f.values()) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
      }
    }
    // Motion against the frame edge or between surfaces must actually
    // produce occlusions in most scenes, or the occlusion head would train
    // on nothing.
    CHECK(with_occ > 40);
  }
  CHECK(scene_preset_from_name("shift") == ScenePreset::shift);
  CHECK(scene_preset_from_name("ablation") == ScenePreset::ablation);
  CHECK_THROWS_AS(scene_preset_from_name("warp9"), ConfigError);
}
