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

#include "starflow/synth.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "starflow/flow_io.hpp"
#include "starflow/png_io.hpp"

namespace starflow {

namespace {

namespace fs = std::filesystem;

constexpr double kLatticeSpacing = 4.0;  // value-noise cell size in px

// Stable [0,1) hash of a lattice site. Everything texture-related must be a
// pure function of (seed, coordinates) so regeneration is bit-identical.
double hash01(uint64_t seed, int64_t ix, int64_t iy, int c) {
  const uint64_t key[4] = {seed, static_cast<uint64_t>(ix),
                           static_cast<uint64_t>(iy),
                           static_cast<uint64_t>(static_cast<int64_t>(c))};
  const uint64_t h = fnv1a64(key, sizeof key);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double noise_tex(uint64_t seed, double u, double v, int c) {
  const double su = u / kLatticeSpacing, sv = v / kLatticeSpacing;
  const double fu = std::floor(su), fv = std::floor(sv);
  const auto iu = static_cast<int64_t>(fu), iv = static_cast<int64_t>(fv);
  const double du = su - fu, dv = sv - fv;
  auto site = [&](int64_t a, int64_t b) {
    return 0.1 + 0.8 * hash01(seed, a, b, c);
  };
  const double v00 = site(iu, iv), v10 = site(iu + 1, iv);
  const double v01 = site(iu, iv + 1), v11 = site(iu + 1, iv + 1);
  return (1.0 - dv) * ((1.0 - du) * v00 + du * v10) +
         dv * ((1.0 - du) * v01 + du * v11);
}

// Linear ramp, gentle enough to stay inside [0,1] over any plausible
// on-screen coordinate span. Being exactly affine, bilinear resampling
// reproduces it without interpolation error.
double affine_tex(uint64_t seed, double u, double v, int c) {
  const double base = 0.35 + 0.3 * hash01(seed, 0, 0, c);
  const double gx = (hash01(seed, 1, 0, c) - 0.5) * 0.006;
  const double gy = (hash01(seed, 0, 1, c) - 0.5) * 0.006;
  return base + gx * u + gy * v;
}

double sample_texture(Sprite::Texture tex, uint64_t seed, double u, double v,
                      int c) {
  return tex == Sprite::Texture::noise ? noise_tex(seed, u, v, c)
                                       : affine_tex(seed, u, v, c);
}

double pos_x(const Sprite& s, int t) {
  return s.x + s.vx * t + 0.5 * s.ax * t * t;
}
double pos_y(const Sprite& s, int t) {
  return s.y + s.vy * t + 0.5 * s.ay * t * t;
}

bool covers(const Sprite& s, double qx, double qy, int t) {
  const double px = pos_x(s, t), py = pos_y(s, t);
  if (s.shape == Sprite::Shape::rect) {
    return qx >= px && qx < px + s.w && qy >= py && qy < py + s.h;
  }
  const double nx = (qx - (px + s.w / 2.0)) / (s.w / 2.0);
  const double ny = (qy - (py + s.h / 2.0)) / (s.h / 2.0);
  return nx * nx + ny * ny <= 1.0;
}

// Front-most surface at a continuous point: sprite index, or -1 for the
// background plane.
int owner_at(const SceneSpec& spec, double qx, double qy, int t) {
  for (int i = static_cast<int>(spec.sprites.size()) - 1; i >= 0; --i) {
    if (covers(spec.sprites[i], qx, qy, t)) return i;
  }
  return -1;
}

void displacement(const SceneSpec& spec, int surface, int t, double* dx,
                  double* dy) {
  if (surface < 0) {
    *dx = spec.bg_vx;
    *dy = spec.bg_vy;
    return;
  }
  const Sprite& s = spec.sprites[static_cast<size_t>(surface)];
  *dx = pos_x(s, t + 1) - pos_x(s, t);
  *dy = pos_y(s, t + 1) - pos_y(s, t);
}

double surface_value(const SceneSpec& spec, int surface, double qx, double qy,
                     int t, int c) {
  if (surface < 0) {
    return sample_texture(spec.background_texture, spec.background_seed,
                          qx - spec.bg_vx * t, qy - spec.bg_vy * t, c);
  }
  const Sprite& s = spec.sprites[static_cast<size_t>(surface)];
  return sample_texture(s.texture, s.texture_seed, qx - pos_x(s, t),
                        qy - pos_y(s, t), c);
}

void gaussian_blur_inplace(Tensor& img, double sigma) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    norm += kernel[k + radius];
  }
  for (double& k : kernel) k /= norm;

  std::vector<double> tmp(static_cast<size_t>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    double* plane = img.data() + static_cast<size_t>(ci) * h * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, w - 1);
          acc += kernel[k + radius] * plane[static_cast<size_t>(y) * w + xx];
        }
        tmp[static_cast<size_t>(y) * w + x] = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, h - 1);
          acc += kernel[k + radius] * tmp[static_cast<size_t>(yy) * w + x];
        }
        plane[static_cast<size_t>(y) * w + x] = acc;
      }
    }
  }
}

const char* shape_name(Sprite::Shape s) {
  return s == Sprite::Shape::rect ? "rect" : "ellipse";
}
const char* texture_name(Sprite::Texture t) {
  return t == Sprite::Texture::noise ? "noise" : "affine";
}
Sprite::Shape shape_from_name(const std::string& n) {
  if (n == "rect") return Sprite::Shape::rect;
  if (n == "ellipse") return Sprite::Shape::ellipse;
  throw FormatError("unknown sprite shape \"" + n + "\"");
}
Sprite::Texture texture_from_name(const std::string& n) {
  if (n == "noise") return Sprite::Texture::noise;
  if (n == "affine") return Sprite::Texture::affine;
  throw FormatError("unknown texture \"" + n + "\"");
}

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%02d.png", t);
  return buf;
}
std::string flow_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "flow_%02d.flo", t);
  return buf;
}
std::string occ_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "occ_%02d.png", t);
  return buf;
}

}  // namespace

void SceneSpec::validate() const {
  if (width < 4 || height < 4) {
    throw SpecError("canvas " + std::to_string(width) + "x" +
                    std::to_string(height) + " is too small");
  }
  if (!(max_speed > 0.0)) throw SpecError("max_speed must be > 0");
  if (degradation.blur_sigma < 0.0 || degradation.noise_sigma < 0.0) {
    throw SpecError("degradation sigmas must be >= 0");
  }
  for (size_t i = 0; i < sprites.size(); ++i) {
    const Sprite& s = sprites[i];
    if (s.w < 1.0 || s.h < 1.0) {
      throw SpecError("sprite " + std::to_string(i) + " is degenerate (" +
                      std::to_string(s.w) + "x" + std::to_string(s.h) + ")");
    }
    if (s.w > width || s.h > height) {
      throw SpecError("sprite " + std::to_string(i) + " (" +
                      std::to_string(s.w) + "x" + std::to_string(s.h) +
                      ") is larger than the canvas");
    }
  }
}

std::string SceneSpec::to_json() const {
  nlohmann::ordered_json j;
  j["width"] = width;
  j["height"] = height;
  j["background_seed"] = background_seed;
  j["background_texture"] = texture_name(background_texture);
  j["bg_vx"] = bg_vx;
  j["bg_vy"] = bg_vy;
  j["max_speed"] = max_speed;
  j["degradation"] = {{"blur_sigma", degradation.blur_sigma},
                      {"noise_sigma", degradation.noise_sigma}};
  j["sprites"] = nlohmann::ordered_json::array();
  for (const Sprite& s : sprites) {
    nlohmann::ordered_json sj;
    sj["shape"] = shape_name(s.shape);
    sj["texture"] = texture_name(s.texture);
    sj["x"] = s.x;
    sj["y"] = s.y;
    sj["w"] = s.w;
    sj["h"] = s.h;
    sj["vx"] = s.vx;
    sj["vy"] = s.vy;
    sj["ax"] = s.ax;
    sj["ay"] = s.ay;
    sj["texture_seed"] = s.texture_seed;
    j["sprites"].push_back(std::move(sj));
  }
  return j.dump(2);
}

SceneSpec SceneSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene spec is not valid JSON: ") + e.what());
  }
  SceneSpec spec;
  try {
    spec.width = j.at("width").get<int>();
    spec.height = j.at("height").get<int>();
    spec.background_seed = j.at("background_seed").get<uint64_t>();
    spec.background_texture =
        texture_from_name(j.at("background_texture").get<std::string>());
    spec.bg_vx = j.at("bg_vx").get<double>();
    spec.bg_vy = j.at("bg_vy").get<double>();
    spec.max_speed = j.at("max_speed").get<double>();
    spec.degradation.blur_sigma =
        j.at("degradation").at("blur_sigma").get<double>();
    spec.degradation.noise_sigma =
        j.at("degradation").at("noise_sigma").get<double>();
    for (const auto& sj : j.at("sprites")) {
      Sprite s;
      s.shape = shape_from_name(sj.at("shape").get<std::string>());
      s.texture = texture_from_name(sj.at("texture").get<std::string>());
      s.x = sj.at("x").get<double>();
      s.y = sj.at("y").get<double>();
      s.w = sj.at("w").get<double>();
      s.h = sj.at("h").get<double>();
      s.vx = sj.at("vx").get<double>();
      s.vy = sj.at("vy").get<double>();
      s.ax = sj.at("ax").get<double>();
      s.ay = sj.at("ay").get<double>();
      s.texture_seed = sj.at("texture_seed").get<uint64_t>();
      spec.sprites.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene spec field missing or mistyped: ") +
                      e.what());
  }
  spec.validate();
  return spec;
}

SequenceSample generate(const SceneSpec& spec, int n, uint64_t seed) {
  spec.validate();
  if (n < 2) {
    throw ContractError("generate: sequence length " + std::to_string(n) +
                        " < 2");
  }
  // Every per-frame displacement must stay representable by the pyramid.
  for (int t = 0; t + 1 < n; ++t) {
    for (int i = -1; i < static_cast<int>(spec.sprites.size()); ++i) {
      double dx, dy;
      displacement(spec, i, t, &dx, &dy);
      if (std::abs(dx) > spec.max_speed || std::abs(dy) > spec.max_speed) {
        throw SpecError("surface " + std::to_string(i) + " moves (" +
                        std::to_string(dx) + "," + std::to_string(dy) +
                        ") at step " + std::to_string(t) +
                        ", exceeding max_speed " +
                        std::to_string(spec.max_speed));
      }
    }
  }

  const int w = spec.width, h = spec.height;
  const size_t hw = static_cast<size_t>(h) * w;
  SequenceSample sample;
  sample.meta = spec;

  for (int t = 0; t < n; ++t) {
    Tensor frame = Tensor::zeros({3, h, w});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int o = owner_at(spec, x, y, t);
        for (int c = 0; c < 3; ++c) {
          frame.values()[static_cast<size_t>(c) * hw +
                         static_cast<size_t>(y) * w + x] =
              surface_value(spec, o, x, y, t, c);
        }
      }
    }
    sample.frames.push_back(frame);
  }

  for (int t = 0; t + 1 < n; ++t) {
    Tensor flow = Tensor::zeros({2, h, w});
    Tensor occ = Tensor::zeros({1, h, w});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t q = static_cast<size_t>(y) * w + x;
        const int o = owner_at(spec, x, y, t);
        double dx, dy;
        displacement(spec, o, t, &dx, &dy);
        flow.values()[q] = dx;
        flow.values()[hw + q] = dy;
        const double tx = x + dx, ty = y + dy;
        const bool out =
            tx < 0.0 || tx > w - 1.0 || ty < 0.0 || ty > h - 1.0;
        occ.values()[q] =
            out || owner_at(spec, tx, ty, t + 1) != o ? 1.0 : 0.0;
      }
    }
    sample.flow_gt.push_back(flow);
    sample.occ_gt.push_back(occ);
  }

  if (spec.degradation.blur_sigma > 0.0 || spec.degradation.noise_sigma > 0.0) {
    Rng rng(seed);
    for (Tensor& frame : sample.frames) {
      if (spec.degradation.blur_sigma > 0.0) {
        gaussian_blur_inplace(frame, spec.degradation.blur_sigma);
      }
      if (spec.degradation.noise_sigma > 0.0) {
        for (double& v : frame.values()) {
          v += spec.degradation.noise_sigma * rng.normal();
        }
      }
      for (double& v : frame.values()) v = std::clamp(v, 0.0, 1.0);
    }
  }
  return sample;
}

const char* scene_preset_name(ScenePreset p) {
  return p == ScenePreset::shift ? "shift" : "ablation";
}

ScenePreset scene_preset_from_name(const std::string& name) {
  if (name == "shift") return ScenePreset::shift;
  if (name == "ablation") return ScenePreset::ablation;
  throw ConfigError("unknown scene preset \"" + name +
                    "\" (want shift|ablation)");
}

SceneSpec random_scene(ScenePreset preset, Rng& rng) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.background_seed = rng.fork(1);
  spec.max_speed = 6.0;

  auto nonzero_int = [&](int lo, int hi) {
    // Uniform over [lo,hi] excluding 0.
    int v = 0;
    do {
      v = lo + static_cast<int>(rng.randint(static_cast<uint64_t>(hi - lo + 1)));
    } while (v == 0);
    return v;
  };

  if (preset == ScenePreset::shift) {
    Sprite s;
    s.shape = Sprite::Shape::rect;
    s.texture = Sprite::Texture::noise;
    s.texture_seed = rng.fork(2);
    s.w = 10 + static_cast<double>(rng.randint(7));
    s.h = 10 + static_cast<double>(rng.randint(7));
    s.x = static_cast<double>(rng.randint(
        static_cast<uint64_t>(spec.width - static_cast<int>(s.w) + 1)));
    s.y = static_cast<double>(rng.randint(
        static_cast<uint64_t>(spec.height - static_cast<int>(s.h) + 1)));
    s.vx = nonzero_int(-3, 3);
    s.vy = rng.randint(2) == 0 ? 0.0 : nonzero_int(-2, 2);
    spec.sprites.push_back(s);
    return spec;
  }

  // ablation: moving background + far sprite + near accelerating occluder.
  spec.bg_vx = 0.5 * static_cast<double>(nonzero_int(-2, 2));
  spec.bg_vy = 0.5 * static_cast<double>(rng.randint(3)) - 0.5;  // -0.5..0.5

  Sprite far;
  far.shape =
      rng.randint(2) == 0 ? Sprite::Shape::rect : Sprite::Shape::ellipse;
  far.texture = Sprite::Texture::noise;
  far.texture_seed = rng.fork(3);
  far.w = 10 + static_cast<double>(rng.randint(7));
  far.h = 10 + static_cast<double>(rng.randint(7));
  far.x = static_cast<double>(rng.randint(20));
  far.y = static_cast<double>(rng.randint(20));
  // Parallax: at least 1 px/frame relative to the background.
  do {
    far.vx = 0.5 * static_cast<double>(nonzero_int(-4, 4));
    far.vy = 0.5 * static_cast<double>(nonzero_int(-4, 4));
  } while (std::abs(far.vx - spec.bg_vx) < 1.0 &&
           std::abs(far.vy - spec.bg_vy) < 1.0);
  spec.sprites.push_back(far);

  Sprite near;
  near.shape =
      rng.randint(2) == 0 ? Sprite::Shape::rect : Sprite::Shape::ellipse;
  near.texture = Sprite::Texture::noise;
  near.texture_seed = rng.fork(4);
  near.w = 8 + static_cast<double>(rng.randint(5));
  near.h = 8 + static_cast<double>(rng.randint(5));
  near.x = static_cast<double>(rng.randint(24));
  near.y = static_cast<double>(rng.randint(24));
  near.vx = static_cast<double>(nonzero_int(-3, 3));
  near.vy = static_cast<double>(nonzero_int(-2, 2));
  // A touch of acceleration keeps multi-frame motion informative but not
  // constant.
  if (rng.randint(2) == 0) {
    near.ax = 0.25 * static_cast<double>(nonzero_int(-1, 1));
  } else {
    near.ay = 0.25 * static_cast<double>(nonzero_int(-1, 1));
  }
  spec.sprites.push_back(near);
  return spec;
}

void write_sequence(const std::string& dir, const SequenceSample& sample) {
  if (sample.frames.empty() ||
      sample.flow_gt.size() != sample.frames.size() - 1 ||
      sample.occ_gt.size() != sample.frames.size() - 1) {
    throw ContractError("write_sequence: inconsistent sample");
  }
  fs::create_directories(dir);
  const int n = static_cast<int>(sample.frames.size());
  const int h = sample.frames[0].dim(1), w = sample.frames[0].dim(2);
  const size_t hw = static_cast<size_t>(h) * w;

  for (int t = 0; t < n; ++t) {
    Image8 img;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize(hw * 3);
    for (size_t q = 0; q < hw; ++q) {
      for (int c = 0; c < 3; ++c) {
        const double v =
            std::clamp(sample.frames[t].values()[c * hw + q], 0.0, 1.0);
        img.pixels[q * 3 + c] =
            static_cast<uint8_t>(std::floor(v * 255.0 + 0.5));
      }
    }
    write_png8((fs::path(dir) / frame_name(t)).string(), img);
  }
  for (int t = 0; t + 1 < n; ++t) {
    write_flo((fs::path(dir) / flow_name(t)).string(), sample.flow_gt[t]);
    Image8 occ;
    occ.width = w;
    occ.height = h;
    occ.channels = 1;
    occ.pixels.resize(hw);
    for (size_t q = 0; q < hw; ++q) {
      occ.pixels[q] = sample.occ_gt[t].values()[q] != 0.0 ? 255 : 0;
    }
    write_png8((fs::path(dir) / occ_name(t)).string(), occ);
  }

  nlohmann::ordered_json j;
  j["frames"] = n;
  j["spec"] = nlohmann::ordered_json::parse(sample.meta.to_json());
  std::ofstream os(fs::path(dir) / "sample.json");
  if (!os) throw IoError("cannot write sample.json in " + dir);
  os << j.dump(2) << '\n';
}

SequenceSample read_sequence(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "sample.json");
  if (!is) throw IoError("cannot open sample.json in " + dir);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  int n = 0;
  SequenceSample sample;
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    n = j.at("frames").get<int>();
    sample.meta = SceneSpec::from_json(j.at("spec").dump());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sample.json in " + dir + ": " + e.what());
  }
  if (n < 2) throw FormatError("sample.json in " + dir + " has frames < 2");

  for (int t = 0; t < n; ++t) {
    Image8 img = read_png8((fs::path(dir) / frame_name(t)).string());
    if (img.channels != 3) {
      throw FormatError("frame " + std::to_string(t) + " in " + dir +
                        " is not RGB");
    }
    const size_t hw = static_cast<size_t>(img.height) * img.width;
    Tensor frame = Tensor::zeros({3, img.height, img.width});
    for (size_t q = 0; q < hw; ++q) {
      for (int c = 0; c < 3; ++c) {
        frame.values()[c * hw + q] = img.pixels[q * 3 + c] / 255.0;
      }
    }
    sample.frames.push_back(frame);
  }
  for (int t = 0; t + 1 < n; ++t) {
    sample.flow_gt.push_back(
        read_flo((fs::path(dir) / flow_name(t)).string()));
    Image8 img = read_png8((fs::path(dir) / occ_name(t)).string());
    if (img.channels != 1) {
      throw FormatError("occlusion mask " + std::to_string(t) + " in " + dir +
                        " is not single-channel");
    }
    const size_t hw = static_cast<size_t>(img.height) * img.width;
    Tensor occ = Tensor::zeros({1, img.height, img.width});
    for (size_t q = 0; q < hw; ++q) {
      occ.values()[q] = img.pixels[q] != 0 ? 1.0 : 0.0;
    }
    sample.occ_gt.push_back(occ);
  }
  return sample;
}

std::vector<SequenceSample> generate_dataset_in_memory(ScenePreset preset,
                                                       int count, int frames,
                                                       uint64_t seed) {
  if (count < 1) throw ContractError("dataset count < 1");
  Rng rng(seed);
  std::vector<SequenceSample> samples;
  samples.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const SceneSpec spec = random_scene(preset, rng);
    samples.push_back(generate(spec, frames, rng.fork(0)));
  }
  return samples;
}

void generate_dataset(const std::string& root, ScenePreset preset, int count,
                      int frames, uint64_t seed) {
  const std::vector<SequenceSample> samples =
      generate_dataset_in_memory(preset, count, frames, seed);
  fs::create_directories(root);
  nlohmann::ordered_json manifest;
  manifest["preset"] = scene_preset_name(preset);
  manifest["count"] = count;
  manifest["frames"] = frames;
  manifest["seed"] = seed;
  manifest["sequences"] = nlohmann::ordered_json::array();
  char buf[32];
  for (int i = 0; i < count; ++i) {
    std::snprintf(buf, sizeof buf, "seq_%05d", i);
    write_sequence((fs::path(root) / buf).string(), samples[i]);
    manifest["sequences"].push_back(buf);
  }
  std::ofstream os(fs::path(root) / "manifest.json");
  if (!os) throw IoError("cannot write manifest.json in " + root);
  os << manifest.dump(2) << '\n';
}

std::vector<SequenceSample> load_dataset(const std::string& root) {
  std::ifstream is(fs::path(root) / "manifest.json");
  if (!is) throw IoError("cannot open manifest.json in " + root);
  std::string text((std::istreambuf_iterator<char>(is)),
                   std::istreambuf_iterator<char>());
  std::vector<std::string> dirs;
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    for (const auto& s : j.at("sequences")) {
      dirs.push_back(s.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest.json in " + root + ": " + e.what());
  }
  std::vector<SequenceSample> samples;
  samples.reserve(dirs.size());
  for (const std::string& d : dirs) {
    samples.push_back(read_sequence((fs::path(root) / d).string()));
  }
  return samples;
}

}  // namespace starflow
