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

#include "starflow/flow_io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace starflow {

namespace {

constexpr float kFloMagic = 202021.25f;

void require_flow(const Tensor& flow, const char* what) {
  if (!flow.defined() || flow.shape().size() != 3 || flow.dim(0) != 2) {
    throw ContractError(std::string(what) + " wants a [2,H,W] flow, got " +
                        (flow.defined() ? shape_str(flow.shape())
                                        : "undefined"));
  }
}

// The 55-entry direction color wheel (six hue segments).
const std::vector<std::array<double, 3>>& color_wheel() {
  static const std::vector<std::array<double, 3>> wheel = [] {
    const int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
    std::vector<std::array<double, 3>> w;
    for (int i = 0; i < ry; ++i) {
      w.push_back({255.0, 255.0 * i / ry, 0.0});
    }
    for (int i = 0; i < yg; ++i) {
      w.push_back({255.0 - 255.0 * i / yg, 255.0, 0.0});
    }
    for (int i = 0; i < gc; ++i) {
      w.push_back({0.0, 255.0, 255.0 * i / gc});
    }
    for (int i = 0; i < cb; ++i) {
      w.push_back({0.0, 255.0 - 255.0 * i / cb, 255.0});
    }
    for (int i = 0; i < bm; ++i) {
      w.push_back({255.0 * i / bm, 0.0, 255.0});
    }
    for (int i = 0; i < mr; ++i) {
      w.push_back({255.0, 0.0, 255.0 - 255.0 * i / mr});
    }
    return w;
  }();
  return wheel;
}

}  // namespace

Tensor read_flo(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open flo file: " + path);

  size_t offset = 0;
  auto read_or_throw = [&](void* dst, size_t n, const char* what) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) {
      throw FormatError("flo file " + path + " truncated reading " + what +
                        " at byte offset " +
                        std::to_string(offset + is.gcount()));
    }
    offset += n;
  };

  float magic = 0.0f;
  read_or_throw(&magic, 4, "magic");
  if (magic != kFloMagic) {
    throw FormatError("flo file " + path + " has bad magic " +
                      std::to_string(magic));
  }
  int32_t w = 0, h = 0;
  read_or_throw(&w, 4, "width");
  read_or_throw(&h, 4, "height");
  if (w < 1 || h < 1 || w > 1 << 16 || h > 1 << 16) {
    throw FormatError("flo file " + path + " has implausible size " +
                      std::to_string(w) + "x" + std::to_string(h));
  }
  std::vector<float> raw(static_cast<size_t>(w) * h * 2);
  read_or_throw(raw.data(), raw.size() * 4, "flow payload");

  Tensor flow = Tensor::zeros({2, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t p = (static_cast<size_t>(y) * w + x) * 2;
      flow.values()[static_cast<size_t>(y) * w + x] = raw[p];
      flow.values()[static_cast<size_t>(h) * w + y * w + x] = raw[p + 1];
    }
  }
  return flow;
}

void write_flo(const std::string& path, const Tensor& flow) {
  require_flow(flow, "write_flo");
  const int h = flow.dim(1), w = flow.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open flo file for writing: " + path);
  os.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  const int32_t wi = w, hi = h;
  os.write(reinterpret_cast<const char*>(&wi), 4);
  os.write(reinterpret_cast<const char*>(&hi), 4);
  std::vector<float> raw(static_cast<size_t>(w) * h * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t p = (static_cast<size_t>(y) * w + x) * 2;
      raw[p] = static_cast<float>(flow.values()[static_cast<size_t>(y) * w + x]);
      raw[p + 1] = static_cast<float>(
          flow.values()[static_cast<size_t>(h) * w + y * w + x]);
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size() * 4));
  if (!os) throw IoError("failed writing flo file: " + path);
}

std::pair<Tensor, Tensor> read_kitti_png(const std::string& path) {
  Image16 img = read_png16(path);
  if (img.channels != 3) {
    throw FormatError("kitti flow png " + path + " has " +
                      std::to_string(img.channels) + " channels, want 3");
  }
  const int h = img.height, w = img.width;
  Tensor flow = Tensor::zeros({2, h, w});
  Tensor valid = Tensor::zeros({1, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t p = (static_cast<size_t>(y) * w + x) * 3;
      const size_t q = static_cast<size_t>(y) * w + x;
      const bool ok = img.pixels[p + 2] != 0;
      valid.values()[q] = ok ? 1.0 : 0.0;
      if (ok) {
        flow.values()[q] = (static_cast<double>(img.pixels[p]) - 32768.0) / 64.0;
        flow.values()[static_cast<size_t>(h) * w + q] =
            (static_cast<double>(img.pixels[p + 1]) - 32768.0) / 64.0;
      }
    }
  }
  return {flow, valid};
}

void write_kitti_png(const std::string& path, const Tensor& flow,
                     const Tensor& valid) {
  require_flow(flow, "write_kitti_png");
  const int h = flow.dim(1), w = flow.dim(2);
  if (valid.defined() && valid.shape() != std::vector<int>{1, h, w}) {
    throw DimensionError("write_kitti_png: valid mask " +
                         shape_str(valid.shape()) + " does not match flow " +
                         shape_str(flow.shape()));
  }
  Image16 img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t q = static_cast<size_t>(y) * w + x;
      const double u = flow.values()[q];
      const double v = flow.values()[static_cast<size_t>(h) * w + q];
      const double eu = std::round(u * 64.0) + 32768.0;
      const double ev = std::round(v * 64.0) + 32768.0;
      if (eu < 0.0 || eu > 65535.0 || ev < 0.0 || ev > 65535.0) {
        throw ContractError("write_kitti_png: flow (" + std::to_string(u) +
                            "," + std::to_string(v) +
                            ") outside the encodable range");
      }
      const size_t p = q * 3;
      img.pixels[p] = static_cast<uint16_t>(eu);
      img.pixels[p + 1] = static_cast<uint16_t>(ev);
      img.pixels[p + 2] =
          !valid.defined() || valid.values()[q] != 0.0 ? 1 : 0;
    }
  }
  write_png16(path, img);
}

Image8 flow_to_color(const Tensor& flow, double max_mag) {
  require_flow(flow, "flow_to_color");
  const int h = flow.dim(1), w = flow.dim(2);
  const size_t hw = static_cast<size_t>(h) * w;

  double norm = max_mag;
  if (norm <= 0.0) {
    for (size_t q = 0; q < hw; ++q) {
      const double u = flow.values()[q], v = flow.values()[hw + q];
      norm = std::max(norm, std::sqrt(u * u + v * v));
    }
    if (norm <= 0.0) norm = 1.0;
  }

  const auto& wheel = color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  Image8 img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.resize(hw * 3);
  for (size_t q = 0; q < hw; ++q) {
    const double fu = flow.values()[q] / norm;
    const double fv = flow.values()[hw + q] / norm;
    const double rad = std::sqrt(fu * fu + fv * fv);
    const double a = std::atan2(-fv, -fu) / M_PI;  // [-1,1]
    const double fk = (a + 1.0) / 2.0 * (ncols - 1);
    const int k0 = std::min(static_cast<int>(fk), ncols - 1);
    const int k1 = (k0 + 1) % ncols;
    const double f = fk - k0;
    for (int c = 0; c < 3; ++c) {
      double col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
      if (rad <= 1.0) {
        col = 1.0 - rad * (1.0 - col);  // desaturate toward white
      } else {
        col *= 0.75;  // out of range: dim
      }
      img.pixels[q * 3 + c] =
          static_cast<uint8_t>(std::floor(255.0 * col + 0.5));
    }
  }
  return img;
}

}  // namespace starflow
