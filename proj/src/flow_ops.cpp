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

#include "starflow/flow_ops.hpp"

#include <cmath>

namespace starflow {

namespace {

void check_warp_shapes(const Tensor& features, const Tensor& flow) {
  if (features.shape().size() != 4 || flow.shape().size() != 4) {
    throw DimensionError("warp: features " + shape_str(features.shape()) +
                         ", flow " + shape_str(flow.shape()) + ", want rank 4");
  }
  if (flow.dim(1) != 2) {
    throw DimensionError("warp: flow has " + std::to_string(flow.dim(1)) +
                         " channels, want 2");
  }
  if (features.dim(0) != flow.dim(0) || features.dim(2) != flow.dim(2) ||
      features.dim(3) != flow.dim(3)) {
    throw DimensionError("warp: features " + shape_str(features.shape()) +
                         " vs flow " + shape_str(flow.shape()));
  }
}

}  // namespace

Tensor warp(const Tensor& features, const Tensor& flow) {
  check_warp_shapes(features, flow);
  const int B = features.dim(0), C = features.dim(1);
  const int H = features.dim(2), W = features.dim(3);
  Tensor out = detail::make_node(features.shape(), {features, flow});

  const int64_t plane = static_cast<int64_t>(H) * W;
  const double* pf = features.data();
  const double* pu = flow.data();
  double* po = out.data();
  for (int b = 0; b < B; ++b) {
    const double* u = pu + (static_cast<int64_t>(b) * 2 + 0) * plane;
    const double* v = pu + (static_cast<int64_t>(b) * 2 + 1) * plane;
    const double* fb = pf + static_cast<int64_t>(b) * C * plane;
    double* ob = po + static_cast<int64_t>(b) * C * plane;
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const int64_t px = static_cast<int64_t>(i) * W + j;
        const double sx = j + u[px];
        const double sy = i + v[px];
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const double fx = sx - x0;
        const double fy = sy - y0;
        const bool in00 = y0 >= 0 && y0 < H && x0 >= 0 && x0 < W;
        const bool in01 = y0 >= 0 && y0 < H && x0 + 1 >= 0 && x0 + 1 < W;
        const bool in10 = y0 + 1 >= 0 && y0 + 1 < H && x0 >= 0 && x0 < W;
        const bool in11 = y0 + 1 >= 0 && y0 + 1 < H && x0 + 1 >= 0 && x0 + 1 < W;
        const double w00 = (1.0 - fy) * (1.0 - fx);
        const double w01 = (1.0 - fy) * fx;
        const double w10 = fy * (1.0 - fx);
        const double w11 = fy * fx;
        const int64_t i00 = static_cast<int64_t>(y0) * W + x0;
        for (int c = 0; c < C; ++c) {
          const double* fc = fb + static_cast<int64_t>(c) * plane;
          double acc = 0.0;
          if (in00) acc = std::fma(w00, fc[i00], acc);
          if (in01) acc = std::fma(w01, fc[i00 + 1], acc);
          if (in10) acc = std::fma(w10, fc[i00 + W], acc);
          if (in11) acc = std::fma(w11, fc[i00 + W + 1], acc);
          ob[static_cast<int64_t>(c) * plane + px] = acc;
        }
      }
    }
  }

  if (out.requires_grad()) {
    auto fi = features.impl(), li = flow.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [fi, li, oi, B, C, H, W, plane] {
      double* gf = fi->requires_grad ? (fi->ensure_grad(), fi->grad.data())
                                     : nullptr;
      double* gl = li->requires_grad ? (li->ensure_grad(), li->grad.data())
                                     : nullptr;
      const double* g = oi->grad.data();
      const double* pf2 = fi->values.data();
      const double* pu2 = li->values.data();
      for (int b = 0; b < B; ++b) {
        const double* u = pu2 + (static_cast<int64_t>(b) * 2 + 0) * plane;
        const double* v = pu2 + (static_cast<int64_t>(b) * 2 + 1) * plane;
        const double* fb = pf2 + static_cast<int64_t>(b) * C * plane;
        const double* gb = g + static_cast<int64_t>(b) * C * plane;
        double* gu = gl ? gl + (static_cast<int64_t>(b) * 2 + 0) * plane
                        : nullptr;
        double* gv = gl ? gl + (static_cast<int64_t>(b) * 2 + 1) * plane
                        : nullptr;
        double* gfb = gf ? gf + static_cast<int64_t>(b) * C * plane : nullptr;
        for (int i = 0; i < H; ++i) {
          for (int j = 0; j < W; ++j) {
            const int64_t px = static_cast<int64_t>(i) * W + j;
            const double sx = j + u[px];
            const double sy = i + v[px];
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0;
            const double fy = sy - y0;
            const bool in00 = y0 >= 0 && y0 < H && x0 >= 0 && x0 < W;
            const bool in01 = y0 >= 0 && y0 < H && x0 + 1 >= 0 && x0 + 1 < W;
            const bool in10 = y0 + 1 >= 0 && y0 + 1 < H && x0 >= 0 && x0 < W;
            const bool in11 =
                y0 + 1 >= 0 && y0 + 1 < H && x0 + 1 >= 0 && x0 + 1 < W;
            const int64_t i00 = static_cast<int64_t>(y0) * W + x0;
            double du = 0.0, dv = 0.0;
            for (int c = 0; c < C; ++c) {
              const double gc = gb[static_cast<int64_t>(c) * plane + px];
              if (gc == 0.0 && !gfb) continue;
              const double* fc = fb + static_cast<int64_t>(c) * plane;
              const double v00 = in00 ? fc[i00] : 0.0;
              const double v01 = in01 ? fc[i00 + 1] : 0.0;
              const double v10 = in10 ? fc[i00 + W] : 0.0;
              const double v11 = in11 ? fc[i00 + W + 1] : 0.0;
              du += gc * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
              dv += gc * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
              if (gfb) {
                double* gfc = gfb + static_cast<int64_t>(c) * plane;
                if (in00) gfc[i00] += gc * (1.0 - fy) * (1.0 - fx);
                if (in01) gfc[i00 + 1] += gc * (1.0 - fy) * fx;
                if (in10) gfc[i00 + W] += gc * fy * (1.0 - fx);
                if (in11) gfc[i00 + W + 1] += gc * fy * fx;
              }
            }
            if (gu) {
              gu[px] += du;
              gv[px] += dv;
            }
          }
        }
      }
    };
  }
  return out;
}

Tensor correlation(const Tensor& f1, const Tensor& f2, int max_disp) {
  if (f1.shape() != f2.shape()) {
    throw DimensionError("correlation: " + shape_str(f1.shape()) + " vs " +
                         shape_str(f2.shape()));
  }
  if (f1.shape().size() != 4) {
    throw DimensionError("correlation: input rank " +
                         std::to_string(f1.shape().size()) + ", want 4");
  }
  if (max_disp < 1) {
    throw ConfigError("correlation: max_disp " + std::to_string(max_disp) +
                      " < 1");
  }
  const int B = f1.dim(0), C = f1.dim(1), H = f1.dim(2), W = f1.dim(3);
  const int D = max_disp;
  const int side = 2 * D + 1;
  Tensor out = detail::make_node({B, side * side, H, W}, {f1, f2});

  const int64_t plane = static_cast<int64_t>(H) * W;
  const double inv_c = 1.0 / C;
  const double* p1 = f1.data();
  const double* p2 = f2.data();
  double* po = out.data();
  for (int b = 0; b < B; ++b) {
    const double* f1b = p1 + static_cast<int64_t>(b) * C * plane;
    const double* f2b = p2 + static_cast<int64_t>(b) * C * plane;
    double* ob = po + static_cast<int64_t>(b) * side * side * plane;
    for (int dy = -D; dy <= D; ++dy) {
      for (int dx = -D; dx <= D; ++dx) {
        double* oc = ob + (static_cast<int64_t>(dy + D) * side + (dx + D)) *
                              plane;
        for (int i = 0; i < H; ++i) {
          const int i2 = i + dy;
          for (int j = 0; j < W; ++j) {
            const int j2 = j + dx;
            double acc = 0.0;
            if (i2 >= 0 && i2 < H && j2 >= 0 && j2 < W) {
              const int64_t a = static_cast<int64_t>(i) * W + j;
              const int64_t c2 = static_cast<int64_t>(i2) * W + j2;
              for (int c = 0; c < C; ++c) {
                acc = std::fma(f1b[c * plane + a], f2b[c * plane + c2], acc);
              }
            }
            oc[static_cast<int64_t>(i) * W + j] = acc * inv_c;
          }
        }
      }
    }
  }

  if (out.requires_grad()) {
    auto i1 = f1.impl(), i2t = f2.impl();
    TensorImpl* oi = out.impl().get();
    out->backprop = [i1, i2t, oi, B, C, H, W, D, side, plane, inv_c] {
      double* g1 = i1->requires_grad ? (i1->ensure_grad(), i1->grad.data())
                                     : nullptr;
      double* g2 = i2t->requires_grad ? (i2t->ensure_grad(), i2t->grad.data())
                                      : nullptr;
      const double* g = oi->grad.data();
      const double* p1b = i1->values.data();
      const double* p2b = i2t->values.data();
      for (int b = 0; b < B; ++b) {
        const double* f1b = p1b + static_cast<int64_t>(b) * C * plane;
        const double* f2b = p2b + static_cast<int64_t>(b) * C * plane;
        const double* gb = g + static_cast<int64_t>(b) * side * side * plane;
        double* g1b = g1 ? g1 + static_cast<int64_t>(b) * C * plane : nullptr;
        double* g2b = g2 ? g2 + static_cast<int64_t>(b) * C * plane : nullptr;
        for (int dy = -D; dy <= D; ++dy) {
          for (int dx = -D; dx <= D; ++dx) {
            const double* gc =
                gb + (static_cast<int64_t>(dy + D) * side + (dx + D)) * plane;
            for (int i = 0; i < H; ++i) {
              const int i2 = i + dy;
              if (i2 < 0 || i2 >= H) continue;
              for (int j = 0; j < W; ++j) {
                const int j2 = j + dx;
                if (j2 < 0 || j2 >= W) continue;
                const double gv = gc[static_cast<int64_t>(i) * W + j] * inv_c;
                if (gv == 0.0) continue;
                const int64_t a = static_cast<int64_t>(i) * W + j;
                const int64_t c2 = static_cast<int64_t>(i2) * W + j2;
                for (int c = 0; c < C; ++c) {
                  if (g1b) {
                    g1b[c * plane + a] =
                        std::fma(gv, f2b[c * plane + c2], g1b[c * plane + a]);
                  }
                  if (g2b) {
                    g2b[c * plane + c2] =
                        std::fma(gv, f1b[c * plane + a], g2b[c * plane + c2]);
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return out;
}

}  // namespace starflow
