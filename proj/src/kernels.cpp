/* Copyright 2026 The tinyplan Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "tinyplan/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tinyplan::kernels {

Region clamp(const Region& r, int map_h, int map_w) {
  const int r0 = std::max(r.row, 0), c0 = std::max(r.col, 0);
  const int r1 = std::min(r.row + r.height, map_h), c1 = std::min(r.col + r.width, map_w);
  return {r0, c0, std::max(r1 - r0, 0), std::max(c1 - c0, 0)};
}

Region bounding_union(const Region& a, const Region& b) {
  if (a.area() == 0) return b;
  if (b.area() == 0) return a;
  const int r0 = std::min(a.row, b.row), c0 = std::min(a.col, b.col);
  const int r1 = std::max(a.row + a.height, b.row + b.height), c1 = std::max(a.col + a.width, b.col + b.width);
  return {r0, c0, r1 - r0, c1 - c0};
}

QLayer prepare_layer(const Graph& graph, const ShapeTable& shapes, int id) {
  const LayerNode& n = graph.node(id);
  QLayer l;
  l.kind = n.kind;
  l.attrs = n.attrs;
  l.pad = n.pad_before();
  const Shape& in = shapes.of(n.preds[0]);
  const Shape& out = shapes.of(id);
  l.in_h = in[0], l.in_w = in[1], l.in_c = in[2];
  l.out_h = out[0], l.out_w = out[1], l.out_c = out[2];

  auto scale_of = [&](int pred) { return pred == kGraphInput ? graph.input_scale : graph.node(pred).out_scale; };
  const double s_x = scale_of(n.preds[0]);
  const double s_y = n.out_scale;
  if (s_x <= 0.0 || s_y <= 0.0) throw Error("node " + std::to_string(id) + ": missing activation scale");
  l.relu_max = static_cast<int>(std::min(127.0, round_half_even(6.0 / s_y)));

  switch (n.kind) {
    case OpKind::kConv2D:
    case OpKind::kDepthwiseConv2D:
    case OpKind::kLinear:
      if (n.fp32) {
        if (n.weight.empty()) throw Error("node " + std::to_string(id) + ": missing fp32 weights");
        l.fp32 = true;
        l.fweight.assign(n.weight.data().begin(), n.weight.data().end());
        l.fbias.assign(n.bias.data().begin(), n.bias.data().end());
        if (l.fbias.empty()) l.fbias.assign(static_cast<size_t>(l.out_c), 0.0f);
        l.in_scale = s_x;
        l.inv_out_scale = 1.0 / s_y;
        break;
      }
      if (n.qweight.empty()) throw Error("node " + std::to_string(id) + ": weights are not quantized");
      l.weight.assign(n.qweight.data().begin(), n.qweight.data().end());
      if (n.qbias.empty()) {
        l.bias.assign(static_cast<size_t>(l.out_c), 0);
      } else {
        l.bias.assign(n.qbias.data().begin(), n.qbias.data().end());
      }
      l.multiplier.resize(static_cast<size_t>(l.out_c));
      for (int c = 0; c < l.out_c; ++c) {
        l.multiplier[static_cast<size_t>(c)] = static_cast<double>(n.qweight.scale().for_channel(c)) * s_x / s_y;
      }
      break;
    case OpKind::kAdd:
      l.mult_a = s_x / s_y;
      l.mult_b = static_cast<double>(scale_of(n.preds[1])) / s_y;
      break;
    case OpKind::kAvgPool: {
      const int window = n.attrs.kernel == 0 ? l.in_h * l.in_w : n.attrs.kernel * n.attrs.kernel;
      l.pool_mult = s_x / (s_y * window);
      break;
    }
  }
  return l;
}

namespace {

void conv_region(const QLayer& l, const QView& in, const Region& r, int8_t* out) {
  const int k = l.attrs.kernel, s = l.attrs.stride, cin = l.in_c, cout = l.out_c;
  std::vector<int32_t> acc(static_cast<size_t>(cout));
  for (int dy = 0; dy < r.height; ++dy) {
    const int oy = r.row + dy;
    for (int dx = 0; dx < r.width; ++dx) {
      const int ox = r.col + dx;
      std::copy(l.bias.begin(), l.bias.end(), acc.begin());
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * s - l.pad + ky;
        if (iy < 0 || iy >= in.map_h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * s - l.pad + kx;
          if (ix < 0 || ix >= in.map_w) continue;
          const int8_t* px = in.data + (static_cast<int64_t>(iy - in.region.row) * in.region.width + (ix - in.region.col)) * cin;
          const int8_t* w = l.weight.data() + static_cast<size_t>((ky * k + kx) * cin) * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const int32_t x = px[ci];
            if (x == 0) continue;
            const int8_t* wr = w + static_cast<size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) acc[static_cast<size_t>(co)] += x * wr[co];
          }
        }
      }
      int8_t* o = out + (static_cast<int64_t>(dy) * r.width + dx) * cout;
      for (int co = 0; co < cout; ++co) o[co] = apply_relu6(requant(acc[static_cast<size_t>(co)], l.multiplier[static_cast<size_t>(co)]), l);
    }
  }
}

void depthwise_region(const QLayer& l, const QView& in, const Region& r, int8_t* out) {
  const int k = l.attrs.kernel, s = l.attrs.stride, c = l.in_c;
  std::vector<int32_t> acc(static_cast<size_t>(c));
  for (int dy = 0; dy < r.height; ++dy) {
    const int oy = r.row + dy;
    for (int dx = 0; dx < r.width; ++dx) {
      const int ox = r.col + dx;
      std::copy(l.bias.begin(), l.bias.end(), acc.begin());
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * s - l.pad + ky;
        if (iy < 0 || iy >= in.map_h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * s - l.pad + kx;
          if (ix < 0 || ix >= in.map_w) continue;
          const int8_t* px = in.data + (static_cast<int64_t>(iy - in.region.row) * in.region.width + (ix - in.region.col)) * c;
          const int8_t* w = l.weight.data() + static_cast<size_t>(ky * k + kx) * c;
          for (int ch = 0; ch < c; ++ch) acc[static_cast<size_t>(ch)] += int32_t{px[ch]} * w[ch];
        }
      }
      int8_t* o = out + (static_cast<int64_t>(dy) * r.width + dx) * c;
      for (int ch = 0; ch < c; ++ch) o[ch] = apply_relu6(requant(acc[static_cast<size_t>(ch)], l.multiplier[static_cast<size_t>(ch)]), l);
    }
  }
}

void linear_full(const QLayer& l, const QView& in, int8_t* out) {
  const int features = l.attrs.in_channels, nout = l.out_c;
  if (in.region.area() != int64_t{in.map_h} * in.map_w) throw Error("linear layers need the full input map");
  const int8_t* x = in.data;
  if (l.fp32) {
    std::vector<double> xr(static_cast<size_t>(features));
    for (int i = 0; i < features; ++i) xr[static_cast<size_t>(i)] = static_cast<double>(x[i]) * l.in_scale;
    for (int o = 0; o < nout; ++o) {
      double acc = l.fbias[static_cast<size_t>(o)];
      for (int i = 0; i < features; ++i) acc += static_cast<double>(l.fweight[static_cast<size_t>(i) * nout + o]) * xr[static_cast<size_t>(i)];
      out[o] = saturate_int8(round_half_even(acc * l.inv_out_scale));
    }
    return;
  }
  for (int o = 0; o < nout; ++o) {
    int64_t acc = l.bias[static_cast<size_t>(o)];
    for (int i = 0; i < features; ++i) acc += int32_t{x[i]} * l.weight[static_cast<size_t>(i) * nout + o];
    out[o] = apply_relu6(requant(acc, l.multiplier[static_cast<size_t>(o)]), l);
  }
}

void add_region(const QLayer& l, const QView& a, const QView& b, const Region& r, int8_t* out) {
  const int c = l.out_c;
  for (int dy = 0; dy < r.height; ++dy) {
    for (int dx = 0; dx < r.width; ++dx) {
      int8_t* o = out + (static_cast<int64_t>(dy) * r.width + dx) * c;
      for (int ch = 0; ch < c; ++ch) {
        const double va = round_half_even(a.at(r.row + dy, r.col + dx, ch) * l.mult_a);
        const double vb = round_half_even(b.at(r.row + dy, r.col + dx, ch) * l.mult_b);
        o[ch] = apply_relu6(saturate_int8(va + vb), l);
      }
    }
  }
}

void pool_region(const QLayer& l, const QView& in, const Region& r, int8_t* out) {
  const int c = l.out_c;
  const bool global = l.attrs.kernel == 0;
  const int k = global ? 0 : l.attrs.kernel, s = l.attrs.stride;
  std::vector<int64_t> acc(static_cast<size_t>(c));
  for (int dy = 0; dy < r.height; ++dy) {
    for (int dx = 0; dx < r.width; ++dx) {
      std::fill(acc.begin(), acc.end(), 0);
      const int y0 = global ? 0 : (r.row + dy) * s, x0 = global ? 0 : (r.col + dx) * s;
      const int kh = global ? in.map_h : k, kw = global ? in.map_w : k;
      for (int y = y0; y < y0 + kh; ++y) {
        for (int x = x0; x < x0 + kw; ++x) {
          for (int ch = 0; ch < c; ++ch) acc[static_cast<size_t>(ch)] += in.at(y, x, ch);
        }
      }
      int8_t* o = out + (static_cast<int64_t>(dy) * r.width + dx) * c;
      for (int ch = 0; ch < c; ++ch) o[ch] = requant(acc[static_cast<size_t>(ch)], l.pool_mult);
    }
  }
}

}  // namespace

void run_region(const QLayer& l, std::span<const QView> inputs, const Region& r, int8_t* out) {
  switch (l.kind) {
    case OpKind::kConv2D: conv_region(l, inputs[0], r, out); break;
    case OpKind::kDepthwiseConv2D: depthwise_region(l, inputs[0], r, out); break;
    case OpKind::kLinear: linear_full(l, inputs[0], out); break;
    case OpKind::kAdd: add_region(l, inputs[0], inputs[1], r, out); break;
    case OpKind::kAvgPool: pool_region(l, inputs[0], r, out); break;
  }
}

void run_full(const QLayer& l, std::span<const QView> inputs, int8_t* out) {
  if (l.kind == OpKind::kLinear || (l.kind == OpKind::kAvgPool && l.attrs.kernel == 0)) {
    run_region(l, inputs, {0, 0, l.out_h, l.out_w}, out);
    return;
  }
  const int64_t row_bytes = int64_t{l.out_w} * l.out_c;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < l.out_h; ++oy) {
    run_region(l, inputs, {oy, 0, 1, l.out_w}, out + oy * row_bytes);
  }
}

int64_t conv_im2col_tiled(const QLayer& l, const int8_t* in, int8_t* out, int tile_width, std::span<int8_t> scratch) {
  if (l.kind != OpKind::kConv2D) throw Error("im2col tiling applies to conv2d layers");
  if (tile_width < 1) throw Error("tile width must be >= 1");
  const int k = l.attrs.kernel, s = l.attrs.stride, cin = l.in_c, cout = l.out_c;
  const int64_t column = int64_t{k} * k * cin;
  const int64_t need = column * std::min(tile_width, l.out_w);
  if (static_cast<int64_t>(scratch.size()) < need) {
    throw Error("im2col scratch of " + std::to_string(scratch.size()) + " bytes is smaller than " + std::to_string(need));
  }
  int64_t high_water = 0;
  std::vector<int32_t> acc(static_cast<size_t>(cout));
  for (int oy = 0; oy < l.out_h; ++oy) {
    for (int ox0 = 0; ox0 < l.out_w; ox0 += tile_width) {
      const int tile = std::min(tile_width, l.out_w - ox0);
      // gather columns
      for (int t = 0; t < tile; ++t) {
        int8_t* col = scratch.data() + t * column;
        const int ox = ox0 + t;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s - l.pad + ky;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s - l.pad + kx;
            int8_t* dst = col + (ky * k + kx) * cin;
            if (iy < 0 || ix < 0 || iy >= l.in_h || ix >= l.in_w) {
              std::memset(dst, 0, static_cast<size_t>(cin));
            } else {
              std::memcpy(dst, in + (static_cast<int64_t>(iy) * l.in_w + ix) * cin, static_cast<size_t>(cin));
            }
          }
        }
      }
      high_water = std::max(high_water, tile * column);
      // column-by-weight product
      for (int t = 0; t < tile; ++t) {
        const int8_t* col = scratch.data() + t * column;
        std::copy(l.bias.begin(), l.bias.end(), acc.begin());
        for (int64_t i = 0; i < column; ++i) {
          const int32_t x = col[i];
          if (x == 0) continue;
          const int8_t* wr = l.weight.data() + i * cout;
          for (int co = 0; co < cout; ++co) acc[static_cast<size_t>(co)] += x * wr[co];
        }
        int8_t* o = out + (static_cast<int64_t>(oy) * l.out_w + ox0 + t) * cout;
        for (int co = 0; co < cout; ++co) o[co] = apply_relu6(requant(acc[static_cast<size_t>(co)], l.multiplier[static_cast<size_t>(co)]), l);
      }
    }
  }
  return high_water;
}

bool can_run_inplace(const QLayer& l) {
  return l.kind == OpKind::kDepthwiseConv2D && l.attrs.stride == 1 && l.out_h == l.in_h && l.out_w == l.in_w;
}

void depthwise_inplace(const QLayer& l, int8_t* buf, std::span<int8_t> plane) {
  if (!can_run_inplace(l)) throw Error("in-place depthwise needs a stride-1 shape-preserving layer");
  const int h = l.in_h, w = l.in_w, c = l.in_c, k = l.attrs.kernel;
  const int64_t pixels = int64_t{h} * w;
  if (static_cast<int64_t>(plane.size()) < pixels) throw Error("in-place depthwise needs one channel plane of scratch");

  auto compute_channel = [&](int ch, auto&& store) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int32_t acc = l.bias[static_cast<size_t>(ch)];
        for (int ky = 0; ky < k; ++ky) {
          const int iy = y - l.pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = x - l.pad + kx;
            if (ix < 0 || ix >= w) continue;
            acc += int32_t{buf[(static_cast<int64_t>(iy) * w + ix) * c + ch]} * l.weight[static_cast<size_t>((ky * k + kx) * c + ch)];
          }
        }
        store(static_cast<int64_t>(y) * w + x, apply_relu6(requant(acc, l.multiplier[static_cast<size_t>(ch)]), l));
      }
    }
  };

  // channel 0 goes to the temporary plane; channel ch then overwrites the
  // already-consumed input slot ch - 1
  compute_channel(0, [&](int64_t p, int8_t v) { plane[static_cast<size_t>(p)] = v; });
  for (int ch = 1; ch < c; ++ch) {
    compute_channel(ch, [&](int64_t p, int8_t v) { buf[p * c + ch - 1] = v; });
  }
  for (int64_t p = 0; p < pixels; ++p) buf[p * c + c - 1] = plane[static_cast<size_t>(p)];
  // undo the one-slot channel rotation
  if (c > 1) {
    for (int64_t p = 0; p < pixels; ++p) std::rotate(buf + p * c, buf + p * c + c - 1, buf + p * c + c);
  }
}

// --- naive oracles ------------------------------------------------------------------

namespace ref {

namespace {
int8_t finish(const QLayer& l, int64_t acc, int co) {
  double v = round_half_even(static_cast<double>(acc) * l.multiplier[static_cast<size_t>(co)]);
  v = std::clamp(v, -128.0, 127.0);
  if (l.attrs.relu6) v = std::clamp(v, 0.0, static_cast<double>(l.relu_max));
  return static_cast<int8_t>(v);
}
}  // namespace

std::vector<int8_t> conv(const QLayer& l, std::span<const int8_t> in) {
  std::vector<int8_t> out(static_cast<size_t>(l.out_h * l.out_w * l.out_c));
  const int k = l.attrs.kernel;
  for (int oy = 0; oy < l.out_h; ++oy)
    for (int ox = 0; ox < l.out_w; ++ox)
      for (int co = 0; co < l.out_c; ++co) {
        int64_t acc = l.bias[static_cast<size_t>(co)];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            for (int ci = 0; ci < l.in_c; ++ci) {
              const int iy = oy * l.attrs.stride + ky - l.pad, ix = ox * l.attrs.stride + kx - l.pad;
              if (iy >= 0 && iy < l.in_h && ix >= 0 && ix < l.in_w) {
                acc += int64_t{in[static_cast<size_t>((iy * l.in_w + ix) * l.in_c + ci)]} *
                       l.weight[static_cast<size_t>(((ky * k + kx) * l.in_c + ci) * l.out_c + co)];
              }
            }
        out[static_cast<size_t>((oy * l.out_w + ox) * l.out_c + co)] = finish(l, acc, co);
      }
  return out;
}

std::vector<int8_t> depthwise(const QLayer& l, std::span<const int8_t> in) {
  std::vector<int8_t> out(static_cast<size_t>(l.out_h * l.out_w * l.out_c));
  const int k = l.attrs.kernel;
  for (int oy = 0; oy < l.out_h; ++oy)
    for (int ox = 0; ox < l.out_w; ++ox)
      for (int c = 0; c < l.out_c; ++c) {
        int64_t acc = l.bias[static_cast<size_t>(c)];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * l.attrs.stride + ky - l.pad, ix = ox * l.attrs.stride + kx - l.pad;
            if (iy >= 0 && iy < l.in_h && ix >= 0 && ix < l.in_w) {
              acc += int64_t{in[static_cast<size_t>((iy * l.in_w + ix) * l.in_c + c)]} * l.weight[static_cast<size_t>((ky * k + kx) * l.out_c + c)];
            }
          }
        out[static_cast<size_t>((oy * l.out_w + ox) * l.out_c + c)] = finish(l, acc, c);
      }
  return out;
}

std::vector<int8_t> linear(const QLayer& l, std::span<const int8_t> in) {
  std::vector<int8_t> out(static_cast<size_t>(l.out_c));
  for (int o = 0; o < l.out_c; ++o) {
    if (l.fp32) {
      double acc = l.fbias[static_cast<size_t>(o)];
      for (size_t i = 0; i < in.size(); ++i) acc += static_cast<double>(l.fweight[i * static_cast<size_t>(l.out_c) + static_cast<size_t>(o)]) * (in[i] * l.in_scale);
      out[static_cast<size_t>(o)] = static_cast<int8_t>(std::clamp(round_half_even(acc * l.inv_out_scale), -128.0, 127.0));
    } else {
      int64_t acc = l.bias[static_cast<size_t>(o)];
      for (size_t i = 0; i < in.size(); ++i) acc += int64_t{in[i]} * l.weight[i * static_cast<size_t>(l.out_c) + static_cast<size_t>(o)];
      out[static_cast<size_t>(o)] = finish(l, acc, o);
    }
  }
  return out;
}

std::vector<int8_t> add(const QLayer& l, std::span<const int8_t> a, std::span<const int8_t> b) {
  std::vector<int8_t> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double v = round_half_even(a[i] * l.mult_a) + round_half_even(b[i] * l.mult_b);
    out[i] = static_cast<int8_t>(std::clamp(v, -128.0, 127.0));
  }
  return out;
}

std::vector<int8_t> avg_pool(const QLayer& l, std::span<const int8_t> in) {
  std::vector<int8_t> out(static_cast<size_t>(l.out_h * l.out_w * l.out_c));
  const bool global = l.attrs.kernel == 0;
  const int kh = global ? l.in_h : l.attrs.kernel, kw = global ? l.in_w : l.attrs.kernel;
  for (int oy = 0; oy < l.out_h; ++oy)
    for (int ox = 0; ox < l.out_w; ++ox)
      for (int c = 0; c < l.out_c; ++c) {
        int64_t acc = 0;
        for (int y = 0; y < kh; ++y)
          for (int x = 0; x < kw; ++x) {
            const int iy = global ? y : oy * l.attrs.stride + y, ix = global ? x : ox * l.attrs.stride + x;
            acc += in[static_cast<size_t>((iy * l.in_w + ix) * l.in_c + c)];
          }
        out[static_cast<size_t>((oy * l.out_w + ox) * l.out_c + c)] =
            static_cast<int8_t>(std::clamp(round_half_even(static_cast<double>(acc) * l.pool_mult), -128.0, 127.0));
      }
  return out;
}

}  // namespace ref

}  // namespace tinyplan::kernels
