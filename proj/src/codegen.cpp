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
#include "tinyplan/codegen.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "tinyplan/executor.hpp"
#include "tinyplan/kernels.hpp"

namespace tinyplan {

using kernels::QLayer;

namespace {

// --- kernel text ----------------------------------------------------------------------

const char* kPrelude = R"(#include <stdint.h>

typedef struct {
  int k, stride, pad;
  int in_h, in_w, in_c, out_h, out_w, out_c;
  int relu6, relu_max;
  const int8_t* w;
  const int32_t* b;
  const double* mult;
  double mult_a, mult_b, pool_mult;
  const float* fw;
  const float* fb;
  double in_scale, inv_out_scale;
} tp_layer;

/* region-local HWC data; the map extent comes from the layer */
typedef struct {
  const int8_t* data;
  int row, col, width;
} tp_view;

static double tp_rhe(double v) {
  double r = (double)(long long)v;
  double diff;
  if (r > v) r -= 1.0;
  diff = v - r;
  if (diff > 0.5) return r + 1.0;
  if (diff < 0.5) return r;
  return (((long long)r) % 2 == 0) ? r : r + 1.0;
}

static int8_t tp_sat(double v) {
  if (v > 127.0) return 127;
  if (v < -128.0) return -128;
  return (int8_t)v;
}

static int8_t tp_requant(int64_t acc, double m) { return tp_sat(tp_rhe((double)acc * m)); }

static int8_t tp_act(int8_t q, const tp_layer* L) {
  if (!L->relu6) return q;
  if (q < 0) return 0;
  return q > L->relu_max ? (int8_t)L->relu_max : q;
}

)";

const char* kAt = R"(
static int8_t tp_at(tp_view v, int map_h, int map_w, int channels, int y, int x, int c) {
  if (y < 0 || x < 0 || y >= map_h || x >= map_w) return 0;
  return v.data[((long)(y - v.row) * v.width + (x - v.col)) * channels + c];
}
)";

const std::map<std::string, std::string>& kernel_text() {
  static const std::map<std::string, std::string> k = {
      {"tp_conv", R"(
static void tp_conv(const tp_layer* L, tp_view in, int r0, int c0, int rh, int rw, int8_t* out) {
  static int32_t acc[TP_MAX_C];
  int dy, dx, ky, kx, ci, co;
  for (dy = 0; dy < rh; ++dy) {
    const int oy = r0 + dy;
    for (dx = 0; dx < rw; ++dx) {
      const int ox = c0 + dx;
      int8_t* o = out + ((long)dy * rw + dx) * L->out_c;
      for (co = 0; co < L->out_c; ++co) acc[co] = L->b[co];
      for (ky = 0; ky < L->k; ++ky) {
        const int iy = oy * L->stride - L->pad + ky;
        if (iy < 0 || iy >= L->in_h) continue;
        for (kx = 0; kx < L->k; ++kx) {
          const int ix = ox * L->stride - L->pad + kx;
          const int8_t* px;
          const int8_t* w;
          if (ix < 0 || ix >= L->in_w) continue;
          px = in.data + ((long)(iy - in.row) * in.width + (ix - in.col)) * L->in_c;
          w = L->w + (long)((ky * L->k + kx) * L->in_c) * L->out_c;
          for (ci = 0; ci < L->in_c; ++ci) {
            const int32_t x = px[ci];
            const int8_t* wr = w + (long)ci * L->out_c;
            for (co = 0; co < L->out_c; ++co) acc[co] += x * wr[co];
          }
        }
      }
      for (co = 0; co < L->out_c; ++co) o[co] = tp_act(tp_requant(acc[co], L->mult[co]), L);
    }
  }
}
)"},
      {"tp_conv_im2col", R"(
/* output-width tiles of im2col columns, then a column-by-weight product */
static void tp_conv_im2col(const tp_layer* L, const int8_t* in, int8_t* out, int tile_width, int8_t* scratch) {
  static int32_t acc[TP_MAX_C];
  const long column = (long)L->k * L->k * L->in_c;
  int oy, ox0, t, ky, kx, c, co;
  long i;
  for (oy = 0; oy < L->out_h; ++oy) {
    for (ox0 = 0; ox0 < L->out_w; ox0 += tile_width) {
      const int tile = L->out_w - ox0 < tile_width ? L->out_w - ox0 : tile_width;
      for (t = 0; t < tile; ++t) {
        int8_t* col = scratch + t * column;
        const int ox = ox0 + t;
        for (ky = 0; ky < L->k; ++ky) {
          const int iy = oy * L->stride - L->pad + ky;
          for (kx = 0; kx < L->k; ++kx) {
            const int ix = ox * L->stride - L->pad + kx;
            int8_t* dst = col + (ky * L->k + kx) * L->in_c;
            if (iy < 0 || ix < 0 || iy >= L->in_h || ix >= L->in_w) {
              for (c = 0; c < L->in_c; ++c) dst[c] = 0;
            } else {
              const int8_t* src = in + ((long)iy * L->in_w + ix) * L->in_c;
              for (c = 0; c < L->in_c; ++c) dst[c] = src[c];
            }
          }
        }
      }
      for (t = 0; t < tile; ++t) {
        const int8_t* col = scratch + t * column;
        int8_t* o = out + ((long)oy * L->out_w + ox0 + t) * L->out_c;
        for (co = 0; co < L->out_c; ++co) acc[co] = L->b[co];
        for (i = 0; i < column; ++i) {
          const int32_t x = col[i];
          const int8_t* wr = L->w + i * L->out_c;
          for (co = 0; co < L->out_c; ++co) acc[co] += x * wr[co];
        }
        for (co = 0; co < L->out_c; ++co) o[co] = tp_act(tp_requant(acc[co], L->mult[co]), L);
      }
    }
  }
}
)"},
      {"tp_depthwise", R"(
static void tp_depthwise(const tp_layer* L, tp_view in, int r0, int c0, int rh, int rw, int8_t* out) {
  const int c = L->in_c;
  int dy, dx, ky, kx, ch;
  for (dy = 0; dy < rh; ++dy) {
    const int oy = r0 + dy;
    for (dx = 0; dx < rw; ++dx) {
      const int ox = c0 + dx;
      int8_t* o = out + ((long)dy * rw + dx) * c;
      for (ch = 0; ch < c; ++ch) {
        int32_t acc = L->b[ch];
        for (ky = 0; ky < L->k; ++ky) {
          const int iy = oy * L->stride - L->pad + ky;
          if (iy < 0 || iy >= L->in_h) continue;
          for (kx = 0; kx < L->k; ++kx) {
            const int ix = ox * L->stride - L->pad + kx;
            if (ix < 0 || ix >= L->in_w) continue;
            acc += (int32_t)in.data[((long)(iy - in.row) * in.width + (ix - in.col)) * c + ch] * L->w[(ky * L->k + kx) * c + ch];
          }
        }
        o[ch] = tp_act(tp_requant(acc, L->mult[ch]), L);
      }
    }
  }
}
)"},
      {"tp_depthwise_inplace", R"(
/* channel 0 goes to the plane; channel ch then overwrites the consumed
   input slot ch - 1; a final rotation restores channel order */
static void tp_depthwise_channel(const tp_layer* L, const int8_t* buf, int ch, int8_t* dst, int dst_stride) {
  const int h = L->in_h, w = L->in_w, c = L->in_c;
  int y, x, ky, kx;
  for (y = 0; y < h; ++y) {
    for (x = 0; x < w; ++x) {
      int32_t acc = L->b[ch];
      for (ky = 0; ky < L->k; ++ky) {
        const int iy = y - L->pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (kx = 0; kx < L->k; ++kx) {
          const int ix = x - L->pad + kx;
          if (ix < 0 || ix >= w) continue;
          acc += (int32_t)buf[((long)iy * w + ix) * c + ch] * L->w[(ky * L->k + kx) * c + ch];
        }
      }
      dst[((long)y * w + x) * dst_stride] = tp_act(tp_requant(acc, L->mult[ch]), L);
    }
  }
}

static void tp_depthwise_inplace(const tp_layer* L, int8_t* buf, int8_t* plane) {
  const long pixels = (long)L->in_h * L->in_w;
  const int c = L->in_c;
  long p;
  int ch, j;
  tp_depthwise_channel(L, buf, 0, plane, 1);
  for (ch = 1; ch < c; ++ch) tp_depthwise_channel(L, buf, ch, buf + ch - 1, c);
  for (p = 0; p < pixels; ++p) buf[p * c + c - 1] = plane[p];
  if (c > 1) {
    for (p = 0; p < pixels; ++p) {
      int8_t* px = buf + p * c;
      const int8_t last = px[c - 1];
      for (j = c - 1; j > 0; --j) px[j] = px[j - 1];
      px[0] = last;
    }
  }
}
)"},
      {"tp_linear_f32", R"(
static void tp_linear_f32(const tp_layer* L, const int8_t* x, int8_t* out) {
  static double xr[TP_MAX_C];
  int i, o;
  for (i = 0; i < L->in_c; ++i) xr[i] = (double)x[i] * L->in_scale;
  for (o = 0; o < L->out_c; ++o) {
    double acc = (double)L->fb[o];
    for (i = 0; i < L->in_c; ++i) acc += (double)L->fw[(long)i * L->out_c + o] * xr[i];
    out[o] = tp_sat(tp_rhe(acc * L->inv_out_scale));
  }
}
)"},
      {"tp_linear_i8", R"(
static void tp_linear_i8(const tp_layer* L, const int8_t* x, int8_t* out) {
  int i, o;
  for (o = 0; o < L->out_c; ++o) {
    int64_t acc = L->b[o];
    for (i = 0; i < L->in_c; ++i) acc += (int32_t)x[i] * L->w[(long)i * L->out_c + o];
    out[o] = tp_act(tp_requant(acc, L->mult[o]), L);
  }
}
)"},
      {"tp_add", R"(
static void tp_add(const tp_layer* L, tp_view a, tp_view b, int r0, int c0, int rh, int rw, int8_t* out) {
  const int c = L->out_c;
  int dy, dx, ch;
  for (dy = 0; dy < rh; ++dy) {
    for (dx = 0; dx < rw; ++dx) {
      int8_t* o = out + ((long)dy * rw + dx) * c;
      for (ch = 0; ch < c; ++ch) {
        const double va = tp_rhe(tp_at(a, L->in_h, L->in_w, c, r0 + dy, c0 + dx, ch) * L->mult_a);
        const double vb = tp_rhe(tp_at(b, L->in_h, L->in_w, c, r0 + dy, c0 + dx, ch) * L->mult_b);
        o[ch] = tp_act(tp_sat(va + vb), L);
      }
    }
  }
}
)"},
      {"tp_avg_pool", R"(
static void tp_avg_pool(const tp_layer* L, tp_view in, int r0, int c0, int rh, int rw, int8_t* out) {
  static int64_t acc[TP_MAX_C];
  const int c = L->out_c, global = L->k == 0;
  const int kh = global ? L->in_h : L->k, kw = global ? L->in_w : L->k;
  int dy, dx, y, x, ch;
  for (dy = 0; dy < rh; ++dy) {
    for (dx = 0; dx < rw; ++dx) {
      const int y0 = global ? 0 : (r0 + dy) * L->stride, x0 = global ? 0 : (c0 + dx) * L->stride;
      int8_t* o = out + ((long)dy * rw + dx) * c;
      for (ch = 0; ch < c; ++ch) acc[ch] = 0;
      for (y = y0; y < y0 + kh; ++y) {
        for (x = x0; x < x0 + kw; ++x) {
          for (ch = 0; ch < c; ++ch) acc[ch] += tp_at(in, L->in_h, L->in_w, c, y, x, ch);
        }
      }
      for (ch = 0; ch < c; ++ch) o[ch] = tp_requant(acc[ch], L->pool_mult);
    }
  }
}
)"},
  };
  return k;
}

const char* kKernelOrder[] = {"tp_conv", "tp_conv_im2col", "tp_depthwise", "tp_depthwise_inplace", "tp_linear_f32", "tp_linear_i8", "tp_add", "tp_avg_pool"};

// --- literals -----------------------------------------------------------------------

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

template <typename T, typename F>
void emit_array(std::ostringstream& os, const char* type, const std::string& name, const std::vector<T>& values, F&& format) {
  os << "static const " << type << ' ' << name << "[" << values.size() << "] = {";
  for (size_t i = 0; i < values.size(); ++i) {
    if (i % 16 == 0) os << "\n  ";
    os << format(values[i]) << (i + 1 < values.size() ? ", " : "");
  }
  os << "\n};\n";
}

std::string int32_literal(int32_t v) {
  // INT32_MIN has no direct literal form
  return v == INT32_MIN ? "(-2147483647 - 1)" : std::to_string(v);
}

void emit_layer(std::ostringstream& os, const QLayer& l, int id) {
  const std::string s = std::to_string(id);
  std::string w = "0", b = "0", m = "0", fw = "0", fb = "0";
  if (!l.weight.empty()) {
    emit_array(os, "int8_t", "tp_w" + s, l.weight, [](int8_t v) { return std::to_string(int{v}); });
    w = "tp_w" + s;
  }
  if (!l.bias.empty()) {
    emit_array(os, "int32_t", "tp_b" + s, l.bias, int32_literal);
    b = "tp_b" + s;
  }
  if (!l.multiplier.empty()) {
    emit_array(os, "double", "tp_m" + s, l.multiplier, hex_double);
    m = "tp_m" + s;
  }
  if (l.fp32) {
    auto f = [](float v) { return hex_double(static_cast<double>(v)) + "f"; };
    emit_array(os, "float", "tp_fw" + s, l.fweight, f);
    emit_array(os, "float", "tp_fb" + s, l.fbias, f);
    fw = "tp_fw" + s;
    fb = "tp_fb" + s;
  }
  os << "static const tp_layer tp_L" << s << " = {" << l.attrs.kernel << ", " << l.attrs.stride << ", " << l.pad << ", " << l.in_h << ", " << l.in_w << ", "
     << l.in_c << ", " << l.out_h << ", " << l.out_w << ", " << l.out_c << ", " << (l.attrs.relu6 ? 1 : 0) << ", " << l.relu_max << ",\n  " << w << ", " << b
     << ", " << m << ", " << hex_double(l.mult_a) << ", " << hex_double(l.mult_b) << ", " << hex_double(l.pool_mult) << ",\n  " << fw << ", " << fb << ", "
     << hex_double(l.in_scale) << ", " << hex_double(l.inv_out_scale) << "};\n\n";
}

// --- body -----------------------------------------------------------------------------

class BodyWriter {
 public:
  BodyWriter(const Graph& graph, const ShapeTable& shapes, const std::vector<QLayer>& layers, std::string arena)
      : graph_(graph), shapes_(shapes), layers_(layers), arena_(std::move(arena)) {}

  std::string at(int64_t offset) const { return "(" + arena_ + " + " + std::to_string(offset) + ")"; }

  std::string full_view(int tensor, int64_t offset) const {
    return "tp_full(" + at(offset) + ", " + std::to_string(shapes_.of(tensor)[1]) + ")";
  }

  // Whole-map call of a non-specialized kernel.
  void full_call(int id, const std::vector<int64_t>& in_offsets, int64_t out_offset, bool direct_conv) {
    const LayerNode& n = graph_.node(id);
    const QLayer& l = layers_[static_cast<size_t>(id)];
    const std::string L = "&tp_L" + std::to_string(id);
    const std::string region = ", 0, 0, " + std::to_string(l.out_h) + ", " + std::to_string(l.out_w) + ", ";
    switch (n.kind) {
      case OpKind::kConv2D:
        if (!direct_conv) throw Error("internal: conv without a kernel choice");
        line(use("tp_conv") + "(" + L + ", " + full_view(n.preds[0], in_offsets[0]) + region + at(out_offset) + ");");
        break;
      case OpKind::kDepthwiseConv2D:
        line(use("tp_depthwise") + "(" + L + ", " + full_view(n.preds[0], in_offsets[0]) + region + at(out_offset) + ");");
        break;
      case OpKind::kLinear:
        line(use(l.fp32 ? "tp_linear_f32" : "tp_linear_i8") + "(" + L + ", " + at(in_offsets[0]) + ", " + at(out_offset) + ");");
        break;
      case OpKind::kAdd:
        line(use("tp_add") + "(" + L + ", " + full_view(n.preds[0], in_offsets[0]) + ", " + full_view(n.preds[1], in_offsets[1]) + region + at(out_offset) + ");");
        break;
      case OpKind::kAvgPool:
        line(use("tp_avg_pool") + "(" + L + ", " + full_view(n.preds[0], in_offsets[0]) + region + at(out_offset) + ");");
        break;
    }
  }

  void comment(const std::string& text) { line("/* " + text + " */"); }
  void line(const std::string& text) { body_ << std::string(static_cast<size_t>(indent_), ' ') << text << '\n'; }
  void indent(int delta) { indent_ += delta; }
  std::string use(const std::string& kernel) {
    used_.insert(kernel);
    return kernel;
  }

  std::string body() const { return body_.str(); }
  const std::set<std::string>& used() const { return used_; }

 private:
  const Graph& graph_;
  const ShapeTable& shapes_;
  const std::vector<QLayer>& layers_;
  std::string arena_;
  std::ostringstream body_;
  std::set<std::string> used_;
  int indent_ = 2;
};

std::string node_label(const LayerNode& n) { return "node " + std::to_string(n.id) + ": " + op_name(n.kind); }

int last_reader(const std::vector<std::vector<int>>& users, int tensor, int fallback) {
  const auto& r = tensor == kGraphInput ? users.back() : users[static_cast<size_t>(tensor)];
  return r.empty() ? fallback : std::max(fallback, r.back());
}

void check_plan(const Graph& graph, const MemoryPlan& plan) {
  if (plan.tensor_buffer.size() != graph.nodes.size() + 1 || plan.plane_buffer.size() != graph.nodes.size()) {
    throw Error("memory plan does not match the graph");
  }
  for (const auto& b : plan.buffers) {
    if (b.offset < 0 || b.offset + b.request.size > plan.arena_size) throw Error("memory plan buffer '" + b.name + "' lies outside the arena");
  }
}

}  // namespace

Allocation plan_patched_arena(const Graph& graph, const PatchPlan& patch, std::vector<BufferRequest>* out_requests) {
  const ShapeTable shapes = validate(graph);
  const auto users = consumers(graph);
  const int nodes = static_cast<int>(graph.nodes.size());
  const int n = patch.n, cut = n - 1;
  const int end = nodes - 1;
  std::vector<BufferRequest> req;
  // [0] input, [1 .. n] prefix region buffers (slot id + 1), [n + 1] full cut, then remainder tensors
  req.push_back({static_cast<int64_t>(shapes.of(kGraphInput).elements()), 0, std::max(0, cut)});
  for (int id = 0; id < n; ++id) {
    int64_t size = 0;
    for (const auto& regs : patch.regions) size = std::max(size, regs[static_cast<size_t>(id) + 1].area() * shapes.of(id)[2]);
    int last = id;
    for (int u : users[static_cast<size_t>(id)]) {
      if (u < n) last = std::max(last, u);
    }
    req.push_back({std::max<int64_t>(size, 1), id, last});
  }
  req.push_back({static_cast<int64_t>(shapes.of(cut).elements()), 0, last_reader(users, cut, cut)});
  for (int id = n; id < nodes; ++id) req.push_back({static_cast<int64_t>(shapes.of(id).elements()), id, id == end ? end : last_reader(users, id, id)});
  Allocation a = allocate(req);
  if (out_requests) *out_requests = std::move(req);
  return a;
}

EmittedProgram emit_c_source(const Graph& graph, const MemoryPlan& plan, const PatchPlan* patch, const CodegenOptions& options) {
  const ShapeTable shapes = validate(graph);
  if (!graph.quantized()) throw Error("codegen needs a quantized graph");
  check_plan(graph, plan);
  const auto layers = prepare_layers(graph, shapes);
  const int nodes = static_cast<int>(graph.nodes.size());
  const int out_id = graph.output_id();
  const std::string& px = options.prefix;
  const std::string arena = px + "_arena";
  const bool patched = patch != nullptr && patch->n > 0;

  EmittedProgram prog;
  prog.input_bytes = static_cast<int64_t>(shapes.of(kGraphInput).elements());
  prog.output_bytes = static_cast<int64_t>(shapes.of(out_id).elements());
  BodyWriter w(graph, shapes, layers, arena);
  int64_t in_offset = 0, out_offset = 0;

  if (!patched) {
    prog.arena_size = plan.arena_size;
    in_offset = plan.offset_of(kGraphInput);
    out_offset = plan.offset_of(out_id);
    const int64_t scratch = plan.scratch_buffer >= 0 ? plan.buffers[static_cast<size_t>(plan.scratch_buffer)].offset : -1;
    for (const auto& n : graph.nodes) {
      const int id = n.id;
      w.comment(node_label(n));
      std::vector<int64_t> ins;
      for (int p : n.preds) ins.push_back(plan.offset_of(p));
      if (plan.inplace(id)) {
        const int64_t plane = plan.buffers[static_cast<size_t>(plan.plane_buffer[static_cast<size_t>(id)])].offset;
        w.line(w.use("tp_depthwise_inplace") + "(&tp_L" + std::to_string(id) + ", " + w.at(plan.offset_of(id)) + ", " + w.at(plane) + ");");
      } else if (n.kind == OpKind::kConv2D) {
        if (scratch < 0) throw Error("memory plan has no im2col scratch for conv node " + std::to_string(id));
        const int tile = plan.im2col.tile_widths.at(static_cast<size_t>(id));
        w.line(w.use("tp_conv_im2col") + "(&tp_L" + std::to_string(id) + ", " + w.at(ins[0]) + ", " + w.at(plan.offset_of(id)) + ", " + std::to_string(tile) +
               ", " + w.at(scratch) + ");");
      } else {
        w.full_call(id, ins, plan.offset_of(id), false);
      }
    }
  } else {
    const int n = patch->n, cut = n - 1;
    if (n >= nodes || shapes.of(cut) != patch->cut_shape || static_cast<int>(patch->tiles.size()) != patch->p * patch->p) {
      throw Error("patch plan does not match the graph");
    }
    const Allocation a = plan_patched_arena(graph, *patch);
    prog.arena_size = a.arena_size;
    auto region_off = [&](int id) { return a.offsets[static_cast<size_t>(id) + 1]; };
    const int64_t cut_full = a.offsets[static_cast<size_t>(n) + 1];
    auto tensor_off = [&](int t) {
      if (t == kGraphInput) return a.offsets[0];
      if (t == cut) return cut_full;
      if (t < n) throw Error("internal: prefix tensor read outside the patch stage");
      return a.offsets[static_cast<size_t>(n + 2 + (t - n))];
    };
    in_offset = a.offsets[0];
    out_offset = tensor_off(out_id);

    w.comment("patch stage: nodes 0.." + std::to_string(cut) + " over " + std::to_string(patch->p) + "x" + std::to_string(patch->p) + " tiles");
    w.line("for (pi = 0; pi < " + std::to_string(patch->tiles.size()) + "; ++pi) {");
    w.indent(2);
    w.line("const int (*R)[4] = tp_regions[pi];");
    const int in_w = shapes.of(kGraphInput)[1];
    for (int id = 0; id < n; ++id) {
      const LayerNode& node = graph.node(id);
      if (node.kind == OpKind::kLinear || (node.kind == OpKind::kAvgPool && node.attrs.kernel == 0)) {
        throw Error("node " + std::to_string(id) + " (" + op_name(node.kind) + ") cannot run patch by patch");
      }
      const std::string r = "R[" + std::to_string(id + 1) + "]";
      std::vector<std::string> views;
      for (int p : node.preds) {
        if (p == kGraphInput) {
          views.push_back("tp_full(" + w.at(a.offsets[0]) + ", " + std::to_string(in_w) + ")");
        } else {
          const std::string rp = "R[" + std::to_string(p + 1) + "]";
          views.push_back("tp_region(" + w.at(region_off(p)) + ", " + rp + ")");
        }
      }
      std::string kernel;
      switch (node.kind) {
        case OpKind::kConv2D: kernel = "tp_conv"; break;
        case OpKind::kDepthwiseConv2D: kernel = "tp_depthwise"; break;
        case OpKind::kAdd: kernel = "tp_add"; break;
        case OpKind::kAvgPool: kernel = "tp_avg_pool"; break;
        case OpKind::kLinear: break;
      }
      std::string args = "&tp_L" + std::to_string(id);
      for (const auto& v : views) args += ", " + v;
      w.line("if (" + r + "[2] > 0 && " + r + "[3] > 0) " + w.use(kernel) + "(" + args + ", " + r + "[0], " + r + "[1], " + r + "[2], " + r + "[3], " +
             w.at(region_off(id)) + ");");
    }
    const int C = patch->cut_shape[2], W = patch->cut_shape[1];
    const std::string rc = "R[" + std::to_string(cut + 1) + "]";
    w.comment("tile of the cut tensor into its full buffer");
    w.line("for (y = 0; y < tp_tiles[pi][2]; ++y) {");
    w.line("  for (i = 0; i < (long)tp_tiles[pi][3] * " + std::to_string(C) + "; ++i) {");
    w.line("    " + w.at(cut_full) + "[((long)(tp_tiles[pi][0] + y) * " + std::to_string(W) + " + tp_tiles[pi][1]) * " + std::to_string(C) + " + i] =");
    w.line("        " + w.at(region_off(cut)) + "[((long)(tp_tiles[pi][0] - " + rc + "[0] + y) * " + rc + "[3] + tp_tiles[pi][1] - " + rc + "[1]) * " +
           std::to_string(C) + " + i];");
    w.line("  }");
    w.line("}");
    w.indent(-2);
    w.line("}");
    for (int id = n; id < nodes; ++id) {
      const LayerNode& node = graph.node(id);
      w.comment(node_label(node));
      std::vector<int64_t> ins;
      for (int p : node.preds) ins.push_back(tensor_off(p));
      w.full_call(id, ins, tensor_off(id), true);
    }
  }

  // --- assemble -------------------------------------------------------------------------
  int max_c = 1;
  for (const auto& l : layers) max_c = std::max({max_c, l.out_c, l.in_c});
  std::ostringstream os;
  os << "/* Generated by tinyplan: int8 inference for a " << nodes << "-node model, " << (patched ? "patch-based prefix" : "per-layer") << ". */\n";
  os << kPrelude;
  os << "\n#define TP_MAX_C " << max_c << "\n";
  os << "#define " << px << "_INPUT_BYTES " << prog.input_bytes << "\n";
  os << "#define " << px << "_OUTPUT_BYTES " << prog.output_bytes << "\n\n";
  os << "static int8_t " << arena << "[" << prog.arena_size << "];\n\n";
  const std::string body = w.body();
  if (body.find("tp_full(") != std::string::npos) {
    os << "static tp_view tp_full(const int8_t* data, int width) {\n  tp_view v;\n  v.data = data;\n  v.row = 0;\n  v.col = 0;\n  v.width = width;\n  return v;\n}\n";
  }
  if (body.find("tp_region(") != std::string::npos) {
    os << "\nstatic tp_view tp_region(const int8_t* data, const int* r) {\n  tp_view v;\n  v.data = data;\n  v.row = r[0];\n  v.col = r[1];\n  v.width = r[3];\n  return v;\n}\n";
  }
  if (w.used().count("tp_add") || w.used().count("tp_avg_pool")) os << kAt;
  for (const char* k : kKernelOrder) {
    if (w.used().count(k)) {
      os << kernel_text().at(k);
      prog.kernels.push_back(k);
    }
  }
  os << "\n";
  for (int id = 0; id < nodes; ++id) emit_layer(os, layers[static_cast<size_t>(id)], id);
  if (patched) {
    const size_t slots = static_cast<size_t>(patch->n) + 1;
    os << "static const int tp_regions[" << patch->tiles.size() << "][" << slots << "][4] = {\n";
    for (const auto& regs : patch->regions) {
      os << "  {";
      for (size_t t = 0; t < slots; ++t) os << (t ? ", " : "") << "{" << regs[t].row << ", " << regs[t].col << ", " << regs[t].height << ", " << regs[t].width << "}";
      os << "},\n";
    }
    os << "};\n";
    os << "static const int tp_tiles[" << patch->tiles.size() << "][4] = {\n";
    for (const auto& t : patch->tiles) os << "  {" << t.row << ", " << t.col << ", " << t.height << ", " << t.width << "},\n";
    os << "};\n\n";
  }
  os << "void " << px << "_run(const int8_t* input, int8_t* output) {\n";
  os << "  long i;\n";
  if (patched) os << "  int pi, y;\n";
  os << "  for (i = 0; i < " << prog.input_bytes << "; ++i) " << arena << "[" << in_offset << " + i] = input[i];\n";
  os << body;
  os << "  for (i = 0; i < " << prog.output_bytes << "; ++i) output[i] = " << arena << "[" << out_offset << " + i];\n";
  os << "}\n";
  if (options.with_main) {
    os << "\n#include <stdio.h>\n\nint main(void) {\n";
    os << "  static int8_t in[" << prog.input_bytes << "], out[" << prog.output_bytes << "];\n";
    os << "  while (fread(in, 1, sizeof in, stdin) == sizeof in) {\n";
    os << "    " << px << "_run(in, out);\n";
    os << "    if (fwrite(out, 1, sizeof out, stdout) != sizeof out) return 1;\n";
    os << "  }\n  return 0;\n}\n";
  }
  prog.source = os.str();
  return prog;
}

}  // namespace tinyplan
