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
#include "tinyplan/patch_engine.hpp"

#include <algorithm>
#include <cstring>
#include <tuple>

#include "tinyplan/executor.hpp"
#include "tinyplan/memory_planner.hpp"

namespace tinyplan {

namespace {

Region full_map(const Shape& s) { return {0, 0, s[0], s[1]}; }

bool has_area(const Region& r) { return r.height > 0 && r.width > 0; }

Region merge(const Region& acc, const Region& r) { return has_area(acc) ? kernels::bounding_union(acc, r) : r; }

// Per-tensor requirement (slot t + 1) for producing `out` at node `last`.
std::vector<Region> required_regions(const Graph& graph, const ShapeTable& shapes, int last, const Region& out, bool clamp_maps) {
  std::vector<Region> need(static_cast<size_t>(last) + 2);
  need[static_cast<size_t>(last) + 1] = out;
  for (int id = last; id >= 0; --id) {
    const Region r = need[static_cast<size_t>(id) + 1];
    if (!has_area(r)) continue;
    const LayerNode& n = graph.node(id);
    for (int p : n.preds) {
      const Shape& in = shapes.of(p);
      Region want = input_region(n, in, r);
      if (clamp_maps) want = kernels::clamp(want, in[0], in[1]);
      need[static_cast<size_t>(p) + 1] = merge(need[static_cast<size_t>(p) + 1], want);
    }
  }
  return need;
}

int64_t macs_per_pixel(const LayerNode& n, const ShapeTable& shapes) {
  const Shape& s = shapes.of(n.id);
  return node_macs(n, shapes) / (int64_t{s[0]} * s[1]);
}

// Precomputed per-graph state shared by every plan over the same graph.
struct PlanContext {
  const Graph& graph;
  ShapeTable shapes;
  std::vector<std::vector<int>> users;
  std::vector<int64_t> suffix_peak;  // max analytic layer total over ids >= n
  int64_t graph_macs = 0;
  int64_t full_peak = 0;

  explicit PlanContext(const Graph& g) : graph(g), shapes(validate(g)), users(consumers(g)) {
    const auto prof = analytic_profile_from(g, shapes, 0);
    full_peak = prof.peak;
    suffix_peak.assign(g.nodes.size() + 1, 0);
    for (int id = static_cast<int>(g.nodes.size()) - 1; id >= 0; --id) {
      suffix_peak[static_cast<size_t>(id)] = std::max(suffix_peak[static_cast<size_t>(id) + 1], prof.layers[static_cast<size_t>(id)].total);
    }
    graph_macs = count_flops_params(g).macs;
  }

  const std::vector<int>& readers(int t) const { return t == kGraphInput ? users.back() : users[static_cast<size_t>(t)]; }
};

std::optional<std::string> cut_violation_ctx(const PlanContext& ctx, int n) {
  const int depth = static_cast<int>(ctx.graph.nodes.size());
  if (n < 1 || n >= depth) return "n must lie in [1, " + std::to_string(depth - 1) + "], got " + std::to_string(n);
  for (int t = kGraphInput; t < n - 1; ++t) {
    for (int r : ctx.readers(t)) {
      if (r >= n) return "tensor " + std::to_string(t) + " is still read by node " + std::to_string(r) + " after the patch stage";
    }
  }
  return std::nullopt;
}

PatchPlan build_plan(const PlanContext& ctx, int p, int n) {
  const Graph& g = ctx.graph;
  if (p < 1) throw Error("p must be >= 1");
  PatchPlan plan;
  plan.p = p;
  plan.n = n;
  plan.graph_macs = ctx.graph_macs;
  plan.total_macs = ctx.graph_macs;
  if (n == 0) {
    if (p != 1) throw Error("n = 0 (per-layer execution) requires p = 1");
    plan.rest_peak = ctx.full_peak;
    plan.peak = ctx.full_peak;
    return plan;
  }
  if (auto why = cut_violation_ctx(ctx, n)) throw Error("invalid patch stage: " + *why);
  const int cut = n - 1;
  plan.cut_shape = ctx.shapes.of(cut);
  const int H = plan.cut_shape[0], W = plan.cut_shape[1];
  if (H % p != 0 || W % p != 0) {
    throw Error("cut output " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible into " + std::to_string(p) + "x" + std::to_string(p) + " patches");
  }
  const int th = H / p, tw = W / p;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) plan.tiles.push_back({i * th, j * tw, th, tw});
  }
  plan.input_patch = required_regions(g, ctx.shapes, cut, plan.tiles[0], false)[0];

  std::vector<int64_t> per_pixel(static_cast<size_t>(n));
  for (int id = 0; id < n; ++id) {
    per_pixel[static_cast<size_t>(id)] = macs_per_pixel(g.node(id), ctx.shapes);
    plan.prefix_macs += node_macs(g.node(id), ctx.shapes);
  }
  // last prefix reader of each tensor (slot t + 1)
  std::vector<int> last_read(static_cast<size_t>(n) + 1, -1);
  for (int t = kGraphInput; t < n; ++t) {
    for (int r : ctx.readers(t)) {
      if (r < n) last_read[static_cast<size_t>(t) + 1] = std::max(last_read[static_cast<size_t>(t) + 1], r);
    }
  }
  const int64_t cut_bytes = static_cast<int64_t>(plan.cut_shape.elements());
  auto bytes = [&](const std::vector<Region>& regs, int t) { return regs[static_cast<size_t>(t) + 1].area() * ctx.shapes.of(t)[2]; };

  for (const Region& tile : plan.tiles) {
    auto regs = required_regions(g, ctx.shapes, cut, tile, true);
    if (p == 1) {
      // a single patch is per-layer execution: every map is computed whole
      for (int t = kGraphInput; t < n; ++t) regs[static_cast<size_t>(t) + 1] = full_map(ctx.shapes.of(t));
    }
    for (int id = 0; id < n; ++id) plan.patch_macs += regs[static_cast<size_t>(id) + 1].area() * per_pixel[static_cast<size_t>(id)];
    for (int id = 0; id < n; ++id) {
      int64_t live = cut_bytes;
      for (int t = kGraphInput; t <= id; ++t) {
        const auto& preds = g.node(id).preds;
        const bool read_now = std::find(preds.begin(), preds.end(), t) != preds.end();
        const bool produced_now = t == id && id != cut;
        const bool held = t < id && last_read[static_cast<size_t>(t) + 1] > id;
        if (read_now || produced_now || held) live += bytes(regs, t);
      }
      plan.patch_peak = std::max(plan.patch_peak, live);
    }
    plan.regions.push_back(std::move(regs));
  }
  plan.overhead_macs = plan.patch_macs - plan.prefix_macs;
  plan.total_macs = ctx.graph_macs + plan.overhead_macs;
  plan.rest_peak = ctx.suffix_peak[static_cast<size_t>(n)];
  plan.peak = std::max(plan.patch_peak, plan.rest_peak);
  return plan;
}

std::vector<PatchPlan> enumerate_ctx(const PlanContext& ctx, const PnSearchOptions& options) {
  std::vector<PatchPlan> plans;
  const int depth = static_cast<int>(ctx.graph.nodes.size());
  std::vector<bool> cut_ok(static_cast<size_t>(depth), false);
  for (int n = 1; n < depth; ++n) cut_ok[static_cast<size_t>(n)] = !cut_violation_ctx(ctx, n).has_value();
  for (int p = 1; p <= options.max_p; ++p) {
    for (int n = 0; n < depth; ++n) {
      if (n == 0) {
        if (p == 1) plans.push_back(build_plan(ctx, 1, 0));
        continue;
      }
      if (!cut_ok[static_cast<size_t>(n)]) continue;
      const Shape& s = ctx.shapes.of(n - 1);
      if (s[0] % p != 0 || s[1] % p != 0) continue;
      plans.push_back(build_plan(ctx, p, n));
    }
  }
  return plans;
}

}  // namespace

Region input_region(const LayerNode& node, const Shape& in_shape, const Region& out) {
  switch (node.kind) {
    case OpKind::kAdd:
      return out;
    case OpKind::kLinear:
      return full_map(in_shape);
    case OpKind::kAvgPool:
      if (node.attrs.kernel == 0) return full_map(in_shape);
      [[fallthrough]];
    case OpKind::kConv2D:
    case OpKind::kDepthwiseConv2D: {
      const int s = node.attrs.stride, k = node.attrs.kernel, pad = node.pad_before();
      return {out.row * s - pad, out.col * s - pad, (out.height - 1) * s + k, (out.width - 1) * s + k};
    }
  }
  return out;
}

Region backtrace_region(const Graph& graph, const ShapeTable& shapes, int last, const Region& out_region) {
  if (last < 0 || last >= static_cast<int>(graph.nodes.size())) throw Error("backtrace from unknown node " + std::to_string(last));
  if (!has_area(out_region)) throw Error("backtrace needs a non-empty output region");
  return required_regions(graph, shapes, last, out_region, false)[0];
}

std::optional<std::string> cut_violation(const Graph& graph, int n) {
  const PlanContext ctx(graph);
  return cut_violation_ctx(ctx, n);
}

PatchPlan build_patch_plan(const Graph& graph, int p, int n) {
  const PlanContext ctx(graph);
  return build_plan(ctx, p, n);
}

int cut_after_block(const Graph& graph, int block) {
  int n = 0;
  for (const auto& node : graph.nodes) {
    if (node.attrs.block >= 0 && node.attrs.block <= block) n = std::max(n, node.id + 1);
  }
  return n;
}

std::vector<PatchPlan> enumerate_plans(const Graph& graph, const PnSearchOptions& options) {
  const PlanContext ctx(graph);
  return enumerate_ctx(ctx, options);
}

PnSearchResult search_pn(const Graph& graph, int64_t sram_limit, const PnSearchOptions& options) {
  PnSearchResult res;
  const PlanContext ctx(graph);
  const auto plans = enumerate_ctx(ctx, options);
  res.evaluated = static_cast<int>(plans.size());
  const PatchPlan* best = nullptr;
  const PatchPlan* smallest = nullptr;
  for (const auto& plan : plans) {
    if (!smallest || plan.peak < smallest->peak) smallest = &plan;
    if (plan.peak > sram_limit) continue;
    if (!best || std::tie(plan.total_macs, plan.p, plan.n) < std::tie(best->total_macs, best->p, best->n)) best = &plan;
  }
  if (best) {
    res.feasible = true;
    res.plan = *best;
    return res;
  }
  res.message = "no (p, n) plan fits in " + std::to_string(sram_limit) + " bytes";
  if (smallest) {
    res.message += "; the smallest peak is " + std::to_string(smallest->peak) + " bytes at p=" + std::to_string(smallest->p) + ", n=" + std::to_string(smallest->n);
  }
  return res;
}

QuantTensor run_patched(const Graph& graph, const QuantTensor& input, const PatchPlan& plan) {
  if (plan.n == 0) return run_int8(graph, input, ExecMode::kDirect);
  const ShapeTable shapes = validate(graph);
  if (!graph.quantized()) throw Error("graph is not quantized: missing weight or activation scales");
  if (input.shape() != graph.input) throw Error("input shape " + input.shape().str() + " != graph input " + graph.input.str());
  if (input.scale().per_channel() || input.scale()[0] != graph.input_scale) throw Error("input scale does not match the graph input scale");
  const int n = plan.n, cut = n - 1;
  if (n >= static_cast<int>(graph.nodes.size()) || shapes.of(cut) != plan.cut_shape || plan.regions.size() != plan.tiles.size() ||
      static_cast<int>(plan.tiles.size()) != plan.p * plan.p) {
    throw Error("patch plan does not match the graph");
  }
  for (const auto& regs : plan.regions) {
    if (regs.size() != static_cast<size_t>(n) + 1) throw Error("patch plan does not match the graph");
  }

  std::vector<kernels::QLayer> layers;
  for (int id = 0; id < n; ++id) layers.push_back(kernels::prepare_layer(graph, shapes, id));
  const int C = plan.cut_shape[2], W = plan.cut_shape[1];
  std::vector<int8_t> cut_buf(plan.cut_shape.elements());
  const int8_t* in = input.data().data();
  const int patches = static_cast<int>(plan.tiles.size());

#pragma omp parallel for schedule(dynamic, 1)
  for (int pi = 0; pi < patches; ++pi) {
    const auto& regs = plan.regions[static_cast<size_t>(pi)];
    std::vector<std::vector<int8_t>> bufs(static_cast<size_t>(n));
    for (int id = 0; id < n; ++id) {
      const Region r = regs[static_cast<size_t>(id) + 1];
      if (!has_area(r)) continue;
      std::vector<kernels::QView> views;
      for (int p : graph.node(id).preds) {
        const Shape& s = shapes.of(p);
        if (p == kGraphInput) {
          views.push_back(kernels::QView::full(in, s[0], s[1], s[2]));
        } else {
          views.push_back({bufs[static_cast<size_t>(p)].data(), regs[static_cast<size_t>(p) + 1], s[2], s[0], s[1]});
        }
      }
      auto& out = bufs[static_cast<size_t>(id)];
      out.resize(static_cast<size_t>(r.area()) * static_cast<size_t>(shapes.of(id)[2]));
      kernels::run_region(layers[static_cast<size_t>(id)], views, r, out.data());
    }
    const Region& tile = plan.tiles[static_cast<size_t>(pi)];
    const auto& src = bufs[static_cast<size_t>(cut)];
    for (int y = 0; y < tile.height; ++y) {
      std::memcpy(cut_buf.data() + (static_cast<size_t>(tile.row + y) * W + tile.col) * C, src.data() + static_cast<size_t>(y) * tile.width * C,
                  static_cast<size_t>(tile.width) * C);
    }
  }

  std::map<int, std::vector<int8_t>> tensors;
  tensors[cut] = std::move(cut_buf);
  return run_int8_from(graph, shapes, n, std::move(tensors));
}

RedistributionReport compare_redistribution(const Graph& original, int original_block, const Graph& redistributed, int redistributed_block, int p) {
  RedistributionReport r;
  r.original = build_patch_plan(original, p, cut_after_block(original, original_block));
  r.redistributed = build_patch_plan(redistributed, p, cut_after_block(redistributed, redistributed_block));
  r.improves = r.redistributed.overhead_ratio() < r.original.overhead_ratio();
  return r;
}

}  // namespace tinyplan
