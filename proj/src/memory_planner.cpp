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
#include "tinyplan/memory_planner.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace tinyplan {

namespace {

// last step reading each tensor; slot 0 is the graph input
std::vector<int> last_use(const Graph& graph) {
  std::vector<int> last(graph.nodes.size() + 1, -1);
  for (const auto& n : graph.nodes) {
    for (int p : n.preds) last[static_cast<size_t>(p + 1)] = std::max(last[static_cast<size_t>(p + 1)], n.id);
  }
  last[static_cast<size_t>(graph.output_id() + 1)] = graph.output_id();  // the output lives to the end
  return last;
}

int64_t bytes_of(const ShapeTable& shapes, int tensor) { return static_cast<int64_t>(shapes.of(tensor).elements()); }

}  // namespace

bool inplace_eligible(const Graph& graph, const std::vector<std::vector<int>>& users, const ShapeTable& shapes, int id) {
  const LayerNode& n = graph.node(id);
  if (n.kind != OpKind::kDepthwiseConv2D || n.attrs.stride != 1) return false;
  if (shapes.of(id) != shapes.of(n.preds[0])) return false;
  const int src = n.preds[0];
  const auto& readers = src == kGraphInput ? users.back() : users[static_cast<size_t>(src)];
  return readers.size() == 1 && readers[0] == id;
}

AnalyticProfile analytic_profile_from(const Graph& graph, const ShapeTable& shapes, int first, const ProfileOptions& options) {
  const auto users = consumers(graph);
  const auto last = last_use(graph);
  AnalyticProfile prof;
  prof.layers.resize(graph.nodes.size());
  for (size_t i = 0; i < graph.nodes.size(); ++i) prof.layers[i].id = static_cast<int>(i);

  for (int id = first; id < static_cast<int>(graph.nodes.size()); ++id) {
    const LayerNode& n = graph.node(id);
    LayerMemory& lm = prof.layers[static_cast<size_t>(id)];
    std::vector<int> inputs = n.preds;
    std::sort(inputs.begin(), inputs.end());
    inputs.erase(std::unique(inputs.begin(), inputs.end()), inputs.end());
    for (int t : inputs) lm.in_bytes += bytes_of(shapes, t);

    lm.inplace = options.inplace_depthwise && inplace_eligible(graph, users, shapes, id);
    if (lm.inplace) {
      lm.scratch_bytes = int64_t{shapes.of(id)[0]} * shapes.of(id)[1];
    } else {
      lm.out_bytes = bytes_of(shapes, id);
    }
    // tensors produced earlier and still awaited by a later node (a later
    // reader implies a reader inside the range)
    for (int t = kGraphInput; t < id; ++t) {
      if (std::find(inputs.begin(), inputs.end(), t) != inputs.end()) continue;
      if (last[static_cast<size_t>(t + 1)] <= id) continue;
      lm.other_bytes += bytes_of(shapes, t);
    }
    lm.total = lm.in_bytes + lm.out_bytes + lm.other_bytes + lm.scratch_bytes;
    if (lm.total > prof.peak) {
      prof.peak = lm.total;
      prof.peak_layer = id;
    }
    const int block = n.attrs.block;
    if (block >= 0) {
      if (static_cast<int>(prof.block_peaks.size()) <= block) prof.block_peaks.resize(static_cast<size_t>(block) + 1, 0);
      prof.block_peaks[static_cast<size_t>(block)] = std::max(prof.block_peaks[static_cast<size_t>(block)], lm.total);
    }
  }
  return prof;
}

AnalyticProfile analytic_profile(const Graph& graph, const ProfileOptions& options) {
  const ShapeTable shapes = validate(graph);
  return analytic_profile_from(graph, shapes, 0, options);
}

Im2colBudget im2col_budget(const Graph& graph) {
  validate(graph);
  Im2colBudget b;
  b.tile_widths.assign(graph.nodes.size(), 0);
  for (const auto& n : graph.nodes) {
    if (n.kind == OpKind::kConv2D) b.m = std::max<int64_t>(b.m, int64_t{n.attrs.kernel} * n.attrs.kernel * n.attrs.in_channels);
  }
  for (const auto& n : graph.nodes) {
    if (n.kind != OpKind::kConv2D) continue;
    const int64_t column = int64_t{n.attrs.kernel} * n.attrs.kernel * n.attrs.in_channels;
    b.tile_widths[static_cast<size_t>(n.id)] = static_cast<int>(std::max<int64_t>(1, b.m / column));
  }
  return b;
}

// --- allocation -------------------------------------------------------------------

int64_t max_live_bytes(std::span<const BufferRequest> requests) {
  int last_step = 0;
  for (const auto& r : requests) last_step = std::max(last_step, r.last);
  std::vector<int64_t> live(static_cast<size_t>(last_step) + 2, 0);
  for (const auto& r : requests) {
    live[static_cast<size_t>(r.first)] += r.size;
    live[static_cast<size_t>(r.last) + 1] -= r.size;
  }
  int64_t cur = 0, best = 0;
  for (int64_t d : live) {
    cur += d;
    best = std::max(best, cur);
  }
  return best;
}

namespace {
bool overlaps_in_time(const BufferRequest& a, const BufferRequest& b) { return a.first <= b.last && b.first <= a.last; }
}  // namespace

Allocation allocate(std::span<const BufferRequest> requests) {
  std::vector<size_t> order(requests.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (requests[a].size != requests[b].size) return requests[a].size > requests[b].size;
    return requests[a].first < requests[b].first;
  });

  Allocation alloc;
  alloc.offsets.assign(requests.size(), -1);
  std::vector<size_t> placed;
  for (size_t idx : order) {
    const auto& req = requests[idx];
    if (req.size == 0) {
      alloc.offsets[idx] = 0;
      continue;
    }
    std::vector<std::pair<int64_t, int64_t>> busy;  // [begin, end) of time-overlapping placed buffers
    for (size_t p : placed) {
      if (overlaps_in_time(req, requests[p])) busy.emplace_back(alloc.offsets[p], alloc.offsets[p] + requests[p].size);
    }
    std::sort(busy.begin(), busy.end());
    int64_t best_offset = -1, best_gap = std::numeric_limits<int64_t>::max(), cursor = 0;
    for (const auto& [begin, end] : busy) {
      if (begin > cursor) {
        const int64_t gap = begin - cursor;
        if (gap >= req.size && gap < best_gap) {
          best_gap = gap;
          best_offset = cursor;
        }
      }
      cursor = std::max(cursor, end);
    }
    if (best_offset < 0) best_offset = cursor;  // append after everything live
    alloc.offsets[idx] = best_offset;
    alloc.arena_size = std::max(alloc.arena_size, best_offset + req.size);
    placed.push_back(idx);
  }
  return alloc;
}

bool allocation_is_safe(std::span<const BufferRequest> requests, const Allocation& a) {
  for (size_t i = 0; i < requests.size(); ++i) {
    if (a.offsets[i] < 0 || a.offsets[i] + requests[i].size > a.arena_size) return false;
    for (size_t j = i + 1; j < requests.size(); ++j) {
      if (requests[i].size == 0 || requests[j].size == 0 || !overlaps_in_time(requests[i], requests[j])) continue;
      const bool disjoint = a.offsets[i] + requests[i].size <= a.offsets[j] || a.offsets[j] + requests[j].size <= a.offsets[i];
      if (!disjoint) return false;
    }
  }
  return true;
}

MemoryPlan plan_memory(const Graph& graph, const PlanOptions& options) {
  const ShapeTable shapes = validate(graph);
  const auto users = consumers(graph);
  const auto last = last_use(graph);
  MemoryPlan plan;
  plan.profile = analytic_profile_from(graph, shapes, 0, {options.inplace_depthwise});
  plan.im2col = im2col_budget(graph);
  plan.flash_bytes = count_flops_params(graph).param_bytes;
  plan.tensor_buffer.assign(graph.nodes.size() + 1, -1);
  plan.plane_buffer.assign(graph.nodes.size(), -1);

  auto new_buffer = [&](std::string name, int64_t size, int first, int last_step) {
    plan.buffers.push_back({std::move(name), {size, first, last_step}, 0});
    return static_cast<int>(plan.buffers.size()) - 1;
  };

  plan.tensor_buffer[0] = new_buffer("input", bytes_of(shapes, kGraphInput), 0, std::max(0, last[0]));
  int first_conv = -1, last_conv = -1;
  for (const auto& n : graph.nodes) {
    const int id = n.id;
    if (n.kind == OpKind::kConv2D) {
      if (first_conv < 0) first_conv = id;
      last_conv = id;
    }
    const int lifetime_end = std::max(id, last[static_cast<size_t>(id + 1)]);
    if (options.inplace_depthwise && inplace_eligible(graph, users, shapes, id)) {
      const int src_buf = plan.buffer_of(n.preds[0]);
      plan.tensor_buffer[static_cast<size_t>(id + 1)] = src_buf;
      auto& req = plan.buffers[static_cast<size_t>(src_buf)].request;
      req.last = std::max(req.last, lifetime_end);
      plan.plane_buffer[static_cast<size_t>(id)] = new_buffer("dw_plane_" + std::to_string(id), int64_t{shapes.of(id)[0]} * shapes.of(id)[1], id, id);
    } else {
      plan.tensor_buffer[static_cast<size_t>(id + 1)] = new_buffer("t" + std::to_string(id), bytes_of(shapes, id), id, lifetime_end);
    }
  }
  if (first_conv >= 0) plan.scratch_buffer = new_buffer("im2col", plan.im2col.m, first_conv, last_conv);

  std::vector<BufferRequest> reqs;
  for (const auto& b : plan.buffers) reqs.push_back(b.request);
  const Allocation alloc = allocate(reqs);
  if (!allocation_is_safe(reqs, alloc)) throw Error("internal: buffer allocation overlaps live ranges");
  for (size_t i = 0; i < plan.buffers.size(); ++i) plan.buffers[i].offset = alloc.offsets[i];
  plan.arena_size = alloc.arena_size;
  return plan;
}

}  // namespace tinyplan
