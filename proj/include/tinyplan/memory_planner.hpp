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
#ifndef TINYPLAN_MEMORY_PLANNER_HPP_
#define TINYPLAN_MEMORY_PLANNER_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinyplan/graph.hpp"

namespace tinyplan {

// --- analytic profile -----------------------------------------------------------

struct LayerMemory {
  int id = 0;
  int64_t in_bytes = 0;
  int64_t out_bytes = 0;   // 0 for in-place layers, their output reuses the input
  int64_t other_bytes = 0; // tensors held for later consumers (residual shortcuts)
  int64_t scratch_bytes = 0;  // in-place temporary plane
  int64_t total = 0;
  bool inplace = false;
};

struct AnalyticProfile {
  std::vector<LayerMemory> layers;  // indexed by node id
  int64_t peak = 0;
  int peak_layer = -1;
  std::vector<int64_t> block_peaks;  // indexed by block id (head layers excluded)
};

struct ProfileOptions {
  bool inplace_depthwise = true;
};

/// int8 sizing: a layer needs every simultaneously live activation, each
/// counted once, with weights left in Flash.
AnalyticProfile analytic_profile(const Graph& graph, const ProfileOptions& options = {});

/// Same accounting restricted to nodes [first, graph end); tensors produced
/// before `first` count only while a node in range still reads them.
AnalyticProfile analytic_profile_from(const Graph& graph, const ShapeTable& shapes, int first, const ProfileOptions& options = {});

// True when node `id` is a stride-1 depthwise conv that is the last reader of its input.
bool inplace_eligible(const Graph& graph, const std::vector<std::vector<int>>& users, const ShapeTable& shapes, int id);

// --- im2col budget -----------------------------------------------------------------

struct Im2colBudget {
  int64_t m = 0;                 // max k^2 * C_in over conv layers
  std::vector<int> tile_widths;  // per node, 0 for non-conv layers
};

Im2colBudget im2col_budget(const Graph& graph);

// --- buffer allocation ------------------------------------------------------------

/// A buffer needed over execution steps [first, last] inclusive.
struct BufferRequest {
  int64_t size = 0;
  int first = 0;
  int last = 0;
};

struct Allocation {
  std::vector<int64_t> offsets;
  int64_t arena_size = 0;
};

/// Greedy best-fit placement in decreasing size order. Deterministic.
Allocation allocate(std::span<const BufferRequest> requests);

// max over steps of the summed sizes of live requests
int64_t max_live_bytes(std::span<const BufferRequest> requests);

// True when every pair of time-overlapping requests has disjoint byte ranges.
bool allocation_is_safe(std::span<const BufferRequest> requests, const Allocation& allocation);

struct PlannedBuffer {
  std::string name;
  BufferRequest request;
  int64_t offset = 0;
};

/// Concrete arena layout for per-layer execution. Step i executes node i.
struct MemoryPlan {
  AnalyticProfile profile;
  Im2colBudget im2col;
  std::vector<PlannedBuffer> buffers;
  std::vector<int> tensor_buffer;  // node id + 1 -> buffer index (slot 0 = graph input)
  std::vector<int> plane_buffer;   // per node, -1 unless the node runs in place
  int scratch_buffer = -1;         // im2col scratch, -1 when the graph has no conv
  int64_t arena_size = 0;
  int64_t flash_bytes = 0;

  int buffer_of(int tensor) const { return tensor_buffer.at(static_cast<size_t>(tensor + 1)); }
  int64_t offset_of(int tensor) const { return buffers.at(static_cast<size_t>(buffer_of(tensor))).offset; }
  bool inplace(int id) const { return plane_buffer.at(static_cast<size_t>(id)) >= 0; }
};

struct PlanOptions {
  bool inplace_depthwise = true;
};

MemoryPlan plan_memory(const Graph& graph, const PlanOptions& options = {});

}  // namespace tinyplan

#endif  // TINYPLAN_MEMORY_PLANNER_HPP_
