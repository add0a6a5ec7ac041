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
#ifndef TINYPLAN_PATCH_ENGINE_HPP_
#define TINYPLAN_PATCH_ENGINE_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinyplan/graph.hpp"
#include "tinyplan/kernels.hpp"

namespace tinyplan {

using kernels::Region;

// Input rectangle a windowed layer reads to produce `out`, in unclamped
// (padded) input coordinates. Elementwise layers map regions to themselves.
Region input_region(const LayerNode& node, const Shape& in_shape, const Region& out);

/// Walks `out_region` of node `last` back to the graph input without
/// clamping. Joins take the bounding union of both branch requirements.
Region backtrace_region(const Graph& graph, const ShapeTable& shapes, int last, const Region& out_region);

/// Nodes [0, n) run patch by patch over a p x p tiling of node n-1's output;
/// the remainder runs per layer. n = 0 is plain per-layer execution.
struct PatchPlan {
  int p = 1;
  int n = 0;
  Shape cut_shape;                           // output of node n-1
  std::vector<Region> tiles;                 // p*p tiles of the cut output, row-major
  std::vector<std::vector<Region>> regions;  // [patch][tensor + 1]: clamped region computed per patch
  Region input_patch;                        // unclamped input extent of the first tile

  int64_t graph_macs = 0;
  int64_t prefix_macs = 0;    // per-layer MACs of nodes [0, n)
  int64_t patch_macs = 0;     // MACs of nodes [0, n) summed over patches
  int64_t overhead_macs = 0;  // patch_macs - prefix_macs
  int64_t total_macs = 0;     // graph_macs + overhead_macs

  int64_t patch_peak = 0;  // live patch regions plus the full cut buffer
  int64_t rest_peak = 0;   // per-layer analytic peak of nodes [n, end)
  int64_t peak = 0;

  double overhead_ratio() const { return graph_macs == 0 ? 0.0 : static_cast<double>(overhead_macs) / static_cast<double>(graph_macs); }
  double prefix_overhead_ratio() const { return prefix_macs == 0 ? 0.0 : static_cast<double>(overhead_macs) / static_cast<double>(prefix_macs); }
};

/// Reason n cannot be a patch-stage boundary, if any: every tensor produced
/// before n (and the graph input) must be read only inside the prefix,
/// except node n-1's output.
std::optional<std::string> cut_violation(const Graph& graph, int n);

PatchPlan build_patch_plan(const Graph& graph, int p, int n);

// Smallest n whose prefix covers every node with block <= `block`.
int cut_after_block(const Graph& graph, int block);

/// Bit-identical to run_int8. Patches run in parallel; each writes only its
/// own tile of the cut buffer.
QuantTensor run_patched(const Graph& graph, const QuantTensor& input, const PatchPlan& plan);

struct PnSearchResult {
  bool feasible = false;
  PatchPlan plan;
  int evaluated = 0;
  std::string message;
};

struct PnSearchOptions {
  int max_p = 4;
};

/// Enumerates p in {1..max_p}, n in {0..depth-1}; keeps plans with peak <=
/// sram_limit and returns the one with the fewest total MACs (ties: smaller
/// p, then smaller n).
PnSearchResult search_pn(const Graph& graph, int64_t sram_limit, const PnSearchOptions& options = {});

// Every buildable plan, in (p, n) order.
std::vector<PatchPlan> enumerate_plans(const Graph& graph, const PnSearchOptions& options = {});

struct RedistributionReport {
  PatchPlan original;
  PatchPlan redistributed;
  bool improves = false;  // strictly smaller overhead ratio
};

/// Compares patch overhead of two backbones cut after the given blocks.
RedistributionReport compare_redistribution(const Graph& original, int original_block, const Graph& redistributed, int redistributed_block, int p);

}  // namespace tinyplan

#endif  // TINYPLAN_PATCH_ENGINE_HPP_
