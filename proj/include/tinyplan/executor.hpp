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
#ifndef TINYPLAN_EXECUTOR_HPP_
#define TINYPLAN_EXECUTOR_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "tinyplan/graph.hpp"
#include "tinyplan/kernels.hpp"
#include "tinyplan/memory_planner.hpp"

namespace tinyplan {

// --- real-valued path ---------------------------------------------------------------

FloatTensor run_fp32(const Graph& graph, const FloatTensor& input);

// Every node output (index = node id), used for calibration.
std::vector<FloatTensor> run_fp32_all(const Graph& graph, const FloatTensor& input);

/// Post-training quantization: per-channel weight scales, int32 biases and
/// max-calibrated activation scales from `calibration` inputs.
void quantize_graph(Graph& graph, std::span<const FloatTensor> calibration);

// Re-derives qweight/qbias from the real-valued weights with the current activation scales.
void requantize_weights(Graph& graph);

// --- int8 path ------------------------------------------------------------------------

enum class ExecMode {
  kPlanned,  // single planned arena, im2col tiling, in-place depthwise (serial)
  kDirect,   // one buffer per tensor, OpenMP kernels
};

QuantTensor run_int8(const Graph& graph, const QuantTensor& input, ExecMode mode = ExecMode::kPlanned);

/// Runs nodes [first, end) given already-computed tensors keyed by id
/// (kGraphInput for the input). Returns the graph output.
QuantTensor run_int8_from(const Graph& graph, const ShapeTable& shapes, int first, std::map<int, std::vector<int8_t>> tensors);

/// Planned executor over one contiguous arena sized by a MemoryPlan.
/// Single-threaded; owns mutable state.
class ExecutionContext {
 public:
  ExecutionContext(const Graph& graph, MemoryPlan plan);

  QuantTensor run(const QuantTensor& input);

  const MemoryPlan& plan() const { return plan_; }
  int64_t scratch_high_water() const { return scratch_high_water_; }

 private:
  const Graph& graph_;
  ShapeTable shapes_;
  MemoryPlan plan_;
  std::vector<kernels::QLayer> layers_;
  std::vector<int8_t> arena_;
  int64_t scratch_high_water_ = 0;
};

std::vector<kernels::QLayer> prepare_layers(const Graph& graph, const ShapeTable& shapes);

}  // namespace tinyplan

#endif  // TINYPLAN_EXECUTOR_HPP_
