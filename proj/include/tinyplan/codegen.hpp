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
#ifndef TINYPLAN_CODEGEN_HPP_
#define TINYPLAN_CODEGEN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tinyplan/graph.hpp"
#include "tinyplan/memory_planner.hpp"
#include "tinyplan/patch_engine.hpp"

namespace tinyplan {

struct CodegenOptions {
  std::string prefix = "model";  // symbol prefix of the emitted API
  bool with_main = false;        // append a stdin/stdout driver (uses stdio)
};

/// Freestanding C99 translation unit. The entry point is
/// `void <prefix>_run(const int8_t* input, int8_t* output)`.
struct EmittedProgram {
  std::string source;
  int64_t arena_size = 0;
  int64_t input_bytes = 0;
  int64_t output_bytes = 0;
  std::vector<std::string> kernels;  // kernel functions present in the source
};

/// Per-layer program over `plan`'s arena, or, with `patch`, a patch-by-patch
/// prefix followed by per-layer execution of the remainder.
EmittedProgram emit_c_source(const Graph& graph, const MemoryPlan& plan, const PatchPlan* patch = nullptr, const CodegenOptions& options = {});

/// Buffer layout of a patched program: the full input, per-patch region
/// buffers of the prefix, the cut tensor and the remainder's tensors.
Allocation plan_patched_arena(const Graph& graph, const PatchPlan& patch, std::vector<BufferRequest>* requests = nullptr);

}  // namespace tinyplan

#endif  // TINYPLAN_CODEGEN_HPP_
