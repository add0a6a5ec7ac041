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
#ifndef TINYPLAN_BACKBONE_HPP_
#define TINYPLAN_BACKBONE_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinyplan/graph.hpp"

namespace tinyplan {

struct BlockConfig {
  int kernel = 3;
  int expansion = 6;  // 1 skips the expand conv
  double width = 1.0;

  bool operator==(const BlockConfig&) const = default;
};

struct StageConfig {
  int base_channels = 16;
  int stride = 1;  // applied by the first block of the stage
  std::vector<BlockConfig> blocks;

  int depth() const { return static_cast<int>(blocks.size()); }
  bool operator==(const StageConfig&) const = default;
};

/// MnasNet-like backbone: stride-2 stem conv, stages of inverted residual
/// blocks, global average pool, fp32 linear classifier.
struct BackboneConfig {
  int resolution = 224;
  int in_channels = 3;
  int stem_channels = 32;
  double stem_width = 1.0;
  int stem_kernel = 3;
  std::vector<StageConfig> stages;
  int num_classes = 10;

  int num_blocks() const;
  bool operator==(const BackboneConfig&) const = default;

  // 17 inverted-residual blocks in stages (1, 2, 3, 4, 3, 3, 1).
  static BackboneConfig mobilenet_v2(int resolution, double width = 1.0, int num_classes = 10);
};

// round(base * w) to the nearest multiple of 8, at least 8
int scaled_channels(int base, double width);

/// Empty when the config lies in the searchable knob domain, otherwise the
/// first violated constraint.
std::optional<std::string> knob_domain_violation(const BackboneConfig& config);

struct BuildOptions {
  bool with_weights = true;
  uint64_t seed = 0;
};

Graph build_backbone(const BackboneConfig& config, const BuildOptions& options = {});

std::string to_json(const BackboneConfig& config);
BackboneConfig backbone_from_json(const std::string& text);

}  // namespace tinyplan

#endif  // TINYPLAN_BACKBONE_HPP_
