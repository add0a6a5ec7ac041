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
#include "tinyplan/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace tinyplan {

int BackboneConfig::num_blocks() const {
  int n = 0;
  for (const auto& s : stages) n += s.depth();
  return n;
}

BackboneConfig BackboneConfig::mobilenet_v2(int resolution, double width, int num_classes) {
  struct Row { int expansion, channels, depth, stride; };
  static constexpr Row kRows[] = {{1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1}};
  BackboneConfig c;
  c.resolution = resolution;
  c.stem_channels = 32;
  c.stem_width = width;
  c.num_classes = num_classes;
  for (const Row& r : kRows) {
    StageConfig s{r.channels, r.stride, {}};
    for (int i = 0; i < r.depth; ++i) s.blocks.push_back({3, r.expansion, width});
    c.stages.push_back(std::move(s));
  }
  return c;
}

int scaled_channels(int base, double width) {
  const double v = static_cast<double>(base) * width;
  const int rounded = static_cast<int>(std::lround(v / 8.0)) * 8;
  return std::max(8, rounded);
}

std::optional<std::string> knob_domain_violation(const BackboneConfig& c) {
  if (c.resolution < 48 || c.resolution > 224 || (c.resolution - 48) % 16 != 0) return "resolution must be in {48, 64, ..., 224}";
  for (size_t s = 0; s < c.stages.size(); ++s) {
    const auto& st = c.stages[s];
    if (st.depth() < 2 || st.depth() > 4) return "stage " + std::to_string(s) + " depth must be in {2, 3, 4}";
    for (const auto& b : st.blocks) {
      if (b.kernel != 3 && b.kernel != 5 && b.kernel != 7) return "kernel must be in {3, 5, 7}";
      if (b.expansion != 3 && b.expansion != 4 && b.expansion != 6) return "expansion must be in {3, 4, 6}";
      if (b.width != 0.5 && b.width != 0.75 && b.width != 1.0) return "block width must be in {0.5, 0.75, 1.0}";
    }
  }
  return std::nullopt;
}

Graph build_backbone(const BackboneConfig& c, const BuildOptions& options) {
  if (c.stages.empty()) throw Error("backbone needs at least one stage");
  if (c.resolution < 8) throw Error("backbone resolution too small");
  GraphBuilder b(Shape{c.resolution, c.resolution, c.in_channels});
  b.set_block(0);
  int x = b.conv(kGraphInput, scaled_channels(c.stem_channels, c.stem_width), c.stem_kernel, 2, true);
  int block = 1;
  for (const auto& stage : c.stages) {
    if (stage.stride != 1 && stage.stride != 2) throw Error("stage stride must be 1 or 2");
    for (int i = 0; i < stage.depth(); ++i) {
      const auto& cfg = stage.blocks[static_cast<size_t>(i)];
      if (cfg.expansion < 1) throw Error("expansion must be >= 1");
      b.set_block(block++);
      const int stride = i == 0 ? stage.stride : 1;
      const int in_c = b.shape_of(x)[2];
      const int out_c = scaled_channels(stage.base_channels, cfg.width);
      int h = x;
      if (cfg.expansion != 1) h = b.conv(h, in_c * cfg.expansion, 1, 1, true);
      h = b.depthwise(h, cfg.kernel, stride, true);
      h = b.conv(h, out_c, 1, 1, false);
      if (stride == 1 && in_c == out_c) h = b.add(x, h);
      x = h;
    }
  }
  b.set_block(-1);
  x = b.avg_pool(x, 0, 1);
  b.linear(x, c.num_classes, true);
  Graph g = std::move(b).finish();
  if (options.with_weights) init_weights(g, options.seed);
  return g;
}

using nlohmann::json;

std::string to_json(const BackboneConfig& c) {
  json j;
  j["resolution"] = c.resolution;
  j["in_channels"] = c.in_channels;
  j["stem_channels"] = c.stem_channels;
  j["stem_width"] = c.stem_width;
  j["stem_kernel"] = c.stem_kernel;
  j["num_classes"] = c.num_classes;
  j["stages"] = json::array();
  for (const auto& s : c.stages) {
    json js = {{"base_channels", s.base_channels}, {"stride", s.stride}, {"blocks", json::array()}};
    for (const auto& bl : s.blocks) js["blocks"].push_back({{"kernel", bl.kernel}, {"expansion", bl.expansion}, {"width", bl.width}});
    j["stages"].push_back(std::move(js));
  }
  return j.dump(1);
}

BackboneConfig backbone_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    if (j.value("preset", "") == "mobilenet_v2") {
      return BackboneConfig::mobilenet_v2(j.value("resolution", 224), j.value("width", 1.0), j.value("num_classes", 10));
    }
    BackboneConfig c;
    c.resolution = j.at("resolution").get<int>();
    c.in_channels = j.value("in_channels", 3);
    c.stem_channels = j.value("stem_channels", 32);
    c.stem_width = j.value("stem_width", 1.0);
    c.stem_kernel = j.value("stem_kernel", 3);
    c.num_classes = j.value("num_classes", 10);
    for (const auto& js : j.at("stages")) {
      StageConfig s;
      s.base_channels = js.at("base_channels").get<int>();
      s.stride = js.at("stride").get<int>();
      for (const auto& jb : js.at("blocks")) {
        s.blocks.push_back({jb.value("kernel", 3), jb.value("expansion", 6), jb.value("width", 1.0)});
      }
      c.stages.push_back(std::move(s));
    }
    return c;
  } catch (const json::parse_error& e) {
    throw IoError("backbone config parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed backbone config: ") + e.what());
  }
}

}  // namespace tinyplan
