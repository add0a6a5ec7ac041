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
#include <doctest.h>

#include <algorithm>

#include "test_util.hpp"
#include "tinyplan/backbone.hpp"
#include "tinyplan/memory_planner.hpp"

namespace tinyplan {
namespace {

TEST_CASE("analytic profile of the MobileNetV2 stem") {
  GraphBuilder b(Shape{224, 224, 3});
  b.conv(kGraphInput, 32, 3, 2, true);
  const auto prof = analytic_profile(std::move(b).finish());
  CHECK(prof.layers[0].total == 3 * 224 * 224 + 32 * 112 * 112);
  CHECK(prof.peak == 551936);  // 539 KiB

}

TEST_CASE("analytic profile basics") {
  GraphBuilder b(Shape{8, 8, 4});
  b.conv(kGraphInput, 4, 1, 1, false);
  CHECK(analytic_profile(std::move(b).finish()).peak == 512);

  // a residual block: the shared input is counted once, and held while the
  // main path runs
  GraphBuilder r(Shape{8, 8, 4});
  const int e = r.conv(kGraphInput, 8, 1, 1, true);
  const int p = r.conv(e, 4, 1, 1, false);
  r.add(kGraphInput, p);
  const auto prof = analytic_profile(std::move(r).finish());
  CHECK(prof.layers[0].total == 256 + 512);
  CHECK(prof.layers[1].total == 512 + 256 + 256);
  CHECK(prof.layers[2].total == 256 + 256 + 256);
}

TEST_CASE("in-place depthwise is charged N plus one plane") {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const int h = 3 + rng.uniform_int(10), w = 3 + rng.uniform_int(10), c = 1 + rng.uniform_int(16);
    GraphBuilder b(Shape{h, w, c});
    b.depthwise(kGraphInput, 3, 1, true);
    const Graph g = std::move(b).finish();
    const int64_t n = int64_t{h} * w * c;
    CHECK(analytic_profile(g, {false}).peak == 2 * n);
    CHECK(analytic_profile(g, {true}).peak == n + n / c);
    const auto plan = plan_memory(g);
    CHECK(plan.buffer_of(kGraphInput) == plan.buffer_of(0));
    CHECK(plan.arena_size == n + n / c);
  }
}

TEST_CASE("im2col budget") {
  GraphBuilder b(Shape{8, 8, 16});
  const int a = b.conv(kGraphInput, 32, 3, 1, true);
  b.conv(a, 8, 5, 1, true);
  const auto budget = im2col_budget(std::move(b).finish());
  CHECK(budget.m == 800);
  CHECK(budget.tile_widths == std::vector<int>{5, 1});

  GraphBuilder one(Shape{8, 8, 3});
  one.conv(kGraphInput, 8, 3, 1, true);
  CHECK(im2col_budget(std::move(one).finish()).tile_widths == std::vector<int>{1});

  GraphBuilder pw(Shape{8, 8, 3});
  const int x = pw.conv(kGraphInput, 8, 3, 1, true);
  pw.conv(x, 8, 1, 1, true);
  CHECK(im2col_budget(std::move(pw).finish()).tile_widths == std::vector<int>{1, 3});
}

TEST_CASE("chain allocation reuses the first buffer") {
  GraphBuilder b(Shape{8, 8, 4});
  const int x = b.avg_pool(kGraphInput, 3, 1);
  b.avg_pool(x, 3, 1);
  const auto plan = plan_memory(std::move(b).finish());
  CHECK(plan.arena_size == std::max(256 + 144, 144 + 64));
  CHECK(plan.offset_of(1) == plan.offset_of(kGraphInput));
}

// Independent live-set walk: tensor t is needed at step i when i reads it,
// i produces it, or it was produced earlier and some step after i reads it.
int64_t oracle_layer_memory(const Graph& g, const ShapeTable& shapes, int i) {
  int64_t total = 0;
  for (int t = kGraphInput; t <= i; ++t) {
    bool needed = t == i;
    for (const auto& n : g.nodes) {
      const bool reads = std::find(n.preds.begin(), n.preds.end(), t) != n.preds.end();
      if (reads && n.id >= i) needed = true;
    }
    if (t == g.output_id() && t <= i) needed = needed || t == i;
    if (needed) total += static_cast<int64_t>(shapes.of(t).elements());
  }
  return total;
}

TEST_CASE("profile equals an independent live-set walk") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Graph g = testing::random_net(rng);
    const auto shapes = validate(g);
    const auto prof = analytic_profile(g, {false});
    for (const auto& n : g.nodes) CHECK(prof.layers[static_cast<size_t>(n.id)].total == oracle_layer_memory(g, shapes, n.id));
  }
}

TEST_CASE("generated MobileNetV2 shows an imbalanced block memory distribution") {
  const Graph g = build_backbone(BackboneConfig::mobilenet_v2(224), {false, 0});
  const auto prof = analytic_profile(g);
  std::vector<int64_t> blocks(prof.block_peaks.begin() + 1, prof.block_peaks.end());
  REQUIRE(blocks.size() == 17);
  const int64_t mx = *std::max_element(blocks.begin(), blocks.end());
  std::nth_element(blocks.begin(), blocks.begin() + 8, blocks.end());
  CHECK(static_cast<double>(mx) / static_cast<double>(blocks[8]) >= 4.0);
}

TEST_CASE("allocator is safe and within twice the live-set bound") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<BufferRequest> reqs;
    const int steps = 2 + rng.uniform_int(20);
    const int count = 1 + rng.uniform_int(25);
    for (int i = 0; i < count; ++i) {
      const int first = rng.uniform_int(steps);
      reqs.push_back({1 + rng.uniform_int(2000), first, first + rng.uniform_int(steps - first)});
    }
    const auto a = allocate(reqs);
    CHECK(allocation_is_safe(reqs, a));
    CHECK(a.arena_size >= max_live_bytes(reqs));
  }
  for (int trial = 0; trial < 200; ++trial) {
    const Graph g = testing::random_net(rng);
    const auto plan = plan_memory(g);
    std::vector<BufferRequest> reqs;
    for (const auto& b : plan.buffers) reqs.push_back(b.request);
    const int64_t bound = max_live_bytes(reqs);
    CHECK(plan.arena_size >= bound);
    CHECK(plan.arena_size <= 2 * bound);
  }
}

TEST_CASE("planned arena includes the im2col scratch") {
  GraphBuilder b(Shape{8, 8, 16});
  b.conv(kGraphInput, 4, 3, 1, true);
  const auto plan = plan_memory(std::move(b).finish());
  CHECK(plan.arena_size == 8 * 8 * 16 + 8 * 8 * 4 + 9 * 16);
}

}  // namespace
}  // namespace tinyplan
