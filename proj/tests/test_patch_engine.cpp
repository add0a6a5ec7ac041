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

#include "patch_oracle.hpp"
#include "test_util.hpp"
#include "tinyplan/backbone.hpp"
#include "tinyplan/memory_planner.hpp"
#include "tinyplan/patch_engine.hpp"

namespace tinyplan {
namespace {

TEST_CASE("backtrace through 1x1 layers is the identity") {
  GraphBuilder b(Shape{9, 9, 3});
  const int a = b.conv(kGraphInput, 8, 1, 1, true);
  b.conv(a, 4, 1, 1, false);
  const Graph g = std::move(b).finish();
  const Region r{2, 3, 4, 5};
  CHECK(backtrace_region(g, validate(g), 1, r) == r);
}

TEST_CASE("backtrace through k3 s1 then k3 s2 needs 5x5") {
  GraphBuilder b(Shape{16, 16, 2});
  const int a = b.conv(kGraphInput, 4, 3, 1, true);
  b.conv(a, 4, 3, 2, true);
  const Graph g = std::move(b).finish();
  const auto shapes = validate(g);
  const Region in = backtrace_region(g, shapes, 1, {3, 3, 1, 1});
  CHECK(in.height == 5);
  CHECK(in.width == 5);
  CHECK(testing::oracle_patch(g, shapes, 1, {3, 3, 1, 1}).boxes[0] == in);
}

TEST_CASE("MobileNetV2 prefix at 224 with 4x4 patches reads 75x75 input patches") {
  const Graph g = build_backbone(BackboneConfig::mobilenet_v2(224), {false, 0});
  const int n = cut_after_block(g, 4);
  const auto plan = build_patch_plan(g, 4, n);
  CHECK(plan.cut_shape == Shape{28, 28, 32});
  CHECK(plan.input_patch.height == 75);
  CHECK(plan.input_patch.width == 75);
}

TEST_CASE("patch regions match brute-force dependency marking") {
  Rng rng(14);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const Graph g = testing::random_net(rng);
    const auto shapes = validate(g);
    for (const auto& plan : enumerate_plans(g)) {
      if (plan.p == 1) continue;
      for (size_t t = 0; t < plan.tiles.size(); ++t) {
        const auto o = testing::oracle_patch(g, shapes, plan.n - 1, plan.tiles[t]);
        for (int id = kGraphInput; id < plan.n; ++id) {
          CHECK(plan.regions[t][static_cast<size_t>(id) + 1] == o.boxes[static_cast<size_t>(id) + 1]);
        }
      }
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("overhead MACs equal a brute-force count") {
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const Graph g = testing::random_net(rng);
    const auto shapes = validate(g);
    for (const auto& plan : enumerate_plans(g)) {
      if (plan.p == 1) {
        CHECK(plan.overhead_macs == 0);
        continue;
      }
      int64_t patch = 0;
      for (const auto& tile : plan.tiles) patch += testing::oracle_patch(g, shapes, plan.n - 1, tile).macs;
      CHECK(plan.overhead_macs == patch - testing::oracle_prefix_macs(g, shapes, plan.n));
    }
  }
}

TEST_CASE("patched execution is byte identical to per-layer execution") {
  Rng rng(16);
  for (int trial = 0; trial < 15; ++trial) {
    const Graph g = testing::random_quantized_net(rng);
    const auto x = testing::random_quant(g.input, g.input_scale, rng);
    const auto expect = run_int8(g, x);
    for (const auto& plan : enumerate_plans(g)) CHECK(run_patched(g, x, plan) == expect);
  }
}

TEST_CASE("plan construction errors") {
  GraphBuilder b(Shape{10, 10, 3});
  const int a = b.conv(kGraphInput, 8, 3, 1, true);
  const int c = b.conv(a, 8, 3, 1, true);
  const int d = b.add(a, c);
  b.conv(d, 4, 1, 1, false);
  const Graph g = std::move(b).finish();
  CHECK_THROWS_AS(build_patch_plan(g, 3, 1), Error);  // 10 % 3
  CHECK_THROWS_AS(build_patch_plan(g, 2, 4), Error);  // n >= depth
  CHECK_THROWS_WITH_AS(build_patch_plan(g, 2, 2), doctest::Contains("still read"), Error);  // node 0 feeds the Add
  CHECK_NOTHROW(build_patch_plan(g, 2, 3));
  CHECK_THROWS_AS(build_patch_plan(g, 2, 0), Error);
}

TEST_CASE("search_pn") {
  const Graph g = build_backbone(BackboneConfig::mobilenet_v2(128, 0.5), {false, 0});
  const int64_t per_layer = analytic_profile(g).peak;

  auto open = search_pn(g, per_layer);
  REQUIRE(open.feasible);
  CHECK(open.plan.p == 1);
  CHECK(open.plan.n == 0);

  CHECK_FALSE(search_pn(g, 0).feasible);
  CHECK_FALSE(search_pn(g, 100).feasible);

  // a limit between the later-stage peak and the prefix peak forces patching
  const auto plans = enumerate_plans(g);
  int64_t min_peak = per_layer;
  for (const auto& p : plans) min_peak = std::min(min_peak, p.peak);
  REQUIRE(min_peak * 2 < per_layer);
  const int64_t limit = (min_peak + per_layer) / 2;
  const auto r = search_pn(g, limit);
  REQUIRE(r.feasible);
  CHECK(r.plan.p > 1);
  CHECK(r.plan.peak <= limit);
  CHECK(r.plan.n > cut_after_block(g, 0));

  // exhaustive enumeration through the public builder
  int64_t best = -1;
  int bp = 0, bn = 0;
  for (int p = 1; p <= 4; ++p) {
    for (int n = 0; n < static_cast<int>(g.nodes.size()); ++n) {
      PatchPlan plan;
      try {
        plan = build_patch_plan(g, p, n);
      } catch (const Error&) {
        continue;
      }
      if (plan.peak > limit) continue;
      if (best < 0 || plan.total_macs < best) best = plan.total_macs, bp = p, bn = n;
    }
  }
  CHECK(r.plan.total_macs == best);
  CHECK(r.plan.p == bp);
  CHECK(r.plan.n == bn);
}

TEST_CASE("overhead grows with the patch stage depth") {
  const Graph g = build_backbone(BackboneConfig::mobilenet_v2(128, 0.5), {false, 0});
  const auto shapes = validate(g);
  for (int p = 2; p <= 4; ++p) {
    int64_t prev = 0;
    for (int block = 0; block <= 6; ++block) {
      const int n = cut_after_block(g, block);
      const Shape& s = shapes.of(n - 1);
      if (s[0] % p != 0) continue;
      const auto plan = build_patch_plan(g, p, n);
      CHECK(plan.overhead_macs >= prev);
      prev = plan.overhead_macs;
    }
  }
}

TEST_CASE("receptive-field redistribution lowers the overhead") {
  auto cfg = BackboneConfig::mobilenet_v2(224);
  const Graph original = build_backbone(cfg, {false, 0});
  for (int s = 0; s < 3; ++s) {
    for (auto& b : cfg.stages[static_cast<size_t>(s)].blocks) b.kernel = 3;
  }
  cfg.stem_kernel = 3;
  auto rd = cfg;
  // smaller receptive field in the patch stage: 1x1 stem, drop a stride-1 block
  rd.stem_kernel = 1;
  rd.stages[2].blocks.pop_back();
  rd.stages[5].blocks.push_back(rd.stages[5].blocks.back());
  const Graph redistributed = build_backbone(rd, {false, 0});
  const auto report = compare_redistribution(original, 4, redistributed, 4, 4);
  CHECK(report.improves);
  CHECK(report.redistributed.input_patch.height < report.original.input_patch.height);
}

}  // namespace
}  // namespace tinyplan
