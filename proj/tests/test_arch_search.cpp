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

#include <functional>

#include "arch_oracle.hpp"
#include "tinyplan/arch_search.hpp"
#include "tinyplan/memory_planner.hpp"

namespace tinyplan {
namespace {

using namespace testing;

TEST_CASE("genomes decode into the knob domain") {
  const KnobSpace s = KnobSpace::mnasnet_like();
  CHECK(space_configs().size() == 108);
  CHECK(genome_length(s) == 1 + 7 * (1 + 3 * 4));
  CHECK_FALSE(knob_domain_violation(decode_architecture(s, minimal_genome(s))).has_value());
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const ArchGenome g = random_genome(s, rng);
    CHECK(canonical_genome(s, g) == g);
    CHECK_FALSE(knob_domain_violation(decode_architecture(s, g)).has_value());
  }
  const BackboneConfig minimal = decode_architecture(s, minimal_genome(s));
  CHECK(minimal.resolution == 48);
  CHECK(minimal.num_blocks() == 14);
}

TEST_CASE("space ranking matches exhaustive means on two contrived configs") {
  const KnobSpace s = mid_space();
  // the larger space loses: none of its samples fit
  const std::vector<SpaceConfig> configs{{1.0, 128}, {0.7, 96}};
  ArchConstraints c;
  c.sram = 48 * 1024;
  c.flash = 40 * 1024;
  const double a = exhaustive_mean(s, configs[0], c);
  const double b = exhaustive_mean(s, configs[1], c);
  MESSAGE("exhaustive means " << a << " " << b);
  REQUIRE(std::fabs(a - b) > 0.1 * std::max(a, b));
  const auto ranked = optimize_search_space(s, configs, c, 400, 3);
  CHECK(ranked[0].config == (a > b ? configs[0] : configs[1]));
  for (const auto& r : ranked) CHECK(r.mean_macs == doctest::Approx(r.config == configs[0] ? a : b).epsilon(0.1));
  CHECK(optimize_search_space(s, configs, {}, 20, 3)[0].config == configs[0]);
}

TEST_CASE("space ranking without limits favors the largest space") {
  const KnobSpace s = small_space();
  const auto ranked = optimize_search_space(s, {{0.5, 64}, {1.0, 128}, {0.7, 96}}, {}, 5, 0);
  CHECK(ranked[0].config == SpaceConfig{1.0, 128});
  CHECK(ranked[2].config == SpaceConfig{0.5, 64});
  for (const auto& r : ranked) CHECK(r.satisfying == 5);
}

TEST_CASE("configs without satisfying samples rank last with mean zero") {
  const KnobSpace s = mid_space();
  ArchConstraints c;
  c.sram = 64 * 1024;
  c.patching = false;
  const auto ranked = optimize_search_space(s, {{1.0, 128}, {0.5, 64}}, c, 10, 0);
  CHECK(ranked[0].config == SpaceConfig{0.5, 64});
  CHECK(ranked[1].satisfying == 0);
  CHECK(ranked[1].mean_macs == 0.0);
  CHECK(cdf_csv(ranked).rfind("width,resolution,macs,cdf\n", 0) == 0);
}

TEST_CASE("space optimization is deterministic per seed") {
  const KnobSpace s = small_space();
  ArchConstraints c;
  c.sram = 64 * 1024;
  const auto a = optimize_search_space(s, space_configs(), c, 4, 9);
  const auto b = optimize_search_space(s, space_configs(), c, 4, 9);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].config == b[i].config);
    CHECK(a[i].satisfying_macs == b[i].satisfying_macs);
  }
}

TEST_CASE("joint search finds the exhaustive optimum on the tiny knob space") {
  const KnobSpace s = tiny_space();
  for (int64_t sram : {20000, 30000, 60000}) {
    ArchConstraints c;
    c.sram = sram;
    c.max_p = 2;
    const Best best = exhaustive_best(s, c);
    REQUIRE(best.feasible > 0);
    ArchSearchOptions o;
    o.generations = 5;
    const auto r = joint_search(s, c, o);
    CHECK(r.best.feasible);
    CHECK(r.best.macs == best.macs);
    CHECK(r.best.p <= 2);
  }
}

TEST_CASE("tightening SRAM never raises the joint-search MACs") {
  const KnobSpace s = mid_space();
  int64_t previous = std::numeric_limits<int64_t>::max();
  for (int64_t sram : {256 * 1024, 128 * 1024, 64 * 1024, 48 * 1024, 32 * 1024}) {
    ArchConstraints c;
    c.sram = sram;
    const auto r = joint_search(s, c);
    CHECK(r.best.peak <= sram);
    CHECK(r.best.macs <= previous);
    CHECK(r.best.macs == exhaustive_best(s, c).macs);
    previous = r.best.macs;
  }
}

TEST_CASE("joint search with room for only the minimal backbone returns it") {
  const KnobSpace s = small_space();
  const BackboneConfig minimal = decode_architecture(s, minimal_genome(s));
  const ArchCandidate m = evaluate_architecture(minimal, {});
  ArchConstraints c;
  c.flash = m.flash;
  c.sram = m.per_layer_peak;
  c.patching = false;
  ArchSearchOptions o;
  o.generations = 3;
  o.max_resample = 5;
  const auto r = joint_search(s, c, o);
  CHECK(r.best.config == minimal);
  c.sram = m.per_layer_peak - 1;
  CHECK_THROWS_WITH_AS(joint_search(s, c, o), doctest::Contains("infeasible"), Error);
}

TEST_CASE("joint search is deterministic and its best never regresses") {
  const KnobSpace s = small_space();
  ArchConstraints c;
  c.sram = 64 * 1024;
  ArchSearchOptions o;
  o.seed = 4;
  o.generations = 8;
  const auto a = joint_search(s, c, o);
  const auto b = joint_search(s, c, o);
  CHECK(a.best.config == b.best.config);
  CHECK(a.best_per_generation == b.best_per_generation);
  CHECK(std::is_sorted(a.best_per_generation.begin(), a.best_per_generation.end()));
}

TEST_CASE("patching strictly enlarges the feasible set on the imbalanced space") {
  KnobSpace s = KnobSpace::mnasnet_like();
  s.resolutions = {128, 160};
  s.width_multiplier = 0.5;
  ArchConstraints with;
  with.sram = 96 * 1024;
  ArchConstraints without = with;
  without.patching = false;
  Rng rng(2);
  int only_patched = 0;
  for (int i = 0; i < 60; ++i) {
    const BackboneConfig cfg = decode_architecture(s, random_genome(s, rng));
    const bool per_layer = evaluate_architecture(cfg, without).feasible;
    const bool patched = evaluate_architecture(cfg, with).feasible;
    if (per_layer) CHECK(patched);
    only_patched += patched && !per_layer;
  }
  CHECK(only_patched > 0);
}

}  // namespace
}  // namespace tinyplan
