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
#include <cmath>

#include "search_oracle.hpp"
#include "test_util.hpp"
#include "tinyplan/backbone.hpp"
#include "tinyplan/update_search.hpp"

namespace tinyplan {
namespace {

using testing::exhaustive_optimum;
using testing::synthetic_table;

Graph single_pointwise() {
  GraphBuilder b(Shape{8, 8, 16});
  const int x = b.conv(kGraphInput, 32, 1, 1, true);
  b.linear(b.avg_pool(x, 0, 1), 4);
  Graph g = std::move(b).finish();
  init_weights(g, 3);
  return g;
}

std::vector<double> all_ratios() { return {std::begin(kRatios), std::end(kRatios)}; }

int64_t midway_constraint(const SchemeCostModel& m) {
  const int64_t lo = m.cost(UpdateScheme{}).total;
  const int64_t hi = m.cost(full_scheme(m.graph())).total;
  return lo + (hi - lo) / 2;
}

TEST_CASE("cost of a quarter-ratio 1x1 conv") {
  const Graph g = single_pointwise();
  UpdateScheme s{1, {{0, 0.25}}};
  const SchemeCost c = scheme_memory_cost(g, s);
  CHECK(c.activation_bytes == 8 * 8 * 16);
  CHECK(c.weight_copy_bytes == 16 * 32 / 4);
  CHECK(c.bias_copy_bytes == 4 * 32);
  CHECK(c.bias_grad_bytes == 4 * 32);
}

TEST_CASE("classifier-only cost is the classifier's activations and parameters") {
  const Graph g = single_pointwise();
  const SchemeCost c = scheme_memory_cost(g, UpdateScheme{});
  CHECK(c.activation_bytes == 0);
  CHECK(c.weight_copy_bytes == 0);
  CHECK(c.bias_copy_bytes == 0);
  CHECK(c.mask_bytes == 0);
  CHECK(c.classifier_bytes == 32 + 4 + 4 * (32 * 4 + 4));
  CHECK(c.total >= c.classifier_bytes);
}

TEST_CASE("adding a layer or raising its ratio never lowers the cost") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const Graph g = trial < 5 ? toy_cnn(2, static_cast<uint64_t>(trial)) : testing::random_quantized_net(rng);
    const SchemeCostModel m(g);
    const auto layers = trainable_layers(g);
    const UpdateScheme s = testing::random_scheme(g, rng);
    const int64_t base = m.cost(s).total;
    for (size_t i = layers.size() - static_cast<size_t>(s.bias_k); i < layers.size(); ++i) {
      UpdateScheme t = s;
      const double r = t.ratio_of(layers[i]);
      if (r == 1.0) continue;
      t.weights.erase(std::remove_if(t.weights.begin(), t.weights.end(), [&](const WeightUpdate& w) { return w.layer == layers[i]; }), t.weights.end());
      t.weights.push_back({layers[i], r == 0.0 ? 0.125 : std::min(1.0, 2 * r)});
      std::sort(t.weights.begin(), t.weights.end(), [](const auto& a, const auto& b) { return a.layer < b.layer; });
      CHECK(m.cost(t).total >= base);
    }
  }
}

TEST_CASE("analytic cost tracks the traced reordered peak within 10%") {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const Graph g = trial < 8 ? toy_cnn(2, static_cast<uint64_t>(trial)) : testing::random_quantized_net(rng);
    const SchemeCostModel m(g);
    for (int i = 0; i < 8; ++i) {
      const UpdateScheme s = testing::random_scheme(g, rng);
      const double traced = static_cast<double>(trace_memory(reorder_inplace(g, compile_backward(g, s))).peak);
      worst = std::max(worst, std::fabs(static_cast<double>(m.cost(s).total) - traced) / traced);
    }
  }
  MESSAGE("worst relative gap " << worst);
  CHECK(worst <= 0.10);
}

TEST_CASE("objective sums the table entries") {
  const Graph g = toy_cnn(2, 0);
  const auto t = synthetic_table(g, {0.25, 1.0}, 4);
  int seen = 0;
  testing::for_each_scheme(t, [&](const UpdateScheme& s, double v) {
    if (++seen % 37 == 0) CHECK(scheme_objective(t, s) == doctest::Approx(v).epsilon(1e-12));
  });
  CHECK(seen == 1 + 3 + 9 + 27 + 81 + 243 + 729);
  CHECK_THROWS_AS(scheme_objective(t, UpdateScheme{6, {{t.layers[5], 0.5}}}), Error);
}

TEST_CASE("evolution matches exhaustive enumeration on the six-layer toy net") {
  const Graph g = toy_cnn(2, 0);
  const SchemeCostModel m(g);
  const int64_t limit = midway_constraint(m);
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const auto t = synthetic_table(g, {0.25, 1.0}, seed);
    const auto best = exhaustive_optimum(t, m, limit);
    EvolutionOptions o;
    o.seed = seed;
    const auto r = evolve_scheme(t, m, limit, o);
    CHECK(r.cost <= limit);
    CHECK(r.objective == doctest::Approx(best.objective).epsilon(1e-12));
  }
}

TEST_CASE("unconstrained search returns the table-wise argmax") {
  const Graph g = toy_cnn(2, 1);
  const SchemeCostModel m(g);
  const auto t = synthetic_table(g, all_ratios(), 9);
  double argmax = -1e300;
  for (int k = 0; k <= t.depth(); ++k) {
    double v = t.bias_gain[static_cast<size_t>(k)];
    for (int i = t.depth() - k; i < t.depth(); ++i) {
      const auto& row = t.weight_gain[static_cast<size_t>(i)];
      v += std::max(0.0, *std::max_element(row.begin(), row.end()));
    }
    argmax = std::max(argmax, v);
  }
  const auto r = evolve_scheme(t, m, kNoLimit);
  CHECK(r.objective == doctest::Approx(argmax).epsilon(1e-12));
}

TEST_CASE("scheme search is deterministic and keeps a monotone best") {
  const Graph g = toy_cnn(2, 2);
  const SchemeCostModel m(g);
  const auto t = synthetic_table(g, all_ratios(), 1);
  EvolutionOptions o;
  o.seed = 17;
  o.generations = 10;
  const auto a = evolve_scheme(t, m, midway_constraint(m), o);
  const auto b = evolve_scheme(t, m, midway_constraint(m), o);
  CHECK(a.scheme == b.scheme);
  CHECK(a.best_per_generation == b.best_per_generation);
  CHECK(std::is_sorted(a.best_per_generation.begin(), a.best_per_generation.end()));
  CHECK(a.evaluations == o.population + o.generations * (o.crossovers + o.mutations));
  const auto r1 = random_search(t, m, midway_constraint(m), 500, 3);
  const auto r2 = random_search(t, m, midway_constraint(m), 500, 3);
  CHECK(r1.scheme == r2.scheme);
}

TEST_CASE("evolution beats random search on a deep backbone") {
  BuildOptions bo;
  bo.with_weights = false;
  const Graph g = build_backbone(BackboneConfig::mobilenet_v2(64, 0.35, 10), bo);
  const SchemeCostModel m(g);
  const int64_t limit = m.cost(UpdateScheme{}).total + (m.cost(full_scheme(g)).total - m.cost(UpdateScheme{}).total) / 4;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const auto t = synthetic_table(g, all_ratios(), 100 + seed);
    EvolutionOptions o;
    o.seed = seed;
    const auto evo = evolve_scheme(t, m, limit, o);
    const auto rnd = random_search(t, m, limit, evo.evaluations, seed);
    CHECK(evo.objective >= rnd.objective);
  }
}

TEST_CASE("an infeasible constraint is rejected") {
  const Graph g = toy_cnn(2, 0);
  const SchemeCostModel m(g);
  const auto t = synthetic_table(g, {1.0}, 0);
  CHECK_THROWS_AS(evolve_scheme(t, m, m.cost(UpdateScheme{}).total - 1), Error);
  CHECK_NOTHROW(evolve_scheme(t, m, m.cost(UpdateScheme{}).total, EvolutionOptions{.generations = 1}));
}

TEST_CASE("contribution analysis on a small transfer split") {
  const Graph g = toy_cnn(2, 4);
  const Dataset data = synthetic_dataset({"diagonal", 8, 160, 0.3, 8});
  ContributionOptions o;
  o.config.epochs = 1;
  o.mode = TrainMode::kInt8QAS;
  o.ratios = {0.5, 1.0};
  o.dataset_name = "diagonal";
  Graph q = g;
  {
    Rng rng(4);
    testing::quantize_random(q, rng, 4);
  }
  CHECK_THROWS_WITH_AS(contribution_analysis(q, data.head(120), data.tail(120), o), doctest::Contains("at least 50"), Error);

  const auto t = contribution_analysis(q, data.head(96), data.tail(96), o);
  REQUIRE(t.depth() == 6);
  CHECK(t.bias_gain.size() == 7);
  CHECK(t.bias_gain[0] == 0.0);
  CHECK(t.weight_gain.size() == 6);
  for (const auto& row : t.weight_gain) CHECK(row.size() == 2);
  CHECK(t.mode == "int8_qas");
  const auto again = contribution_analysis(q, data.head(96), data.tail(96), o);
  CHECK(again.weight_gain == t.weight_gain);

  const auto back = table_from_json(table_to_json(t));
  CHECK(back.bias_gain == t.bias_gain);
  CHECK(back.weight_gain == t.weight_gain);
  CHECK(back.dataset == "diagonal");
  CHECK_THROWS_AS(table_from_json("{\"layers\": [1]}"), IoError);
}

}  // namespace
}  // namespace tinyplan
