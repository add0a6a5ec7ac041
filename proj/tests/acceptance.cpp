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
// Acceptance suite: one line per criterion.
//
//   acceptance [--only 3,8,15]
//
// Exit status is 0 when every criterion passes, or fails only where listed in
// kKnownFailures (and still fails there).

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <unistd.h>

#include "CLI11.hpp"
#include "arch_oracle.hpp"
#include "grad_oracle.hpp"
#include "patch_oracle.hpp"
#include "search_oracle.hpp"
#include "test_util.hpp"
#include "tinyplan/arch_search.hpp"
#include "tinyplan/backbone.hpp"
#include "tinyplan/codegen.hpp"
#include "tinyplan/kernels.hpp"
#include "tinyplan/memory_planner.hpp"
#include "tinyplan/patch_engine.hpp"
#include "tinyplan/tte.hpp"
#include "tinyplan/update_search.hpp"

namespace tinyplan {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// ---------------------------------------------------------------------------------------
// 1. first-layer memory constant

Outcome c1_first_layer() {
  GraphBuilder b(Shape{224, 224, 3});
  b.conv(kGraphInput, 32, 3, 2, true);
  const int64_t got = analytic_profile(std::move(b).finish()).layers[0].total;
  const int64_t expected = 539136;
  return {got == expected, fmt("measured %lld bytes = 3*224^2 + 32*112^2 (%.1f KiB); criterion literal %lld", static_cast<long long>(got), got / 1024.0,
                               static_cast<long long>(expected))};
}

// 2. patch exactness sweep

Outcome c2_patch_exactness() {
  Rng rng(2002);
  int64_t plans = 0, differing = 0;
  for (int net = 0; net < 200; ++net) {
    const Graph g = testing::random_quantized_net(rng);
    const auto x = testing::random_quant(g.input, g.input_scale, rng);
    const auto expect = run_int8(g, x);
    for (const auto& plan : enumerate_plans(g)) {
      if (plan.p < 2) continue;
      const auto got = run_patched(g, x, plan);
      ++plans;
      const auto a = got.data(), e = expect.data();
      for (size_t i = 0; i < a.size(); ++i) differing += a[i] != e[i];
    }
  }
  return {differing == 0 && plans > 0, fmt("200 nets, %lld (net, p, n) plans with p in {2,3,4}, %lld bytes differ", static_cast<long long>(plans),
                                          static_cast<long long>(differing))};
}

// 3. patch memory reduction

Outcome c3_patch_memory() {
  const Graph g = build_backbone(BackboneConfig::mobilenet_v2(128, 0.5), {false, 0});
  const int64_t per_layer = analytic_profile(g).peak;
  const auto plans = enumerate_plans(g);
  const auto best = *std::min_element(plans.begin(), plans.end(), [](const PatchPlan& a, const PatchPlan& b) { return a.peak < b.peak; });
  return {best.peak * 3 <= per_layer, fmt("mobilenet_v2(128, 0.5): per-layer peak %lld, best patch plan (p=%d, n=%d) %lld, %.2fx", static_cast<long long>(per_layer),
                                          best.p, best.n, static_cast<long long>(best.peak), static_cast<double>(per_layer) / best.peak)};
}

// 4. overhead accounting vs the pixel-marking oracle

Outcome c4_overhead() {
  Rng rng(4004);
  int triples = 0, mismatches = 0;
  while (triples < 100) {
    const Graph g = testing::random_net(rng);
    auto plans = enumerate_plans(g);
    std::erase_if(plans, [](const PatchPlan& p) { return p.p < 2; });
    if (plans.empty()) continue;
    const auto& plan = plans[static_cast<size_t>(rng.uniform_int(static_cast<int>(plans.size())))];
    const auto shapes = validate(g);
    int64_t patch = 0;
    for (const auto& tile : plan.tiles) patch += testing::oracle_patch(g, shapes, plan.n - 1, tile).macs;
    mismatches += plan.overhead_macs != patch - testing::oracle_prefix_macs(g, shapes, plan.n);
    ++triples;
  }
  return {mismatches == 0, fmt("%d random (net, p, n) triples, %d mismatches against brute-force MAC counting", triples, mismatches)};
}

// 5. receptive-field redistribution

Outcome c5_redistribution() {
  auto cfg = BackboneConfig::mobilenet_v2(224);
  for (int s = 0; s < 3; ++s) {
    for (auto& b : cfg.stages[static_cast<size_t>(s)].blocks) b.kernel = 3;
  }
  cfg.stem_kernel = 3;
  auto rd = cfg;
  rd.stem_kernel = 1;
  rd.stages[2].blocks.pop_back();
  rd.stages[5].blocks.push_back(rd.stages[5].blocks.back());
  const auto r = compare_redistribution(build_backbone(cfg, {false, 0}), 4, build_backbone(rd, {false, 0}), 4, 4);
  return {r.improves && r.redistributed.overhead_ratio() < r.original.overhead_ratio(),
          fmt("p=4: input patch %dx%d -> %dx%d, overhead %.1f%% -> %.1f%% of graph MACs", r.original.input_patch.height, r.original.input_patch.width,
              r.redistributed.input_patch.height, r.redistributed.input_patch.width, 100.0 * r.original.overhead_ratio(), 100.0 * r.redistributed.overhead_ratio())};
}

// 6. gradient correctness

Outcome c6_gradients() {
  Rng rng(6006);
  int checked = 0, skipped = 0, failed = 0;
  double worst = 0.0;
  for (int net = 0; net < 50; ++net) {
    const Graph g = testing::random_net(rng, testing::small_net_options());
    const FloatTensor x = testing::random_float(g.input, rng);
    const auto r = testing::finite_difference_check(g, x, rng.uniform_int(g.nodes.back().attrs.out_channels));
    checked += r.checked;
    skipped += r.skipped;
    failed += r.failed;
    worst = std::max(worst, r.max_rel_error);
  }
  return {failed == 0 && worst < 1e-4 && checked > 0,
          fmt("50 nets, %d parameters checked (%d at ReLU6 kinks skipped), %d failed, max relative error %.2e", checked, skipped, failed, worst)};
}

// 7. QAS identity

Outcome c7_qas_identity() {
  Rng rng(7007);
  double worst = 0.0;
  int channels = 0;
  for (int layer = 0; layer < 1000; ++layer) {
    const int cout = 1 + rng.uniform_int(16), per = 1 + rng.uniform_int(64);
    std::vector<float> w(static_cast<size_t>(cout * per));
    for (auto& v : w) v = static_cast<float>(rng.normal() * std::exp(rng.uniform(-5.0, 1.0)));
    const ScaleVector s = compute_scales(FloatTensor(Shape{per, cout}, w), ScaleMode::kPerChannel);
    const double s_x = rng.uniform(0.001, 1.0);
    std::vector<double> g(w.size()), gq(w.size());
    for (auto& v : g) v = rng.normal() * std::exp(rng.uniform(-8.0, 0.0));
    // gradient wrt the int8 values (chain rule through W = s_W * Wq), then QAS
    for (size_t e = 0; e < g.size(); ++e) gq[e] = g[e] * s.for_channel(static_cast<int>(e % static_cast<size_t>(cout)));
    qas_scale(gq, {}, s, s_x);
    for (int c = 0; c < cout; ++c) {
      double nw = 0, ng = 0, nwq = 0, ngq = 0;
      for (int i = 0; i < per; ++i) {
        const size_t e = static_cast<size_t>(i * cout + c);
        const double wq = w[e] / s.for_channel(c);
        nw += double(w[e]) * w[e];
        ng += g[e] * g[e];
        nwq += wq * wq;
        ngq += gq[e] * gq[e];
      }
      if (nw == 0.0) continue;
      const double real = std::sqrt(nw / ng), quant = std::sqrt(nwq / ngq);
      worst = std::max(worst, std::fabs(real - quant) / real);
      ++channels;
    }
  }
  return {worst < 1e-6, fmt("1000 layers (%d channels): max relative deviation of ||W||/||G|| %.2e", channels, worst)};
}

// 8. QAS training benefit

Outcome c8_qas_training() {
  const TransferTask t = make_transfer_task(0);
  TrainConfig c;
  c.epochs = 5;
  c.lr = 0.05;
  c.seed = 0;
  const UpdateScheme full = full_scheme(t.pretrained);
  double acc[3];
  const TrainMode modes[3] = {TrainMode::kReal, TrainMode::kInt8, TrainMode::kInt8QAS};
  for (int m = 0; m < 3; ++m) acc[m] = train(t.pretrained, full, modes[m], t.train, t.eval, c).eval.back().accuracy;
  return {acc[2] >= acc[1] + 1.0 && std::fabs(acc[2] - acc[0]) <= 2.0,
          fmt("toy transfer (seed 0, full update, 5 epochs): fp32 %.1f%%, int8 %.1f%%, int8+QAS %.1f%%", acc[0], acc[1], acc[2])};
}

// 9. pruning soundness and memory

Outcome c9_pruning() {
  Rng rng(9009);
  int compared = 0, unequal = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = testing::random_quantized_net(rng);
    const UpdateScheme s = testing::random_scheme(g, rng);
    const FloatTensor x = testing::random_float(g.input, rng);
    for (TrainMode mode : {TrainMode::kReal, TrainMode::kInt8QAS}) {
      const Trainer t(g, s, mode);
      const auto full = t.gradients(x, 0, derive_backward(g, full_scheme(g)));
      const BackwardGraph sparse = compile_backward(g, s);
      for (const auto& [key, v] : t.gradients(x, 0, sparse)) {
        const auto& ref = full.at(key);
        if (key.first == GradOpKind::kWeight) {
          const size_t cout = static_cast<size_t>(g.node(key.second).attrs.out_channels);
          for (int ch : sparse.slices[static_cast<size_t>(key.second)]) {
            for (size_t e = static_cast<size_t>(ch); e < v.size(); e += cout) unequal += std::memcmp(&v[e], &ref[e], sizeof(double)) != 0;
          }
        } else {
          unequal += std::memcmp(v.data(), ref.data(), v.size() * sizeof(double)) != 0;
        }
        ++compared;
      }
    }
  }
  const Graph g = toy_cnn();
  const auto layers = trainable_layers(g);
  const UpdateScheme sparse{6, {{layers[4], 0.25}, {layers[5], 0.5}}};
  const int64_t full_base = schedule_baseline(g, compile_backward(g, full_scheme(g))).peak;
  const int64_t full_re = reorder_inplace(g, compile_backward(g, full_scheme(g))).peak;
  const int64_t sp = reorder_inplace(g, compile_backward(g, sparse)).peak;
  return {unequal == 0 && compared > 0 && sp * 3 <= full_base,
          fmt("%d gradient tensors, %d unequal; toy net peak: sparse+reordered %lld B vs full %lld B (%.1fx; %.1fx vs full reordered)", compared, unequal,
              static_cast<long long>(sp), static_cast<long long>(full_base), static_cast<double>(full_base) / sp, static_cast<double>(full_re) / sp)};
}

// 10. reordering dominance

Outcome c10_reordering() {
  Rng rng(10010);
  int violations = 0, multi = 0, strict = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Graph g = trial % 2 ? toy_cnn() : testing::random_net(rng);
    const UpdateScheme s = testing::random_scheme(g, rng);
    const BackwardGraph bg = compile_backward(g, s);
    const int64_t re = reorder_inplace(g, bg).peak, base = schedule_baseline(g, bg).peak;
    violations += re > base;
    if (s.bias_k > 0) {
      ++multi;
      strict += re < base;
    }
  }
  return {violations == 0 && strict * 10 >= multi * 8,
          fmt("100 schemes: %d with reordered > baseline; strictly lower on %d of %d multi-layer schemes (%.0f%%)", violations, strict, multi,
              multi ? 100.0 * strict / multi : 0.0)};
}

// 11. scheme search optimality

Outcome c11_exhaustive() {
  const Graph g = toy_cnn(2, 0);
  const SchemeCostModel m(g);
  const int64_t lo = m.cost(UpdateScheme{}).total, hi = m.cost(full_scheme(g)).total;
  const int64_t limit = lo + (hi - lo) / 2;
  int matched = 0, schemes = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = testing::synthetic_table(g, {0.25, 1.0}, seed);
    const auto best = testing::exhaustive_optimum(t, m, limit);
    schemes = best.schemes;
    EvolutionOptions o;
    o.seed = seed;
    const auto r = evolve_scheme(t, m, limit, o);
    matched += r.cost <= limit && r.objective == best.objective;
  }
  return {matched == 10, fmt("6-layer toy net, ratios {1/4, 1}, %d schemes enumerated, limit %lld B: %d/10 seeds hit the optimum", schemes,
                             static_cast<long long>(limit), matched)};
}

// 12. evolution vs random search

Outcome c12_evolution_vs_random() {
  BuildOptions bo;
  bo.with_weights = false;
  const Graph g = build_backbone(BackboneConfig::mobilenet_v2(64, 0.35, 10), bo);
  const SchemeCostModel m(g);
  const int64_t lo = m.cost(UpdateScheme{}).total, hi = m.cost(full_scheme(g)).total;
  const int64_t limit = lo + (hi - lo) / 4;
  const std::vector<double> ratios(std::begin(kRatios), std::end(kRatios));
  int wins = 0;
  double gap = 0.0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = testing::synthetic_table(g, ratios, 100 + seed);
    EvolutionOptions o;
    o.seed = seed;
    const auto evo = evolve_scheme(t, m, limit, o);
    const auto rnd = random_search(t, m, limit, evo.evaluations, seed);
    wins += evo.objective >= rnd.objective;
    gap += evo.objective - rnd.objective;
  }
  return {wins >= 9, fmt("mobilenet_v2(64, 0.35), %zu trainable layers, equal budgets: evolution >= random on %d/10 seeds, mean margin %.2f points",
                         trainable_layers(g).size(), wins, gap / 10)};
}

// 13. contribution-proxy correlation

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = (i + j) / 2.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) { return pearson(ranks(x), ranks(y)); }

Outcome c13_contribution_correlation() {
  const uint64_t seed = 0;
  const TransferTask task = make_transfer_task(seed);
  ContributionOptions o;
  o.config.epochs = 5;
  o.config.lr = 0.05;
  o.config.seed = seed;
  const ContributionTable table = contribution_analysis(task.pretrained, task.train, task.eval, o);
  const auto layers = trainable_layers(task.pretrained);
  Rng rng(seed + 100);
  std::vector<UpdateScheme> schemes;
  for (int i = 0; i < 10; ++i) {
    UpdateScheme s;
    s.bias_k = rng.uniform_int(static_cast<int>(layers.size()) + 1);
    for (size_t l = layers.size() - static_cast<size_t>(s.bias_k); l < layers.size(); ++l) {
      if (rng.bernoulli(0.5)) s.weights.push_back({layers[l], o.ratios[static_cast<size_t>(rng.uniform_int(4))]});
    }
    schemes.push_back(s);
  }
  std::vector<double> proxy(schemes.size()), measured(schemes.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < schemes.size(); ++i) {
    proxy[i] = scheme_objective(table, schemes[i]);
    measured[i] = train(task.pretrained, schemes[i], o.mode, task.train, task.eval, o.config).eval.back().accuracy;
  }
  const double r = pearson(proxy, measured);
  // trends of the table itself, reported only
  std::vector<double> ratio_x, ratio_y, layer_x, layer_y;
  for (size_t ri = 0; ri < table.ratios.size(); ++ri) {
    double s = 0;
    for (const auto& row : table.weight_gain) s += row[ri];
    ratio_x.push_back(table.ratios[ri]);
    ratio_y.push_back(s / static_cast<double>(table.weight_gain.size()));
  }
  for (size_t li = 0; li < table.weight_gain.size(); ++li) {
    layer_x.push_back(static_cast<double>(li));
    layer_y.push_back(std::accumulate(table.weight_gain[li].begin(), table.weight_gain[li].end(), 0.0) / static_cast<double>(table.ratios.size()));
  }
  return {r > 0.5, fmt("10 retrained schemes: Pearson r = %.3f (info: Spearman of mean gain vs ratio %.2f, vs layer depth %.2f)", r, spearman(ratio_x, ratio_y),
                       spearman(layer_x, layer_y))};
}

// 14. space-optimization mechanics

Outcome c14_space_mechanics() {
  const KnobSpace s = testing::mid_space();
  const std::vector<SpaceConfig> configs{{1.0, 128}, {0.7, 96}};
  ArchConstraints c;
  c.sram = 48 * 1024;
  c.flash = 40 * 1024;
  const double a = testing::exhaustive_mean(s, configs[0], c), b = testing::exhaustive_mean(s, configs[1], c);
  const auto ranked = optimize_search_space(s, configs, c, 400, 3);
  const bool ranking_ok = ranked[0].config == (a > b ? configs[0] : configs[1]) && std::fabs(a - b) > 0.1 * std::max(a, b);
  bool monotone = true, exact = true;
  int64_t previous = std::numeric_limits<int64_t>::max();
  std::string trail;
  for (int64_t sram : {256 * 1024, 128 * 1024, 64 * 1024, 48 * 1024, 32 * 1024}) {
    ArchConstraints k;
    k.sram = sram;
    const auto r = joint_search(s, k);
    monotone = monotone && r.best.macs <= previous && r.best.peak <= sram;
    exact = exact && r.best.macs == testing::exhaustive_best(s, k).macs;
    previous = r.best.macs;
    trail += fmt("%s%.1fM", trail.empty() ? "" : " > ", r.best.macs / 1e6);
  }
  return {ranking_ok && monotone && exact, fmt("exhaustive means %.2fM vs %.2fM, ranked %s first; joint-search MACs over 256K..32K SRAM: %s (%s)", a / 1e6, b / 1e6,
                                              ranked[0].config == configs[0] ? "(1.0, 128)" : "(0.7, 96)", trail.c_str(),
                                              exact ? "all equal to exhaustive" : "differs from exhaustive")};
}

// 15. codegen differential

struct Compiled {
  bool ok = false;
  std::vector<int8_t> output;
};

Compiled compile_and_run(const EmittedProgram& prog, const std::vector<QuantTensor>& inputs, const std::filesystem::path& dir, const std::string& tag) {
  const auto src = dir / (tag + ".c"), bin = dir / tag, in = dir / (tag + ".in"), out = dir / (tag + ".out");
  std::ofstream(src) << prog.source;
  {
    std::ofstream f(in, std::ios::binary);
    for (const auto& x : inputs) f.write(reinterpret_cast<const char*>(x.data().data()), static_cast<std::streamsize>(x.data().size()));
  }
  const std::string cc = "cc -std=c99 -O1 -ffp-contract=off -Wall -Werror -pedantic -o " + bin.string() + " " + src.string();
  if (std::system(cc.c_str()) != 0) return {};
  if (std::system((bin.string() + " < " + in.string() + " > " + out.string()).c_str()) != 0) return {};
  std::ifstream f(out, std::ios::binary);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(f)), {});
  return {true, {bytes.begin(), bytes.end()}};
}

Outcome c15_codegen() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("tinyplan_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  Rng rng(15015);
  std::vector<Graph> nets;
  for (int i = 0; i < 50; ++i) nets.push_back(testing::random_quantized_net(rng));
  std::vector<uint64_t> seeds;
  for (int i = 0; i < 50; ++i) seeds.push_back(rng.next());
  int layer_ok = 0, patched_ok = 0, patched_total = 0, failures = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : layer_ok, patched_ok, patched_total, failures)
  for (int i = 0; i < 50; ++i) {
    const Graph& g = nets[static_cast<size_t>(i)];
    Rng r(seeds[static_cast<size_t>(i)]);
    std::vector<QuantTensor> xs;
    std::vector<int8_t> expect;
    for (int k = 0; k < 3; ++k) {
      xs.push_back(testing::random_quant(g.input, g.input_scale, r));
      const auto y = run_int8(g, xs.back());
      expect.insert(expect.end(), y.data().begin(), y.data().end());
    }
    CodegenOptions co;
    co.with_main = true;
    const auto per_layer = compile_and_run(emit_c_source(g, plan_memory(g), nullptr, co), xs, dir, "net" + std::to_string(i));
    if (per_layer.ok && per_layer.output == expect) ++layer_ok; else ++failures;
    auto plans = enumerate_plans(g);
    std::erase_if(plans, [](const PatchPlan& p) { return p.p < 2 || p.n == 0; });
    if (plans.empty()) continue;
    const auto& plan = plans[static_cast<size_t>(r.uniform_int(static_cast<int>(plans.size())))];
    std::vector<int8_t> patched_expect;
    for (const auto& x : xs) {
      const auto y = run_patched(g, x, plan);
      patched_expect.insert(patched_expect.end(), y.data().begin(), y.data().end());
    }
    ++patched_total;
    const auto patched = compile_and_run(emit_c_source(g, plan_memory(g), &plan, co), xs, dir, "patched" + std::to_string(i));
    if (patched.ok && patched.output == patched_expect && patched_expect == expect) ++patched_ok; else ++failures;
  }
  fs::remove_all(dir);
  return {failures == 0 && layer_ok == 50 && patched_total > 0,
          fmt("50 nets x 3 inputs: per-layer %d/50 byte-exact, patched %d/%d byte-exact (strict C99 build)", layer_ok, patched_ok, patched_total)};
}

// 16. in-place depthwise

Outcome c16_inplace_depthwise() {
  Rng rng(16016);
  int memory_ok = 0, output_ok = 0;
  for (int i = 0; i < 100; ++i) {
    const int h = 3 + rng.uniform_int(14), w = 3 + rng.uniform_int(14), c = 1 + rng.uniform_int(24);
    GraphBuilder b(Shape{h, w, c});
    b.depthwise(kGraphInput, rng.pick(std::vector<int>{1, 3, 5, 7}), 1, rng.bernoulli(0.5));
    Graph g = std::move(b).finish();
    init_weights(g, rng.next());
    testing::quantize_random(g, rng, 2);
    const int64_t n = int64_t{h} * w * c, plane = int64_t{h} * w;
    const auto plan = plan_memory(g);
    memory_ok += analytic_profile(g, {true}).peak == n + plane && analytic_profile(g, {false}).peak == 2 * n && plan.inplace(0) && plan.arena_size == n + plane;
    const auto x = testing::random_quant(g.input, g.input_scale, rng);
    output_ok += run_int8(g, x, ExecMode::kPlanned) == run_int8(g, x, ExecMode::kDirect);
  }
  return {memory_ok == 100 && output_ok == 100, fmt("100 random stride-1 depthwise layers: N + plane vs 2N reported on %d, in-place output byte-equal on %d", memory_ok, output_ok)};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "first-layer memory constant", c1_first_layer},
    {2, "patch exactness sweep", c2_patch_exactness},
    {3, "patch memory reduction", c3_patch_memory},
    {4, "overhead accounting", c4_overhead},
    {5, "redistribution benefit", c5_redistribution},
    {6, "gradient correctness", c6_gradients},
    {7, "QAS identity", c7_qas_identity},
    {8, "QAS training benefit", c8_qas_training},
    {9, "pruning soundness and memory", c9_pruning},
    {10, "reordering dominance", c10_reordering},
    {11, "scheme search optimality", c11_exhaustive},
    {12, "evolution vs random", c12_evolution_vs_random},
    {13, "contribution-proxy correlation", c13_contribution_correlation},
    {14, "space-optimization mechanics", c14_space_mechanics},
    {15, "codegen differential", c15_codegen},
    {16, "in-place depthwise", c16_inplace_depthwise},
};

// The literal 539,136 disagrees with 3*224^2 + 32*112^2 = 551,936 (539 KiB).
const std::set<int> kKnownFailures{1};

}  // namespace
}  // namespace tinyplan

int main(int argc, char** argv) {
  using namespace tinyplan;
  std::vector<int> only;
  CLI::App app{"Acceptance criteria, one line each"};
  app.add_option("--only", only, "Criterion numbers to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  int unexpected = 0;
  std::printf("acceptance: %d OpenMP threads\n", omp_get_max_threads());
  for (const auto& c : kCriteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool known = kKnownFailures.count(c.id) > 0;
    std::printf("[%s] %2d %-32s %s (%.1fs)%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                !o.pass && known ? " [known, documented]" : (o.pass && known ? " [known failure now passes]" : ""));
    std::fflush(stdout);
    if (o.pass == known) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
