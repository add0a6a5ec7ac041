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
// Serial reference kernels vs the OpenMP kernels, per op kind and per model.
//
//   bench_kernels [--reps N] [--resolution R] [--width W] [--quick]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>

#include "CLI11.hpp"
#include "tinyplan/backbone.hpp"
#include "tinyplan/executor.hpp"
#include "tinyplan/kernels.hpp"
#include "tinyplan/patch_engine.hpp"
#include "tinyplan/rng.hpp"

namespace tinyplan {
namespace {

using kernels::QLayer;
using kernels::QView;

double best_ms(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

Graph quantized_backbone(int resolution, double width) {
  Graph g = build_backbone(BackboneConfig::mobilenet_v2(resolution, width));
  Rng rng(1);
  std::vector<FloatTensor> calib;
  for (int i = 0; i < 4; ++i) {
    FloatTensor t(g.input);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform());
    calib.push_back(std::move(t));
  }
  quantize_graph(g, calib);
  return g;
}

struct Row {
  double serial = 0.0, parallel = 0.0;
  int layers = 0;
  bool match = true;
};

}  // namespace
}  // namespace tinyplan

int main(int argc, char** argv) {
  using namespace tinyplan;
  int reps = 5, resolution = 160;
  double width = 0.5;
  bool quick = false;
  CLI::App app{"Serial reference vs OpenMP kernels"};
  app.add_option("--reps", reps);
  app.add_option("--resolution", resolution);
  app.add_option("--width", width);
  app.add_flag("--quick", quick, "Tiny model, one repetition (smoke run)");
  CLI11_PARSE(app, argc, argv);
  if (quick) {
    reps = 1;
    resolution = 48;
    width = 0.35;
  }

  const Graph g = quantized_backbone(resolution, width);
  const ShapeTable shapes = validate(g);
  const auto layers = prepare_layers(g, shapes);
  Rng rng(2);
  QuantTensor x(g.input, ScaleVector{g.input_scale});
  for (auto& v : x.data()) v = static_cast<int8_t>(rng.uniform_int(256) - 128);

  // every intermediate tensor, to feed each layer its real input
  std::map<int, std::vector<int8_t>> acts;
  acts[kGraphInput].assign(x.data().begin(), x.data().end());
  for (const auto& n : g.nodes) {
    const QLayer& l = layers[static_cast<size_t>(n.id)];
    std::vector<QView> in;
    for (int p : n.preds) {
      const Shape& s = shapes.of(p);
      in.push_back(QView::full(acts[p].data(), s[0], s[1], s[2]));
    }
    acts[n.id].resize(static_cast<size_t>(shapes.of(n.id).elements()));
    kernels::run_full(l, in, acts[n.id].data());
  }

  std::printf("model mobilenet_v2(%d, %.2f): %zu layers, %d threads, best of %d\n\n", resolution, width, g.nodes.size(), omp_get_max_threads(), reps);
  std::map<std::string, Row> rows;
  for (const auto& n : g.nodes) {
    const QLayer& l = layers[static_cast<size_t>(n.id)];
    std::vector<QView> in;
    for (int p : n.preds) {
      const Shape& s = shapes.of(p);
      in.push_back(QView::full(acts[p].data(), s[0], s[1], s[2]));
    }
    std::vector<int8_t> ref, out(acts[n.id].size());
    const auto& a = acts[n.preds[0]];
    const double ts = best_ms(reps, [&] {
      switch (n.kind) {
        case OpKind::kConv2D: ref = kernels::ref::conv(l, a); break;
        case OpKind::kDepthwiseConv2D: ref = kernels::ref::depthwise(l, a); break;
        case OpKind::kLinear: ref = kernels::ref::linear(l, a); break;
        case OpKind::kAdd: ref = kernels::ref::add(l, a, acts[n.preds[1]]); break;
        case OpKind::kAvgPool: ref = kernels::ref::avg_pool(l, a); break;
      }
    });
    const double tp = best_ms(reps, [&] { kernels::run_full(l, in, out.data()); });
    Row& r = rows[op_name(n.kind)];
    r.serial += ts;
    r.parallel += tp;
    ++r.layers;
    r.match = r.match && ref == out;
  }
  std::printf("%-16s %6s %12s %12s %8s %6s\n", "op", "layers", "serial ms", "openmp ms", "speedup", "equal");
  for (const auto& [name, r] : rows) {
    std::printf("%-16s %6d %12.3f %12.3f %8.2f %6s\n", name.c_str(), r.layers, r.serial, r.parallel, r.serial / std::max(r.parallel, 1e-9), r.match ? "yes" : "NO");
  }

  QuantTensor planned, direct, patched;
  const double t_planned = best_ms(reps, [&] { planned = run_int8(g, x, ExecMode::kPlanned); });
  const double t_direct = best_ms(reps, [&] { direct = run_int8(g, x, ExecMode::kDirect); });
  const auto pn = search_pn(g, analytic_profile(g).peak / 2);
  double t_patched = 0.0;
  if (pn.feasible) t_patched = best_ms(reps, [&] { patched = run_patched(g, x, pn.plan); });
  std::printf("\n%-28s %12s %6s\n", "whole model", "ms", "equal");
  std::printf("%-28s %12.3f %6s\n", "planned arena (serial)", t_planned, "ref");
  std::printf("%-28s %12.3f %6s\n", "direct (openmp)", t_direct, direct == planned ? "yes" : "NO");
  if (pn.feasible) {
    char label[64];
    std::snprintf(label, sizeof label, "patched p=%d n=%d (openmp)", pn.plan.p, pn.plan.n);
    std::printf("%-28s %12.3f %6s\n", label, t_patched, patched == planned ? "yes" : "NO");
  }
  bool ok = direct == planned && (!pn.feasible || patched == planned);
  for (const auto& [name, r] : rows) ok = ok && r.match;
  return ok ? 0 : 1;
}
