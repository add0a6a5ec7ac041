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

#include <cmath>

#include "test_util.hpp"
#include "tinyplan/executor.hpp"

namespace tinyplan {
namespace {

// Nested-loop fp32 oracle for conv / depthwise / linear / pool / add chains,
// written against the layout conventions only.
std::vector<double> oracle_layer(const Graph& g, const ShapeTable& shapes, int id, const std::vector<std::vector<double>>& vals,
                                 const std::vector<double>& input) {
  const LayerNode& n = g.node(id);
  auto value = [&](int t) -> const std::vector<double>& { return t == kGraphInput ? input : vals[static_cast<size_t>(t)]; };
  const Shape& is = shapes.of(n.preds[0]);
  const Shape& os = shapes.of(id);
  const auto& x = value(n.preds[0]);
  std::vector<double> y(os.elements(), 0.0);
  const int H = is[0], W = is[1], C = is[2], OH = os[0], OW = os[1], OC = os[2];
  const int k = n.attrs.kernel, s = n.attrs.stride, p = n.pad_before();
  auto in_at = [&](int yy, int xx, int c) { return (yy < 0 || xx < 0 || yy >= H || xx >= W) ? 0.0 : x[static_cast<size_t>((yy * W + xx) * C + c)]; };
  for (int oy = 0; oy < OH; ++oy) {
    for (int ox = 0; ox < OW; ++ox) {
      for (int oc = 0; oc < OC; ++oc) {
        double acc = 0.0;
        switch (n.kind) {
          case OpKind::kConv2D:
            acc = n.bias[static_cast<size_t>(oc)];
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx)
                for (int ic = 0; ic < C; ++ic)
                  acc += in_at(oy * s - p + ky, ox * s - p + kx, ic) * n.weight[static_cast<size_t>(((ky * k + kx) * C + ic) * OC + oc)];
            break;
          case OpKind::kDepthwiseConv2D:
            acc = n.bias[static_cast<size_t>(oc)];
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) acc += in_at(oy * s - p + ky, ox * s - p + kx, oc) * n.weight[static_cast<size_t>((ky * k + kx) * OC + oc)];
            break;
          case OpKind::kLinear:
            acc = n.bias[static_cast<size_t>(oc)];
            for (int i = 0; i < C; ++i) acc += x[static_cast<size_t>(i)] * n.weight[static_cast<size_t>(i * OC + oc)];
            break;
          case OpKind::kAdd:
            acc = x[static_cast<size_t>((oy * OW + ox) * OC + oc)] + value(n.preds[1])[static_cast<size_t>((oy * OW + ox) * OC + oc)];
            break;
          case OpKind::kAvgPool: {
            const int kk = k == 0 ? H : k;
            const int kw = k == 0 ? W : k;
            for (int ky = 0; ky < kk; ++ky)
              for (int kx = 0; kx < kw; ++kx) acc += in_at(oy * s + ky, ox * s + kx, oc);
            acc /= kk * kw;
            break;
          }
        }
        if (n.attrs.relu6) acc = std::min(6.0, std::max(0.0, acc));
        y[static_cast<size_t>((oy * OW + ox) * OC + oc)] = acc;
      }
    }
  }
  return y;
}

TEST_CASE("fp32 executor: identity and zero weights") {
  GraphBuilder b(Shape{3, 3, 2});
  b.conv(kGraphInput, 2, 1, 1, false);
  Graph g = std::move(b).finish();
  g.nodes[0].weight = FloatTensor(Shape{1, 1, 2, 2}, {1, 0, 0, 1});
  g.nodes[0].bias = FloatTensor(Shape{2});
  Rng rng(1);
  const auto x = testing::random_float(g.input, rng);
  CHECK(run_fp32(g, x) == x);

  g.nodes[0].weight = FloatTensor(Shape{1, 1, 2, 2});
  g.nodes[0].bias = FloatTensor(Shape{2}, {0.5f, -0.25f});
  const auto y = run_fp32(g, x);
  for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == (i % 2 == 0 ? 0.5f : -0.25f));
}

TEST_CASE("fp32 executor matches a nested-loop oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = testing::random_net(rng, {.max_blocks = 3});
    const auto shapes = validate(g);
    const auto x = testing::random_float(g.input, rng);
    const auto got = run_fp32_all(g, x);
    std::vector<double> input(x.data().begin(), x.data().end());
    std::vector<std::vector<double>> vals;
    for (const auto& n : g.nodes) vals.push_back(oracle_layer(g, shapes, n.id, vals, input));
    for (size_t i = 0; i < vals.size(); ++i) {
      for (size_t j = 0; j < vals[i].size(); ++j) {
        CHECK(std::fabs(got[i][j] - vals[i][j]) <= 1e-5 * std::max(1.0, std::fabs(vals[i][j])));
      }
    }
  }
}

TEST_CASE("int8 executor: zero input and zero bias give zeros") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    Graph g = testing::random_quantized_net(rng);
    for (auto& n : g.nodes) {
      if (!n.parametric()) continue;
      std::fill(n.bias.data().begin(), n.bias.data().end(), 0.0f);
      if (!n.fp32) std::fill(n.qbias.data().begin(), n.qbias.data().end(), 0);
    }
    QuantTensor zero(g.input, ScaleVector{g.input_scale});
    const auto out = run_int8(g, zero);
    for (auto v : out.data()) CHECK(v == 0);
  }
}

// Lifts node `id` into a one-layer graph whose input is that node's (first) input.
Graph extract_layer(const Graph& g, const ShapeTable& shapes, int id) {
  Graph one;
  one.input = shapes.of(g.node(id).preds[0]);
  const int p = g.node(id).preds[0];
  one.input_scale = p == kGraphInput ? g.input_scale : g.node(p).out_scale;
  LayerNode n = g.node(id);
  n.id = 0;
  n.preds = {kGraphInput};
  one.nodes.push_back(std::move(n));
  return one;
}

TEST_CASE("int8 layer outputs stay within the rounding error bound of fp32") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    GraphBuilder b(Shape{8, 8, 3});
    const int a = b.conv(kGraphInput, 8, 3, 1, true);
    const int d = b.depthwise(a, 3, 2, true);
    b.conv(d, 6, 1, 1, false);
    Graph g = std::move(b).finish();
    init_weights(g, rng.next());
    testing::quantize_random(g, rng);
    const auto shapes = validate(g);

    QuantTensor x = quantize(testing::random_float(g.input, rng), ScaleVector{g.input_scale});
    for (const auto& n : g.nodes) {
      const Graph one = extract_layer(g, shapes, n.id);
      const auto yq = run_int8(one, x);
      const auto xf = dequantize(x);
      const auto yf = run_fp32(one, xf);
      // |y_int8 - y_fp32| <= sum_i |x_i| s_W/2 + s_W s_x/2 + s_y/2 per output element
      const int k = n.attrs.kernel, C = one.input[2], OC = shapes.of(n.id)[2];
      const int OW = shapes.of(n.id)[1];
      const double s_y = n.out_scale, s_x = one.input_scale;
      for (size_t i = 0; i < yf.size(); ++i) {
        const int oc = static_cast<int>(i % static_cast<size_t>(OC));
        const int ox = static_cast<int>((i / static_cast<size_t>(OC)) % static_cast<size_t>(OW));
        const int oy = static_cast<int>(i / static_cast<size_t>(OC * OW));
        const double s_w = n.qweight.scale().for_channel(oc);
        double abs_in = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int yy = oy * n.attrs.stride - n.pad_before() + ky, xx = ox * n.attrs.stride - n.pad_before() + kx;
            if (yy < 0 || xx < 0 || yy >= one.input[0] || xx >= one.input[1]) continue;
            if (n.kind == OpKind::kDepthwiseConv2D) {
              abs_in += std::fabs(xf[static_cast<size_t>((yy * one.input[1] + xx) * C + oc)]);
            } else {
              for (int c = 0; c < C; ++c) abs_in += std::fabs(xf[static_cast<size_t>((yy * one.input[1] + xx) * C + c)]);
            }
          }
        }
        const double bound = abs_in * s_w / 2 + s_w * s_x / 2 + s_y / 2 + 1e-6;
        const double got = yq[i] * s_y;
        // saturation at the int8 range is outside the bound's premise
        if (std::fabs(yf[i]) > 127 * s_y) continue;
        CHECK(std::fabs(got - yf[i]) <= bound);
      }
      x = yq;
    }
  }
}

TEST_CASE("planned and direct int8 execution are byte identical and deterministic") {
  Rng rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    const Graph g = testing::random_quantized_net(rng);
    const auto x = testing::random_quant(g.input, g.input_scale, rng);
    const auto planned = run_int8(g, x, ExecMode::kPlanned);
    CHECK(planned == run_int8(g, x, ExecMode::kDirect));
    CHECK(planned == run_int8(g, x, ExecMode::kPlanned));

    ExecutionContext ctx(g, plan_memory(g));
    CHECK(ctx.run(x) == planned);
    CHECK(ctx.run(x) == planned);
    CHECK(ctx.scratch_high_water() <= ctx.plan().im2col.m);
  }
}

TEST_CASE("int8 executor rejects bad inputs") {
  Rng rng(3);
  Graph g = testing::random_quantized_net(rng);
  CHECK_THROWS_AS(run_int8(g, testing::random_quant(Shape{2, 2, 1}, g.input_scale, rng)), Error);
  CHECK_THROWS_AS(run_int8(g, testing::random_quant(g.input, g.input_scale * 2, rng)), Error);
  g.nodes[0].out_scale = 0.0f;
  CHECK_THROWS_AS(run_int8(g, testing::random_quant(g.input, g.input_scale, rng)), Error);
}

}  // namespace
}  // namespace tinyplan
