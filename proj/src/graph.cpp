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
#include "tinyplan/graph.hpp"

#include <cmath>
#include <string>

#include "tinyplan/rng.hpp"

namespace tinyplan {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConv2D: return "conv2d";
    case OpKind::kDepthwiseConv2D: return "depthwise_conv2d";
    case OpKind::kLinear: return "linear";
    case OpKind::kAdd: return "add";
    case OpKind::kAvgPool: return "avg_pool";
  }
  return "?";
}

std::optional<OpKind> parse_op_name(const std::string& name) {
  for (OpKind k : {OpKind::kConv2D, OpKind::kDepthwiseConv2D, OpKind::kLinear, OpKind::kAdd, OpKind::kAvgPool}) {
    if (name == op_name(k)) return k;
  }
  return std::nullopt;
}

bool Graph::quantized() const {
  if (input_scale <= 0.0f) return false;
  for (const auto& n : nodes) {
    if (n.out_scale <= 0.0f) return false;
    if (n.parametric() && !n.fp32 && n.qweight.empty()) return false;
  }
  return true;
}

bool Graph::has_weights() const {
  for (const auto& n : nodes) {
    if (n.parametric() && n.weight.empty()) return false;
  }
  return true;
}

int windowed_out_size(int in, int kernel, int stride, Padding padding) {
  const int pad = padding == Padding::kSame ? (kernel - 1) / 2 : 0;
  const int span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace {

[[noreturn]] void fail(const LayerNode& n, const std::string& what) {
  throw Error("node " + std::to_string(n.id) + " (" + op_name(n.kind) + "): " + what);
}

bool is_odd_kernel(int k) { return k == 1 || k == 3 || k == 5 || k == 7; }

}  // namespace

ShapeTable validate(const Graph& graph) {
  if (graph.input.rank() != 3) throw Error("graph input must be rank 3 (H, W, C), got " + graph.input.str());
  if (graph.nodes.empty()) throw Error("graph has no nodes");
  ShapeTable table{graph.input, {}};
  table.outputs.reserve(graph.nodes.size());
  std::vector<int> uses(graph.nodes.size(), 0);

  for (size_t idx = 0; idx < graph.nodes.size(); ++idx) {
    const LayerNode& n = graph.nodes[idx];
    if (n.id != static_cast<int>(idx)) fail(n, "node ids must equal their topological position " + std::to_string(idx));
    for (int p : n.preds) {
      if (p == n.id) fail(n, "self loop");
      if (p != kGraphInput && (p < 0 || p >= n.id)) fail(n, "predecessor " + std::to_string(p) + " breaks topological order (cycle or dangling edge)");
      if (p != kGraphInput) ++uses[static_cast<size_t>(p)];
    }
    const auto& a = n.attrs;
    const size_t expected_preds = n.kind == OpKind::kAdd ? 2 : 1;
    if (n.preds.size() != expected_preds) fail(n, "expected " + std::to_string(expected_preds) + " predecessor(s), got " + std::to_string(n.preds.size()));
    const Shape& in = table.of(n.preds[0]);
    if (in.rank() != 3) fail(n, "input must be rank 3");
    const int h = in[0], w = in[1], c = in[2];

    auto check_params = [&](const Shape& wshape) {
      if (!n.weight.empty() && n.weight.shape() != wshape) fail(n, "weight shape " + n.weight.shape().str() + " != expected " + wshape.str());
      if (!n.bias.empty() && n.bias.shape() != Shape{a.out_channels}) fail(n, "bias shape " + n.bias.shape().str() + " != [" + std::to_string(a.out_channels) + "]");
      if (!n.qweight.empty() && n.qweight.shape() != wshape) fail(n, "quantized weight shape mismatch");
      if (!n.qbias.empty() && n.qbias.shape() != Shape{a.out_channels}) fail(n, "quantized bias shape mismatch");
      if (!n.qweight.empty() && n.qweight.scale().size() != 1 && static_cast<int>(n.qweight.scale().size()) != a.out_channels) fail(n, "weight scale length mismatch");
    };

    switch (n.kind) {
      case OpKind::kConv2D:
      case OpKind::kDepthwiseConv2D: {
        if (!is_odd_kernel(a.kernel)) fail(n, "kernel must be one of 1, 3, 5, 7");
        if (a.stride != 1 && a.stride != 2) fail(n, "stride must be 1 or 2");
        if (a.in_channels != c) fail(n, "in_channels " + std::to_string(a.in_channels) + " != input channels " + std::to_string(c));
        if (a.out_channels < 1 || a.groups < 1) fail(n, "channel counts must be positive");
        if (n.kind == OpKind::kDepthwiseConv2D && (a.groups != a.in_channels || a.out_channels != a.in_channels)) {
          fail(n, "depthwise requires groups == in_channels == out_channels (groups=" + std::to_string(a.groups) + ", channels=" + std::to_string(a.in_channels) + ")");
        }
        if (n.kind == OpKind::kConv2D && a.groups != 1) fail(n, "grouped conv2d is only supported as depthwise");
        const int oh = windowed_out_size(h, a.kernel, a.stride, a.padding);
        const int ow = windowed_out_size(w, a.kernel, a.stride, a.padding);
        if (oh < 1 || ow < 1) fail(n, "kernel larger than padded input");
        // max |sum| = 127 * 127 * k^2 * C_in/groups must fit a signed 32-bit accumulator
        const int64_t worst = int64_t{127} * 127 * a.kernel * a.kernel * (a.in_channels / a.groups);
        if (worst >= (int64_t{1} << 31)) fail(n, "int32 accumulator may overflow (" + std::to_string(worst) + ")");
        check_params(Shape{a.kernel, a.kernel, a.in_channels / a.groups, a.out_channels});
        table.outputs.push_back(Shape{oh, ow, a.out_channels});
        break;
      }
      case OpKind::kLinear: {
        const int features = static_cast<int>(in.elements());
        if (a.in_channels != features) fail(n, "in_features " + std::to_string(a.in_channels) + " != flattened input " + std::to_string(features));
        if (a.out_channels < 1) fail(n, "out_features must be positive");
        if (int64_t{127} * 127 * features >= (int64_t{1} << 31)) fail(n, "int32 accumulator may overflow");
        check_params(Shape{1, 1, a.in_channels, a.out_channels});
        table.outputs.push_back(Shape{1, 1, a.out_channels});
        break;
      }
      case OpKind::kAdd: {
        const Shape& other = table.of(n.preds[1]);
        if (other != in) fail(n, "operand shapes differ: " + in.str() + " vs " + other.str());
        if (n.preds[0] == n.preds[1]) fail(n, "operands must be distinct tensors");
        table.outputs.push_back(in);
        break;
      }
      case OpKind::kAvgPool: {
        if (a.kernel == 0) {
          table.outputs.push_back(Shape{1, 1, c});
        } else {
          if (a.stride < 1) fail(n, "stride must be positive");
          const int oh = windowed_out_size(h, a.kernel, a.stride, Padding::kValid);
          const int ow = windowed_out_size(w, a.kernel, a.stride, Padding::kValid);
          if (oh < 1 || ow < 1) fail(n, "pool window larger than input");
          table.outputs.push_back(Shape{oh, ow, c});
        }
        break;
      }
    }
  }
  for (size_t i = 0; i + 1 < graph.nodes.size(); ++i) {
    if (uses[i] == 0) throw Error("node " + std::to_string(i) + " (" + op_name(graph.nodes[i].kind) + "): output is never consumed; graphs must have a single output");
  }
  return table;
}

int64_t node_macs(const LayerNode& n, const ShapeTable& shapes) {
  const auto& a = n.attrs;
  const Shape& out = shapes.of(n.id);
  switch (n.kind) {
    case OpKind::kConv2D:
    case OpKind::kDepthwiseConv2D:
      return int64_t{out[0]} * out[1] * a.kernel * a.kernel * (a.in_channels / a.groups) * a.out_channels;
    case OpKind::kLinear:
      return int64_t{a.in_channels} * a.out_channels;
    default:
      return 0;
  }
}

int64_t node_param_bytes(const LayerNode& n) {
  if (!n.parametric()) return 0;
  const auto& a = n.attrs;
  const int64_t weights = int64_t{a.kernel} * a.kernel * (a.in_channels / a.groups) * a.out_channels;
  const int64_t bias = a.out_channels;
  return n.fp32 ? 4 * (weights + bias) : weights + 4 * bias;
}

Cost count_flops_params(const Graph& graph) {
  const ShapeTable shapes = validate(graph);
  Cost c;
  for (const auto& n : graph.nodes) {
    c.macs += node_macs(n, shapes);
    c.param_bytes += node_param_bytes(n);
  }
  return c;
}

std::vector<std::vector<int>> consumers(const Graph& graph) {
  std::vector<std::vector<int>> out(graph.nodes.size() + 1);
  for (const auto& n : graph.nodes) {
    for (int p : n.preds) {
      auto& list = p == kGraphInput ? out.back() : out[static_cast<size_t>(p)];
      if (list.empty() || list.back() != n.id) list.push_back(n.id);
    }
  }
  return out;
}

// --- builder ---------------------------------------------------------------------

GraphBuilder::GraphBuilder(Shape input) {
  if (input.rank() != 3) throw Error("graph input must be (H, W, C)");
  graph_.input = std::move(input);
}

const Shape& GraphBuilder::shape_of(int id) const {
  return id == kGraphInput ? graph_.input : shapes_.at(static_cast<size_t>(id));
}

int GraphBuilder::push(LayerNode node, Shape out) {
  node.id = static_cast<int>(graph_.nodes.size());
  node.attrs.block = block_;
  graph_.nodes.push_back(std::move(node));
  shapes_.push_back(std::move(out));
  return graph_.nodes.back().id;
}

int GraphBuilder::conv(int pred, int out_channels, int kernel, int stride, bool relu6, Padding padding) {
  const Shape& in = shape_of(pred);
  LayerNode n;
  n.kind = OpKind::kConv2D;
  n.preds = {pred};
  n.attrs = {kernel, stride, padding, in[2], out_channels, 1, relu6, -1};
  Shape out{windowed_out_size(in[0], kernel, stride, padding), windowed_out_size(in[1], kernel, stride, padding), out_channels};
  return push(std::move(n), std::move(out));
}

int GraphBuilder::depthwise(int pred, int kernel, int stride, bool relu6, Padding padding) {
  const Shape& in = shape_of(pred);
  LayerNode n;
  n.kind = OpKind::kDepthwiseConv2D;
  n.preds = {pred};
  n.attrs = {kernel, stride, padding, in[2], in[2], in[2], relu6, -1};
  Shape out{windowed_out_size(in[0], kernel, stride, padding), windowed_out_size(in[1], kernel, stride, padding), in[2]};
  return push(std::move(n), std::move(out));
}

int GraphBuilder::linear(int pred, int out_features, bool fp32) {
  const Shape& in = shape_of(pred);
  LayerNode n;
  n.kind = OpKind::kLinear;
  n.preds = {pred};
  n.fp32 = fp32;
  n.attrs = {1, 1, Padding::kValid, static_cast<int>(in.elements()), out_features, 1, false, -1};
  return push(std::move(n), Shape{1, 1, out_features});
}

int GraphBuilder::add(int a, int b) {
  LayerNode n;
  n.kind = OpKind::kAdd;
  n.preds = {a, b};
  const Shape& in = shape_of(a);
  n.attrs = {1, 1, Padding::kValid, in[2], in[2], 1, false, -1};
  return push(std::move(n), in);
}

int GraphBuilder::avg_pool(int pred, int kernel, int stride) {
  const Shape& in = shape_of(pred);
  LayerNode n;
  n.kind = OpKind::kAvgPool;
  n.preds = {pred};
  n.attrs = {kernel, kernel == 0 ? 1 : stride, Padding::kValid, in[2], in[2], 1, false, -1};
  Shape out = kernel == 0 ? Shape{1, 1, in[2]}
                          : Shape{windowed_out_size(in[0], kernel, stride, Padding::kValid), windowed_out_size(in[1], kernel, stride, Padding::kValid), in[2]};
  return push(std::move(n), std::move(out));
}

Graph GraphBuilder::finish() && {
  validate(graph_);
  return std::move(graph_);
}

void init_weights(Graph& graph, uint64_t seed) {
  Rng rng(seed);
  for (auto& n : graph.nodes) {
    if (!n.parametric()) continue;
    const auto& a = n.attrs;
    const int fan_in = a.kernel * a.kernel * (a.in_channels / a.groups);
    const double bound = std::sqrt(6.0 / fan_in);
    Shape wshape{a.kernel, a.kernel, a.in_channels / a.groups, a.out_channels};
    std::vector<float> w(wshape.elements());
    for (float& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    std::vector<float> b(static_cast<size_t>(a.out_channels));
    for (float& v : b) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    n.weight = FloatTensor(std::move(wshape), std::move(w));
    n.bias = FloatTensor(Shape{a.out_channels}, std::move(b));
    n.qweight = {};
    n.qbias = {};
  }
}

}  // namespace tinyplan
