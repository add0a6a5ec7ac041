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
#include "tinyplan/executor.hpp"

#include <algorithm>
#include <cmath>

#include "tinyplan/real_ops.hpp"

namespace tinyplan {

using kernels::QLayer;
using kernels::QView;

std::vector<FloatTensor> run_fp32_all(const Graph& graph, const FloatTensor& input) {
  const ShapeTable shapes = validate(graph);
  if (input.shape() != graph.input) throw Error("input shape " + input.shape().str() + " != graph input " + graph.input.str());
  if (!graph.has_weights()) throw Error("graph has no real-valued weights");
  std::vector<FloatTensor> out;
  out.reserve(graph.nodes.size());
  auto value = [&](int t) -> const FloatTensor& { return t == kGraphInput ? input : out[static_cast<size_t>(t)]; };
  for (const auto& n : graph.nodes) {
    const Shape& in_shape = shapes.of(n.preds[0]);
    FloatTensor y(shapes.of(n.id));
    const auto x = value(n.preds[0]).data();
    switch (n.kind) {
      case OpKind::kConv2D:
        real::conv_forward<float, float>(real::window_of(n), real::dims_of(in_shape), x, n.weight.data(), n.bias.data(), real::dims_of(y.shape()), y.data());
        break;
      case OpKind::kDepthwiseConv2D:
        real::depthwise_forward<float, float>(real::window_of(n), real::dims_of(in_shape), x, n.weight.data(), n.bias.data(), real::dims_of(y.shape()), y.data());
        break;
      case OpKind::kLinear:
        real::linear_forward<float, float>(n.attrs.in_channels, n.attrs.out_channels, x, n.weight.data(), n.bias.data(), y.data());
        break;
      case OpKind::kAdd: {
        const auto b = value(n.preds[1]).data();
        for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] + b[i];
        break;
      }
      case OpKind::kAvgPool:
        real::avg_pool_forward<float>(n.attrs.kernel, n.attrs.stride, real::dims_of(in_shape), x, real::dims_of(y.shape()), y.data());
        break;
    }
    if (n.attrs.relu6) real::relu6_inplace(y.data());
    out.push_back(std::move(y));
  }
  return out;
}

FloatTensor run_fp32(const Graph& graph, const FloatTensor& input) { return std::move(run_fp32_all(graph, input).back()); }

void requantize_weights(Graph& graph) {
  for (auto& n : graph.nodes) {
    if (!n.parametric() || n.fp32) continue;
    if (n.weight.empty()) throw Error("node " + std::to_string(n.id) + ": no real-valued weights to quantize");
    const float s_x = n.preds[0] == kGraphInput ? graph.input_scale : graph.node(n.preds[0]).out_scale;
    if (s_x <= 0.0f) throw Error("node " + std::to_string(n.id) + ": input activation scale unassigned");
    n.qweight = quantize(n.weight, compute_scales(n.weight, ScaleMode::kPerChannel));
    std::vector<int32_t> b(static_cast<size_t>(n.attrs.out_channels), 0);
    for (int c = 0; c < n.attrs.out_channels; ++c) {
      const double s = static_cast<double>(n.qweight.scale().for_channel(c)) * s_x;
      const double v = n.bias.empty() ? 0.0 : n.bias[static_cast<size_t>(c)];
      b[static_cast<size_t>(c)] = saturate_int32(round_half_even(v / s));
    }
    n.qbias = AccTensor(Shape{n.attrs.out_channels}, std::move(b));
  }
}

void quantize_graph(Graph& graph, std::span<const FloatTensor> calibration) {
  if (calibration.empty()) throw Error("calibration needs at least one input");
  std::vector<float> max_abs(graph.nodes.size(), 0.0f);
  float input_max = 0.0f;
  for (const auto& x : calibration) {
    for (float v : x.data()) input_max = std::max(input_max, std::fabs(v));
    const auto outs = run_fp32_all(graph, x);
    for (size_t i = 0; i < outs.size(); ++i) {
      for (float v : outs[i].data()) max_abs[i] = std::max(max_abs[i], std::fabs(v));
    }
  }
  auto to_scale = [](float m) { return m > 0.0f ? m / 127.0f : 1.0f; };
  graph.input_scale = to_scale(input_max);
  for (size_t i = 0; i < graph.nodes.size(); ++i) graph.nodes[i].out_scale = to_scale(max_abs[i]);
  requantize_weights(graph);
}

std::vector<QLayer> prepare_layers(const Graph& graph, const ShapeTable& shapes) {
  std::vector<QLayer> layers;
  layers.reserve(graph.nodes.size());
  for (const auto& n : graph.nodes) layers.push_back(kernels::prepare_layer(graph, shapes, n.id));
  return layers;
}

namespace {

void check_input(const Graph& graph, const QuantTensor& input) {
  if (!graph.quantized()) throw Error("graph is not quantized: missing weight or activation scales");
  if (input.shape() != graph.input) throw Error("input shape " + input.shape().str() + " != graph input " + graph.input.str());
  if (input.scale().per_channel() || input.scale()[0] != graph.input_scale) throw Error("input scale does not match the graph input scale");
}

}  // namespace

QuantTensor run_int8_from(const Graph& graph, const ShapeTable& shapes, int first, std::map<int, std::vector<int8_t>> tensors) {
  const auto layers = [&] {
    std::vector<QLayer> ls(graph.nodes.size());
    for (int id = first; id < static_cast<int>(graph.nodes.size()); ++id) ls[static_cast<size_t>(id)] = kernels::prepare_layer(graph, shapes, id);
    return ls;
  }();
  const auto users = consumers(graph);
  for (int id = first; id < static_cast<int>(graph.nodes.size()); ++id) {
    const LayerNode& n = graph.node(id);
    std::vector<QView> views;
    for (int p : n.preds) {
      auto it = tensors.find(p);
      if (it == tensors.end()) throw Error("node " + std::to_string(id) + ": predecessor tensor " + std::to_string(p) + " was not provided");
      const Shape& s = shapes.of(p);
      views.push_back(QView::full(it->second.data(), s[0], s[1], s[2]));
    }
    std::vector<int8_t> out(shapes.of(id).elements());
    kernels::run_full(layers[static_cast<size_t>(id)], views, out.data());
    tensors[id] = std::move(out);
    // release tensors whose readers have all run
    for (int p : n.preds) {
      const auto& readers = p == kGraphInput ? users.back() : users[static_cast<size_t>(p)];
      if (!readers.empty() && readers.back() <= id) tensors.erase(p);
    }
  }
  const int out_id = graph.output_id();
  return QuantTensor(shapes.of(out_id), std::move(tensors.at(out_id)), ScaleVector{graph.node(out_id).out_scale});
}

QuantTensor run_int8(const Graph& graph, const QuantTensor& input, ExecMode mode) {
  check_input(graph, input);
  if (mode == ExecMode::kPlanned) {
    ExecutionContext ctx(graph, plan_memory(graph));
    return ctx.run(input);
  }
  const ShapeTable shapes = validate(graph);
  std::map<int, std::vector<int8_t>> tensors;
  tensors[kGraphInput] = std::vector<int8_t>(input.data().begin(), input.data().end());
  return run_int8_from(graph, shapes, 0, std::move(tensors));
}

ExecutionContext::ExecutionContext(const Graph& graph, MemoryPlan plan)
    : graph_(graph), shapes_(validate(graph)), plan_(std::move(plan)) {
  layers_ = prepare_layers(graph_, shapes_);
  arena_.assign(static_cast<size_t>(plan_.arena_size), 0);
}

QuantTensor ExecutionContext::run(const QuantTensor& input) {
  check_input(graph_, input);
  int8_t* arena = arena_.data();
  std::copy(input.data().begin(), input.data().end(), arena + plan_.offset_of(kGraphInput));
  std::span<int8_t> scratch;
  if (plan_.scratch_buffer >= 0) {
    const auto& b = plan_.buffers[static_cast<size_t>(plan_.scratch_buffer)];
    scratch = std::span<int8_t>(arena + b.offset, static_cast<size_t>(b.request.size));
  }
  for (const auto& n : graph_.nodes) {
    const QLayer& l = layers_[static_cast<size_t>(n.id)];
    int8_t* out = arena + plan_.offset_of(n.id);
    if (plan_.inplace(n.id)) {
      const auto& pb = plan_.buffers[static_cast<size_t>(plan_.plane_buffer[static_cast<size_t>(n.id)])];
      kernels::depthwise_inplace(l, out, std::span<int8_t>(arena + pb.offset, static_cast<size_t>(pb.request.size)));
      continue;
    }
    if (n.kind == OpKind::kConv2D) {
      const int tile = plan_.im2col.tile_widths[static_cast<size_t>(n.id)];
      scratch_high_water_ = std::max(scratch_high_water_, kernels::conv_im2col_tiled(l, arena + plan_.offset_of(n.preds[0]), out, tile, scratch));
      continue;
    }
    std::vector<QView> views;
    for (int p : n.preds) {
      const Shape& s = shapes_.of(p);
      views.push_back(QView::full(arena + plan_.offset_of(p), s[0], s[1], s[2]));
    }
    kernels::run_region(l, views, {0, 0, l.out_h, l.out_w}, out);
  }
  const int out_id = graph_.output_id();
  const Shape& s = shapes_.of(out_id);
  const int8_t* o = arena + plan_.offset_of(out_id);
  return QuantTensor(s, std::vector<int8_t>(o, o + s.elements()), ScaleVector{graph_.node(out_id).out_scale});
}

}  // namespace tinyplan
