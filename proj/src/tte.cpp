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
#include "tinyplan/tte.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "tinyplan/executor.hpp"
#include "tinyplan/memory_planner.hpp"
#include "tinyplan/real_ops.hpp"

namespace tinyplan {

using nlohmann::json;

// --- update scheme -----------------------------------------------------------

double UpdateScheme::ratio_of(int layer) const {
  for (const auto& w : weights) {
    if (w.layer == layer) return w.ratio;
  }
  return 0.0;
}

std::vector<int> trainable_layers(const Graph& graph) {
  std::vector<int> ids;
  for (const auto& n : graph.nodes) {
    if (n.parametric() && !n.fp32) ids.push_back(n.id);
  }
  return ids;
}

int classifier_id(const Graph& graph) {
  if (graph.nodes.empty()) throw Error("training needs a non-empty graph");
  const LayerNode& last = graph.nodes.back();
  if (last.kind != OpKind::kLinear || !last.fp32) throw Error("training needs a trailing fp32 linear classifier");
  return last.id;
}

namespace {

bool valid_ratio(double r) {
  return std::any_of(std::begin(kRatios), std::end(kRatios), [r](double k) { return k == r; });
}

int suffix_start(const Graph& graph, int bias_k) {
  const auto layers = trainable_layers(graph);
  return bias_k > 0 ? layers[layers.size() - static_cast<size_t>(bias_k)] : classifier_id(graph);
}

}  // namespace

void validate_scheme(const Graph& graph, const UpdateScheme& scheme) {
  const auto layers = trainable_layers(graph);
  classifier_id(graph);
  const int depth = static_cast<int>(layers.size());
  if (scheme.bias_k < 0 || scheme.bias_k > depth) {
    throw Error("bias_k " + std::to_string(scheme.bias_k) + " outside [0, " + std::to_string(depth) + "]");
  }
  const int first = suffix_start(graph, scheme.bias_k);
  int prev = -1;
  for (const auto& w : scheme.weights) {
    if (std::find(layers.begin(), layers.end(), w.layer) == layers.end()) {
      throw Error("scheme references unknown layer " + std::to_string(w.layer));
    }
    if (w.layer <= prev) throw Error("scheme layers must be unique and ascending (layer " + std::to_string(w.layer) + ")");
    if (w.layer < first) {
      throw Error("layer " + std::to_string(w.layer) + " is not reached by backprop depth " + std::to_string(scheme.bias_k));
    }
    if (!valid_ratio(w.ratio)) throw Error("layer " + std::to_string(w.layer) + ": ratio must be 1/8, 1/4, 1/2 or 1");
    prev = w.layer;
  }
}

UpdateScheme full_scheme(const Graph& graph) {
  UpdateScheme s;
  const auto layers = trainable_layers(graph);
  s.bias_k = static_cast<int>(layers.size());
  for (int id : layers) s.weights.push_back({id, 1.0});
  return s;
}

std::string scheme_to_json(const UpdateScheme& scheme) {
  json j;
  j["bias_k"] = scheme.bias_k;
  j["weights"] = json::array();
  for (const auto& w : scheme.weights) j["weights"].push_back({{"layer", w.layer}, {"ratio", w.ratio}});
  return j.dump(2);
}

UpdateScheme scheme_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    UpdateScheme s;
    s.bias_k = j.at("bias_k").get<int>();
    for (const auto& w : j.value("weights", json::array())) s.weights.push_back({w.at("layer").get<int>(), w.at("ratio").get<double>()});
    std::sort(s.weights.begin(), s.weights.end(), [](const WeightUpdate& a, const WeightUpdate& b) { return a.layer < b.layer; });
    return s;
  } catch (const json::exception& e) {
    throw IoError(std::string("bad scheme JSON: ") + e.what());
  }
}

int64_t weights_per_channel(const LayerNode& layer) {
  const auto& a = layer.attrs;
  if (layer.kind == OpKind::kLinear) return a.in_channels;
  return int64_t{a.kernel} * a.kernel * (a.in_channels / a.groups);
}

std::vector<int> slice_suboperator(const LayerNode& layer, double ratio) {
  if (!layer.parametric()) throw Error("node " + std::to_string(layer.id) + " has no weights to slice");
  if (!valid_ratio(ratio)) throw Error("slice ratio must be 1/8, 1/4, 1/2 or 1");
  const int cout = layer.attrs.out_channels;
  std::vector<double> l1(static_cast<size_t>(cout), 0.0);
  if (!layer.weight.empty()) {
    for (size_t e = 0; e < layer.weight.size(); ++e) l1[e % static_cast<size_t>(cout)] += std::fabs(layer.weight[e]);
  } else {
    for (size_t e = 0; e < layer.qweight.size(); ++e) {
      const int c = static_cast<int>(e % static_cast<size_t>(cout));
      l1[static_cast<size_t>(c)] += std::abs(layer.qweight[e]) * static_cast<double>(layer.qweight.scale().for_channel(c));
    }
  }
  const int count = std::max(1, static_cast<int>(std::ceil(ratio * cout)));
  std::vector<int> order(static_cast<size_t>(cout));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return l1[static_cast<size_t>(a)] > l1[static_cast<size_t>(b)]; });
  order.resize(static_cast<size_t>(count));
  std::sort(order.begin(), order.end());
  return order;
}

// --- backward graph ------------------------------------------------------------

const char* grad_op_name(GradOpKind kind) {
  switch (kind) {
    case GradOpKind::kLoss: return "loss";
    case GradOpKind::kInput: return "grad_input";
    case GradOpKind::kWeight: return "grad_weight";
    case GradOpKind::kBias: return "grad_bias";
    case GradOpKind::kApplyWeight: return "apply_weight";
    case GradOpKind::kApplyBias: return "apply_bias";
  }
  return "?";
}

namespace {

int find_op(const std::vector<GradOp>& ops, GradOpKind kind, int node) {
  for (size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].kind == kind && ops[i].node == node) return static_cast<int>(i);
  }
  return -1;
}

bool is_apply(GradOpKind k) { return k == GradOpKind::kApplyWeight || k == GradOpKind::kApplyBias; }

std::vector<SavedRef> collect_saved(const std::vector<GradOp>& ops) {
  std::vector<SavedRef> s;
  for (const auto& op : ops) s.insert(s.end(), op.saved.begin(), op.saved.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// Nodes whose output gradient some op reads.
std::vector<char> grad_targets(const BackwardGraph& bg, size_t nodes) {
  std::vector<char> t(nodes, 0);
  for (const auto& op : bg.ops) {
    if (op.kind == GradOpKind::kInput || op.kind == GradOpKind::kWeight || op.kind == GradOpKind::kBias) t[static_cast<size_t>(op.node)] = 1;
  }
  return t;
}

}  // namespace

bool BackwardGraph::has(GradOpKind kind, int node) const { return find_op(ops, kind, node) >= 0; }

std::vector<int> BackwardGraph::dependencies(const Graph& graph, int op) const {
  const GradOp& o = ops.at(static_cast<size_t>(op));
  std::vector<int> deps;
  auto add = [&](int i) {
    if (i >= 0) deps.push_back(i);
  };
  switch (o.kind) {
    case GradOpKind::kLoss:
      break;
    case GradOpKind::kApplyWeight:
      add(find_op(ops, GradOpKind::kWeight, o.node));
      break;
    case GradOpKind::kApplyBias:
      add(find_op(ops, GradOpKind::kBias, o.node));
      break;
    default: {
      if (o.node == graph.output_id()) add(find_op(ops, GradOpKind::kLoss, o.node));
      const auto users = consumers(graph);
      for (int c : users[static_cast<size_t>(o.node)]) add(find_op(ops, GradOpKind::kInput, c));
    }
  }
  return deps;
}

BackwardGraph derive_backward(const Graph& graph, const UpdateScheme& scheme) {
  validate(graph);
  validate_scheme(graph, scheme);
  const int cls = classifier_id(graph);
  BackwardGraph bg;
  bg.first_node = suffix_start(graph, scheme.bias_k);
  bg.slices.resize(graph.nodes.size());
  auto with_mask = [&](int j, std::vector<SavedRef> refs) {
    if (graph.node(j).attrs.relu6) refs.push_back({j, true});
    return refs;
  };
  bg.ops.push_back({GradOpKind::kLoss, cls, {{cls, false}}});
  for (int j = graph.output_id(); j >= bg.first_node; --j) {
    const LayerNode& n = graph.node(j);
    const bool chain = std::any_of(n.preds.begin(), n.preds.end(), [&](int p) { return p >= bg.first_node; });
    if (chain) bg.ops.push_back({GradOpKind::kInput, j, with_mask(j, {})});
    if (n.parametric()) {
      bg.ops.push_back({GradOpKind::kWeight, j, with_mask(j, {{n.preds[0], false}})});
      bg.ops.push_back({GradOpKind::kBias, j, with_mask(j, {})});
      auto& sl = bg.slices[static_cast<size_t>(j)];
      sl.resize(static_cast<size_t>(n.attrs.out_channels));
      std::iota(sl.begin(), sl.end(), 0);
    }
  }
  for (int j = graph.output_id(); j >= bg.first_node; --j) {
    if (!graph.node(j).parametric()) continue;
    bg.ops.push_back({GradOpKind::kApplyWeight, j, {}});
    bg.ops.push_back({GradOpKind::kApplyBias, j, {}});
  }
  bg.saved = collect_saved(bg.ops);
  return bg;
}

BackwardGraph prune_and_dce(const Graph& graph, const BackwardGraph& bg, const UpdateScheme& scheme) {
  validate_scheme(graph, scheme);
  const int cls = classifier_id(graph);
  std::vector<char> live(bg.ops.size(), 0);
  for (int i = static_cast<int>(bg.ops.size()) - 1; i >= 0; --i) {
    const GradOp& op = bg.ops[static_cast<size_t>(i)];
    if (op.kind == GradOpKind::kApplyBias) live[static_cast<size_t>(i)] = 1;
    if (op.kind == GradOpKind::kApplyWeight && (op.node == cls || scheme.ratio_of(op.node) > 0.0)) live[static_cast<size_t>(i)] = 1;
    if (!live[static_cast<size_t>(i)]) continue;
    for (int d : bg.dependencies(graph, i)) live[static_cast<size_t>(d)] = 1;
  }
  BackwardGraph out;
  out.first_node = bg.first_node;
  out.slices.resize(graph.nodes.size());
  for (size_t i = 0; i < bg.ops.size(); ++i) {
    if (!live[i]) continue;
    const GradOp& op = bg.ops[i];
    out.ops.push_back(op);
    if (op.kind != GradOpKind::kWeight) continue;
    const LayerNode& n = graph.node(op.node);
    out.slices[static_cast<size_t>(op.node)] = op.node == cls ? bg.slices[static_cast<size_t>(op.node)] : slice_suboperator(n, scheme.ratio_of(op.node));
  }
  out.saved = collect_saved(out.ops);
  return out;
}

// --- step plan and memory trace --------------------------------------------------

namespace {

int64_t elements(const ShapeTable& shapes, int t) { return static_cast<int64_t>(shapes.of(t).elements()); }

std::vector<TrainBuffer> plan_buffers(const Graph& graph, const BackwardGraph& bg, const std::vector<PlanStep>& steps) {
  const ShapeTable shapes = validate(graph);
  const auto users = consumers(graph);
  const size_t nodes = graph.nodes.size();
  const int end = std::max(0, static_cast<int>(steps.size()) - 1);
  std::vector<TrainBuffer> buffers;
  auto push = [&](std::string name, BufferCategory cat, int64_t size, int first, int last) {
    buffers.push_back({std::move(name), cat, size, first, last});
    return static_cast<int>(buffers.size()) - 1;
  };

  // last step reading each saved activation (index tensor + 1) and mask
  std::vector<int> saved_last(nodes + 1, -1), mask_last(nodes, -1);
  std::vector<int> op_step_first(nodes, -1), op_step_last(nodes, -1);
  std::map<std::pair<GradOpKind, int>, int> step_of;
  for (int s = 0; s < static_cast<int>(steps.size()); ++s) {
    const PlanStep& st = steps[static_cast<size_t>(s)];
    if (st.forward) continue;
    step_of[{st.op.kind, st.op.node}] = s;
    for (const auto& r : st.op.saved) {
      if (r.mask) {
        mask_last[static_cast<size_t>(r.tensor)] = std::max(mask_last[static_cast<size_t>(r.tensor)], s);
      } else {
        saved_last[static_cast<size_t>(r.tensor + 1)] = std::max(saved_last[static_cast<size_t>(r.tensor + 1)], s);
      }
    }
  }

  // forward tensors, laid out as plan_memory does unless a saved input rules out in-place depthwise
  std::vector<int> fwd_last(nodes + 1, 0);
  for (size_t t = 0; t <= nodes; ++t) {
    const auto& readers = t == 0 ? users.back() : users[t - 1];
    for (int r : readers) fwd_last[t] = std::max(fwd_last[t], r);
  }
  std::vector<int> tensor_buf(nodes + 1, -1);
  tensor_buf[0] = push("input", BufferCategory::kActivation, elements(shapes, kGraphInput), 0, std::max(fwd_last[0], saved_last[0]));
  int first_conv = -1, last_conv = -1;
  for (const auto& n : graph.nodes) {
    const int id = n.id;
    const size_t slot = static_cast<size_t>(id + 1);
    if (n.kind == OpKind::kConv2D) {
      if (first_conv < 0) first_conv = id;
      last_conv = id;
    }
    const int lifetime_end = std::max({id, fwd_last[slot], saved_last[slot]});
    if (inplace_eligible(graph, users, shapes, id) && saved_last[static_cast<size_t>(n.preds[0] + 1)] < 0) {
      const int src = tensor_buf[static_cast<size_t>(n.preds[0] + 1)];
      tensor_buf[slot] = src;
      buffers[static_cast<size_t>(src)].last = std::max(buffers[static_cast<size_t>(src)].last, lifetime_end);
      push("dw_plane_" + std::to_string(id), BufferCategory::kActivation, int64_t{shapes.of(id)[0]} * shapes.of(id)[1], id, id);
    } else {
      tensor_buf[slot] = push("t" + std::to_string(id), BufferCategory::kActivation, elements(shapes, id), id, lifetime_end);
    }
  }
  if (first_conv >= 0) push("im2col", BufferCategory::kActivation, im2col_budget(graph).m, first_conv, last_conv);

  for (size_t j = 0; j < nodes; ++j) {
    if (mask_last[j] >= 0) push("mask_" + std::to_string(j), BufferCategory::kActivation, (elements(shapes, static_cast<int>(j)) + 7) / 8, static_cast<int>(j), mask_last[j]);
  }

  // output gradients: born at the first writer, dead after the node's last grad op
  const auto targets = grad_targets(bg, nodes);
  for (size_t j = 0; j < nodes; ++j) {
    if (!targets[j]) continue;
    const int id = static_cast<int>(j);
    int first = -1, last = -1;
    auto writer = [&](GradOpKind k, int node) {
      auto it = step_of.find({k, node});
      if (it != step_of.end()) first = first < 0 ? it->second : std::min(first, it->second);
    };
    if (id == graph.output_id()) writer(GradOpKind::kLoss, id);
    for (int c : users[j]) writer(GradOpKind::kInput, c);
    for (GradOpKind k : {GradOpKind::kInput, GradOpKind::kWeight, GradOpKind::kBias}) {
      auto it = step_of.find({k, id});
      if (it != step_of.end()) last = std::max(last, it->second);
    }
    if (first < 0) throw Error("internal: gradient of node " + std::to_string(id) + " has no producer");
    push("grad_" + std::to_string(id), BufferCategory::kGradient, 4 * elements(shapes, id), first, last);
  }

  for (const auto& [key, s] : step_of) {
    const auto [kind, id] = key;
    const LayerNode& n = graph.node(id);
    const int64_t cout = n.attrs.out_channels;
    const int64_t sliced = static_cast<int64_t>(bg.slices[static_cast<size_t>(id)].size()) * weights_per_channel(n);
    if (kind == GradOpKind::kWeight) {
      auto it = step_of.find({GradOpKind::kApplyWeight, id});
      push("grad_w_" + std::to_string(id), BufferCategory::kGradient, 4 * sliced, s, it == step_of.end() ? s : it->second);
    } else if (kind == GradOpKind::kBias) {
      auto it = step_of.find({GradOpKind::kApplyBias, id});
      push("grad_b_" + std::to_string(id), BufferCategory::kGradient, 4 * cout, s, it == step_of.end() ? s : it->second);
    } else if (kind == GradOpKind::kApplyWeight) {
      push("weight_copy_" + std::to_string(id), BufferCategory::kWeightCopy, n.fp32 ? 4 * sliced : sliced, 0, end);
    } else if (kind == GradOpKind::kApplyBias) {
      push("bias_copy_" + std::to_string(id), BufferCategory::kWeightCopy, 4 * cout, 0, end);
    }
  }
  return buffers;
}

TrainStepPlan finish_plan(const Graph& graph, const BackwardGraph& bg, std::vector<GradOp> order, bool reordered) {
  TrainStepPlan plan;
  plan.backward = bg;
  plan.reordered = reordered;
  for (const auto& n : graph.nodes) plan.steps.push_back({true, n.id, {}});
  for (auto& op : order) plan.steps.push_back({false, op.node, std::move(op)});
  plan.buffers = plan_buffers(graph, bg, plan.steps);
  plan.peak = trace_memory(plan).peak;
  return plan;
}

}  // namespace

TrainStepPlan reorder_inplace(const Graph& graph, const BackwardGraph& bg) {
  std::vector<GradOp> grads, applies, order;
  for (const auto& op : bg.ops) (is_apply(op.kind) ? applies : grads).push_back(op);
  for (size_t i = 0; i < grads.size(); ++i) {
    order.push_back(grads[i]);
    const int node = grads[i].node;
    if (i + 1 < grads.size() && grads[i + 1].node == node) continue;
    for (const auto& a : applies) {
      if (a.node == node) order.push_back(a);
    }
  }
  return finish_plan(graph, bg, std::move(order), true);
}

TrainStepPlan schedule_baseline(const Graph& graph, const BackwardGraph& bg) {
  std::vector<GradOp> order;
  for (const auto& op : bg.ops) {
    if (!is_apply(op.kind)) order.push_back(op);
  }
  for (const auto& op : bg.ops) {
    if (is_apply(op.kind)) order.push_back(op);
  }
  return finish_plan(graph, bg, std::move(order), false);
}

TrainStepPlan inference_plan(const Graph& graph) {
  BackwardGraph empty;
  empty.first_node = static_cast<int>(graph.nodes.size());
  empty.slices.resize(graph.nodes.size());
  return finish_plan(graph, empty, {}, false);
}

MemTrace trace_memory(const TrainStepPlan& plan) {
  MemTrace t;
  t.live.assign(plan.steps.size(), 0);
  for (const auto& b : plan.buffers) {
    for (int s = b.first; s <= b.last && s < static_cast<int>(t.live.size()); ++s) t.live[static_cast<size_t>(s)] += b.size;
  }
  for (size_t s = 0; s < t.live.size(); ++s) {
    if (t.live[s] > t.peak) {
      t.peak = t.live[s];
      t.peak_step = static_cast<int>(s);
    }
  }
  for (const auto& b : plan.buffers) {
    if (b.first > t.peak_step || b.last < t.peak_step) continue;
    switch (b.category) {
      case BufferCategory::kActivation: t.at_peak.activations += b.size; break;
      case BufferCategory::kGradient: t.at_peak.gradients += b.size; break;
      case BufferCategory::kWeightCopy: t.at_peak.weight_copies += b.size; break;
    }
  }
  return t;
}

// --- quantized update rules ------------------------------------------------------------

void qas_scale(std::span<double> weight_grads, std::span<double> bias_grads, const ScaleVector& s_w, double s_x) {
  if (!(s_x > 0.0)) throw Error("QAS needs a positive input scale");
  for (float v : s_w.values()) {
    if (!(v > 0.0f)) throw Error("QAS needs positive weight scales");
  }
  const size_t cout = !bias_grads.empty() ? bias_grads.size() : s_w.size();
  if (s_w.per_channel() && s_w.size() != cout) throw Error("QAS: weight scales do not match the gradient channels");
  if (cout == 0 || weight_grads.size() % cout != 0) throw Error("QAS: weight gradient size is not a multiple of the channel count");
  for (size_t e = 0; e < weight_grads.size(); ++e) {
    const double s = s_w.for_channel(static_cast<int>(e % cout));
    weight_grads[e] /= s * s;
  }
  for (size_t c = 0; c < bias_grads.size(); ++c) {
    const double s = static_cast<double>(s_w.for_channel(static_cast<int>(c))) * s_x;
    bias_grads[c] /= s * s;
  }
}

QuantTensor sgd_step_int8(const QuantTensor& weights, std::span<const double> grads, double lr, std::span<const char> mask) {
  if (grads.size() != weights.size()) throw Error("sgd_step_int8: gradient size mismatch");
  QuantTensor out = weights;
  const size_t cout = static_cast<size_t>(weights.shape().last());
  for (size_t e = 0; e < out.size(); ++e) {
    if (!mask.empty() && !mask[e % cout]) continue;
    out[e] = saturate_int8(round_half_even(static_cast<double>(weights[e]) - lr * grads[e]));
  }
  return out;
}

AccTensor sgd_step_int32(const AccTensor& bias, std::span<const double> grads, double lr) {
  if (grads.size() != bias.size()) throw Error("sgd_step_int32: gradient size mismatch");
  AccTensor out = bias;
  for (size_t c = 0; c < out.size(); ++c) out[c] = saturate_int32(round_half_even(static_cast<double>(bias[c]) - lr * grads[c]));
  return out;
}

// --- training ----------------------------------------------------------------------------

const char* train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kReal: return "real";
    case TrainMode::kInt8: return "int8";
    case TrainMode::kInt8QAS: return "int8_qas";
  }
  return "?";
}

struct Trainer::Forward {
  std::vector<std::vector<double>> act;  // index tensor + 1
  std::vector<std::vector<char>> mask;   // per node, empty without ReLU6
  const std::vector<double>& logits() const { return act.back(); }
};

namespace {

double softmax_ce(const std::vector<double>& z, int label, std::vector<double>* grad) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  if (grad) {
    grad->resize(z.size());
    for (size_t i = 0; i < z.size(); ++i) (*grad)[i] = std::exp(z[i] - lse) - (static_cast<int>(i) == label ? 1.0 : 0.0);
  }
  return lse - z[static_cast<size_t>(label)];
}

int argmax(const std::vector<double>& z) { return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()); }

real::Dims out_dims(const ShapeTable& shapes, const LayerNode& n) {
  return n.kind == OpKind::kLinear ? real::Dims{1, 1, n.attrs.out_channels} : real::dims_of(shapes.of(n.id));
}

}  // namespace

Trainer::Trainer(const Graph& graph, const UpdateScheme& scheme, TrainMode mode, const TrainOptions& options)
    : graph_(graph), shapes_(validate(graph)), scheme_(scheme), mode_(mode), options_(options) {
  validate_scheme(graph_, scheme_);
  classifier_ = classifier_id(graph_);
  if (options_.grad_accum < 1) throw Error("grad_accum must be >= 1");
  if (mode_ == TrainMode::kReal && !graph_.has_weights()) throw Error("real-valued training needs real weights");
  if (mode_ != TrainMode::kReal && !graph_.quantized()) throw Error("int8 training needs a quantized graph");
  const BackwardGraph bg = compile_backward(graph_, scheme_);
  plan_ = options_.reorder ? reorder_inplace(graph_, bg) : schedule_baseline(graph_, bg);
  users_ = consumers(graph_);
  params_.resize(graph_.nodes.size());
  for (const auto& n : graph_.nodes) {
    if (!n.parametric()) continue;
    Params& p = params_[static_cast<size_t>(n.id)];
    const int cout = n.attrs.out_channels;
    if (mode_ == TrainMode::kReal || n.fp32) {
      p.w.assign(n.weight.data().begin(), n.weight.data().end());
      p.b.assign(static_cast<size_t>(cout), 0.0);
      for (size_t c = 0; c < n.bias.size(); ++c) p.b[c] = n.bias[c];
    } else {
      p.qw.assign(n.qweight.data().begin(), n.qweight.data().end());
      p.qb.assign(n.qbias.data().begin(), n.qbias.data().end());
      p.s_x = n.preds[0] == kGraphInput ? graph_.input_scale : graph_.node(n.preds[0]).out_scale;
      for (int c = 0; c < cout; ++c) p.s_w.push_back(n.qweight.scale().for_channel(c));
      p.w.resize(p.qw.size());
      for (size_t e = 0; e < p.qw.size(); ++e) p.w[e] = p.s_w[e % static_cast<size_t>(cout)] * p.qw[e];
      p.b.resize(static_cast<size_t>(cout));
      for (int c = 0; c < cout; ++c) p.b[static_cast<size_t>(c)] = p.qb[static_cast<size_t>(c)] * p.s_w[static_cast<size_t>(c)] * p.s_x;
    }
    p.acc_w.assign(p.w.size(), 0.0);
    p.acc_b.assign(static_cast<size_t>(cout), 0.0);
    p.channel_mask.assign(static_cast<size_t>(cout), 0);
    for (int c : bg.slices[static_cast<size_t>(n.id)]) p.channel_mask[static_cast<size_t>(c)] = 1;
  }
  if (mode_ != TrainMode::kReal) layers_ = prepare_layers(graph_, shapes_);
}

Trainer::Forward Trainer::forward(const FloatTensor& x) const {
  if (x.shape() != graph_.input) throw Error("input shape " + x.shape().str() + " != graph input " + graph_.input.str());
  Forward f;
  f.act.resize(graph_.nodes.size() + 1);
  f.mask.resize(graph_.nodes.size());
  if (mode_ == TrainMode::kReal) {
    f.act[0].assign(x.data().begin(), x.data().end());
    for (const auto& n : graph_.nodes) {
      const Shape& in_shape = shapes_.of(n.preds[0]);
      const auto& xin = f.act[static_cast<size_t>(n.preds[0] + 1)];
      std::vector<double> y(shapes_.of(n.id).elements());
      const Params& p = params_[static_cast<size_t>(n.id)];
      switch (n.kind) {
        case OpKind::kConv2D:
          real::conv_forward<double, double>(real::window_of(n), real::dims_of(in_shape), xin, p.w, p.b, real::dims_of(shapes_.of(n.id)), y);
          break;
        case OpKind::kDepthwiseConv2D:
          real::depthwise_forward<double, double>(real::window_of(n), real::dims_of(in_shape), xin, p.w, p.b, real::dims_of(shapes_.of(n.id)), y);
          break;
        case OpKind::kLinear:
          real::linear_forward<double, double>(n.attrs.in_channels, n.attrs.out_channels, xin, p.w, p.b, y);
          break;
        case OpKind::kAdd: {
          const auto& b = f.act[static_cast<size_t>(n.preds[1] + 1)];
          for (size_t i = 0; i < y.size(); ++i) y[i] = xin[i] + b[i];
          break;
        }
        case OpKind::kAvgPool:
          real::avg_pool_forward<double>(n.attrs.kernel, n.attrs.stride, real::dims_of(in_shape), xin, real::dims_of(shapes_.of(n.id)), y);
          break;
      }
      if (n.attrs.relu6) {
        auto& m = f.mask[static_cast<size_t>(n.id)];
        m.resize(y.size());
        for (size_t i = 0; i < y.size(); ++i) m[i] = y[i] > 0.0 && y[i] < 6.0;
        real::relu6_inplace<double>(y);
      }
      f.act[static_cast<size_t>(n.id + 1)] = std::move(y);
    }
    return f;
  }

  // int8 engine up to the classifier, which runs in double on dequantized features
  std::vector<std::vector<int8_t>> q(graph_.nodes.size() + 1);
  const QuantTensor qx = quantize(x, ScaleVector{graph_.input_scale});
  q[0].assign(qx.data().begin(), qx.data().end());
  f.act[0].resize(q[0].size());
  for (size_t i = 0; i < q[0].size(); ++i) f.act[0][i] = graph_.input_scale * static_cast<double>(q[0][i]);
  for (const auto& n : graph_.nodes) {
    const size_t slot = static_cast<size_t>(n.id + 1);
    if (n.id == classifier_) {
      const Params& p = params_[static_cast<size_t>(n.id)];
      f.act[slot].resize(static_cast<size_t>(n.attrs.out_channels));
      real::linear_forward<double, double>(n.attrs.in_channels, n.attrs.out_channels, f.act[static_cast<size_t>(n.preds[0] + 1)], p.w, p.b, f.act[slot]);
      continue;
    }
    const kernels::QLayer& l = layers_[static_cast<size_t>(n.id)];
    std::vector<kernels::QView> views;
    for (int p : n.preds) {
      const Shape& s = shapes_.of(p);
      views.push_back(kernels::QView::full(q[static_cast<size_t>(p + 1)].data(), s[0], s[1], s[2]));
    }
    q[slot].resize(shapes_.of(n.id).elements());
    kernels::run_full(l, views, q[slot].data());
    const double s = n.out_scale;
    f.act[slot].resize(q[slot].size());
    for (size_t i = 0; i < q[slot].size(); ++i) f.act[slot][i] = s * q[slot][i];
    if (n.attrs.relu6) {
      auto& m = f.mask[static_cast<size_t>(n.id)];
      m.resize(q[slot].size());
      for (size_t i = 0; i < m.size(); ++i) m[i] = q[slot][i] > 0 && q[slot][i] < l.relu_max;
    }
  }
  return f;
}

void Trainer::run_grad_op(const GradOp& op, const BackwardGraph& bg, const Forward& f, int label, std::map<int, std::vector<double>>& grads,
                          std::vector<char>& masked, GradientMap& results) const {
  const int j = op.node;
  const LayerNode& n = graph_.node(j);
  if (op.kind == GradOpKind::kLoss) {
    softmax_ce(f.logits(), label, &grads[j]);
    return;
  }
  auto& gy = grads.at(j);
  if (n.attrs.relu6 && !masked[static_cast<size_t>(j)]) {
    const auto& m = f.mask[static_cast<size_t>(j)];
    for (size_t i = 0; i < gy.size(); ++i) {
      if (!m[i]) gy[i] = 0.0;
    }
    masked[static_cast<size_t>(j)] = 1;
  }
  const Params& p = params_[static_cast<size_t>(j)];
  const real::Dims out = out_dims(shapes_, n);
  switch (op.kind) {
    case GradOpKind::kBias: {
      std::vector<double> gb(static_cast<size_t>(n.attrs.out_channels));
      real::bias_backward<double, double>(out, gy, gb);
      results[{op.kind, j}] = std::move(gb);
      break;
    }
    case GradOpKind::kWeight: {
      std::vector<char> cm(static_cast<size_t>(n.attrs.out_channels), 0);
      for (int c : bg.slices[static_cast<size_t>(j)]) cm[static_cast<size_t>(c)] = 1;
      std::vector<double> gw(p.w.size(), 0.0);
      const auto& x = f.act[static_cast<size_t>(n.preds[0] + 1)];
      const real::Dims in = real::dims_of(shapes_.of(n.preds[0]));
      if (n.kind == OpKind::kConv2D) {
        real::conv_backward_weight<double, double>(real::window_of(n), in, x, out, gy, gw, cm);
      } else if (n.kind == OpKind::kDepthwiseConv2D) {
        real::depthwise_backward_weight<double, double>(real::window_of(n), in, x, out, gy, gw, cm);
      } else {
        real::linear_backward_weight<double, double>(n.attrs.in_channels, n.attrs.out_channels, x, gy, gw, cm);
      }
      results[{op.kind, j}] = std::move(gw);
      break;
    }
    case GradOpKind::kInput: {
      const auto targets = grad_targets(bg, graph_.nodes.size());
      for (int pred : n.preds) {
        if (pred < bg.first_node || !targets[static_cast<size_t>(pred)]) continue;
        const real::Dims in = real::dims_of(shapes_.of(pred));
        std::vector<double> gx(in.size());
        switch (n.kind) {
          case OpKind::kConv2D: real::conv_backward_input<double, double>(real::window_of(n), in, p.w, out, gy, gx); break;
          case OpKind::kDepthwiseConv2D: real::depthwise_backward_input<double, double>(real::window_of(n), in, p.w, out, gy, gx); break;
          case OpKind::kLinear: real::linear_backward_input<double, double>(n.attrs.in_channels, n.attrs.out_channels, p.w, gy, gx); break;
          case OpKind::kAvgPool: real::avg_pool_backward<double>(n.attrs.kernel, n.attrs.stride, in, out, gy, gx); break;
          case OpKind::kAdd: gx = gy; break;
        }
        auto [it, fresh] = grads.try_emplace(pred);
        if (fresh) {
          it->second = std::move(gx);
        } else {
          for (size_t i = 0; i < gx.size(); ++i) it->second[i] += gx[i];
        }
      }
      break;
    }
    default:
      break;
  }
}

void Trainer::commit(int node, bool weight, double lr) {
  Params& p = params_[static_cast<size_t>(node)];
  const LayerNode& n = graph_.node(node);
  const size_t cout = static_cast<size_t>(n.attrs.out_channels);
  const double inv = 1.0 / options_.grad_accum;
  auto& acc = weight ? p.acc_w : p.acc_b;
  std::vector<double> g(acc.size());
  for (size_t e = 0; e < acc.size(); ++e) g[e] = acc[e] * inv;
  std::fill(acc.begin(), acc.end(), 0.0);

  if (mode_ == TrainMode::kReal || n.fp32) {
    auto& v = weight ? p.w : p.b;
    for (size_t e = 0; e < v.size(); ++e) {
      if (weight && !p.channel_mask[e % cout]) continue;
      v[e] -= lr * g[e];
    }
    return;
  }
  // gradients wrt the int8 values: W = s_W * W_bar, b = s_W * s_x * b_bar
  const ScaleVector s_w(std::vector<float>(n.qweight.scale().values()));
  if (weight) {
    for (size_t e = 0; e < g.size(); ++e) g[e] *= p.s_w[e % cout];
    if (mode_ == TrainMode::kInt8QAS) qas_scale(g, {}, s_w, p.s_x);
    const QuantTensor updated = sgd_step_int8(QuantTensor(n.qweight.shape(), p.qw, n.qweight.scale()), g, lr, p.channel_mask);
    p.qw.assign(updated.data().begin(), updated.data().end());
    for (size_t e = 0; e < p.qw.size(); ++e) p.w[e] = p.s_w[e % cout] * p.qw[e];
    layers_[static_cast<size_t>(node)].weight = p.qw;
  } else {
    for (size_t c = 0; c < g.size(); ++c) g[c] *= p.s_w[c] * p.s_x;
    if (mode_ == TrainMode::kInt8QAS) qas_scale({}, g, s_w, p.s_x);
    const AccTensor updated = sgd_step_int32(AccTensor(Shape{static_cast<int>(cout)}, p.qb), g, lr);
    p.qb.assign(updated.data().begin(), updated.data().end());
    for (size_t c = 0; c < cout; ++c) p.b[c] = p.qb[c] * p.s_w[c] * p.s_x;
    layers_[static_cast<size_t>(node)].bias = p.qb;
  }
}

void Trainer::backward(const Forward& f, int label, std::span<const PlanStep> steps, GradientMap* out, double lr) {
  std::map<int, std::vector<double>> grads;
  std::vector<char> masked(graph_.nodes.size(), 0);
  GradientMap results;
  const bool commit_now = pending_ + 1 == options_.grad_accum;
  for (const auto& st : steps) {
    if (st.forward) continue;
    const GradOp& op = st.op;
    if (!is_apply(op.kind)) {
      run_grad_op(op, plan_.backward, f, label, grads, masked, results);
      continue;
    }
    Params& p = params_[static_cast<size_t>(op.node)];
    const bool weight = op.kind == GradOpKind::kApplyWeight;
    const auto& g = results.at({weight ? GradOpKind::kWeight : GradOpKind::kBias, op.node});
    auto& acc = weight ? p.acc_w : p.acc_b;
    for (size_t e = 0; e < g.size(); ++e) acc[e] += g[e];
    if (commit_now) commit(op.node, weight, lr);
  }
  if (out) *out = std::move(results);
}

double Trainer::step(const FloatTensor& x, int label, double lr) {
  const Forward f = forward(x);
  const double l = softmax_ce(f.logits(), label, nullptr);
  backward(f, label, plan_.steps, nullptr, lr);
  pending_ = (pending_ + 1) % options_.grad_accum;
  return l;
}

EvalMetrics Trainer::train_epoch(const Dataset& data, double lr, Rng& rng) {
  if (data.size() == 0) throw Error("training dataset is empty");
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  EvalMetrics m;
  int correct = 0;
  for (size_t i : order) {
    const Forward f = forward(data.images[i]);
    m.loss += softmax_ce(f.logits(), data.labels[i], nullptr);
    correct += argmax(f.logits()) == data.labels[i];
    backward(f, data.labels[i], plan_.steps, nullptr, lr);
    pending_ = (pending_ + 1) % options_.grad_accum;
  }
  m.loss /= static_cast<double>(data.size());
  m.accuracy = 100.0 * correct / static_cast<double>(data.size());
  return m;
}

EvalMetrics Trainer::evaluate(const Dataset& data) const {
  EvalMetrics m;
  if (data.size() == 0) return m;
  int correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto z = logits(data.images[i]);
    m.loss += softmax_ce(z, data.labels[i], nullptr);
    correct += argmax(z) == data.labels[i];
  }
  m.loss /= static_cast<double>(data.size());
  m.accuracy = 100.0 * correct / static_cast<double>(data.size());
  return m;
}

std::vector<double> Trainer::logits(const FloatTensor& x) const { return forward(x).logits(); }

double Trainer::loss(const FloatTensor& x, int label) const { return softmax_ce(logits(x), label, nullptr); }

std::vector<char> Trainer::activation_pattern(const FloatTensor& x) const {
  const Forward f = forward(x);
  std::vector<char> all;
  for (const auto& m : f.mask) all.insert(all.end(), m.begin(), m.end());
  return all;
}

GradientMap Trainer::gradients(const FloatTensor& x, int label, const BackwardGraph& bg) const {
  const Forward f = forward(x);
  std::map<int, std::vector<double>> grads;
  std::vector<char> masked(graph_.nodes.size(), 0);
  GradientMap results;
  for (const auto& op : bg.ops) {
    if (!is_apply(op.kind)) run_grad_op(op, bg, f, label, grads, masked, results);
  }
  return results;
}

Graph Trainer::graph() const {
  Graph g = graph_;
  for (auto& n : g.nodes) {
    if (!n.parametric()) continue;
    const Params& p = params_[static_cast<size_t>(n.id)];
    std::vector<float> w(p.w.begin(), p.w.end()), b(p.b.begin(), p.b.end());
    if (mode_ != TrainMode::kReal && !n.fp32) {
      // real-valued weights follow the int8 values only where training moved them
      const QuantTensor qw(n.qweight.shape(), p.qw, n.qweight.scale());
      if (!(qw == n.qweight)) n.weight = dequantize(qw);
      if (!std::equal(p.qb.begin(), p.qb.end(), n.qbias.data().begin())) n.bias = FloatTensor(Shape{n.attrs.out_channels}, std::move(b));
      n.qweight = qw;
      n.qbias = AccTensor(n.qbias.shape(), p.qb);
      continue;
    }
    n.weight = FloatTensor(n.weight.shape(), std::move(w));
    n.bias = FloatTensor(Shape{n.attrs.out_channels}, std::move(b));
  }
  if (mode_ == TrainMode::kReal && g.quantized()) requantize_weights(g);
  return g;
}

double lr_at(const TrainConfig& config, int epoch) {
  if (!config.cosine || config.epochs <= 0) return config.lr;
  return config.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * epoch / config.epochs));
}

TrainResult train(const Graph& graph, const UpdateScheme& scheme, TrainMode mode, const Dataset& train_data, const Dataset& eval_data, const TrainConfig& config) {
  Trainer t(graph, scheme, mode, {config.grad_accum, config.reorder});
  Rng rng(config.seed);
  TrainResult r;
  for (int e = 0; e < config.epochs; ++e) {
    r.train.push_back(t.train_epoch(train_data, lr_at(config, e), rng));
    r.eval.push_back(t.evaluate(eval_data));
  }
  r.graph = t.graph();
  return r;
}

// --- toy workloads -------------------------------------------------------------------------

Graph toy_cnn(int num_classes, uint64_t seed) {
  GraphBuilder b(Shape{8, 8, 3});
  int x = b.conv(kGraphInput, 16, 3, 1, true);
  x = b.conv(x, 32, 3, 2, true);
  x = b.conv(x, 32, 3, 1, true);
  x = b.conv(x, 64, 3, 2, true);
  x = b.conv(x, 64, 3, 1, true);
  x = b.conv(x, 64, 1, 1, true);
  x = b.avg_pool(x, 0, 1);
  b.linear(x, num_classes);
  Graph g = std::move(b).finish();
  init_weights(g, seed);
  return g;
}

TransferTask make_transfer_task(uint64_t seed, const std::string& target_task) {
  Graph g = toy_cnn(2, seed);
  const Dataset source = synthetic_dataset({"bars", 8, 512, 0.3, seed ^ 0x5eed});
  TrainConfig pre;
  pre.epochs = 6;
  pre.lr = 0.02;
  pre.seed = seed;
  g = train(g, full_scheme(g), TrainMode::kReal, source, {}, pre).graph;

  const Dataset target = synthetic_dataset({target_task, 8, 1024, 0.3, seed ^ 0x7a29});
  TransferTask task;
  task.train = target.head(512);
  task.eval = target.tail(512);
  LayerNode& cls = g.node(classifier_id(g));
  if (cls.attrs.out_channels != target.num_classes) throw Error("transfer target must have as many classes as the source");
  std::fill(cls.weight.data().begin(), cls.weight.data().end(), 0.0f);
  std::fill(cls.bias.data().begin(), cls.bias.data().end(), 0.0f);
  const std::vector<FloatTensor> calib(source.images.begin(), source.images.begin() + 64);
  quantize_graph(g, calib);
  task.pretrained = std::move(g);
  return task;
}

}  // namespace tinyplan
