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
// Tiny training engine: the backward graph is derived, pruned and scheduled
// ahead of time, then interpreted one sample at a time.
#ifndef TINYPLAN_TTE_HPP_
#define TINYPLAN_TTE_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinyplan/dataset.hpp"
#include "tinyplan/graph.hpp"
#include "tinyplan/kernels.hpp"
#include "tinyplan/rng.hpp"

namespace tinyplan {

// --- update scheme -----------------------------------------------------------

struct WeightUpdate {
  int layer = 0;        // node id
  double ratio = 1.0;   // 1/8, 1/4, 1/2 or 1
  bool operator==(const WeightUpdate&) const = default;
};

/// Biases of the last `bias_k` trainable layers are updated, plus the weights
/// of `weights` (each within those k). The fp32 classifier always trains.
struct UpdateScheme {
  int bias_k = 0;
  std::vector<WeightUpdate> weights;  // sorted by layer
  bool operator==(const UpdateScheme&) const = default;

  double ratio_of(int layer) const;  // 0 when the layer's weights are frozen
};

inline constexpr double kRatios[] = {0.125, 0.25, 0.5, 1.0};

// Parametric int8 layers in topological order (the classifier excluded).
std::vector<int> trainable_layers(const Graph& graph);
// Node id of the trailing fp32 linear classifier; throws if there is none.
int classifier_id(const Graph& graph);

// Throws Error naming the offending layer.
void validate_scheme(const Graph& graph, const UpdateScheme& scheme);
UpdateScheme full_scheme(const Graph& graph);

std::string scheme_to_json(const UpdateScheme& scheme);
UpdateScheme scheme_from_json(const std::string& text);

/// Trainable output channels: ceil(ratio * C_out) channels by descending L1
/// norm of the real-valued weights, ties to the lower index. Sorted ascending.
std::vector<int> slice_suboperator(const LayerNode& layer, double ratio);
// Weight elements per output channel.
int64_t weights_per_channel(const LayerNode& layer);

// --- backward graph ------------------------------------------------------------

enum class GradOpKind {
  kLoss,         // softmax cross-entropy gradient wrt the logits
  kInput,        // gradient wrt the node's inputs, accumulated into theirs
  kWeight,       // gradient wrt the (sliced) weights
  kBias,         // gradient wrt the bias
  kApplyWeight,  // SGD update of the weights
  kApplyBias,
};
const char* grad_op_name(GradOpKind kind);

/// A forward value kept for the backward pass: a tensor's activation or the
/// 1-bit ReLU6 pass-through mask of a node output.
struct SavedRef {
  int tensor = 0;
  bool mask = false;
  auto operator<=>(const SavedRef&) const = default;
};

struct GradOp {
  GradOpKind kind = GradOpKind::kLoss;
  int node = 0;
  std::vector<SavedRef> saved;
  bool operator==(const GradOp&) const = default;
};

/// Backward ops in dependency order; applies trail every gradient op.
struct BackwardGraph {
  int first_node = 0;                  // start of the backpropagated suffix
  std::vector<GradOp> ops;
  std::vector<std::vector<int>> slices;  // per node: channels with weight grads
  std::vector<SavedRef> saved;           // union over ops, sorted

  bool has(GradOpKind kind, int node) const;
  // Indices of the ops this op reads results from.
  std::vector<int> dependencies(const Graph& graph, int op) const;
};

/// Dense backward graph over the suffix reached by the scheme's depth: bias,
/// weight and input grads for every node there, and an apply per parameter.
BackwardGraph derive_backward(const Graph& graph, const UpdateScheme& scheme);

/// Drops weight grads outside the scheme, slices the rest, then removes ops
/// and saved values no apply depends on.
BackwardGraph prune_and_dce(const Graph& graph, const BackwardGraph& bg, const UpdateScheme& scheme);

inline BackwardGraph compile_backward(const Graph& graph, const UpdateScheme& scheme) {
  return prune_and_dce(graph, derive_backward(graph, scheme), scheme);
}

// --- step plan and memory trace --------------------------------------------------

struct PlanStep {
  bool forward = true;
  int node = 0;  // forward steps
  GradOp op;     // backward steps
};

enum class BufferCategory { kActivation, kGradient, kWeightCopy };

struct TrainBuffer {
  std::string name;
  BufferCategory category = BufferCategory::kActivation;
  int64_t size = 0;
  int first = 0;  // inclusive step range
  int last = 0;
};

/// Forward steps (one per node) followed by the backward ops.
struct TrainStepPlan {
  BackwardGraph backward;
  bool reordered = false;
  std::vector<PlanStep> steps;
  std::vector<TrainBuffer> buffers;
  int64_t peak = 0;
};

/// Each layer's updates run right after the layer's last gradient op, so its
/// gradient buffers die before earlier layers are visited.
TrainStepPlan reorder_inplace(const Graph& graph, const BackwardGraph& bg);
// Every gradient first, then every update.
TrainStepPlan schedule_baseline(const Graph& graph, const BackwardGraph& bg);
// Forward steps only, with the buffers of plan_memory.
TrainStepPlan inference_plan(const Graph& graph);

struct MemBreakdown {
  int64_t activations = 0;
  int64_t gradients = 0;
  int64_t weight_copies = 0;
  int64_t total() const { return activations + gradients + weight_copies; }
};

struct MemTrace {
  std::vector<int64_t> live;  // per step
  int64_t peak = 0;
  int peak_step = 0;
  MemBreakdown at_peak;
};

MemTrace trace_memory(const TrainStepPlan& plan);

// --- quantized update rules ------------------------------------------------------------

/// Weight grads (trailing dim = output channel) times s_W[c]^-2, bias grads
/// times (s_W[c] * s_x)^-2. Either span may be empty.
void qas_scale(std::span<double> weight_grads, std::span<double> bias_grads, const ScaleVector& s_w, double s_x);

/// clamp(rhe(W - lr * g), -128, 127) over channels with mask[c] set (all when
/// the mask is empty). Scales unchanged.
QuantTensor sgd_step_int8(const QuantTensor& weights, std::span<const double> grads, double lr, std::span<const char> mask = {});
AccTensor sgd_step_int32(const AccTensor& bias, std::span<const double> grads, double lr);

// --- training ----------------------------------------------------------------------------

enum class TrainMode {
  kReal,     // real-valued graph, double arithmetic
  kInt8,     // real quantized graph, gradients taken wrt the int8 values
  kInt8QAS,  // as kInt8 with quantization-aware scaling
};
const char* train_mode_name(TrainMode mode);

struct TrainOptions {
  int grad_accum = 1;
  bool reorder = true;
};

using GradientMap = std::map<std::pair<GradOpKind, int>, std::vector<double>>;

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
};

/// One training session. Owns the mutable parameters; not thread-safe.
/// Forward activations and all gradients are real-valued; in the int8 modes
/// the forward pass is the int8 engine up to the classifier, and rounding is
/// treated as identity in the backward pass.
class Trainer {
 public:
  Trainer(const Graph& graph, const UpdateScheme& scheme, TrainMode mode, const TrainOptions& options = {});

  // Forward, backward and accumulate one sample; updates are applied every
  // grad_accum samples. Returns the sample loss.
  double step(const FloatTensor& x, int label, double lr);
  EvalMetrics train_epoch(const Dataset& data, double lr, Rng& rng);
  EvalMetrics evaluate(const Dataset& data) const;

  std::vector<double> logits(const FloatTensor& x) const;
  double loss(const FloatTensor& x, int label) const;
  // Concatenated ReLU6 pass-through masks of a forward pass.
  std::vector<char> activation_pattern(const FloatTensor& x) const;

  /// Gradients of one sample through `bg` (applies skipped), keyed by op.
  GradientMap gradients(const FloatTensor& x, int label, const BackwardGraph& bg) const;

  // Real-valued parameters (kReal); perturbing them changes the forward pass.
  std::vector<double>& real_weight(int node) { return params_.at(static_cast<size_t>(node)).w; }
  std::vector<double>& real_bias(int node) { return params_.at(static_cast<size_t>(node)).b; }

  // Graph with the trained parameters written back.
  Graph graph() const;
  const TrainStepPlan& plan() const { return plan_; }
  TrainMode mode() const { return mode_; }

 private:
  struct Params {
    std::vector<double> w, b;  // real values; dequantized mirrors in the int8 modes
    std::vector<int8_t> qw;
    std::vector<int32_t> qb;
    std::vector<double> s_w;   // per output channel
    double s_x = 1.0;
    std::vector<double> acc_w, acc_b;
    std::vector<char> channel_mask;
  };
  struct Forward;

  Forward forward(const FloatTensor& x) const;
  void backward(const Forward& f, int label, std::span<const PlanStep> steps, GradientMap* out, double lr);
  void run_grad_op(const GradOp& op, const BackwardGraph& bg, const Forward& f, int label, std::map<int, std::vector<double>>& grads, std::vector<char>& masked, GradientMap& results) const;
  void commit(int node, bool weight, double lr);

  Graph graph_;
  ShapeTable shapes_;
  UpdateScheme scheme_;
  TrainMode mode_;
  TrainOptions options_;
  TrainStepPlan plan_;
  std::vector<Params> params_;
  std::vector<kernels::QLayer> layers_;  // int8 modes
  std::vector<std::vector<int>> users_;
  int classifier_ = 0;
  int pending_ = 0;  // samples accumulated since the last update
};

struct TrainConfig {
  int epochs = 10;
  double lr = 0.05;
  bool cosine = true;  // cosine decay to 0 over the run, else constant
  int grad_accum = 1;
  bool reorder = true;
  uint64_t seed = 0;
};

struct TrainResult {
  Graph graph;
  std::vector<EvalMetrics> train;  // per epoch
  std::vector<EvalMetrics> eval;
};

double lr_at(const TrainConfig& config, int epoch);

TrainResult train(const Graph& graph, const UpdateScheme& scheme, TrainMode mode, const Dataset& train_data, const Dataset& eval_data, const TrainConfig& config);

// --- toy workloads -------------------------------------------------------------------------

/// 8x8x3 input, six 3x3/1x1 convs up to 64 channels, global pool, fp32 linear.
Graph toy_cnn(int num_classes = 2, uint64_t seed = 0);

/// Pretrains `toy_cnn` on the "bars" task in real arithmetic, quantizes it
/// and resets the classifier for `target_task`.
struct TransferTask {
  Graph pretrained;  // quantized
  Dataset train;
  Dataset eval;
};
TransferTask make_transfer_task(uint64_t seed, const std::string& target_task = "diagonal");

}  // namespace tinyplan

#endif  // TINYPLAN_TTE_HPP_
