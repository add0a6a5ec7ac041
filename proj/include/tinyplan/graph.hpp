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
#ifndef TINYPLAN_GRAPH_HPP_
#define TINYPLAN_GRAPH_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinyplan/qtensor.hpp"

namespace tinyplan {

enum class OpKind { kConv2D, kDepthwiseConv2D, kLinear, kAdd, kAvgPool };
enum class Padding { kSame, kValid };

const char* op_name(OpKind kind);
std::optional<OpKind> parse_op_name(const std::string& name);

// Predecessor id referring to the graph input tensor.
inline constexpr int kGraphInput = -1;

struct LayerAttrs {
  int kernel = 1;  // 0 on AvgPool means global pooling
  int stride = 1;
  Padding padding = Padding::kSame;
  int in_channels = 0;
  int out_channels = 0;
  int groups = 1;
  bool relu6 = false;
  int block = -1;  // backbone block index, -1 for head layers

  bool operator==(const LayerAttrs&) const = default;
};

/// One post-fusion layer. `weight`/`bias` hold the real-valued parameters;
/// the q* fields hold the int8 deployment state once the graph is quantized.
struct LayerNode {
  int id = 0;
  OpKind kind = OpKind::kConv2D;
  LayerAttrs attrs;
  std::vector<int> preds;

  FloatTensor weight;  // (k, k, C_in/groups, C_out)
  FloatTensor bias;    // (C_out)

  // Kept in 32-bit real precision end to end (the classifier).
  bool fp32 = false;
  QuantTensor qweight;
  AccTensor qbias;          // int32, scale = s_W[c] * s_x
  float out_scale = 0.0f;   // activation scale of this node's output, 0 = unassigned

  bool parametric() const { return kind == OpKind::kConv2D || kind == OpKind::kDepthwiseConv2D || kind == OpKind::kLinear; }
  int pad_before() const { return attrs.padding == Padding::kSame ? (attrs.kernel - 1) / 2 : 0; }

  bool operator==(const LayerNode&) const = default;
};

/// Topologically ordered single-input, single-output DAG. Node ids equal their
/// positions; the last node is the output.
struct Graph {
  Shape input;  // (r, r, 3)
  float input_scale = 0.0f;
  std::vector<LayerNode> nodes;

  const LayerNode& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
  LayerNode& node(int id) { return nodes.at(static_cast<size_t>(id)); }
  int output_id() const { return static_cast<int>(nodes.size()) - 1; }
  bool quantized() const;
  bool has_weights() const;

  bool operator==(const Graph&) const = default;
};

struct ShapeTable {
  Shape input;
  std::vector<Shape> outputs;  // indexed by node id

  const Shape& of(int id) const { return id == kGraphInput ? input : outputs.at(static_cast<size_t>(id)); }
};

/// Checks structure, attribute consistency, shapes and accumulator width.
/// Throws Error with a per-node diagnostic.
ShapeTable validate(const Graph& graph);

// Spatial output size for a windowed op along one axis.
int windowed_out_size(int in, int kernel, int stride, Padding padding);

struct Cost {
  int64_t macs = 0;
  int64_t param_bytes = 0;
};

/// MACs count conv/linear multiply-accumulates only. Params are int8 weights and
/// int32 biases, or 4-byte reals for fp32 layers.
Cost count_flops_params(const Graph& graph);
int64_t node_macs(const LayerNode& node, const ShapeTable& shapes);
int64_t node_param_bytes(const LayerNode& node);

/// Consumers of each node id (index kGraphInput stored at the back).
std::vector<std::vector<int>> consumers(const Graph& graph);

// --- construction -------------------------------------------------------------

class GraphBuilder {
 public:
  explicit GraphBuilder(Shape input);

  int conv(int pred, int out_channels, int kernel, int stride, bool relu6, Padding padding = Padding::kSame);
  int depthwise(int pred, int kernel, int stride, bool relu6, Padding padding = Padding::kSame);
  int linear(int pred, int out_features, bool fp32 = true);
  int add(int a, int b);
  int avg_pool(int pred, int kernel, int stride);  // kernel 0: global
  void set_block(int block) { block_ = block; }

  // Channels and spatial dims of a node output (kGraphInput for the input).
  const Shape& shape_of(int id) const;
  Graph finish() &&;

 private:
  int push(LayerNode node, Shape out);

  Graph graph_;
  std::vector<Shape> shapes_;
  int block_ = -1;
};

/// Fills every parametric layer with seeded He-uniform weights and small biases.
void init_weights(Graph& graph, uint64_t seed);

// --- serialization ------------------------------------------------------------

struct SerializedModel {
  std::string json;
  std::vector<uint8_t> blobs;
};

SerializedModel serialize(const Graph& graph, const std::string& blob_file = "model.bin");
Graph deserialize(const std::string& json, std::span<const uint8_t> blobs);

// model.json plus a sidecar "<stem>.bin"
void save_model(const Graph& graph, const std::string& json_path);
Graph load_model(const std::string& json_path);

}  // namespace tinyplan

#endif  // TINYPLAN_GRAPH_HPP_
