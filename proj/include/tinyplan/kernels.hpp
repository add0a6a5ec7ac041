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
#ifndef TINYPLAN_KERNELS_HPP_
#define TINYPLAN_KERNELS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "tinyplan/graph.hpp"

namespace tinyplan::kernels {

/// Rectangle on a feature map. `row`/`col` may be negative before clamping.
struct Region {
  int row = 0;
  int col = 0;
  int height = 0;
  int width = 0;

  int64_t area() const { return int64_t{height} * width; }
  bool operator==(const Region&) const = default;
};

Region clamp(const Region& r, int map_h, int map_w);
Region bounding_union(const Region& a, const Region& b);

/// Read-only window over an int8 HWC map. Coordinates are in map space;
/// anything outside the map reads as zero padding.
struct QView {
  const int8_t* data = nullptr;
  Region region;  // extent of `data` within the map
  int channels = 0;
  int map_h = 0;
  int map_w = 0;

  int8_t at(int y, int x, int c) const {
    if (y < 0 || x < 0 || y >= map_h || x >= map_w) return 0;
    return data[(static_cast<int64_t>(y - region.row) * region.width + (x - region.col)) * channels + c];
  }
  static QView full(const int8_t* data, int h, int w, int c) { return {data, {0, 0, h, w}, c, h, w}; }
};

/// Integer constants of one layer of the real quantized graph, precomputed
/// once. Requantization is one double multiply followed by round-half-even.
struct QLayer {
  OpKind kind = OpKind::kConv2D;
  LayerAttrs attrs;
  int pad = 0;
  int in_h = 0, in_w = 0, in_c = 0;
  int out_h = 0, out_w = 0, out_c = 0;

  std::vector<int8_t> weight;    // (k, k, C_in/groups, C_out)
  std::vector<int32_t> bias;     // C_out
  std::vector<double> multiplier;  // per output channel: s_W * s_x / s_y
  int relu_max = 127;            // round(6 / s_y), capped at 127

  // fp32 classifier
  bool fp32 = false;
  std::vector<float> fweight, fbias;
  double in_scale = 1.0;
  double inv_out_scale = 1.0;

  // Add: per-operand rescale to the output scale; AvgPool: s_x / (s_y * window)
  double mult_a = 1.0, mult_b = 1.0;
  double pool_mult = 1.0;
};

QLayer prepare_layer(const Graph& graph, const ShapeTable& shapes, int id);

inline int8_t requant(int64_t acc, double multiplier) {
  return saturate_int8(round_half_even(static_cast<double>(acc) * multiplier));
}

inline int8_t apply_relu6(int8_t q, const QLayer& l) {
  if (!l.attrs.relu6) return q;
  if (q < 0) return 0;
  return q > l.relu_max ? static_cast<int8_t>(l.relu_max) : q;
}

/// Computes `out_region` of the layer output into `out` (region-local HWC).
/// Serial; used for patches and as the row worker of run_full.
void run_region(const QLayer& layer, std::span<const QView> inputs, const Region& out_region, int8_t* out);

/// Whole-map evaluation, OpenMP-parallel over output rows.
void run_full(const QLayer& layer, std::span<const QView> inputs, int8_t* out);

/// im2col convolution tiled along output width. `scratch` must hold
/// tile_width * k^2 * C_in/groups bytes. Returns the scratch high-water mark.
int64_t conv_im2col_tiled(const QLayer& layer, const int8_t* in, int8_t* out, int tile_width, std::span<int8_t> scratch);

/// Stride-1 shape-preserving depthwise conv computed in place in `buffer`,
/// with one channel plane (H * W bytes) of temporary storage.
void depthwise_inplace(const QLayer& layer, int8_t* buffer, std::span<int8_t> plane);

bool can_run_inplace(const QLayer& layer);

/// Naive serial oracles over whole tensors. Written independently of the
/// kernels above; tests only.
namespace ref {
std::vector<int8_t> conv(const QLayer& layer, std::span<const int8_t> in);
std::vector<int8_t> depthwise(const QLayer& layer, std::span<const int8_t> in);
std::vector<int8_t> linear(const QLayer& layer, std::span<const int8_t> in);
std::vector<int8_t> add(const QLayer& layer, std::span<const int8_t> a, std::span<const int8_t> b);
std::vector<int8_t> avg_pool(const QLayer& layer, std::span<const int8_t> in);
}  // namespace ref

}  // namespace tinyplan::kernels

#endif  // TINYPLAN_KERNELS_HPP_
