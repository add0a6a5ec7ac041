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
#ifndef TINYPLAN_REAL_OPS_HPP_
#define TINYPLAN_REAL_OPS_HPP_

// Real-arithmetic layer kernels over channels-last tensors. Every output
// element is produced by exactly one thread with a fixed summation order, so
// results do not depend on the thread count.

#include <algorithm>
#include <span>
#include <vector>

#include "tinyplan/graph.hpp"

namespace tinyplan::real {

struct Dims {
  int h = 1, w = 1, c = 1;
  size_t size() const { return static_cast<size_t>(h) * w * c; }
};

inline Dims dims_of(const Shape& s) { return {s[0], s[1], s[2]}; }

struct Window {
  int kernel = 1, stride = 1, pad = 0;
};

inline Window window_of(const LayerNode& n) { return {n.attrs.kernel, n.attrs.stride, n.pad_before()}; }

// --- forward -------------------------------------------------------------------

template <typename T, typename W>
void conv_forward(const Window& win, Dims in, std::span<const T> x, std::span<const W> weight, std::span<const W> bias, Dims out, std::span<T> y) {
  const int k = win.kernel;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < out.h; ++oy) {
    std::vector<double> acc(static_cast<size_t>(out.c));
    for (int ox = 0; ox < out.w; ++ox) {
      for (int co = 0; co < out.c; ++co) acc[static_cast<size_t>(co)] = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<size_t>(co)]);
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * win.stride - win.pad + ky;
        if (iy < 0 || iy >= in.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * win.stride - win.pad + kx;
          if (ix < 0 || ix >= in.w) continue;
          const T* px = x.data() + (static_cast<size_t>(iy) * in.w + ix) * in.c;
          const W* wk = weight.data() + static_cast<size_t>((ky * k + kx) * in.c) * out.c;
          for (int ci = 0; ci < in.c; ++ci) {
            const double xv = px[ci];
            const W* wr = wk + static_cast<size_t>(ci) * out.c;
            for (int co = 0; co < out.c; ++co) acc[static_cast<size_t>(co)] += xv * static_cast<double>(wr[co]);
          }
        }
      }
      T* o = y.data() + (static_cast<size_t>(oy) * out.w + ox) * out.c;
      for (int co = 0; co < out.c; ++co) o[co] = static_cast<T>(acc[static_cast<size_t>(co)]);
    }
  }
}

template <typename T, typename W>
void depthwise_forward(const Window& win, Dims in, std::span<const T> x, std::span<const W> weight, std::span<const W> bias, Dims out, std::span<T> y) {
  const int k = win.kernel, c = in.c;
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < out.h; ++oy) {
    for (int ox = 0; ox < out.w; ++ox) {
      T* o = y.data() + (static_cast<size_t>(oy) * out.w + ox) * c;
      for (int ch = 0; ch < c; ++ch) {
        double acc = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<size_t>(ch)]);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * win.stride - win.pad + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * win.stride - win.pad + kx;
            if (ix < 0 || ix >= in.w) continue;
            acc += static_cast<double>(x[(static_cast<size_t>(iy) * in.w + ix) * c + ch]) * static_cast<double>(weight[static_cast<size_t>((ky * k + kx) * c + ch)]);
          }
        }
        o[ch] = static_cast<T>(acc);
      }
    }
  }
}

template <typename T, typename W>
void linear_forward(int features, int nout, std::span<const T> x, std::span<const W> weight, std::span<const W> bias, std::span<T> y) {
  for (int o = 0; o < nout; ++o) {
    double acc = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<size_t>(o)]);
    for (int i = 0; i < features; ++i) acc += static_cast<double>(weight[static_cast<size_t>(i) * nout + o]) * static_cast<double>(x[static_cast<size_t>(i)]);
    y[static_cast<size_t>(o)] = static_cast<T>(acc);
  }
}

template <typename T>
void avg_pool_forward(int kernel, int stride, Dims in, std::span<const T> x, Dims out, std::span<T> y) {
  const bool global = kernel == 0;
  const int kh = global ? in.h : kernel, kw = global ? in.w : kernel;
  const double inv = 1.0 / (static_cast<double>(kh) * kw);
  for (int oy = 0; oy < out.h; ++oy)
    for (int ox = 0; ox < out.w; ++ox)
      for (int c = 0; c < in.c; ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < kh; ++dy)
          for (int dx = 0; dx < kw; ++dx) {
            const int iy = global ? dy : oy * stride + dy, ix = global ? dx : ox * stride + dx;
            acc += static_cast<double>(x[(static_cast<size_t>(iy) * in.w + ix) * in.c + c]);
          }
        y[(static_cast<size_t>(oy) * out.w + ox) * out.c + c] = static_cast<T>(acc * inv);
      }
}

template <typename T>
void relu6_inplace(std::span<T> v) {
  for (auto& e : v) e = std::clamp(e, T(0), T(6));
}

// --- backward ------------------------------------------------------------------

// grad wrt input of a dense conv, gather form (owner of each input element sums)
template <typename T, typename W>
void conv_backward_input(const Window& win, Dims in, std::span<const W> weight, Dims out, std::span<const T> gy, std::span<T> gx) {
  const int k = win.kernel;
#pragma omp parallel for schedule(static)
  for (int iy = 0; iy < in.h; ++iy) {
    std::vector<double> acc(static_cast<size_t>(in.c));
    for (int ix = 0; ix < in.w; ++ix) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ky = 0; ky < k; ++ky) {
        const int ny = iy + win.pad - ky;
        if (ny < 0 || ny % win.stride != 0) continue;
        const int oy = ny / win.stride;
        if (oy >= out.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int nx = ix + win.pad - kx;
          if (nx < 0 || nx % win.stride != 0) continue;
          const int ox = nx / win.stride;
          if (ox >= out.w) continue;
          const T* g = gy.data() + (static_cast<size_t>(oy) * out.w + ox) * out.c;
          const W* wk = weight.data() + static_cast<size_t>((ky * k + kx) * in.c) * out.c;
          for (int ci = 0; ci < in.c; ++ci) {
            const W* wr = wk + static_cast<size_t>(ci) * out.c;
            double s = 0.0;
            for (int co = 0; co < out.c; ++co) s += static_cast<double>(wr[co]) * static_cast<double>(g[co]);
            acc[static_cast<size_t>(ci)] += s;
          }
        }
      }
      T* o = gx.data() + (static_cast<size_t>(iy) * in.w + ix) * in.c;
      for (int ci = 0; ci < in.c; ++ci) o[ci] = static_cast<T>(acc[static_cast<size_t>(ci)]);
    }
  }
}

// grad wrt weights of a dense conv; channels with mask[co] == 0 are skipped
// and left untouched (sub-operator slicing).
template <typename T, typename G>
void conv_backward_weight(const Window& win, Dims in, std::span<const T> x, Dims out, std::span<const T> gy, std::span<G> gw, std::span<const char> mask = {}) {
  const int k = win.kernel;
  const int taps = k * k * in.c;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < taps; ++t) {
    const int ci = t % in.c, kk = t / in.c, ky = kk / k, kx = kk % k;
    std::vector<double> acc(static_cast<size_t>(out.c), 0.0);
    for (int oy = 0; oy < out.h; ++oy) {
      const int iy = oy * win.stride - win.pad + ky;
      if (iy < 0 || iy >= in.h) continue;
      for (int ox = 0; ox < out.w; ++ox) {
        const int ix = ox * win.stride - win.pad + kx;
        if (ix < 0 || ix >= in.w) continue;
        const double xv = x[(static_cast<size_t>(iy) * in.w + ix) * in.c + ci];
        if (xv == 0.0) continue;
        const T* g = gy.data() + (static_cast<size_t>(oy) * out.w + ox) * out.c;
        for (int co = 0; co < out.c; ++co) acc[static_cast<size_t>(co)] += xv * static_cast<double>(g[co]);
      }
    }
    G* dst = gw.data() + static_cast<size_t>(t) * out.c;
    for (int co = 0; co < out.c; ++co) {
      if (!mask.empty() && !mask[static_cast<size_t>(co)]) continue;
      dst[co] = static_cast<G>(acc[static_cast<size_t>(co)]);
    }
  }
}

template <typename T, typename W>
void depthwise_backward_input(const Window& win, Dims in, std::span<const W> weight, Dims out, std::span<const T> gy, std::span<T> gx) {
  const int k = win.kernel, c = in.c;
#pragma omp parallel for schedule(static)
  for (int iy = 0; iy < in.h; ++iy) {
    for (int ix = 0; ix < in.w; ++ix) {
      T* o = gx.data() + (static_cast<size_t>(iy) * in.w + ix) * c;
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int ky = 0; ky < k; ++ky) {
          const int ny = iy + win.pad - ky;
          if (ny < 0 || ny % win.stride != 0 || ny / win.stride >= out.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int nx = ix + win.pad - kx;
            if (nx < 0 || nx % win.stride != 0 || nx / win.stride >= out.w) continue;
            acc += static_cast<double>(weight[static_cast<size_t>((ky * k + kx) * c + ch)]) *
                   static_cast<double>(gy[(static_cast<size_t>(ny / win.stride) * out.w + nx / win.stride) * c + ch]);
          }
        }
        o[ch] = static_cast<T>(acc);
      }
    }
  }
}

template <typename T, typename G>
void depthwise_backward_weight(const Window& win, Dims in, std::span<const T> x, Dims out, std::span<const T> gy, std::span<G> gw, std::span<const char> mask = {}) {
  const int k = win.kernel, c = in.c;
#pragma omp parallel for schedule(static)
  for (int kk = 0; kk < k * k; ++kk) {
    const int ky = kk / k, kx = kk % k;
    for (int ch = 0; ch < c; ++ch) {
      if (!mask.empty() && !mask[static_cast<size_t>(ch)]) continue;
      double acc = 0.0;
      for (int oy = 0; oy < out.h; ++oy) {
        const int iy = oy * win.stride - win.pad + ky;
        if (iy < 0 || iy >= in.h) continue;
        for (int ox = 0; ox < out.w; ++ox) {
          const int ix = ox * win.stride - win.pad + kx;
          if (ix < 0 || ix >= in.w) continue;
          acc += static_cast<double>(x[(static_cast<size_t>(iy) * in.w + ix) * c + ch]) * static_cast<double>(gy[(static_cast<size_t>(oy) * out.w + ox) * c + ch]);
        }
      }
      gw[static_cast<size_t>(kk * c + ch)] = static_cast<G>(acc);
    }
  }
}

template <typename T, typename W>
void linear_backward_input(int features, int nout, std::span<const W> weight, std::span<const T> gy, std::span<T> gx) {
  for (int i = 0; i < features; ++i) {
    double acc = 0.0;
    for (int o = 0; o < nout; ++o) acc += static_cast<double>(weight[static_cast<size_t>(i) * nout + o]) * static_cast<double>(gy[static_cast<size_t>(o)]);
    gx[static_cast<size_t>(i)] = static_cast<T>(acc);
  }
}

// G_W = x G_y^T
template <typename T, typename G>
void linear_backward_weight(int features, int nout, std::span<const T> x, std::span<const T> gy, std::span<G> gw, std::span<const char> mask = {}) {
  for (int i = 0; i < features; ++i)
    for (int o = 0; o < nout; ++o) {
      if (!mask.empty() && !mask[static_cast<size_t>(o)]) continue;
      gw[static_cast<size_t>(i) * nout + o] = static_cast<G>(static_cast<double>(x[static_cast<size_t>(i)]) * static_cast<double>(gy[static_cast<size_t>(o)]));
    }
}

// G_b: spatial sum of the pre-activation gradient
template <typename T, typename G>
void bias_backward(Dims out, std::span<const T> gy, std::span<G> gb) {
  for (int c = 0; c < out.c; ++c) {
    double acc = 0.0;
    for (size_t p = 0; p < static_cast<size_t>(out.h) * out.w; ++p) acc += static_cast<double>(gy[p * out.c + c]);
    gb[static_cast<size_t>(c)] = static_cast<G>(acc);
  }
}

template <typename T>
void avg_pool_backward(int kernel, int stride, Dims in, Dims out, std::span<const T> gy, std::span<T> gx) {
  const bool global = kernel == 0;
  const int kh = global ? in.h : kernel, kw = global ? in.w : kernel;
  const double inv = 1.0 / (static_cast<double>(kh) * kw);
  std::fill(gx.begin(), gx.end(), T(0));
  for (int oy = 0; oy < out.h; ++oy)
    for (int ox = 0; ox < out.w; ++ox)
      for (int c = 0; c < in.c; ++c) {
        const double g = static_cast<double>(gy[(static_cast<size_t>(oy) * out.w + ox) * out.c + c]) * inv;
        for (int dy = 0; dy < kh; ++dy)
          for (int dx = 0; dx < kw; ++dx) {
            const int iy = global ? dy : oy * stride + dy, ix = global ? dx : ox * stride + dx;
            gx[(static_cast<size_t>(iy) * in.w + ix) * in.c + c] += static_cast<T>(g);
          }
      }
}

}  // namespace tinyplan::real

#endif  // TINYPLAN_REAL_OPS_HPP_
