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
// Central finite differences over every real-valued parameter.
#ifndef TINYPLAN_TESTS_GRAD_ORACLE_HPP_
#define TINYPLAN_TESTS_GRAD_ORACLE_HPP_

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "tinyplan/tte.hpp"

namespace tinyplan::testing {

struct FdReport {
  int checked = 0;
  int skipped = 0;  // perturbation crossed a ReLU6 kink
  int failed = 0;
  double max_rel_error = 0.0;
};

inline bool grads_agree(double analytic, double numeric, double tol, double* rel) {
  const double diff = std::fabs(analytic - numeric);
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  *rel = scale > 0.0 ? diff / scale : 0.0;
  return diff <= tol * scale || diff < 1e-9;
}

/// Compares the full-scheme analytic gradients of one sample against
/// (L(p + eps) - L(p - eps)) / 2eps for every weight and bias.
inline FdReport finite_difference_check(const Graph& g, const FloatTensor& x, int label, double eps = 1e-3, double tol = 1e-4) {
  Trainer t(g, full_scheme(g), TrainMode::kReal);
  const auto grads = t.gradients(x, label, derive_backward(g, full_scheme(g)));
  const auto base_pattern = t.activation_pattern(x);
  FdReport r;
  for (const auto& n : g.nodes) {
    if (!n.parametric()) continue;
    for (int which = 0; which < 2; ++which) {
      auto& params = which == 0 ? t.real_weight(n.id) : t.real_bias(n.id);
      const auto& analytic = grads.at({which == 0 ? GradOpKind::kWeight : GradOpKind::kBias, n.id});
      for (size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + eps;
        const double up = t.loss(x, label);
        const bool kink_up = t.activation_pattern(x) != base_pattern;
        params[i] = saved - eps;
        const double down = t.loss(x, label);
        const bool kink_down = t.activation_pattern(x) != base_pattern;
        params[i] = saved;
        if (kink_up || kink_down) {
          ++r.skipped;
          continue;
        }
        double rel = 0.0;
        ++r.checked;
        if (!grads_agree(analytic[i], (up - down) / (2.0 * eps), tol, &rel)) ++r.failed;
        r.max_rel_error = std::max(r.max_rel_error, rel);
      }
    }
  }
  return r;
}

// Small nets keep the per-parameter forward passes cheap.
inline NetOptions small_net_options() {
  NetOptions o;
  o.sizes = {6, 8};
  o.max_channels_in = 3;
  o.max_blocks = 3;
  return o;
}

}  // namespace tinyplan::testing

#endif  // TINYPLAN_TESTS_GRAD_ORACLE_HPP_
