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
#include "tinyplan/qtensor.hpp"

namespace tinyplan {
namespace {

TEST_CASE("compute_scales per tensor and per channel") {
  FloatTensor w(Shape{1, 1, 2, 1}, {2.54f, -1.0f});
  CHECK(compute_scales(w, ScaleMode::kPerTensor)[0] == doctest::Approx(2.54 / 127.0));

  FloatTensor pc(Shape{1, 1, 2, 2}, {1.27f, -12.7f, 0.5f, 3.0f});
  const auto s = compute_scales(pc, ScaleMode::kPerChannel);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(1.27 / 127.0));
  CHECK(s[1] == doctest::Approx(12.7 / 127.0));

  FloatTensor zero(Shape{1, 1, 3, 2});
  CHECK(compute_scales(zero, ScaleMode::kPerTensor)[0] == 1.0f);
  CHECK(compute_scales(zero, ScaleMode::kPerChannel).values() == std::vector<float>{1.0f, 1.0f});

  CHECK_THROWS_AS(FloatTensor(Shape{2}, {1.0f, NAN}), Error);
  FloatTensor bad(Shape{2}, {1.0f, 2.0f});
  bad[1] = NAN;
  CHECK_THROWS_AS(compute_scales(bad, ScaleMode::kPerTensor), Error);
}

TEST_CASE("quantize saturates and rounds half to even") {
  FloatTensor x(Shape{5}, {0.0f, 1.27f, 10.0f, -10.0f, 0.0f});
  const auto q = quantize(x, ScaleVector{0.01f});
  CHECK(q[0] == 0);
  CHECK(q[1] == 127);
  CHECK(q[2] == 127);
  CHECK(q[3] == -128);
  const auto half = quantize(FloatTensor(Shape{3}, {1.25f, 1.75f, -1.25f}), ScaleVector{0.5f});
  CHECK(half[0] == 2);
  CHECK(half[1] == 4);
  CHECK(half[2] == -2);

  CHECK(round_half_even(2.5) == 2.0);
  CHECK(round_half_even(3.5) == 4.0);
  CHECK(round_half_even(-2.5) == -2.0);
  CHECK(round_half_even(-3.5) == -4.0);
  CHECK(round_half_even(-0.4) == 0.0);
  CHECK(round_half_even(96.6) == 97.0);
}

TEST_CASE("dequantize and round trip") {
  QuantTensor q(Shape{2}, {127, 0}, ScaleVector{0.02f});
  const auto f = dequantize(q);
  CHECK(f[0] == doctest::Approx(2.54));
  CHECK(f[1] == 0.0f);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto r = testing::random_quant(Shape{3, 4, 5}, static_cast<float>(rng.uniform(0.001, 2.0)), rng);
    CHECK(quantize(dequantize(r), r.scale()) == r);
  }
}

TEST_CASE("quantization error is within half a step") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const float s = static_cast<float>(rng.uniform(0.001, 0.5));
    const auto x = testing::random_float(Shape{64}, rng, -127.0 * s, 127.0 * s);
    const auto back = dequantize(quantize(x, ScaleVector{s}));
    for (size_t i = 0; i < x.size(); ++i) CHECK(std::fabs(back[i] - x[i]) <= s / 2 * (1 + 1e-5));
    // symmetry away from -128
    FloatTensor neg(x.shape());
    for (size_t i = 0; i < x.size(); ++i) neg[i] = -x[i];
    const auto qp = quantize(x, ScaleVector{s});
    const auto qn = quantize(neg, ScaleVector{s});
    for (size_t i = 0; i < x.size(); ++i) CHECK(qn[i] == -qp[i]);
  }
}

TEST_CASE("requantize_cast") {
  AccTensor acc(Shape{3}, {0, 1000, 1000000});
  const auto q = requantize_cast(acc, ScaleVector{0.05f}, ScaleVector{1.0f});
  CHECK(q[0] == 0);
  CHECK(q[1] == 50);
  CHECK(q[2] == 127);
  CHECK_THROWS_AS(ScaleVector({0.0f}), Error);
  CHECK_THROWS_AS(ScaleVector({-1.0f}), Error);
}

TEST_CASE("tensor blobs round trip") {
  Rng rng(3);
  const auto f = testing::random_float(Shape{2, 3, 4}, rng);
  CHECK(float_from_blob(decode_blob(encode_blob(to_blob(f)))) == f);
  QuantTensor q = testing::random_quant(Shape{4, 4}, 0.5f, rng);
  CHECK(quant_from_blob(decode_blob(encode_blob(to_blob(q)))) == q);
  AccTensor a(Shape{3}, {-5, 0, 1 << 20});
  CHECK(acc_from_blob(decode_blob(encode_blob(to_blob(a)))) == a);

  auto bytes = encode_blob(to_blob(q));
  bytes.resize(bytes.size() - 1);
  CHECK_THROWS_AS(decode_blob(bytes), IoError);

  TensorBlob no_scale = to_blob(q);
  no_scale.scales.clear();
  CHECK_THROWS_AS(quant_from_blob(no_scale), IoError);
}

}  // namespace
}  // namespace tinyplan
