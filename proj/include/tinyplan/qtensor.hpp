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
#ifndef TINYPLAN_QTENSOR_HPP_
#define TINYPLAN_QTENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tinyplan {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for I/O and parse failures so the CLI can map them to their own exit code.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Tensor dimensions. Activations are channels-last (H, W, C); weights are
/// (K_h, K_w, C_in / groups, C_out).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims);
  explicit Shape(std::vector<int> dims);

  int rank() const { return static_cast<int>(dims_.size()); }
  int operator[](int i) const { return dims_.at(static_cast<size_t>(i)); }
  const std::vector<int>& dims() const { return dims_; }
  size_t elements() const;
  // Size of the trailing dimension, i.e. channels for activations and C_out for weights.
  int last() const { return dims_.empty() ? 1 : dims_.back(); }

  bool operator==(const Shape&) const = default;
  std::string str() const;

 private:
  std::vector<int> dims_;
};

/// Strictly positive, finite scale factors. Length 1 (per-tensor) or one per
/// output channel.
class ScaleVector {
 public:
  ScaleVector() : values_{1.0f} {}
  ScaleVector(std::initializer_list<float> values);
  explicit ScaleVector(std::vector<float> values);

  size_t size() const { return values_.size(); }
  float operator[](size_t i) const { return values_[i]; }
  // Scale that applies to the given trailing-dim channel.
  float for_channel(int c) const { return values_.size() == 1 ? values_[0] : values_[static_cast<size_t>(c)]; }
  const std::vector<float>& values() const { return values_; }
  bool per_channel() const { return values_.size() > 1; }

  bool operator==(const ScaleVector&) const = default;

 private:
  std::vector<float> values_;
};

class FloatTensor {
 public:
  FloatTensor() = default;
  explicit FloatTensor(Shape shape);
  FloatTensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  float operator[](size_t i) const { return data_[i]; }
  float& operator[](size_t i) { return data_[i]; }

  bool operator==(const FloatTensor&) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

class QuantTensor {
 public:
  QuantTensor() = default;
  QuantTensor(Shape shape, ScaleVector scale);
  QuantTensor(Shape shape, std::vector<int8_t> data, ScaleVector scale);

  const Shape& shape() const { return shape_; }
  const ScaleVector& scale() const { return scale_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::span<const int8_t> data() const { return data_; }
  std::span<int8_t> data() { return data_; }
  int8_t operator[](size_t i) const { return data_[i]; }
  int8_t& operator[](size_t i) { return data_[i]; }

  bool operator==(const QuantTensor&) const = default;

 private:
  Shape shape_;
  std::vector<int8_t> data_;
  ScaleVector scale_;
};

class AccTensor {
 public:
  AccTensor() = default;
  explicit AccTensor(Shape shape);
  AccTensor(Shape shape, std::vector<int32_t> data);

  const Shape& shape() const { return shape_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::span<const int32_t> data() const { return data_; }
  std::span<int32_t> data() { return data_; }
  int32_t operator[](size_t i) const { return data_[i]; }
  int32_t& operator[](size_t i) { return data_[i]; }

  bool operator==(const AccTensor&) const = default;

 private:
  Shape shape_;
  std::vector<int32_t> data_;
};

enum class ScaleMode { kPerTensor, kPerChannel };

// Round half to even, written out explicitly so generated C code can mirror it
// exactly regardless of the active floating-point rounding mode.
inline double round_half_even(double v) {
  double r = static_cast<double>(static_cast<long long>(v));
  if (r > v) r -= 1.0;  // floor
  const double diff = v - r;
  if (diff > 0.5) return r + 1.0;
  if (diff < 0.5) return r;
  const long long ri = static_cast<long long>(r);
  return (ri % 2 == 0) ? r : r + 1.0;
}

inline int8_t saturate_int8(double v) {
  if (v > 127.0) return 127;
  if (v < -128.0) return -128;
  return static_cast<int8_t>(v);
}

inline int32_t saturate_int32(double v) {
  if (v > 2147483647.0) return 2147483647;
  if (v < -2147483648.0) return static_cast<int32_t>(-2147483647 - 1);
  return static_cast<int32_t>(v);
}

/// max|w| / 127 per tensor or per trailing (output) channel. All-zero groups
/// get scale 1.
ScaleVector compute_scales(const FloatTensor& weights, ScaleMode mode);

/// Same rule for activations: a single scale from max|x|.
float activation_scale(std::span<const float> values);

QuantTensor quantize(const FloatTensor& x, const ScaleVector& scale);
FloatTensor dequantize(const QuantTensor& q);

/// clamp(round_half_even(acc * s_total), -128, 127) where s_total is indexed by
/// the trailing channel.
QuantTensor requantize_cast(const AccTensor& acc, const ScaleVector& s_total, const ScaleVector& out_scale);

// --- binary dump format -----------------------------------------------------
// little-endian: rank u32, dims u32[rank], dtype u8, scale_len u32,
// scales f32[scale_len], payload.

enum class DType : uint8_t { kFloat32 = 0, kInt8 = 1, kInt32 = 2 };

struct TensorBlob {
  DType dtype = DType::kInt8;
  Shape shape;
  std::vector<float> scales;
  std::vector<uint8_t> payload;  // raw little-endian elements
};

std::vector<uint8_t> encode_blob(const TensorBlob& blob);
// Decodes one record starting at `bytes`; throws IoError on truncation.
TensorBlob decode_blob(std::span<const uint8_t> bytes, size_t* consumed = nullptr);

TensorBlob to_blob(const FloatTensor& t);
TensorBlob to_blob(const QuantTensor& t);
TensorBlob to_blob(const AccTensor& t);
FloatTensor float_from_blob(const TensorBlob& b);
QuantTensor quant_from_blob(const TensorBlob& b);
AccTensor acc_from_blob(const TensorBlob& b);

void write_tensor_file(const std::string& path, const TensorBlob& blob);
TensorBlob read_tensor_file(const std::string& path);

}  // namespace tinyplan

#endif  // TINYPLAN_QTENSOR_HPP_
