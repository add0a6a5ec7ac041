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
#include "tinyplan/qtensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace tinyplan {

static_assert(std::endian::native == std::endian::little, "tensor dumps assume a little-endian host");

Shape::Shape(std::initializer_list<int> dims) : Shape(std::vector<int>(dims)) {}

Shape::Shape(std::vector<int> dims) : dims_(std::move(dims)) {
  for (int d : dims_) {
    if (d < 1) throw Error("shape dimension must be >= 1, got " + std::to_string(d));
  }
}

size_t Shape::elements() const {
  size_t n = 1;
  for (int d : dims_) n *= static_cast<size_t>(d);
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
  os << ']';
  return os.str();
}

ScaleVector::ScaleVector(std::initializer_list<float> values) : ScaleVector(std::vector<float>(values)) {}

ScaleVector::ScaleVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error("scale vector must not be empty");
  for (float v : values_) {
    if (!std::isfinite(v) || v <= 0.0f) throw Error("scale must be positive and finite");
  }
}

FloatTensor::FloatTensor(Shape shape) : shape_(std::move(shape)), data_(shape_.elements(), 0.0f) {}

FloatTensor::FloatTensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.elements()) throw Error("float tensor data length does not match shape " + shape_.str());
  for (float v : data_) {
    if (!std::isfinite(v)) throw Error("float tensor contains a non-finite value");
  }
}

namespace {

void check_scale_fits(const Shape& shape, const ScaleVector& scale) {
  if (scale.size() != 1 && static_cast<int>(scale.size()) != shape.last()) {
    throw Error("scale length " + std::to_string(scale.size()) + " does not match channels of " + shape.str());
  }
}

}  // namespace

QuantTensor::QuantTensor(Shape shape, ScaleVector scale)
    : shape_(std::move(shape)), data_(shape_.elements(), 0), scale_(std::move(scale)) {
  check_scale_fits(shape_, scale_);
}

QuantTensor::QuantTensor(Shape shape, std::vector<int8_t> data, ScaleVector scale)
    : shape_(std::move(shape)), data_(std::move(data)), scale_(std::move(scale)) {
  if (data_.size() != shape_.elements()) throw Error("quant tensor data length does not match shape " + shape_.str());
  check_scale_fits(shape_, scale_);
}

AccTensor::AccTensor(Shape shape) : shape_(std::move(shape)), data_(shape_.elements(), 0) {}

AccTensor::AccTensor(Shape shape, std::vector<int32_t> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.elements()) throw Error("acc tensor data length does not match shape " + shape_.str());
}

ScaleVector compute_scales(const FloatTensor& weights, ScaleMode mode) {
  if (weights.empty()) throw Error("compute_scales: empty weights");
  const int channels = mode == ScaleMode::kPerChannel ? weights.shape().last() : 1;
  std::vector<float> maxima(static_cast<size_t>(channels), 0.0f);
  const auto data = weights.data();
  for (size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) throw Error("compute_scales: non-finite weight");
    const size_t c = channels == 1 ? 0 : i % static_cast<size_t>(channels);
    maxima[c] = std::max(maxima[c], std::fabs(data[i]));
  }
  for (float& m : maxima) m = m > 0.0f ? m / 127.0f : 1.0f;
  return ScaleVector(std::move(maxima));
}

float activation_scale(std::span<const float> values) {
  float m = 0.0f;
  for (float v : values) {
    if (!std::isfinite(v)) throw Error("activation_scale: non-finite value");
    m = std::max(m, std::fabs(v));
  }
  return m > 0.0f ? m / 127.0f : 1.0f;
}

QuantTensor quantize(const FloatTensor& x, const ScaleVector& scale) {
  QuantTensor q(x.shape(), scale);
  const int channels = x.shape().last();
  const auto src = x.data();
  auto dst = q.data();
  for (size_t i = 0; i < src.size(); ++i) {
    const float s = scale.for_channel(static_cast<int>(i % static_cast<size_t>(channels)));
    dst[i] = saturate_int8(round_half_even(static_cast<double>(src[i]) / static_cast<double>(s)));
  }
  return q;
}

FloatTensor dequantize(const QuantTensor& q) {
  FloatTensor x(q.shape());
  const int channels = q.shape().last();
  const auto src = q.data();
  auto dst = x.data();
  for (size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<float>(src[i]) * q.scale().for_channel(static_cast<int>(i % static_cast<size_t>(channels)));
  }
  return x;
}

QuantTensor requantize_cast(const AccTensor& acc, const ScaleVector& s_total, const ScaleVector& out_scale) {
  check_scale_fits(acc.shape(), s_total);
  QuantTensor q(acc.shape(), out_scale);
  const int channels = acc.shape().last();
  const auto src = acc.data();
  auto dst = q.data();
  for (size_t i = 0; i < src.size(); ++i) {
    const double m = s_total.for_channel(static_cast<int>(i % static_cast<size_t>(channels)));
    dst[i] = saturate_int8(round_half_even(static_cast<double>(src[i]) * m));
  }
  return q;
}

// --- dump format ---------------------------------------------------------------

namespace {

size_t dtype_width(DType t) {
  switch (t) {
    case DType::kFloat32: return 4;
    case DType::kInt8: return 1;
    case DType::kInt32: return 4;
  }
  throw IoError("unknown dtype tag");
}

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get(std::span<const uint8_t> in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("tensor blob truncated at byte " + std::to_string(pos));
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

template <typename T>
std::vector<uint8_t> raw_bytes(std::span<const T> data) {
  std::vector<uint8_t> out(data.size() * sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), data.data(), out.size());
  return out;
}

template <typename T>
std::vector<T> typed(const TensorBlob& b, DType want) {
  if (b.dtype != want) throw IoError("tensor blob has unexpected dtype");
  std::vector<T> v(b.payload.size() / sizeof(T));
  if (!v.empty()) std::memcpy(v.data(), b.payload.data(), b.payload.size());
  return v;
}

}  // namespace

std::vector<uint8_t> encode_blob(const TensorBlob& blob) {
  std::vector<uint8_t> out;
  put<uint32_t>(out, static_cast<uint32_t>(blob.shape.rank()));
  for (int d : blob.shape.dims()) put<uint32_t>(out, static_cast<uint32_t>(d));
  put<uint8_t>(out, static_cast<uint8_t>(blob.dtype));
  put<uint32_t>(out, static_cast<uint32_t>(blob.scales.size()));
  for (float s : blob.scales) put<float>(out, s);
  out.insert(out.end(), blob.payload.begin(), blob.payload.end());
  return out;
}

TensorBlob decode_blob(std::span<const uint8_t> bytes, size_t* consumed) {
  size_t pos = 0;
  TensorBlob b;
  const auto rank = get<uint32_t>(bytes, pos);
  if (rank > 8) throw IoError("tensor blob rank " + std::to_string(rank) + " is implausible");
  std::vector<int> dims;
  for (uint32_t i = 0; i < rank; ++i) dims.push_back(static_cast<int>(get<uint32_t>(bytes, pos)));
  try {
    b.shape = Shape(std::move(dims));
  } catch (const Error& e) {
    throw IoError(std::string("tensor blob: ") + e.what());
  }
  const auto tag = get<uint8_t>(bytes, pos);
  if (tag > 2) throw IoError("tensor blob has unknown dtype tag " + std::to_string(tag));
  b.dtype = static_cast<DType>(tag);
  const auto nscales = get<uint32_t>(bytes, pos);
  for (uint32_t i = 0; i < nscales; ++i) b.scales.push_back(get<float>(bytes, pos));
  const size_t len = b.shape.elements() * dtype_width(b.dtype);
  if (pos + len > bytes.size()) throw IoError("tensor blob payload truncated");
  b.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  pos += len;
  if (consumed) *consumed = pos;
  return b;
}

TensorBlob to_blob(const FloatTensor& t) { return {DType::kFloat32, t.shape(), {}, raw_bytes(t.data())}; }

TensorBlob to_blob(const QuantTensor& t) { return {DType::kInt8, t.shape(), t.scale().values(), raw_bytes(t.data())}; }

TensorBlob to_blob(const AccTensor& t) { return {DType::kInt32, t.shape(), {}, raw_bytes(t.data())}; }

FloatTensor float_from_blob(const TensorBlob& b) { return FloatTensor(b.shape, typed<float>(b, DType::kFloat32)); }

QuantTensor quant_from_blob(const TensorBlob& b) {
  if (b.scales.empty()) throw IoError("int8 tensor blob is missing its scale array");
  return QuantTensor(b.shape, typed<int8_t>(b, DType::kInt8), ScaleVector(b.scales));
}

AccTensor acc_from_blob(const TensorBlob& b) { return AccTensor(b.shape, typed<int32_t>(b, DType::kInt32)); }

void write_tensor_file(const std::string& path, const TensorBlob& blob) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  const auto bytes = encode_blob(blob);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

TensorBlob read_tensor_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_blob(bytes);
}

}  // namespace tinyplan
