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
#include "tinyplan/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "tinyplan/rng.hpp"

namespace tinyplan {

Dataset Dataset::head(size_t count) const {
  Dataset d{image_shape, num_classes, {}, {}};
  count = std::min(count, size());
  d.images.assign(images.begin(), images.begin() + static_cast<std::ptrdiff_t>(count));
  d.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(count));
  return d;
}

Dataset Dataset::tail(size_t from) const {
  Dataset d{image_shape, num_classes, {}, {}};
  from = std::min(from, size());
  d.images.assign(images.begin() + static_cast<std::ptrdiff_t>(from), images.end());
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(from), labels.end());
  return d;
}

namespace {

std::vector<uint8_t> read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), {});
}

uint32_t be32(const std::vector<uint8_t>& b, size_t at, const std::string& path) {
  if (at + 4 > b.size()) throw IoError(path + ": truncated IDX header");
  return (uint32_t{b[at]} << 24) | (uint32_t{b[at + 1]} << 16) | (uint32_t{b[at + 2]} << 8) | uint32_t{b[at + 3]};
}

void put_be32(std::ofstream& f, uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
  f.write(bytes, 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);
  if (be32(img, 0, images_path) != 0x00000803) throw IoError(images_path + ": bad IDX image magic");
  if (be32(lab, 0, labels_path) != 0x00000801) throw IoError(labels_path + ": bad IDX label magic");
  const uint32_t n = be32(img, 4, images_path), h = be32(img, 8, images_path), w = be32(img, 12, images_path);
  if (be32(lab, 4, labels_path) != n) throw IoError("IDX image and label counts differ");
  const size_t plane = size_t{h} * w;
  if (img.size() < 16 + plane * n) throw IoError(images_path + ": truncated pixel data");
  if (lab.size() < 8 + size_t{n}) throw IoError(labels_path + ": truncated label data");
  Dataset d;
  d.image_shape = Shape{static_cast<int>(h), static_cast<int>(w), 1};
  int max_label = 0;
  for (uint32_t i = 0; i < n; ++i) {
    FloatTensor t(d.image_shape);
    for (size_t p = 0; p < plane; ++p) t[p] = static_cast<float>(img[16 + i * plane + p]) / 255.0f;
    d.images.push_back(std::move(t));
    d.labels.push_back(lab[8 + i]);
    max_label = std::max(max_label, static_cast<int>(lab[8 + i]));
  }
  d.num_classes = max_label + 1;
  return d;
}

void save_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path) {
  if (data.image_shape.rank() != 3 || data.image_shape[2] != 1) throw Error("IDX export needs single-channel images");
  std::ofstream fi(images_path, std::ios::binary), fl(labels_path, std::ios::binary);
  if (!fi || !fl) throw IoError("cannot write IDX files");
  put_be32(fi, 0x00000803);
  put_be32(fi, static_cast<uint32_t>(data.size()));
  put_be32(fi, static_cast<uint32_t>(data.image_shape[0]));
  put_be32(fi, static_cast<uint32_t>(data.image_shape[1]));
  put_be32(fl, 0x00000801);
  put_be32(fl, static_cast<uint32_t>(data.size()));
  for (size_t i = 0; i < data.size(); ++i) {
    for (float v : data.images[i].data()) fi.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    fl.put(static_cast<char>(data.labels[i]));
  }
}

std::vector<std::string> synthetic_tasks() { return {"bars", "diagonal", "corner"}; }

Dataset synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.size < 4) throw Error("synthetic images need size >= 4");
  if (spec.samples < 1) throw Error("synthetic dataset needs at least one sample");
  const int s = spec.size;
  Dataset d;
  d.image_shape = Shape{s, s, 3};
  if (spec.task == "bars" || spec.task == "diagonal") {
    d.num_classes = 2;
  } else if (spec.task == "corner") {
    d.num_classes = 4;
  } else {
    throw Error("unknown synthetic task '" + spec.task + "'");
  }
  Rng rng(spec.seed);
  for (int i = 0; i < spec.samples; ++i) {
    const int label = i % d.num_classes;  // balanced
    FloatTensor t(d.image_shape);
    const double shift = rng.uniform(-0.2, 0.2);
    double tint[3];
    for (double& c : tint) c = rng.uniform(0.5, 1.0);
    const int period = 2 + rng.uniform_int(3);
    const int phase = rng.uniform_int(period);
    const int cy = rng.uniform_int(s / 2), cx = rng.uniform_int(s / 2);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        double v = 0.0;
        if (spec.task == "bars") {
          v = ((label == 0 ? y : x) + phase) % period == 0 ? 1.0 : 0.0;
        } else if (spec.task == "diagonal") {
          const int a = label == 0 ? x - y + s : x + y;
          v = (a + phase) % period == 0 ? 1.0 : 0.0;
        } else {
          const int qy = label / 2, qx = label % 2;
          const int by = qy * (s / 2) + cy / 2, bx = qx * (s / 2) + cx / 2;
          v = std::abs(y - by) <= 1 && std::abs(x - bx) <= 1 ? 1.0 : 0.0;
        }
        for (int c = 0; c < 3; ++c) {
          const size_t at = (static_cast<size_t>(y) * s + x) * 3 + c;
          t[at] = static_cast<float>(v * tint[c] + shift + rng.uniform(-spec.noise, spec.noise));
        }
      }
    }
    d.images.push_back(std::move(t));
    d.labels.push_back(label);
  }
  // interleaved labels, shuffled once so splits stay balanced in expectation
  std::vector<size_t> order(d.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  Dataset out{d.image_shape, d.num_classes, {}, {}};
  for (size_t i : order) {
    out.images.push_back(std::move(d.images[i]));
    out.labels.push_back(d.labels[i]);
  }
  return out;
}

}  // namespace tinyplan
