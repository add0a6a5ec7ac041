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
#ifndef TINYPLAN_DATASET_HPP_
#define TINYPLAN_DATASET_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "tinyplan/qtensor.hpp"

namespace tinyplan {

struct Dataset {
  Shape image_shape;  // (H, W, C)
  int num_classes = 0;
  std::vector<FloatTensor> images;
  std::vector<int> labels;

  size_t size() const { return images.size(); }
  // First `count` samples, and everything after them.
  Dataset head(size_t count) const;
  Dataset tail(size_t from) const;
};

/// IDX image file (magic 0x00000803, u8 N x H x W) and label file (magic
/// 0x00000801). Pixels are mapped to [0, 1] and given one channel.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a dataset in IDX form; images must have one channel and lie in [0, 1].
void save_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path);

/// Seeded pattern-classification tasks on small RGB images.
///  - "bars":     horizontal vs vertical bars (pretraining task)
///  - "diagonal": main vs anti diagonal stripes, colour-inverted per class
///  - "corner":   which quadrant holds the bright blob (4 classes)
/// Each image adds uniform noise and a random global brightness shift.
struct SyntheticSpec {
  std::string task = "bars";
  int size = 8;
  int samples = 256;
  double noise = 0.3;
  uint64_t seed = 0;
};

Dataset synthetic_dataset(const SyntheticSpec& spec);

// Names accepted by synthetic_dataset.
std::vector<std::string> synthetic_tasks();

}  // namespace tinyplan

#endif  // TINYPLAN_DATASET_HPP_
