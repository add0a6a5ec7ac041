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
#ifndef TINYPLAN_ARCH_SEARCH_HPP_
#define TINYPLAN_ARCH_SEARCH_HPP_

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tinyplan/backbone.hpp"
#include "tinyplan/rng.hpp"

namespace tinyplan {

struct ArchConstraints {
  int64_t sram = std::numeric_limits<int64_t>::max();
  int64_t flash = std::numeric_limits<int64_t>::max();
  bool patching = true;  // false: per-layer execution only
  int max_p = 4;
};

struct StageSkeleton {
  int base_channels = 16;
  int stride = 1;
};

/// Knob domains over a fixed stage layout. Stage base channels and the stem
/// are scaled by `width_multiplier`; every block then picks its own width.
struct KnobSpace {
  int stem_channels = 32;
  std::vector<StageSkeleton> stages;
  std::vector<int> resolutions;
  std::vector<int> depths{2, 3, 4};
  std::vector<int> kernels{3, 5, 7};
  std::vector<int> expansions{3, 4, 6};
  std::vector<double> block_widths{0.5, 0.75, 1.0};
  double width_multiplier = 1.0;
  int num_classes = 10;

  // Seven MnasNet-like stages, resolutions 48..224.
  static KnobSpace mnasnet_like();
  int max_depth() const;
};

/// Genes: resolution index, then per stage a depth index followed by
/// (kernel, expansion, width) indices for each of max_depth block slots.
/// Slots past a stage's depth are ignored.
using ArchGenome = std::vector<int>;

size_t genome_length(const KnobSpace& space);
std::vector<int> gene_choices(const KnobSpace& space);  // domain size of each gene
BackboneConfig decode_architecture(const KnobSpace& space, const ArchGenome& genome);
// Zeroes the ignored genes so equal architectures compare equal.
ArchGenome canonical_genome(const KnobSpace& space, ArchGenome genome);
ArchGenome random_genome(const KnobSpace& space, Rng& rng);
ArchGenome minimal_genome(const KnobSpace& space);

struct ArchCandidate {
  BackboneConfig config;
  int p = 1;
  int n = 0;
  int64_t macs = 0;        // graph MACs, the accuracy proxy
  int64_t total_macs = 0;  // plus patch overhead
  int64_t peak = 0;        // peak of the chosen schedule, per-layer when infeasible
  int64_t per_layer_peak = 0;
  int64_t flash = 0;
  bool feasible = false;
};

/// Builds the graph and resolves (p, n) with search_pn. Deterministic.
ArchCandidate evaluate_architecture(const BackboneConfig& config, const ArchConstraints& constraints);

// --- search-space optimization -----------------------------------------------------

struct SpaceConfig {
  double width = 1.0;
  int resolution = 224;

  bool operator==(const SpaceConfig&) const = default;
};

// Widths 0.2..1.0 step 0.1 crossed with resolutions 48..224 step 16.
std::vector<SpaceConfig> space_configs();

struct SpaceRanking {
  SpaceConfig config;
  int samples = 0;
  int satisfying = 0;
  double mean_macs = 0.0;               // over satisfying samples, 0 when none
  std::vector<int64_t> satisfying_macs;  // ascending, for the CDF
};

/// Samples m architectures per config (uniform per knob) and ranks configs
/// by the mean MACs of the samples meeting both limits, best first.
std::vector<SpaceRanking> optimize_search_space(const KnobSpace& space, const std::vector<SpaceConfig>& configs, const ArchConstraints& constraints, int m, uint64_t seed);

// Rows of (width, resolution, macs, cumulative fraction).
std::string cdf_csv(const std::vector<SpaceRanking>& rankings);
std::string rankings_to_json(const std::vector<SpaceRanking>& rankings);

// --- joint search ------------------------------------------------------------------------

struct ArchSearchOptions {
  int population = 100;
  int parents = 20;
  int crossovers = 50;
  int mutations = 50;
  double mutation_rate = 0.1;
  int generations = 30;
  int max_resample = 50;
  uint64_t seed = 0;
};

struct ArchSearchResult {
  ArchCandidate best;
  int evaluations = 0;  // distinct architectures evaluated
  std::vector<int64_t> best_per_generation;
};

/// Maximizes graph MACs over feasible candidates; ties go to less patch
/// overhead, then lower peak. The minimal architecture seeds the first
/// population. Throws when even it is infeasible.
ArchSearchResult joint_search(const KnobSpace& space, const ArchConstraints& constraints, const ArchSearchOptions& options = {});

}  // namespace tinyplan

#endif  // TINYPLAN_ARCH_SEARCH_HPP_
