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
#ifndef TINYPLAN_UPDATE_SEARCH_HPP_
#define TINYPLAN_UPDATE_SEARCH_HPP_

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tinyplan/dataset.hpp"
#include "tinyplan/graph.hpp"
#include "tinyplan/tte.hpp"

namespace tinyplan {

// --- contribution analysis -------------------------------------------------------

/// Accuracy gains in points. bias_gain[k] (k = 0..L) is bias depth k over the
/// classifier-only run; weight_gain[i][r] is bias-only at full depth plus the
/// weights of layers[i] at ratios[r], over bias-only.
struct ContributionTable {
  std::vector<int> layers;
  std::vector<double> ratios;
  std::vector<double> bias_gain;
  std::vector<std::vector<double>> weight_gain;
  double classifier_only_accuracy = 0.0;
  double bias_only_accuracy = 0.0;
  // provenance
  std::string dataset;
  std::string mode;
  uint64_t seed = 0;
  int epochs = 0;

  int depth() const { return static_cast<int>(layers.size()); }
  int ratio_index(double ratio) const;  // -1 when absent
};

std::string table_to_json(const ContributionTable& table);
ContributionTable table_from_json(const std::string& text);

struct ContributionOptions {
  TrainConfig config;
  TrainMode mode = TrainMode::kInt8QAS;
  std::vector<double> ratios{0.125, 0.25, 0.5, 1.0};
  size_t min_eval = 50;
  std::string dataset_name = "unnamed";
};

/// Independent training runs, executed in parallel; each run is seeded by
/// options.config.seed so the table is deterministic.
ContributionTable contribution_analysis(const Graph& pretrained, const Dataset& train_data, const Dataset& eval_data, const ContributionOptions& options = {});

// Summed table gains of a scheme. Ratios must be in the table.
double scheme_objective(const ContributionTable& table, const UpdateScheme& scheme);

// --- memory cost -------------------------------------------------------------------

struct SchemeCost {
  int64_t activation_bytes = 0;   // int8 inputs of updated weight layers
  int64_t weight_copy_bytes = 0;  // mutable copies of the updated channels
  int64_t grad_transit_bytes = 0; // largest consecutive pair of activation gradients
  int64_t bias_grad_bytes = 0;    // largest bias gradient
  // terms the basic model leaves out
  int64_t classifier_bytes = 0;   // classifier input, logits and fp32 parameters
  int64_t bias_copy_bytes = 0;    // mutable int32 biases
  int64_t mask_bytes = 0;         // 1-bit ReLU6 masks
  int64_t weight_grad_bytes = 0;  // largest weight-gradient slice
  int64_t forward_bytes = 0;      // inference peak held during the forward pass
  int64_t total = 0;
};

/// Analytic training-memory model. The per-graph inference profile is
/// precomputed; a scheme is then costed per step without building the plan.
class SchemeCostModel {
 public:
  explicit SchemeCostModel(const Graph& graph);
  SchemeCost cost(const UpdateScheme& scheme) const;
  const Graph& graph() const { return graph_; }

 private:
  Graph graph_;
  ShapeTable shapes_;
  std::vector<int> layers_;
  std::vector<std::vector<int>> users_;
  int classifier_ = 0;
  int64_t inference_peak_ = 0;
  std::vector<int64_t> inference_live_;  // per forward step
  std::vector<int> buffer_last_;         // last step of each tensor's inference buffer, input at 0
  std::vector<char> inplace_;
};

inline SchemeCost scheme_memory_cost(const Graph& graph, const UpdateScheme& scheme) { return SchemeCostModel(graph).cost(scheme); }

// --- scheme search ---------------------------------------------------------------------

struct EvolutionOptions {
  int population = 100;
  int parents = 20;
  int crossovers = 50;
  int mutations = 50;
  double mutation_rate = 0.1;
  int generations = 30;
  int max_resample = 200;
  uint64_t seed = 0;
};

struct SearchResult {
  UpdateScheme scheme;
  double objective = 0.0;
  int64_t cost = 0;
  int evaluations = 0;               // feasible candidates scored
  std::vector<double> best_per_generation;
};

/// Maximizes scheme_objective subject to cost <= constraint. Genes are the
/// bias depth and one ratio choice (frozen or a table ratio) per layer;
/// weight genes above the bias depth are ignored. Throws when even the
/// classifier-only scheme exceeds the constraint.
SearchResult evolve_scheme(const ContributionTable& table, const SchemeCostModel& model, int64_t constraint, const EvolutionOptions& options = {});

/// Uniform random feasible schemes, `budget` of them.
SearchResult random_search(const ContributionTable& table, const SchemeCostModel& model, int64_t constraint, int budget, uint64_t seed);

inline constexpr int64_t kNoLimit = std::numeric_limits<int64_t>::max();

}  // namespace tinyplan

#endif  // TINYPLAN_UPDATE_SEARCH_HPP_
