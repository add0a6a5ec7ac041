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
#include "tinyplan/update_search.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "json.hpp"
#include "tinyplan/memory_planner.hpp"
#include "tinyplan/rng.hpp"

namespace tinyplan {

using nlohmann::json;

// --- contribution analysis -------------------------------------------------------

int ContributionTable::ratio_index(double ratio) const {
  for (size_t i = 0; i < ratios.size(); ++i) {
    if (ratios[i] == ratio) return static_cast<int>(i);
  }
  return -1;
}

std::string table_to_json(const ContributionTable& t) {
  json j;
  j["layers"] = t.layers;
  j["ratios"] = t.ratios;
  j["bias_gain"] = t.bias_gain;
  j["weight_gain"] = t.weight_gain;
  j["classifier_only_accuracy"] = t.classifier_only_accuracy;
  j["bias_only_accuracy"] = t.bias_only_accuracy;
  j["provenance"] = {{"dataset", t.dataset}, {"mode", t.mode}, {"seed", t.seed}, {"epochs", t.epochs}};
  return j.dump(2);
}

ContributionTable table_from_json(const std::string& text) {
  ContributionTable t;
  try {
    const json j = json::parse(text);
    t.layers = j.at("layers").get<std::vector<int>>();
    t.ratios = j.at("ratios").get<std::vector<double>>();
    t.bias_gain = j.at("bias_gain").get<std::vector<double>>();
    t.weight_gain = j.at("weight_gain").get<std::vector<std::vector<double>>>();
    t.classifier_only_accuracy = j.value("classifier_only_accuracy", 0.0);
    t.bias_only_accuracy = j.value("bias_only_accuracy", 0.0);
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      t.dataset = p.value("dataset", "");
      t.mode = p.value("mode", "");
      t.seed = p.value("seed", uint64_t{0});
      t.epochs = p.value("epochs", 0);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("bad contribution table JSON: ") + e.what());
  }
  if (t.bias_gain.size() != t.layers.size() + 1 || t.weight_gain.size() != t.layers.size()) throw IoError("contribution table is incomplete");
  for (const auto& row : t.weight_gain) {
    if (row.size() != t.ratios.size()) throw IoError("contribution table is incomplete");
  }
  return t;
}

ContributionTable contribution_analysis(const Graph& pretrained, const Dataset& train_data, const Dataset& eval_data, const ContributionOptions& options) {
  if (eval_data.size() < options.min_eval) {
    throw Error("eval split has " + std::to_string(eval_data.size()) + " samples; contribution analysis needs at least " + std::to_string(options.min_eval));
  }
  if (train_data.size() == 0) throw Error("training split is empty");
  ContributionTable t;
  t.layers = trainable_layers(pretrained);
  t.ratios = options.ratios;
  t.dataset = options.dataset_name;
  t.mode = train_mode_name(options.mode);
  t.seed = options.config.seed;
  t.epochs = options.config.epochs;
  const int depth = t.depth();

  // run 0..L: bias depth k; then one run per (layer, ratio) on top of full bias depth
  std::vector<UpdateScheme> runs;
  for (int k = 0; k <= depth; ++k) runs.push_back({k, {}});
  for (int i = 0; i < depth; ++i) {
    for (double r : t.ratios) runs.push_back({depth, {{t.layers[static_cast<size_t>(i)], r}}});
  }
  std::vector<double> acc(runs.size(), 0.0);
  std::vector<std::string> errors(runs.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(runs.size()); ++i) {
    try {
      acc[static_cast<size_t>(i)] = train(pretrained, runs[static_cast<size_t>(i)], options.mode, train_data, eval_data, options.config).eval.back().accuracy;
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw Error("contribution run failed: " + e);
  }
  t.classifier_only_accuracy = acc[0];
  t.bias_only_accuracy = acc[static_cast<size_t>(depth)];
  for (int k = 0; k <= depth; ++k) t.bias_gain.push_back(acc[static_cast<size_t>(k)] - acc[0]);
  size_t at = static_cast<size_t>(depth) + 1;
  for (int i = 0; i < depth; ++i) {
    std::vector<double> row;
    for (size_t r = 0; r < t.ratios.size(); ++r) row.push_back(acc[at++] - t.bias_only_accuracy);
    t.weight_gain.push_back(std::move(row));
  }
  return t;
}

double scheme_objective(const ContributionTable& table, const UpdateScheme& scheme) {
  if (scheme.bias_k < 0 || scheme.bias_k > table.depth()) throw Error("scheme depth outside the table");
  double v = table.bias_gain[static_cast<size_t>(scheme.bias_k)];
  for (const auto& w : scheme.weights) {
    const auto it = std::find(table.layers.begin(), table.layers.end(), w.layer);
    const int r = table.ratio_index(w.ratio);
    if (it == table.layers.end() || r < 0) throw Error("scheme entry (layer " + std::to_string(w.layer) + ") is not in the contribution table");
    v += table.weight_gain[static_cast<size_t>(it - table.layers.begin())][static_cast<size_t>(r)];
  }
  return v;
}

// --- memory cost -------------------------------------------------------------------

SchemeCostModel::SchemeCostModel(const Graph& graph)
    : graph_(graph), shapes_(validate(graph)), layers_(trainable_layers(graph)), users_(consumers(graph)), classifier_(classifier_id(graph)) {
  const MemTrace t = trace_memory(inference_plan(graph_));
  inference_peak_ = t.peak;
  inference_live_ = t.live;
  const int nodes = static_cast<int>(graph_.nodes.size());
  inplace_.assign(static_cast<size_t>(nodes), 0);
  for (int j = 0; j < nodes; ++j) inplace_[static_cast<size_t>(j)] = inplace_eligible(graph_, users_, shapes_, j);
  // readers extend a buffer; an in-place depthwise reader hands it on
  buffer_last_.assign(static_cast<size_t>(nodes) + 1, 0);
  for (int t = nodes - 1; t >= kGraphInput; --t) {
    const auto& readers = t == kGraphInput ? users_.back() : users_[static_cast<size_t>(t)];
    int last = std::max(t, 0);
    for (int r : readers) last = std::max(last, inplace_[static_cast<size_t>(r)] ? buffer_last_[static_cast<size_t>(r + 1)] : r);
    buffer_last_[static_cast<size_t>(t + 1)] = last;
  }
}

SchemeCost SchemeCostModel::cost(const UpdateScheme& scheme) const {
  validate_scheme(graph_, scheme);
  auto elems = [&](int t) { return static_cast<int64_t>(shapes_.of(t).elements()); };
  const int nodes = static_cast<int>(graph_.nodes.size());
  const int first = scheme.bias_k > 0 ? layers_[layers_.size() - static_cast<size_t>(scheme.bias_k)] : classifier_;
  const LayerNode& cls = graph_.node(classifier_);
  const int64_t cls_weights = int64_t{cls.attrs.in_channels} * cls.attrs.out_channels;
  SchemeCost c;

  // saved tensors (slot t + 1), each held until its lowest reader's backward step
  std::vector<int> reader(static_cast<size_t>(nodes) + 1, -1);
  auto save = [&](int t, int by) {
    int& r = reader[static_cast<size_t>(t + 1)];
    r = r < 0 ? by : std::min(r, by);
  };
  std::vector<int64_t> slice(static_cast<size_t>(nodes), 0);
  for (const auto& w : scheme.weights) {
    const LayerNode& n = graph_.node(w.layer);
    save(n.preds[0], w.layer);
    slice[static_cast<size_t>(w.layer)] = static_cast<int64_t>(std::ceil(w.ratio * n.attrs.out_channels)) * weights_per_channel(n);
    c.weight_copy_bytes += slice[static_cast<size_t>(w.layer)];
    c.weight_grad_bytes = std::max(c.weight_grad_bytes, 4 * slice[static_cast<size_t>(w.layer)]);
  }
  for (int t = kGraphInput; t < nodes; ++t) {
    if (reader[static_cast<size_t>(t + 1)] >= 0) c.activation_bytes += elems(t);
  }
  save(cls.preds[0], classifier_);
  save(classifier_, classifier_);
  slice[static_cast<size_t>(classifier_)] = cls_weights;
  c.classifier_bytes = elems(cls.preds[0]) + elems(classifier_) + 4 * (cls_weights + cls.attrs.out_channels);
  c.weight_grad_bytes = std::max(c.weight_grad_bytes, 4 * cls_weights);

  std::vector<int64_t> mask(static_cast<size_t>(nodes), 0);
  for (int j = first; j < nodes; ++j) {
    const LayerNode& n = graph_.node(j);
    if (n.attrs.relu6) mask[static_cast<size_t>(j)] = (elems(j) + 7) / 8;
    c.mask_bytes += mask[static_cast<size_t>(j)];
    int64_t pair = elems(j);
    for (int p : n.preds) {
      if (p >= first) pair += elems(p);
    }
    c.grad_transit_bytes = std::max(c.grad_transit_bytes, 4 * pair);
    if (n.parametric()) {
      c.bias_grad_bytes = std::max(c.bias_grad_bytes, 4 * int64_t{n.attrs.out_channels});
      if (j != classifier_) c.bias_copy_bytes += 4 * int64_t{n.attrs.out_channels};
    }
  }
  const int64_t persistent = c.weight_copy_bytes + c.bias_copy_bytes + c.classifier_bytes - elems(cls.preds[0]) - elems(classifier_);

  // forward steps: inference buffers plus saved tensors outliving them, masks so far
  // and depthwise outputs that can no longer overwrite a saved input
  for (int i = 0; i < nodes; ++i) {
    int64_t live = inference_live_[static_cast<size_t>(i)] + persistent;
    for (int t = kGraphInput; t <= i; ++t) {
      const size_t slot = static_cast<size_t>(t + 1);
      if (reader[slot] >= 0 && buffer_last_[slot] < i) live += elems(t);
      if (t >= first) live += mask[static_cast<size_t>(t)];
      if (t >= 0 && inplace_[static_cast<size_t>(t)] && reader[static_cast<size_t>(graph_.node(t).preds[0] + 1)] >= 0 && i <= buffer_last_[slot]) {
        live += elems(t) - (i == t ? int64_t{shapes_.of(t)[0]} * shapes_.of(t)[1] : 0);
      }
    }
    c.forward_bytes = std::max(c.forward_bytes, live);
  }

  // backward steps, descending; a node's applies follow its grad ops
  int64_t backward = 0;
  for (int j = nodes - 1; j >= first; --j) {
    const LayerNode& n = graph_.node(j);
    int64_t live = persistent;
    for (int t = kGraphInput; t < nodes; ++t) {
      const int r = reader[static_cast<size_t>(t + 1)];
      if (r >= 0 && r <= j) live += elems(t);
    }
    for (int t = first; t <= j; ++t) {
      live += mask[static_cast<size_t>(t)];
      bool held = t == j;
      for (int u : users_[static_cast<size_t>(t)]) held = held || u >= j;
      if (held) live += 4 * elems(t);
    }
    if (n.parametric()) live += 4 * int64_t{n.attrs.out_channels} + 4 * slice[static_cast<size_t>(j)];
    backward = std::max(backward, live);
  }
  c.total = std::max(c.forward_bytes, backward);
  return c;
}

// --- scheme search ---------------------------------------------------------------------

namespace {

// genes[0] = bias depth; genes[1 + i] = 0 (frozen) or 1 + ratio index for layer i
using Genome = std::vector<int>;

struct Candidate {
  Genome genes;
  UpdateScheme scheme;
  double objective = 0.0;
  int64_t cost = 0;
};

class Searcher {
 public:
  Searcher(const ContributionTable& table, const SchemeCostModel& model, int64_t constraint)
      : table_(table), model_(model), constraint_(constraint), depth_(table.depth()), choices_(static_cast<int>(table.ratios.size()) + 1) {
    if (trainable_layers(model.graph()) != table.layers) throw Error("contribution table does not match the graph's trainable layers");
    if (model_.cost(UpdateScheme{}).total > constraint_) {
      throw Error("constraint " + std::to_string(constraint_) + " B is below the classifier-only cost " + std::to_string(model_.cost(UpdateScheme{}).total) + " B");
    }
  }

  UpdateScheme decode(const Genome& g) const {
    UpdateScheme s;
    s.bias_k = g[0];
    for (int i = depth_ - s.bias_k; i < depth_; ++i) {
      const int c = g[static_cast<size_t>(i + 1)];
      if (c > 0) s.weights.push_back({table_.layers[static_cast<size_t>(i)], table_.ratios[static_cast<size_t>(c - 1)]});
    }
    return s;
  }

  int random_gene(size_t index, Rng& rng) const { return index == 0 ? rng.uniform_int(depth_ + 1) : rng.uniform_int(choices_); }

  Genome random_genome(Rng& rng) const {
    Genome g(static_cast<size_t>(depth_) + 1);
    for (size_t i = 0; i < g.size(); ++i) g[i] = random_gene(i, rng);
    return g;
  }

  // Scores a genome; false when it breaks the memory constraint.
  bool evaluate(const Genome& g, Candidate* out) const {
    Candidate c;
    c.genes = g;
    // genes above the bias depth are ignored; zero them so equal schemes compare equal
    for (int i = 0; i < depth_ - g[0]; ++i) c.genes[static_cast<size_t>(i + 1)] = 0;
    c.scheme = decode(g);
    c.cost = model_.cost(c.scheme).total;
    if (c.cost > constraint_) return false;
    c.objective = scheme_objective(table_, c.scheme);
    *out = std::move(c);
    return true;
  }

  Candidate fallback() const {
    Candidate c;
    evaluate(Genome(static_cast<size_t>(depth_) + 1, 0), &c);
    return c;
  }

 private:
  const ContributionTable& table_;
  const SchemeCostModel& model_;
  int64_t constraint_;
  int depth_;
  int choices_;
};

bool better(const Candidate& a, const Candidate& b) {
  return std::tie(b.objective, a.cost, a.genes) < std::tie(a.objective, b.cost, b.genes);
}

// Best `count` distinct schemes; duplicates only fill slots left over.
std::vector<Candidate> select_parents(std::vector<Candidate> pool, size_t count) {
  std::stable_sort(pool.begin(), pool.end(), better);
  std::vector<Candidate> kept, dups;
  for (auto& c : pool) {
    const bool seen = !kept.empty() && std::any_of(kept.begin(), kept.end(), [&](const Candidate& k) { return k.genes == c.genes; });
    (seen ? dups : kept).push_back(std::move(c));
  }
  for (auto& d : dups) kept.push_back(std::move(d));
  kept.resize(std::min(kept.size(), count));
  return kept;
}

}  // namespace

SearchResult evolve_scheme(const ContributionTable& table, const SchemeCostModel& model, int64_t constraint, const EvolutionOptions& o) {
  Searcher s(table, model, constraint);
  Rng rng(o.seed);
  SearchResult result;

  // Draws until `make` yields a feasible genome; falls back after max_resample tries.
  auto sample = [&](auto make) {
    Candidate c;
    for (int attempt = 0; attempt < o.max_resample; ++attempt) {
      if (s.evaluate(make(), &c)) {
        ++result.evaluations;
        return c;
      }
    }
    ++result.evaluations;
    return s.fallback();
  };

  std::vector<Candidate> pop;
  for (int i = 0; i < o.population; ++i) pop.push_back(sample([&] { return s.random_genome(rng); }));
  pop = select_parents(std::move(pop), static_cast<size_t>(o.parents));
  result.best_per_generation.push_back(pop.front().objective);

  for (int gen = 0; gen < o.generations; ++gen) {
    std::vector<Candidate> next = pop;
    for (int i = 0; i < o.crossovers; ++i) {
      next.push_back(sample([&] {
        const Genome& a = pop[static_cast<size_t>(rng.uniform_int(static_cast<int>(pop.size())))].genes;
        const Genome& b = pop[static_cast<size_t>(rng.uniform_int(static_cast<int>(pop.size())))].genes;
        Genome child(a.size());
        for (size_t g = 0; g < a.size(); ++g) child[g] = rng.bernoulli(0.5) ? a[g] : b[g];
        return child;
      }));
    }
    for (int i = 0; i < o.mutations; ++i) {
      next.push_back(sample([&] {
        Genome child = pop[static_cast<size_t>(rng.uniform_int(static_cast<int>(pop.size())))].genes;
        bool changed = false;
        for (size_t g = 0; g < child.size(); ++g) {
          if (rng.bernoulli(o.mutation_rate)) {
            child[g] = s.random_gene(g, rng);
            changed = true;
          }
        }
        if (!changed) {
          const size_t g = static_cast<size_t>(rng.uniform_int(static_cast<int>(child.size())));
          child[g] = s.random_gene(g, rng);
        }
        return child;
      }));
    }
    pop = select_parents(std::move(next), static_cast<size_t>(o.parents));
    result.best_per_generation.push_back(pop.front().objective);
  }
  result.scheme = pop.front().scheme;
  result.objective = pop.front().objective;
  result.cost = pop.front().cost;
  return result;
}

SearchResult random_search(const ContributionTable& table, const SchemeCostModel& model, int64_t constraint, int budget, uint64_t seed) {
  Searcher s(table, model, constraint);
  Rng rng(seed);
  Candidate best = s.fallback();
  SearchResult result;
  for (int i = 0; i < budget; ++i) {
    Candidate c;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) ok = s.evaluate(s.random_genome(rng), &c);
    ++result.evaluations;
    if (ok && better(c, best)) best = std::move(c);
  }
  result.scheme = best.scheme;
  result.objective = best.objective;
  result.cost = best.cost;
  return result;
}

}  // namespace tinyplan
