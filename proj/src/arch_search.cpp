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
#include "tinyplan/arch_search.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "json.hpp"
#include "tinyplan/memory_planner.hpp"
#include "tinyplan/patch_engine.hpp"

namespace tinyplan {

KnobSpace KnobSpace::mnasnet_like() {
  KnobSpace s;
  s.stem_channels = 32;
  s.stages = {{16, 1}, {24, 2}, {40, 2}, {80, 2}, {96, 1}, {192, 2}, {320, 1}};
  for (int r = 48; r <= 224; r += 16) s.resolutions.push_back(r);
  return s;
}

int KnobSpace::max_depth() const { return depths.empty() ? 0 : *std::max_element(depths.begin(), depths.end()); }

size_t genome_length(const KnobSpace& space) { return 1 + space.stages.size() * (1 + 3 * static_cast<size_t>(space.max_depth())); }

std::vector<int> gene_choices(const KnobSpace& space) {
  if (space.resolutions.empty() || space.depths.empty() || space.kernels.empty() || space.expansions.empty() || space.block_widths.empty()) {
    throw Error("every knob needs at least one choice");
  }
  std::vector<int> c{static_cast<int>(space.resolutions.size())};
  for (size_t s = 0; s < space.stages.size(); ++s) {
    c.push_back(static_cast<int>(space.depths.size()));
    for (int slot = 0; slot < space.max_depth(); ++slot) {
      c.push_back(static_cast<int>(space.kernels.size()));
      c.push_back(static_cast<int>(space.expansions.size()));
      c.push_back(static_cast<int>(space.block_widths.size()));
    }
  }
  return c;
}

BackboneConfig decode_architecture(const KnobSpace& space, const ArchGenome& g) {
  if (g.size() != genome_length(space)) throw Error("genome length does not match the knob space");
  auto at = [&](const auto& domain, size_t i) { return domain.at(static_cast<size_t>(g[i])); };
  BackboneConfig c;
  c.resolution = at(space.resolutions, 0);
  c.stem_channels = space.stem_channels;
  c.stem_width = space.width_multiplier;
  c.num_classes = space.num_classes;
  size_t i = 1;
  for (const auto& sk : space.stages) {
    const int depth = at(space.depths, i++);
    StageConfig st{std::max(1, static_cast<int>(std::lround(sk.base_channels * space.width_multiplier))), sk.stride, {}};
    for (int slot = 0; slot < space.max_depth(); ++slot, i += 3) {
      if (slot < depth) st.blocks.push_back({at(space.kernels, i), at(space.expansions, i + 1), at(space.block_widths, i + 2)});
    }
    c.stages.push_back(std::move(st));
  }
  return c;
}

ArchGenome canonical_genome(const KnobSpace& space, ArchGenome g) {
  size_t i = 1;
  for (size_t s = 0; s < space.stages.size(); ++s) {
    const int depth = space.depths.at(static_cast<size_t>(g.at(i++)));
    for (int slot = 0; slot < space.max_depth(); ++slot, i += 3) {
      if (slot >= depth) g[i] = g[i + 1] = g[i + 2] = 0;
    }
  }
  return g;
}

ArchGenome random_genome(const KnobSpace& space, Rng& rng) {
  const auto choices = gene_choices(space);
  ArchGenome g(choices.size());
  for (size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform_int(choices[i]);
  return canonical_genome(space, std::move(g));
}

ArchGenome minimal_genome(const KnobSpace& space) {
  auto argmin = [](const auto& v) { return static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin()); };
  ArchGenome g{argmin(space.resolutions)};
  for (size_t s = 0; s < space.stages.size(); ++s) {
    g.push_back(argmin(space.depths));
    for (int slot = 0; slot < space.max_depth(); ++slot) {
      g.push_back(argmin(space.kernels));
      g.push_back(argmin(space.expansions));
      g.push_back(argmin(space.block_widths));
    }
  }
  return canonical_genome(space, std::move(g));
}

ArchCandidate evaluate_architecture(const BackboneConfig& config, const ArchConstraints& constraints) {
  ArchCandidate c;
  c.config = config;
  BuildOptions bo;
  bo.with_weights = false;
  const Graph g = build_backbone(config, bo);
  const Cost cost = count_flops_params(g);
  c.macs = c.total_macs = cost.macs;
  c.flash = cost.param_bytes;
  c.per_layer_peak = c.peak = analytic_profile(g).peak;
  if (c.flash > constraints.flash) return c;
  if (!constraints.patching) {
    c.feasible = c.per_layer_peak <= constraints.sram;
    return c;
  }
  PnSearchOptions po;
  po.max_p = constraints.max_p;
  const PnSearchResult r = search_pn(g, constraints.sram, po);
  if (!r.feasible) return c;
  c.feasible = true;
  c.p = r.plan.p;
  c.n = r.plan.n;
  c.total_macs = r.plan.total_macs;
  c.peak = r.plan.peak;
  return c;
}

// --- search-space optimization -----------------------------------------------------

std::vector<SpaceConfig> space_configs() {
  std::vector<SpaceConfig> out;
  for (int w = 2; w <= 10; ++w) {
    for (int r = 48; r <= 224; r += 16) out.push_back({w / 10.0, r});
  }
  return out;
}

namespace {

uint64_t stream_seed(uint64_t seed, uint64_t stream) { return seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1)); }

}  // namespace

std::vector<SpaceRanking> optimize_search_space(const KnobSpace& space, const std::vector<SpaceConfig>& configs, const ArchConstraints& constraints, int m, uint64_t seed) {
  if (m < 1) throw Error("m must be at least 1");
  std::vector<SpaceRanking> out(configs.size());
  std::vector<std::string> errors(configs.size());
#pragma omp parallel for schedule(dynamic)
  for (int ci = 0; ci < static_cast<int>(configs.size()); ++ci) {
    const size_t idx = static_cast<size_t>(ci);
    try {
      KnobSpace sub = space;
      sub.resolutions = {configs[idx].resolution};
      sub.width_multiplier = configs[idx].width;
      Rng rng(stream_seed(seed, idx));
      SpaceRanking& r = out[idx];
      r.config = configs[idx];
      r.samples = m;
      for (int s = 0; s < m; ++s) {
        const ArchCandidate c = evaluate_architecture(decode_architecture(sub, random_genome(sub, rng)), constraints);
        if (c.feasible) r.satisfying_macs.push_back(c.macs);
      }
      std::sort(r.satisfying_macs.begin(), r.satisfying_macs.end());
      r.satisfying = static_cast<int>(r.satisfying_macs.size());
      double sum = 0.0;
      for (int64_t v : r.satisfying_macs) sum += static_cast<double>(v);
      r.mean_macs = r.satisfying > 0 ? sum / r.satisfying : 0.0;
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(e);
  }
  std::stable_sort(out.begin(), out.end(), [](const SpaceRanking& a, const SpaceRanking& b) { return a.mean_macs > b.mean_macs; });
  return out;
}

std::string cdf_csv(const std::vector<SpaceRanking>& rankings) {
  std::ostringstream os;
  os << "width,resolution,macs,cdf\n";
  for (const auto& r : rankings) {
    for (size_t i = 0; i < r.satisfying_macs.size(); ++i) {
      os << std::setprecision(2) << r.config.width << ',' << r.config.resolution << ',' << r.satisfying_macs[i] << ','
         << std::setprecision(6) << static_cast<double>(i + 1) / static_cast<double>(r.satisfying_macs.size()) << '\n';
    }
  }
  return os.str();
}

std::string rankings_to_json(const std::vector<SpaceRanking>& rankings) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rankings) {
    j.push_back({{"width", r.config.width}, {"resolution", r.config.resolution}, {"samples", r.samples}, {"satisfying", r.satisfying}, {"mean_macs", r.mean_macs}});
  }
  return j.dump(2);
}

// --- joint search ------------------------------------------------------------------------

namespace {

struct Scored {
  ArchGenome genome;
  ArchCandidate candidate;
};

bool better(const Scored& a, const Scored& b) {
  const auto& x = a.candidate;
  const auto& y = b.candidate;
  return std::tie(y.macs, x.total_macs, x.peak, a.genome) < std::tie(x.macs, y.total_macs, y.peak, b.genome);
}

class ArchEvaluator {
 public:
  ArchEvaluator(const KnobSpace& space, const ArchConstraints& constraints) : space_(space), constraints_(constraints) {}

  // Scores a batch in parallel; results come back in input order.
  std::vector<Scored> score(const std::vector<ArchGenome>& genomes) {
    std::vector<ArchGenome> fresh;
    for (const auto& g : genomes) {
      if (!cache_.count(g) && std::find(fresh.begin(), fresh.end(), g) == fresh.end()) fresh.push_back(g);
    }
    std::vector<ArchCandidate> results(fresh.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(fresh.size()); ++i) {
      results[static_cast<size_t>(i)] = evaluate_architecture(decode_architecture(space_, fresh[static_cast<size_t>(i)]), constraints_);
    }
    for (size_t i = 0; i < fresh.size(); ++i) cache_.emplace(fresh[i], std::move(results[i]));
    std::vector<Scored> out;
    for (const auto& g : genomes) out.push_back({g, cache_.at(g)});
    return out;
  }

  int evaluations() const { return static_cast<int>(cache_.size()); }

 private:
  const KnobSpace& space_;
  ArchConstraints constraints_;
  std::map<ArchGenome, ArchCandidate> cache_;
};

}  // namespace

ArchSearchResult joint_search(const KnobSpace& space, const ArchConstraints& constraints, const ArchSearchOptions& o) {
  const auto choices = gene_choices(space);
  ArchEvaluator eval(space, constraints);
  Rng rng(o.seed);
  const ArchGenome minimal = minimal_genome(space);
  const Scored seed_arch = eval.score({minimal}).front();
  if (!seed_arch.candidate.feasible) {
    throw Error("infeasible constraints: the smallest architecture needs " + std::to_string(seed_arch.candidate.per_layer_peak) + " B SRAM per layer and " +
                std::to_string(seed_arch.candidate.flash) + " B flash");
  }

  // Produces `count` feasible genomes from `make`, redrawing infeasible ones.
  auto breed = [&](int count, auto make) {
    std::vector<Scored> out;
    std::vector<ArchGenome> pending;
    for (int i = 0; i < count; ++i) pending.push_back(canonical_genome(space, make()));
    for (int round = 0; round <= o.max_resample && !pending.empty(); ++round) {
      std::vector<ArchGenome> retry;
      for (auto& s : eval.score(pending)) {
        if (s.candidate.feasible) {
          out.push_back(std::move(s));
        } else if (round < o.max_resample) {
          retry.push_back(canonical_genome(space, make()));
        }
      }
      pending = std::move(retry);
    }
    return out;
  };
  auto select = [&](std::vector<Scored> pool) {
    std::sort(pool.begin(), pool.end(), better);
    pool.erase(std::unique(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) { return a.genome == b.genome; }), pool.end());
    if (pool.size() > static_cast<size_t>(o.parents)) pool.resize(static_cast<size_t>(o.parents));
    return pool;
  };

  std::vector<Scored> pool = breed(o.population - 1, [&] { return random_genome(space, rng); });
  pool.push_back(seed_arch);
  std::vector<Scored> parents = select(std::move(pool));
  ArchSearchResult result;
  result.best_per_generation.push_back(parents.front().candidate.macs);

  auto pick = [&]() -> const ArchGenome& { return parents[static_cast<size_t>(rng.uniform_int(static_cast<int>(parents.size())))].genome; };
  for (int gen = 0; gen < o.generations; ++gen) {
    std::vector<Scored> next = parents;
    for (auto& s : breed(o.crossovers, [&] {
           const ArchGenome& a = pick();
           const ArchGenome& b = pick();
           ArchGenome child(a.size());
           for (size_t i = 0; i < a.size(); ++i) child[i] = rng.bernoulli(0.5) ? a[i] : b[i];
           return child;
         })) {
      next.push_back(std::move(s));
    }
    for (auto& s : breed(o.mutations, [&] {
           ArchGenome child = pick();
           bool changed = false;
           for (size_t i = 0; i < child.size(); ++i) {
             if (rng.bernoulli(o.mutation_rate)) {
               child[i] = rng.uniform_int(choices[i]);
               changed = true;
             }
           }
           if (!changed) {
             const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(child.size())));
             child[i] = rng.uniform_int(choices[i]);
           }
           return child;
         })) {
      next.push_back(std::move(s));
    }
    parents = select(std::move(next));
    result.best_per_generation.push_back(parents.front().candidate.macs);
  }
  result.best = parents.front().candidate;
  result.evaluations = eval.evaluations();
  return result;
}

}  // namespace tinyplan
