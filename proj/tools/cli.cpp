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
#include "cli.hpp"

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tinyplan/arch_search.hpp"
#include "tinyplan/backbone.hpp"
#include "tinyplan/codegen.hpp"
#include "tinyplan/dataset.hpp"
#include "tinyplan/executor.hpp"
#include "tinyplan/memory_planner.hpp"
#include "tinyplan/patch_engine.hpp"
#include "tinyplan/rng.hpp"
#include "tinyplan/tte.hpp"
#include "tinyplan/update_search.hpp"

namespace tinyplan::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class Infeasible : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Output staged by a command; committed only on success.
struct Staged {
  std::ostringstream out;
  std::vector<std::pair<std::string, std::string>> files;

  void file(const std::string& path, std::string contents) { files.emplace_back(path, std::move(contents)); }
  void model(const Graph& g, const std::string& json_path) {
    const fs::path p(json_path);
    const std::string blob_name = p.stem().string() + ".bin";
    auto m = serialize(g, blob_name);
    file(json_path, std::move(m.json));
    file((p.parent_path() / blob_name).string(), std::string(m.blobs.begin(), m.blobs.end()));
  }
  void commit() const {
    // temporaries first, then renames, so a failed write leaves no target behind
    std::vector<std::pair<fs::path, fs::path>> moves;
    for (const auto& [path, contents] : files) {
      const fs::path tmp = path + ".tmp";
      std::ofstream f(tmp, std::ios::binary);
      f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
      if (!f) {
        for (const auto& m : moves) fs::remove(m.first);
        fs::remove(tmp);
        throw IoError("cannot write " + path);
      }
      moves.emplace_back(tmp, path);
    }
    for (const auto& [tmp, path] : moves) fs::rename(tmp, path);
  }
};

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

json parse_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// --- plan files ---------------------------------------------------------------------

json plan_to_json(const PatchPlan& p, int64_t sram) {
  return {{"p", p.p},
          {"n", p.n},
          {"sram", sram},
          {"peak", p.peak},
          {"patch_peak", p.patch_peak},
          {"rest_peak", p.rest_peak},
          {"graph_macs", p.graph_macs},
          {"total_macs", p.total_macs},
          {"overhead_percent", 100.0 * p.overhead_ratio()}};
}

PatchPlan plan_from_file(const Graph& g, const std::string& path) {
  const json j = parse_json(path);
  if (!j.contains("p") || !j.contains("n")) throw IoError(path + ": plan needs 'p' and 'n'");
  return build_patch_plan(g, j["p"].get<int>(), j["n"].get<int>());
}

// --- datasets -----------------------------------------------------------------------

struct Split {
  Dataset train, eval;
  std::string name;
};

/// "synthetic:<task>" draws a seeded task at the model's resolution; a
/// directory holds train-images.idx / train-labels.idx and optionally the
/// eval pair (otherwise the last fifth is held out).
Split load_data(const std::string& spec, const Graph& g, uint64_t seed, int samples) {
  Split s;
  s.name = spec;
  if (spec.rfind("synthetic:", 0) == 0) {
    const std::string task = spec.substr(10);
    const auto tasks = synthetic_tasks();
    if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) throw UsageError("unknown synthetic task '" + task + "'");
    if (g.input[0] != g.input[1] || g.input[2] != 3) throw Error("synthetic data needs a square 3-channel model input");
    const Dataset all = synthetic_dataset({task, g.input[0], samples, 0.3, seed ^ 0x7a29});
    s.train = all.head(static_cast<size_t>(samples / 2));
    s.eval = all.tail(static_cast<size_t>(samples / 2));
  } else {
    const fs::path dir(spec);
    if (!fs::is_directory(dir)) throw IoError("no such data directory: " + spec);
    const Dataset train = load_idx((dir / "train-images.idx").string(), (dir / "train-labels.idx").string());
    if (fs::exists(dir / "eval-images.idx")) {
      s.train = train;
      s.eval = load_idx((dir / "eval-images.idx").string(), (dir / "eval-labels.idx").string());
    } else {
      const size_t cut = train.size() - train.size() / 5;
      s.train = train.head(cut);
      s.eval = train.tail(cut);
    }
  }
  if (s.train.image_shape != g.input) throw Error("dataset images " + s.train.image_shape.str() + " do not match model input " + g.input.str());
  return s;
}

TrainMode parse_mode(const std::string& m) {
  if (m == "real") return TrainMode::kReal;
  if (m == "int8") return TrainMode::kInt8;
  if (m == "int8_qas") return TrainMode::kInt8QAS;
  throw UsageError("unknown mode '" + m + "' (real, int8, int8_qas)");
}

void calibrate(Graph& g, uint64_t seed, int samples) {
  Rng rng(seed ^ 0xca11b);
  std::vector<FloatTensor> calib;
  for (int i = 0; i < samples; ++i) {
    FloatTensor t(g.input);
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform());
    calib.push_back(std::move(t));
  }
  quantize_graph(g, calib);
}

// --- commands -----------------------------------------------------------------------

struct Common {
  uint64_t seed = 0;
  bool json = false;
};

void add_common(CLI::App* c, Common& o) {
  c->add_option("--seed", o.seed, "Seed of the command's random generator");
  c->add_flag("--json", o.json, "Machine-readable output on stdout");
}

struct GenModel {
  std::string config, preset = "mobilenet_v2", output = "model.json";
  int resolution = 96, classes = 10, calib = 8;
  double width = 0.35;
  bool fp = false;

  void run(const Common& c, Staged& s) const {
    Graph g;
    if (preset == "transfer" && config.empty()) {
      g = make_transfer_task(c.seed).pretrained;
    } else if (preset == "toy" && config.empty()) {
      g = toy_cnn(classes, c.seed);
      if (!fp) calibrate(g, c.seed, calib);
    } else {
      BackboneConfig cfg;
      if (!config.empty()) {
        cfg = backbone_from_json(read_text(config));
      } else if (preset == "mobilenet_v2") {
        cfg = BackboneConfig::mobilenet_v2(resolution, width, classes);
      } else {
        throw UsageError("unknown preset '" + preset + "' (mobilenet_v2, toy, transfer)");
      }
      BuildOptions bo;
      bo.seed = c.seed;
      g = build_backbone(cfg, bo);
      if (!fp) calibrate(g, c.seed, calib);
    }
    s.model(g, output);
    const Cost cost = count_flops_params(g);
    if (c.json) {
      s.out << dump({{"model", output}, {"nodes", g.nodes.size()}, {"macs", cost.macs}, {"param_bytes", cost.param_bytes}, {"quantized", g.quantized()}});
    } else {
      s.out << "wrote " << output << ": " << g.nodes.size() << " nodes, " << cost.macs << " MACs, " << cost.param_bytes << " parameter bytes\n";
    }
  }
};

struct Profile {
  std::string model;
  bool chart = false, no_inplace = false;

  void run(const Common& c, Staged& s) const {
    const Graph g = load_model(model);
    PlanOptions po;
    po.inplace_depthwise = !no_inplace;
    const MemoryPlan plan = plan_memory(g, po);
    const AnalyticProfile& prof = plan.profile;
    json layers = json::array();
    for (const auto& l : prof.layers) layers.push_back({{"id", l.id}, {"in_bytes", l.in_bytes}, {"out_bytes", l.out_bytes}, {"total", l.total}});
    const json report = {{"per_layer", layers},       {"peak", prof.peak},      {"peak_layer", prof.peak_layer}, {"M", plan.im2col.m},
                         {"arena_bytes", plan.arena_size}, {"flash_bytes", plan.flash_bytes}};
    if (c.json) {
      s.out << dump(report);
    } else {
      s.out << "peak " << prof.peak << " bytes at layer " << prof.peak_layer << ", im2col M " << plan.im2col.m << ", arena " << plan.arena_size << ", flash "
            << plan.flash_bytes << "\n";
      for (const auto& l : prof.layers) s.out << "  layer " << std::setw(3) << l.id << "  in " << l.in_bytes << "  out " << l.out_bytes << "  total " << l.total << "\n";
    }
    if (chart && !prof.block_peaks.empty()) {
      const int64_t top = std::max<int64_t>(1, *std::max_element(prof.block_peaks.begin(), prof.block_peaks.end()));
      std::ostream& o = s.out;
      for (size_t b = 0; b < prof.block_peaks.size(); ++b) {
        const auto bar = static_cast<size_t>(50 * prof.block_peaks[b] / top);
        o << "block " << std::setw(2) << b << " |" << std::string(bar, '#') << std::string(50 - bar, ' ') << "| " << prof.block_peaks[b] << "\n";
      }
    }
  }
};

struct Plan {
  std::string model, output;
  int64_t sram = -1;
  int max_p = 4;

  void run(const Common& c, Staged& s) const {
    const Graph g = load_model(model);
    PnSearchOptions o;
    o.max_p = max_p;
    const auto r = search_pn(g, sram, o);
    if (!r.feasible) throw Infeasible(r.message.empty() ? "no (p, n) fits " + std::to_string(sram) + " bytes" : r.message);
    const json j = plan_to_json(r.plan, sram);
    if (!output.empty()) s.file(output, dump(j));
    if (c.json) {
      s.out << dump(j);
    } else {
      s.out << "p = " << r.plan.p << ", n = " << r.plan.n << ", overhead " << std::fixed << std::setprecision(2) << 100.0 * r.plan.overhead_ratio() << "%\n"
            << "patch stage peak " << r.plan.patch_peak << " bytes, per-layer stage peak " << r.plan.rest_peak << " bytes, peak " << r.plan.peak << " of "
            << sram << "\n";
    }
  }
};

struct Infer {
  std::string model, input, patched, output = "out.qt";

  void run(const Common& c, Staged& s) const {
    const Graph g = load_model(model);
    if (!g.quantized()) throw Error("infer needs a quantized model");
    const TensorBlob blob = read_tensor_file(input);
    const QuantTensor x = blob.dtype == DType::kFloat32 ? quantize(float_from_blob(blob), ScaleVector{g.input_scale}) : quant_from_blob(blob);
    if (x.shape() != g.input) throw Error("input " + x.shape().str() + " does not match model input " + g.input.str());
    const QuantTensor y = patched.empty() ? run_int8(g, x) : run_patched(g, x, plan_from_file(g, patched));
    const auto bytes = encode_blob(to_blob(y));
    s.file(output, std::string(bytes.begin(), bytes.end()));
    const auto d = y.data();
    const auto top = std::max_element(d.begin(), d.end()) - d.begin();
    if (c.json) {
      s.out << dump({{"output", output}, {"shape", y.shape().str()}, {"argmax", top}, {"values", std::vector<int>(d.begin(), d.end())}});
    } else {
      s.out << "wrote " << output << " " << y.shape().str() << ", argmax " << top << "\n";
    }
  }
};

struct Train {
  std::string model, scheme, data, mode = "int8_qas", output;
  double lr = 0.05;
  int epochs = 10, accum = 1, samples = 1024;

  void run(const Common& c, Staged& s) const {
    const Graph g = load_model(model);
    const UpdateScheme sch = scheme.empty() ? full_scheme(g) : scheme_from_json(read_text(scheme));
    validate_scheme(g, sch);
    const Split d = load_data(data, g, c.seed, samples);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.lr = lr;
    cfg.grad_accum = accum;
    cfg.seed = c.seed;
    const TrainResult r = train(g, sch, parse_mode(mode), d.train, d.eval, cfg);
    if (!output.empty()) s.model(r.graph, output);
    json epochs_j = json::array();
    for (size_t e = 0; e < r.train.size(); ++e) {
      json row = {{"epoch", e + 1}, {"train_loss", r.train[e].loss}, {"train_accuracy", r.train[e].accuracy}};
      if (e < r.eval.size()) {
        row["eval_loss"] = r.eval[e].loss;
        row["eval_accuracy"] = r.eval[e].accuracy;
      }
      epochs_j.push_back(row);
    }
    if (c.json) {
      s.out << dump({{"mode", mode}, {"epochs", epochs_j}});
    } else {
      for (const auto& row : epochs_j) {
        s.out << "epoch " << row["epoch"] << "  loss " << std::fixed << std::setprecision(4) << row["train_loss"].get<double>() << "  train "
              << std::setprecision(2) << row["train_accuracy"].get<double>() << "%";
        if (row.contains("eval_accuracy")) s.out << "  eval " << row["eval_accuracy"].get<double>() << "%";
        s.out << "\n";
      }
    }
  }
};

struct AnalyzeContrib {
  std::string model, data, mode = "int8_qas", output = "table.json";
  double lr = 0.05;
  int epochs = 5, samples = 1024;
  size_t min_eval = 50;
  std::vector<double> ratios{0.125, 0.25, 0.5, 1.0};

  void run(const Common& c, Staged& s) const {
    const Graph g = load_model(model);
    const Split d = load_data(data, g, c.seed, samples);
    ContributionOptions o;
    o.config.epochs = epochs;
    o.config.lr = lr;
    o.config.seed = c.seed;
    o.mode = parse_mode(mode);
    o.ratios = ratios;
    o.min_eval = min_eval;
    o.dataset_name = d.name;
    const ContributionTable t = contribution_analysis(g, d.train, d.eval, o);
    const std::string text = table_to_json(t);
    s.file(output, text);
    if (c.json) {
      s.out << text;
    } else {
      s.out << "classifier only " << t.classifier_only_accuracy << "%, bias only " << t.bias_only_accuracy << "%, " << t.depth() << " layers x "
            << t.ratios.size() << " ratios; wrote " << output << "\n";
    }
  }
};

struct SearchUpdate {
  std::string table, model, output = "scheme.json";
  int64_t sram = -1;
  int generations = 30;

  void run(const Common& c, Staged& s) const {
    const ContributionTable t = table_from_json(read_text(table));
    const Graph g = load_model(model);
    const SchemeCostModel cost(g);
    EvolutionOptions o;
    o.generations = generations;
    o.seed = c.seed;
    SearchResult r;
    try {
      r = evolve_scheme(t, cost, sram, o);
    } catch (const IoError&) {
      throw;
    } catch (const Error& e) {
      throw Infeasible(e.what());
    }
    s.file(output, scheme_to_json(r.scheme) + "\n");
    if (c.json) {
      s.out << dump({{"scheme", json::parse(scheme_to_json(r.scheme))}, {"objective", r.objective}, {"cost", r.cost}, {"evaluations", r.evaluations}});
    } else {
      s.out << "bias depth " << r.scheme.bias_k << ", " << r.scheme.weights.size() << " sparse weight updates, objective " << r.objective << ", memory " << r.cost
            << " of " << sram << " bytes; wrote " << output << "\n";
    }
  }
};

struct SearchSpace {
  int64_t sram = -1, flash = -1;
  int m = 100, max_p = 4;
  bool no_patch = false;
  std::string output = "space.json", csv = "space_cdf.csv";

  void run(const Common& c, Staged& s) const {
    ArchConstraints k{sram, flash, !no_patch, max_p};
    const auto r = optimize_search_space(KnobSpace::mnasnet_like(), space_configs(), k, m, c.seed);
    if (r.empty() || r.front().satisfying == 0) throw Infeasible("no sampled architecture satisfies sram " + std::to_string(sram) + " and flash " + std::to_string(flash));
    const std::string text = rankings_to_json(r);
    s.file(output, text);
    s.file(csv, cdf_csv(r));
    if (c.json) {
      s.out << text;
    } else {
      s.out << "best spaces (width, resolution, satisfying / sampled, mean MACs):\n";
      for (size_t i = 0; i < std::min<size_t>(5, r.size()); ++i) {
        s.out << "  " << r[i].config.width << "  " << r[i].config.resolution << "  " << r[i].satisfying << "/" << r[i].samples << "  "
              << static_cast<int64_t>(r[i].mean_macs) << "\n";
      }
    }
  }
};

struct SearchArch {
  int64_t sram = -1, flash = -1;
  int generations = 30, population = 100, max_p = 4, calib = 8;
  double width = 1.0;
  std::vector<int> resolutions;
  bool no_patch = false;
  std::string output = "arch_model.json", plan_out = "arch_plan.json";

  void run(const Common& c, Staged& s) const {
    KnobSpace space = KnobSpace::mnasnet_like();
    space.width_multiplier = width;
    if (!resolutions.empty()) space.resolutions = resolutions;
    ArchSearchOptions o;
    o.generations = generations;
    o.population = population;
    o.seed = c.seed;
    ArchSearchResult r;
    try {
      r = joint_search(space, {sram, flash, !no_patch, max_p}, o);
    } catch (const IoError&) {
      throw;
    } catch (const Error& e) {
      throw Infeasible(e.what());
    }
    BuildOptions bo;
    bo.seed = c.seed;
    Graph g = build_backbone(r.best.config, bo);
    calibrate(g, c.seed, calib);
    const PatchPlan plan = build_patch_plan(g, r.best.p, r.best.n);
    s.model(g, output);
    s.file(plan_out, dump(plan_to_json(plan, sram)));
    const json j = {{"model", output}, {"plan", plan_out}, {"config", json::parse(to_json(r.best.config))}, {"macs", r.best.macs},
                    {"peak", r.best.peak}, {"flash", r.best.flash}, {"p", r.best.p}, {"n", r.best.n}, {"evaluations", r.evaluations}};
    if (c.json) {
      s.out << dump(j);
    } else {
      s.out << "resolution " << r.best.config.resolution << ", " << r.best.config.num_blocks() << " blocks, " << r.best.macs << " MACs, peak " << r.best.peak
            << ", flash " << r.best.flash << ", (p, n) = (" << r.best.p << ", " << r.best.n << "); wrote " << output << " and " << plan_out << "\n";
    }
  }
};

struct Codegen {
  std::string model, plan, output = "model_gen.c", prefix = "model";
  bool with_main = false;

  void run(const Common& c, Staged& s) const {
    const Graph g = load_model(model);
    std::optional<PatchPlan> pp;
    if (!plan.empty()) pp = plan_from_file(g, plan);
    const bool patched = pp && pp->p > 1 && pp->n > 0;
    CodegenOptions o;
    o.prefix = prefix;
    o.with_main = with_main;
    const auto prog = emit_c_source(g, plan_memory(g), patched ? &*pp : nullptr, o);
    s.file(output, prog.source);
    if (c.json) {
      s.out << dump({{"source", output}, {"arena_bytes", prog.arena_size}, {"input_bytes", prog.input_bytes}, {"output_bytes", prog.output_bytes},
                     {"kernels", prog.kernels}, {"patched", patched}});
    } else {
      s.out << "wrote " << output << ": arena " << prog.arena_size << " bytes, kernels";
      for (const auto& k : prog.kernels) s.out << " " << k;
      s.out << "\n";
    }
  }
};

void apply_thread_env() {
  if (const char* t = std::getenv("TINYPLAN_THREADS")) {
    const int n = std::atoi(t);
    if (n > 0) omp_set_num_threads(n);
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  apply_thread_env();
  CLI::App app{"tinyplan: memory planning, patch execution, on-device training and search for tiny int8 CNNs", "tinyplan"};
  app.require_subcommand(1);
  Common common;
  Staged staged;
  std::function<void()> action;

  auto sub = [&](const char* name, const char* help) {
    CLI::App* c = app.add_subcommand(name, help);
    add_common(c, common);
    return c;
  };
  auto bind = [&](CLI::App* c, auto& cmd) { c->callback([&] { action = [&] { cmd.run(common, staged); }; }); };

  GenModel gen;
  auto* c = sub("gen-model", "Build a seeded synthetic backbone with weights");
  c->add_option("--config", gen.config, "Backbone config JSON")->check(CLI::ExistingFile);
  c->add_option("--preset", gen.preset, "mobilenet_v2, toy or transfer (pretrained toy CNN)");
  c->add_option("--resolution", gen.resolution);
  c->add_option("--width", gen.width);
  c->add_option("--classes", gen.classes);
  c->add_option("--calib", gen.calib, "Calibration inputs for quantization");
  c->add_flag("--float", gen.fp, "Skip quantization");
  c->add_option("-o,--output", gen.output);
  bind(c, gen);

  Profile prof;
  c = sub("profile", "Per-layer activation memory of a model");
  c->add_option("model", prof.model)->required();
  c->add_flag("--chart", prof.chart, "Per-block ASCII bar chart");
  c->add_flag("--no-inplace", prof.no_inplace, "Disable in-place depthwise");
  bind(c, prof);

  Plan plan;
  c = sub("plan", "Choose a patch schedule (p, n) under an SRAM limit");
  c->add_option("model", plan.model)->required();
  c->add_option("--sram", plan.sram, "SRAM limit in bytes")->required();
  c->add_option("--max-p", plan.max_p);
  c->add_option("-o,--output", plan.output, "Plan JSON");
  bind(c, plan);

  Infer inf;
  c = sub("infer", "Run int8 inference on a tensor dump");
  c->add_option("model", inf.model)->required();
  c->add_option("input", inf.input)->required();
  c->add_option("--patched", inf.patched, "Plan JSON for patch-based execution");
  c->add_option("-o,--output", inf.output);
  bind(c, inf);

  Train tr;
  c = sub("train", "Sparse on-device training of a quantized model");
  c->add_option("model", tr.model)->required();
  c->add_option("--scheme", tr.scheme, "Update scheme JSON (default: full update)");
  c->add_option("--data", tr.data, "IDX directory or synthetic:<task>")->required();
  c->add_option("--lr", tr.lr);
  c->add_option("--epochs", tr.epochs);
  c->add_option("--accum", tr.accum);
  c->add_option("--mode", tr.mode, "real, int8 or int8_qas");
  c->add_option("--samples", tr.samples, "Synthetic samples, half held out");
  c->add_option("-o,--output", tr.output, "Trained model JSON");
  bind(c, tr);

  AnalyzeContrib ac;
  c = sub("analyze-contrib", "Measure per-layer accuracy contributions");
  c->add_option("model", ac.model)->required();
  c->add_option("--data", ac.data, "IDX directory or synthetic:<task>")->required();
  c->add_option("--lr", ac.lr);
  c->add_option("--epochs", ac.epochs);
  c->add_option("--mode", ac.mode);
  c->add_option("--samples", ac.samples);
  c->add_option("--min-eval", ac.min_eval);
  c->add_option("--ratios", ac.ratios);
  c->add_option("-o,--output", ac.output);
  bind(c, ac);

  SearchUpdate su;
  c = sub("search-update", "Evolutionary search of a sparse update scheme");
  c->add_option("--table", su.table, "Contribution table JSON")->required();
  c->add_option("--model", su.model, "Model the table was measured on")->required();
  c->add_option("--sram", su.sram, "Training memory limit in bytes")->required();
  c->add_option("--generations", su.generations);
  c->add_option("-o,--output", su.output);
  bind(c, su);

  SearchSpace ss;
  c = sub("search-space", "Rank (width, resolution) search spaces");
  c->add_option("--sram", ss.sram)->required();
  c->add_option("--flash", ss.flash)->required();
  c->add_option("--m", ss.m, "Samples per space");
  c->add_option("--max-p", ss.max_p);
  c->add_flag("--no-patch", ss.no_patch, "Per-layer execution only");
  c->add_option("-o,--output", ss.output);
  c->add_option("--csv", ss.csv, "CDF CSV");
  bind(c, ss);

  SearchArch sa;
  c = sub("search-arch", "Joint architecture and patch-schedule search");
  c->add_option("--sram", sa.sram)->required();
  c->add_option("--flash", sa.flash)->required();
  c->add_option("--generations", sa.generations);
  c->add_option("--population", sa.population);
  c->add_option("--width", sa.width, "Width multiplier of the space");
  c->add_option("--resolutions", sa.resolutions);
  c->add_option("--max-p", sa.max_p);
  c->add_flag("--no-patch", sa.no_patch);
  c->add_option("-o,--output", sa.output, "Model JSON");
  c->add_option("--plan-out", sa.plan_out, "Plan JSON");
  bind(c, sa);

  Codegen cg;
  c = sub("codegen", "Emit a dependency-free C program for a model");
  c->add_option("model", cg.model)->required();
  c->add_option("--plan", cg.plan, "Plan JSON for a patch-based prefix");
  c->add_option("-o,--output", cg.output);
  c->add_option("--prefix", cg.prefix, "Symbol prefix");
  c->add_flag("--main", cg.with_main, "Add a stdin/stdout driver");
  bind(c, cg);

  if (!args.empty() && args[0].rfind('-', 0) != 0 && app.get_subcommand_no_throw(args[0]) == nullptr) {
    err << "error: unknown command '" << args[0] << "'\n" << app.help();
    return kUsage;
  }
  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  }
  try {
    action();
    staged.commit();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const Infeasible& e) {
    err << "infeasible: " << e.what() << "\n";
    return kInfeasible;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInfeasible;
  }
  out << staged.out.str();
  return kOk;
}

}  // namespace tinyplan::cli
