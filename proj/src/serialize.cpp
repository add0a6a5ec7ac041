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
#include <filesystem>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "tinyplan/graph.hpp"

namespace tinyplan {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json ref_of(std::vector<uint8_t>& blobs, const TensorBlob& b) {
  const auto bytes = encode_blob(b);
  json ref = {{"offset", blobs.size()}, {"length", bytes.size()}};
  blobs.insert(blobs.end(), bytes.begin(), bytes.end());
  return ref;
}

TensorBlob blob_at(std::span<const uint8_t> blobs, const json& ref, const std::string& where) {
  if (!ref.is_object() || !ref.contains("offset") || !ref.contains("length")) throw IoError(where + ": tensor reference needs offset and length");
  const auto off = ref.at("offset").get<uint64_t>();
  const auto len = ref.at("length").get<uint64_t>();
  if (off + len > blobs.size()) throw IoError(where + ": tensor reference [" + std::to_string(off) + ", +" + std::to_string(len) + ") exceeds blob file of " + std::to_string(blobs.size()) + " bytes");
  size_t used = 0;
  auto b = decode_blob(blobs.subspan(off, len), &used);
  if (used != len) throw IoError(where + ": tensor reference length does not match record");
  return b;
}

}  // namespace

SerializedModel serialize(const Graph& graph, const std::string& blob_file) {
  SerializedModel out;
  json doc;
  doc["version"] = kFormatVersion;
  doc["input"] = {{"h", graph.input[0]}, {"w", graph.input[1]}, {"c", graph.input[2]}, {"scale", graph.input_scale}};
  doc["blobs"] = {{"file", blob_file}};
  json nodes = json::array();
  for (const auto& n : graph.nodes) {
    const auto& a = n.attrs;
    json jn;
    jn["id"] = n.id;
    jn["kind"] = op_name(n.kind);
    jn["attrs"] = {{"kernel", a.kernel}, {"stride", a.stride}, {"padding", a.padding == Padding::kSame ? "same" : "valid"},
                   {"in_channels", a.in_channels}, {"out_channels", a.out_channels}, {"groups", a.groups},
                   {"relu6", a.relu6}, {"block", a.block}};
    jn["preds"] = n.preds;
    jn["fp32"] = n.fp32;
    jn["out_scale"] = n.out_scale;
    if (!n.qweight.empty()) {
      jn["weight_ref"] = ref_of(out.blobs, to_blob(n.qweight));
      jn["scales"] = n.qweight.scale().values();
    }
    if (!n.qbias.empty()) jn["bias_ref"] = ref_of(out.blobs, to_blob(n.qbias));
    if (!n.weight.empty()) jn["fweight_ref"] = ref_of(out.blobs, to_blob(n.weight));
    if (!n.bias.empty()) jn["fbias_ref"] = ref_of(out.blobs, to_blob(n.bias));
    nodes.push_back(std::move(jn));
  }
  doc["nodes"] = std::move(nodes);
  out.json = doc.dump(1);
  return out;
}

Graph deserialize(const std::string& text, std::span<const uint8_t> blobs) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError("model parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  try {
    if (doc.value("version", 0) != kFormatVersion) throw IoError("unsupported model version");
    const auto& in = doc.at("input");
    Graph g;
    g.input = Shape{in.at("h").get<int>(), in.at("w").get<int>(), in.at("c").get<int>()};
    g.input_scale = in.value("scale", 0.0f);
    const auto& nodes = doc.at("nodes");
    for (size_t i = 0; i < nodes.size(); ++i) {
      const auto& jn = nodes[i];
      const std::string where = "nodes[" + std::to_string(i) + "]";
      LayerNode n;
      n.id = jn.at("id").get<int>();
      const auto kind_name = jn.at("kind").get<std::string>();
      const auto kind = parse_op_name(kind_name);
      if (!kind) throw IoError(where + ": unknown op kind '" + kind_name + "'");
      n.kind = *kind;
      const auto& a = jn.at("attrs");
      n.attrs.kernel = a.at("kernel").get<int>();
      n.attrs.stride = a.at("stride").get<int>();
      const auto pad = a.at("padding").get<std::string>();
      if (pad != "same" && pad != "valid") throw IoError(where + ": unknown padding '" + pad + "'");
      n.attrs.padding = pad == "same" ? Padding::kSame : Padding::kValid;
      n.attrs.in_channels = a.at("in_channels").get<int>();
      n.attrs.out_channels = a.at("out_channels").get<int>();
      n.attrs.groups = a.at("groups").get<int>();
      n.attrs.relu6 = a.at("relu6").get<bool>();
      n.attrs.block = a.value("block", -1);
      n.preds = jn.at("preds").get<std::vector<int>>();
      n.fp32 = jn.value("fp32", false);
      n.out_scale = jn.value("out_scale", 0.0f);
      if (jn.contains("weight_ref")) {
        auto b = blob_at(blobs, jn["weight_ref"], where + ".weight_ref");
        if (b.dtype == DType::kInt8) {
          if (!jn.contains("scales")) throw IoError(where + ": quantized weight is missing its scales array");
          b.scales = jn["scales"].get<std::vector<float>>();
          n.qweight = quant_from_blob(b);
        } else {
          throw IoError(where + ": weight_ref must point at an int8 tensor");
        }
      }
      if (jn.contains("bias_ref")) n.qbias = acc_from_blob(blob_at(blobs, jn["bias_ref"], where + ".bias_ref"));
      if (jn.contains("fweight_ref")) n.weight = float_from_blob(blob_at(blobs, jn["fweight_ref"], where + ".fweight_ref"));
      if (jn.contains("fbias_ref")) n.bias = float_from_blob(blob_at(blobs, jn["fbias_ref"], where + ".fbias_ref"));
      // int8-only files still carry enough to run the real-valued path
      if (n.weight.empty() && !n.qweight.empty()) n.weight = dequantize(n.qweight);
      g.nodes.push_back(std::move(n));
    }
    validate(g);
    return g;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed model document: ") + e.what());
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(std::string("invalid model: ") + e.what());
  }
}

void save_model(const Graph& graph, const std::string& json_path) {
  namespace fs = std::filesystem;
  const fs::path p(json_path);
  const std::string blob_name = p.stem().string() + ".bin";
  const auto m = serialize(graph, blob_name);
  std::ofstream jf(p);
  if (!jf) throw IoError("cannot write " + json_path);
  jf << m.json;
  std::ofstream bf(p.parent_path() / blob_name, std::ios::binary);
  if (!bf) throw IoError("cannot write blob file for " + json_path);
  bf.write(reinterpret_cast<const char*>(m.blobs.data()), static_cast<std::streamsize>(m.blobs.size()));
  if (!jf || !bf) throw IoError("failed writing " + json_path);
}

Graph load_model(const std::string& json_path) {
  namespace fs = std::filesystem;
  std::ifstream jf(json_path);
  if (!jf) throw IoError("cannot open " + json_path);
  const std::string text((std::istreambuf_iterator<char>(jf)), std::istreambuf_iterator<char>());
  std::string blob_file = "model.bin";
  try {
    const auto doc = json::parse(text);
    if (doc.contains("blobs")) blob_file = doc["blobs"].value("file", blob_file);
  } catch (const json::parse_error& e) {
    throw IoError("model parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  const fs::path blob_path = fs::path(json_path).parent_path() / blob_file;
  std::vector<uint8_t> blobs;
  if (fs::exists(blob_path)) {
    std::ifstream bf(blob_path, std::ios::binary);
    blobs.assign(std::istreambuf_iterator<char>(bf), std::istreambuf_iterator<char>());
  }
  return deserialize(text, blobs);
}

}  // namespace tinyplan
