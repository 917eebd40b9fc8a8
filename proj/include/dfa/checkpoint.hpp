#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dfa/errors.hpp"
#include "dfa/model.hpp"
#include "dfa/ortho_head.hpp"
#include "dfa/rng.hpp"

namespace dfa {

// Checkpoint container: a directory holding manifest.json (architecture,
// bookkeeping, tensor directory) and params.bin (the raw float64
// little-endian payload of every tensor, in manifest order). The round trip
// is bit-exact.

namespace detail {

inline void append_tensor(nlohmann::json& dir, std::vector<double>& payload,
                          const std::string& name, const Tensor& t) {
  nlohmann::json e;
  e["name"] = name;
  e["dtype"] = "f64";
  e["shape"] = t.shape();
  e["offset"] = payload.size();
  e["count"] = t.size();
  dir.push_back(e);
  payload.insert(payload.end(), t.vec().begin(), t.vec().end());
}

inline Tensor read_tensor(const nlohmann::json& e, const std::vector<double>& payload) {
  if (e.at("dtype").get<std::string>() != "f64")
    throw FormatError("checkpoint: unsupported dtype", 0);
  const auto shape = e.at("shape").get<std::vector<std::size_t>>();
  const std::size_t offset = e.at("offset").get<std::size_t>();
  const std::size_t count = e.at("count").get<std::size_t>();
  if (count != Tensor::count(shape) || offset + count > payload.size())
    throw FormatError("checkpoint: tensor directory inconsistent", offset * 8);
  return Tensor(shape, std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                           payload.begin() + static_cast<std::ptrdiff_t>(offset + count)));
}

}  // namespace detail

inline void save_checkpoint(const std::string& dir, const ModelSnapshot& m) {
  std::filesystem::create_directories(dir);
  const auto& spec = m.extractor.spec();

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["arch"] = to_string(spec.arch);
  manifest["in_channels"] = spec.in_channels;
  manifest["height"] = spec.height;
  manifest["width"] = spec.width;
  manifest["conv1_channels"] = spec.conv1_channels;
  manifest["conv2_channels"] = spec.conv2_channels;
  manifest["embed_dim"] = spec.embed_dim;
  manifest["embed_scale"] = spec.embed_scale;
  manifest["normalize_embedding"] = spec.normalize_embedding;
  manifest["activation"] = to_string(spec.activation);
  manifest["n_classes"] = m.head.n_classes;
  manifest["score_scale"] = m.head.score_scale;
  manifest["epoch"] = m.epoch;
  manifest["config_hash"] = m.config_hash;
  manifest["rng_state"] = m.rng_state;

  nlohmann::json tensors = nlohmann::json::array();
  std::vector<double> payload;
  for (std::size_t i = 0; i < m.extractor.parameter_tensor_count(); ++i)
    detail::append_tensor(tensors, payload, m.extractor.parameter_name(i),
                          m.extractor.parameter(i));
  detail::append_tensor(tensors, payload, "head.weight", m.head.weights);
  manifest["tensors"] = tensors;

  {
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw DataError("checkpoint: cannot write manifest in '" + dir + "'");
    f << manifest.dump(2) << '\n';
  }
  {
    std::ofstream f(dir + "/params.bin", std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot write params in '" + dir + "'");
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!f) throw DataError("checkpoint: short write in '" + dir + "'");
  }
}

inline ModelSnapshot load_checkpoint(const std::string& dir) {
  nlohmann::json manifest;
  {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw FormatError("checkpoint: missing manifest in '" + dir + "'", 0);
    try {
      f >> manifest;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("checkpoint: bad manifest: ") + e.what(), 0);
    }
  }
  if (manifest.at("format_version").get<int>() != 1)
    throw FormatError("checkpoint: unsupported format version", 0);

  std::vector<double> payload;
  {
    std::ifstream f(dir + "/params.bin", std::ios::binary);
    if (!f) throw FormatError("checkpoint: missing params.bin in '" + dir + "'", 0);
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(f.tellg());
    if (bytes % sizeof(double)) throw FormatError("checkpoint: payload not 8-byte aligned", bytes);
    f.seekg(0);
    payload.resize(bytes / sizeof(double));
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw FormatError("checkpoint: short read from params.bin", bytes);
  }

  ExtractorSpec spec;
  spec.arch = arch_from_string(manifest.at("arch").get<std::string>());
  spec.in_channels = manifest.at("in_channels").get<std::size_t>();
  spec.height = manifest.at("height").get<std::size_t>();
  spec.width = manifest.at("width").get<std::size_t>();
  spec.conv1_channels = manifest.at("conv1_channels").get<std::size_t>();
  spec.conv2_channels = manifest.at("conv2_channels").get<std::size_t>();
  spec.embed_dim = manifest.at("embed_dim").get<std::size_t>();
  spec.embed_scale = manifest.at("embed_scale").get<double>();
  spec.normalize_embedding = manifest.at("normalize_embedding").get<bool>();
  spec.activation = activation_from_string(manifest.at("activation").get<std::string>());

  ModelSnapshot m;
  Rng scratch(0);  // shapes come from the spec; values are overwritten below
  m.extractor = FeatureExtractor(spec, scratch);
  m.epoch = manifest.at("epoch").get<int>();
  m.config_hash = manifest.at("config_hash").get<std::string>();
  m.rng_state = manifest.at("rng_state").get<std::string>();

  const auto& tensors = manifest.at("tensors");
  Tensor head_weights;
  std::size_t loaded = 0;
  for (const auto& e : tensors) {
    const std::string name = e.at("name").get<std::string>();
    Tensor t = detail::read_tensor(e, payload);
    if (name == "head.weight") {
      head_weights = std::move(t);
      continue;
    }
    bool found = false;
    for (std::size_t i = 0; i < m.extractor.parameter_tensor_count(); ++i) {
      if (m.extractor.parameter_name(i) == name) {
        if (!m.extractor.parameter(i).same_shape(t))
          throw FormatError("checkpoint: shape mismatch for tensor '" + name + "'", 0);
        m.extractor.parameter(i) = std::move(t);
        found = true;
        ++loaded;
        break;
      }
    }
    if (!found) throw FormatError("checkpoint: unknown tensor '" + name + "'", 0);
  }
  if (loaded != m.extractor.parameter_tensor_count())
    throw FormatError("checkpoint: missing extractor tensors", 0);
  if (head_weights.rank() != 2) throw FormatError("checkpoint: missing head.weight", 0);

  m.head.weights = std::move(head_weights);
  m.head.n_classes = manifest.at("n_classes").get<std::size_t>();
  m.head.score_scale = manifest.at("score_scale").get<double>();
  m.head.embed_dim = spec.embed_dim;
  m.head.frozen = true;
  if (m.head.weights.dim(0) != m.head.n_classes || m.head.weights.dim(1) != m.head.embed_dim)
    throw FormatError("checkpoint: head.weight shape mismatch", 0);
  return m;
}

}  // namespace dfa
