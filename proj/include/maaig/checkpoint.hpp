#pragma once

// Self-describing JSON checkpoint: model config, vocabulary, training lineage
// and named tensors stored row-major. Values are written in shortest
// round-trip form, so a reload reproduces every parameter bit-for-bit.

#include <filesystem>
#include <string>
#include <vector>

#include "maaig/clip_io.hpp"
#include "maaig/model.hpp"
#include "maaig/tokenizer.hpp"

namespace maaig {

inline constexpr std::string_view kCheckpointFormat = "maaig-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParameters params;
  Vocabulary vocab;
  CoordSystem coord = CoordSystem::Local;  // coordinate system the model was last trained on
  json lineage = json::array();            // one entry per training stage, oldest first
};

inline json config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},   {"n_layers_enc", c.n_layers_enc},
          {"n_layers_dec", c.n_layers_dec}, {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},         {"max_frames", c.max_frames},
          {"max_tokens", c.max_tokens},     {"vocab_size", c.vocab_size},
          {"dropout", c.dropout},   {"arch", std::string(to_string(c.arch))},
          {"rel_buckets", c.rel_buckets},   {"rel_max_distance", c.rel_max_distance}};
}

inline ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers_enc = j.at("n_layers_enc").get<int>();
  c.n_layers_dec = j.at("n_layers_dec").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_frames = j.at("max_frames").get<int>();
  c.max_tokens = j.at("max_tokens").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.arch = arch_from_string(j.at("arch").get<std::string>());
  c.rel_buckets = j.at("rel_buckets").get<int>();
  c.rel_max_distance = j.at("rel_max_distance").get<int>();
  c.check();
  return c;
}

inline json checkpoint_to_json(const Checkpoint& ck) {
  json tensors = json::array();
  for (const auto& t : ck.params.tensors) {
    std::vector<double> data(t.value.data(), t.value.data() + t.value.size());
    tensors.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"data", data}});
  }
  return {{"format", std::string(kCheckpointFormat)},
          {"version", kCheckpointVersion},
          {"config", config_to_json(ck.params.config)},
          {"coord", std::string(to_string(ck.coord))},
          {"lineage", ck.lineage},
          {"vocab", ck.vocab.to_json()},
          {"tensors", tensors}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.at("format").get<std::string>() != kCheckpointFormat) {
    throw std::invalid_argument("not a checkpoint document");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::invalid_argument("unsupported checkpoint version");
  }
  Checkpoint ck;
  ck.params.config = config_from_json(j.at("config"));
  ck.coord = coord_from_string(j.at("coord").get<std::string>());
  ck.lineage = j.at("lineage");
  ck.vocab = Vocabulary::from_json(j.at("vocab"));
  for (const auto& t : j.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw std::invalid_argument("tensor '" + t.at("name").get<std::string>() + "' has the wrong element count");
    }
    Matrix m = Eigen::Map<const Matrix>(data.data(), rows, cols);
    ck.params.tensors.push_back({t.at("name").get<std::string>(), std::move(m)});
  }
  ck.params.reindex();
  ck.params.check_layout();
  if (static_cast<std::size_t>(ck.params.config.vocab_size) != ck.vocab.size()) {
    throw std::invalid_argument("checkpoint vocabulary size does not match the model config");
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_text_file(path, checkpoint_to_json(ck).dump());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(json::parse(read_text_file(path)));
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace maaig
