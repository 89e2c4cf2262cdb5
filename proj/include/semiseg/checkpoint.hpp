#pragma once

// Checkpoint container: "SSLC" magic, u32 version, a length-prefixed
// JSON metadata block, then named tensor records. All integers and
// tensor payloads are little-endian on disk, so the content hash of a
// checkpoint is platform independent.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "semiseg/graph.hpp"
#include "semiseg/jsonio.hpp"
#include "semiseg/models.hpp"

namespace semiseg {

enum class Stage { Cnn1, Cnn2, Cnn3 };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TensorBlob {
  uint8_t dtype = 0;  // dtype_traits code
  Shape dims;
  std::vector<unsigned char> raw;  // little-endian scalars
};

struct Checkpoint {
  json metadata;
  std::vector<std::pair<std::string, TensorBlob>> tensors;

  std::vector<unsigned char> serialize() const;
  static Checkpoint deserialize(const std::vector<unsigned char>& bytes, const std::string& origin);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  uint64_t content_hash() const;

  std::string stage() const { return metadata.at("stage").get<std::string>(); }
  ModelConfig model_config() const { return ModelConfig::from_json(metadata.at("model")); }
};

template <class S>
Checkpoint checkpoint_from_graph(const Graph<S>& g, json metadata);

// exact restore: every graph parameter must be present with matching
// shape and dtype
template <class S>
void load_checkpoint_into(const Checkpoint& ckpt, Graph<S>& g);

// copies all non-head parameters of a restoration checkpoint into dst
// bit-exactly, leaving dst's head as initialized. Only stage "cnn1"
// sources are accepted: a label-fine-tuned source would leak labeled
// validation information into the target stage.
template <class S>
void transfer_trunk(const Checkpoint& src, Graph<S>& dst, const ModelConfig& dst_cfg, Stage dst_stage);

extern template Checkpoint checkpoint_from_graph<float>(const Graph<float>&, json);
extern template Checkpoint checkpoint_from_graph<double>(const Graph<double>&, json);
extern template void load_checkpoint_into<float>(const Checkpoint&, Graph<float>&);
extern template void load_checkpoint_into<double>(const Checkpoint&, Graph<double>&);
extern template void transfer_trunk<float>(const Checkpoint&, Graph<float>&, const ModelConfig&, Stage);
extern template void transfer_trunk<double>(const Checkpoint&, Graph<double>&, const ModelConfig&, Stage);

}  // namespace semiseg
