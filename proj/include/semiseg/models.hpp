#pragma once

// Encoder-decoder builders on top of the graph: a U-Net with skip
// connections and a U-Net++ with dense nested skips (single head, no
// deep supervision). Node and parameter names are stable because trunk
// weights are transferred between stages by name.

#include <string>

#include "semiseg/graph.hpp"
#include "semiseg/jsonio.hpp"

namespace semiseg {

enum class Arch { UNet, UNetPP };
enum class HeadKind { Restoration, Segmentation };

const char* to_string(Arch a);
Arch arch_from_string(const std::string& s);
const char* to_string(HeadKind h);
HeadKind head_from_string(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::UNet;
  int depth = 4;  // pooling levels (U-Net++ desk default is 3)
  int base_channels = 16;
  int in_channels = 1;
  int num_classes = 3;
  int input_side = 64;
  HeadKind head = HeadKind::Segmentation;

  void validate() const;
  json to_json() const;
  static ModelConfig from_json(const json& j);
  // structural fields shared between stages; head/num_classes excluded
  json trunk_signature() const;
};

// node names of interest: "image" (input), "head" (1x1 conv logits),
// "head_act" (sigmoid or channel softmax), "target_image"/"loss_l1" for
// restoration heads, "target_onehot"/"loss_ce"/"loss_dice"/"loss_mse"
// for segmentation heads
template <class S>
Graph<S> build_model(const ModelConfig& cfg, uint64_t seed);

bool is_head_param(const std::string& name);

extern template Graph<float> build_model<float>(const ModelConfig&, uint64_t);
extern template Graph<double> build_model<double>(const ModelConfig&, uint64_t);

}  // namespace semiseg
