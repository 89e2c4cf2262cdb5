#include "semiseg/models.hpp"

#include <vector>

#include "semiseg/errors.hpp"

namespace semiseg {

const char* to_string(Arch a) { return a == Arch::UNet ? "unet" : "unetpp"; }

Arch arch_from_string(const std::string& s) {
  if (s == "unet") return Arch::UNet;
  if (s == "unetpp") return Arch::UNetPP;
  throw ConfigError("unknown arch: " + s);
}

const char* to_string(HeadKind h) { return h == HeadKind::Restoration ? "restoration" : "segmentation"; }

HeadKind head_from_string(const std::string& s) {
  if (s == "restoration") return HeadKind::Restoration;
  if (s == "segmentation") return HeadKind::Segmentation;
  throw ConfigError("unknown head kind: " + s);
}

void ModelConfig::validate() const {
  if (depth < 1 || depth > 6) throw ConfigError("model depth must be in [1,6]");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (input_side < 8) throw ConfigError("input_side must be >= 8");
  if (input_side % (1 << depth))
    throw ConfigError("input_side must be divisible by 2^depth");
}

json ModelConfig::to_json() const {
  return json{{"arch", to_string(arch)},
              {"depth", depth},
              {"base_channels", base_channels},
              {"in_channels", in_channels},
              {"num_classes", num_classes},
              {"input_side", input_side},
              {"head", to_string(head)}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  if (j.contains("arch")) c.arch = arch_from_string(j.at("arch").get<std::string>());
  c.depth = j.value("depth", c.depth);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.input_side = j.value("input_side", c.input_side);
  if (j.contains("head")) c.head = head_from_string(j.at("head").get<std::string>());
  c.validate();
  return c;
}

json ModelConfig::trunk_signature() const {
  return json{{"arch", to_string(arch)},
              {"depth", depth},
              {"base_channels", base_channels},
              {"in_channels", in_channels},
              {"input_side", input_side}};
}

bool is_head_param(const std::string& name) { return name == "head.weight" || name == "head.bias"; }

namespace {

template <class S>
int conv_block(Graph<S>& g, const std::string& prefix, int in_node, int ch) {
  int c1 = g.conv(prefix + ".conv1", in_node, ch, 3);
  int r1 = g.relu(prefix + ".relu1", c1);
  int c2 = g.conv(prefix + ".conv2", r1, ch, 3);
  return g.relu(prefix + ".relu2", c2);
}

template <class S>
int build_unet_trunk(Graph<S>& g, const ModelConfig& cfg, int image) {
  std::vector<int> skips;
  int cur = image;
  for (int i = 0; i < cfg.depth; ++i) {
    std::string p = "enc" + std::to_string(i);
    int blk = conv_block(g, p, cur, cfg.base_channels << i);
    skips.push_back(blk);
    cur = g.maxpool(p + ".pool", blk);
  }
  cur = conv_block(g, "bott", cur, cfg.base_channels << cfg.depth);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    std::string p = "dec" + std::to_string(i);
    int up = g.tconv(p + ".up", cur, cfg.base_channels << i);
    int cat = g.concat(p + ".cat", skips[static_cast<size_t>(i)], up);
    cur = conv_block(g, p, cat, cfg.base_channels << i);
  }
  return cur;
}

// nodes x{i}{j}: level i (0..depth), column j (0..depth-i); x{i}{j} for
// j >= 1 fuses all same-level predecessors with the upsampled x{i+1}{j-1}
template <class S>
int build_unetpp_trunk(Graph<S>& g, const ModelConfig& cfg, int image) {
  const int d = cfg.depth;
  std::vector<std::vector<int>> x(static_cast<size_t>(d) + 1);
  for (int i = 0; i <= d; ++i) {
    std::string p = "x" + std::to_string(i) + "0";
    int src = i == 0 ? image : g.maxpool(p + ".pool", x[static_cast<size_t>(i - 1)][0]);
    x[static_cast<size_t>(i)].push_back(conv_block(g, p, src, cfg.base_channels << i));
  }
  for (int j = 1; j <= d; ++j) {
    for (int i = 0; i + j <= d; ++i) {
      std::string p = "x" + std::to_string(i) + std::to_string(j);
      int up = g.tconv(p + ".up", x[static_cast<size_t>(i + 1)][static_cast<size_t>(j - 1)],
                       cfg.base_channels << i);
      int fused = x[static_cast<size_t>(i)][0];
      for (int k = 1; k < j; ++k)
        fused = g.concat(p + ".cat" + std::to_string(k - 1), fused, x[static_cast<size_t>(i)][static_cast<size_t>(k)]);
      fused = g.concat(p + ".cat" + std::to_string(j - 1), fused, up);
      x[static_cast<size_t>(i)].push_back(conv_block(g, p, fused, cfg.base_channels << i));
    }
  }
  return x[0][static_cast<size_t>(d)];
}

}  // namespace

template <class S>
Graph<S> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Graph<S> g;
  int image = g.add_input("image", {cfg.in_channels, cfg.input_side, cfg.input_side});
  int trunk = cfg.arch == Arch::UNet ? build_unet_trunk(g, cfg, image) : build_unetpp_trunk(g, cfg, image);
  if (cfg.head == HeadKind::Restoration) {
    int logits = g.conv("head", trunk, 1, 1);
    int out = g.sigmoid("head_act", logits);
    int target = g.add_input("target_image", {1, cfg.input_side, cfg.input_side});
    g.loss_l1("loss_l1", out, target);
  } else {
    int logits = g.conv("head", trunk, cfg.num_classes, 1);
    int out = g.softmax("head_act", logits);
    int target = g.add_input("target_onehot", {cfg.num_classes, cfg.input_side, cfg.input_side});
    g.loss_ce("loss_ce", out, target, Reduction::Mean);
    g.loss_dice("loss_dice", out, target);
    g.loss_mse("loss_mse", out, target);
  }
  g.init_params(seed);
  return g;
}

template Graph<float> build_model<float>(const ModelConfig&, uint64_t);
template Graph<double> build_model<double>(const ModelConfig&, uint64_t);

}  // namespace semiseg
