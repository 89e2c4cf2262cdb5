#include "semiseg/losses.hpp"

#include <cmath>

#include "semiseg/errors.hpp"

namespace semiseg {

namespace {
void require_same(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": operand shapes differ");
}
}  // namespace

double l1_loss(const Tensor<double>& pred, const Tensor<double>& target) {
  require_same(pred, target, "l1_loss");
  double acc = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) acc += std::abs(pred.data[i] - target.data[i]);
  return acc / static_cast<double>(pred.numel());
}

double ce_loss(const Tensor<double>& probs, const Tensor<double>& target, Reduction red) {
  require_same(probs, target, "ce_loss");
  if (probs.rank() != 3) throw ShapeError("ce_loss operands must be (L,H,W)");
  double acc = 0;
  for (size_t i = 0; i < probs.data.size(); ++i) {
    double tv = target.data[i];
    if (tv != 0.0) acc -= tv * std::log(std::max(probs.data[i], kCeClamp));
  }
  if (red == Reduction::Mean) acc /= static_cast<double>(probs.shape[1] * probs.shape[2]);
  return acc;
}

double dice_loss(const Tensor<double>& probs, const Tensor<double>& target) {
  require_same(probs, target, "dice_loss");
  if (probs.rank() != 3) throw ShapeError("dice_loss operands must be (L,H,W)");
  const int64_t L = probs.shape[0], plane = probs.shape[1] * probs.shape[2];
  double mean = 0;
  for (int64_t c = 0; c < L; ++c) {
    double inter = 0, sp = 0, st = 0;
    for (int64_t n = 0; n < plane; ++n) {
      double pv = probs.data[static_cast<size_t>(c * plane + n)];
      double tv = target.data[static_cast<size_t>(c * plane + n)];
      inter += pv * tv;
      sp += pv;
      st += tv;
    }
    mean += (2.0 * inter + kDiceEps) / (sp + st + kDiceEps);
  }
  return 1.0 - mean / static_cast<double>(L);
}

double mse_loss(const Tensor<double>& pred, const Tensor<double>& target) {
  require_same(pred, target, "mse_loss");
  double acc = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    double d = pred.data[i] - target.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

Tensor<double> onehot(const ClassMask& mask, int num_classes) {
  if (mask.shape.size() != 2) throw ShapeError("onehot expects a 2-d mask");
  Tensor<double> out({num_classes, mask.shape[0], mask.shape[1]});
  const int64_t plane = mask.shape[0] * mask.shape[1];
  for (int64_t n = 0; n < plane; ++n) {
    uint8_t c = mask.data[static_cast<size_t>(n)];
    if (c >= num_classes) throw ConfigError("mask contains class id beyond num_classes");
    out.data[static_cast<size_t>(c * plane + n)] = 1.0;
  }
  return out;
}

void DscCounts::add(const ClassMask& pred, const ClassMask& truth, uint8_t cls) {
  if (pred.shape != truth.shape) throw ShapeError("dsc: mask shapes differ");
  for (size_t i = 0; i < pred.data.size(); ++i) {
    bool pa = pred.data[i] == cls;
    bool pb = truth.data[i] == cls;
    a += pa;
    b += pb;
    inter += pa && pb;
  }
}

double DscCounts::dsc() const {
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double dsc_metric(const ClassMask& pred, const ClassMask& truth, uint8_t cls) {
  DscCounts c;
  c.add(pred, truth, cls);
  return c.dsc();
}

std::vector<double> dsc_per_class(const ClassMask& pred, const ClassMask& truth, int num_classes) {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) out.push_back(dsc_metric(pred, truth, static_cast<uint8_t>(c)));
  return out;
}

}  // namespace semiseg
