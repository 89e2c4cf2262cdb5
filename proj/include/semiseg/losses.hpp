#pragma once

// Reference implementations of the training losses and the Dice overlap
// metric, independent of the autodiff graph. The graph loss nodes are
// required (and tested) to agree with these to near machine precision.

#include <vector>

#include "semiseg/graph.hpp"
#include "semiseg/tensor.hpp"

namespace semiseg {

// mean absolute error over all elements
double l1_loss(const Tensor<double>& pred, const Tensor<double>& target);

// -sum(t * log(max(p, 1e-12))), divided by H*W for Reduction::Mean;
// operands are (L,H,W)
double ce_loss(const Tensor<double>& probs, const Tensor<double>& target,
               Reduction red = Reduction::Mean);

// 1 - mean over classes of (2*intersection + eps) / (sum_p + sum_t + eps),
// eps = 1e-6, background class included
double dice_loss(const Tensor<double>& probs, const Tensor<double>& target);

// mean squared error over all elements (classes included in the count)
double mse_loss(const Tensor<double>& pred, const Tensor<double>& target);

Tensor<double> onehot(const ClassMask& mask, int num_classes);

// per-pixel argmax over the class axis; ties resolve to the lowest class id
template <class S>
ClassMask argmax_mask(const Tensor<S>& probs) {
  const int64_t L = probs.shape[0], plane = probs.shape[1] * probs.shape[2];
  ClassMask out({probs.shape[1], probs.shape[2]});
  for (int64_t n = 0; n < plane; ++n) {
    int best = 0;
    S bv = probs.data[static_cast<size_t>(n)];
    for (int64_t c = 1; c < L; ++c) {
      S v = probs.data[static_cast<size_t>(c * plane + n)];
      if (v > bv) {
        bv = v;
        best = static_cast<int>(c);
      }
    }
    out.data[static_cast<size_t>(n)] = static_cast<uint8_t>(best);
  }
  return out;
}

// running overlap counts for one class, poolable across slices
struct DscCounts {
  int64_t inter = 0, a = 0, b = 0;

  void add(const ClassMask& pred, const ClassMask& truth, uint8_t cls);
  // 2|A∩B| / (|A|+|B|); both empty -> 1.0
  double dsc() const;
};

double dsc_metric(const ClassMask& pred, const ClassMask& truth, uint8_t cls);
std::vector<double> dsc_per_class(const ClassMask& pred, const ClassMask& truth, int num_classes);

}  // namespace semiseg
