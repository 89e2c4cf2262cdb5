#pragma once

// Adam with bias correction. Moments are kept per parameter tensor; the
// per-element update is computed in double regardless of the parameter
// scalar type.

#include <cstdint>
#include <vector>

#include "semiseg/errors.hpp"
#include "semiseg/graph.hpp"
#include "semiseg/tensor.hpp"

namespace semiseg {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// one update of a single tensor; t is the 1-based step index
template <class S>
void adam_update(Tensor<S>& p, const Tensor<S>& g, Tensor<S>& m, Tensor<S>& v, int64_t t,
                 const AdamConfig& cfg) {
  if (!p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v))
    throw ShapeError("adam_update operands must share one shape");
  if (t < 1) throw ConfigError("adam step index must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < p.data.size(); ++i) {
    double gi = g.data[i];
    double mi = cfg.beta1 * static_cast<double>(m.data[i]) + (1.0 - cfg.beta1) * gi;
    double vi = cfg.beta2 * static_cast<double>(v.data[i]) + (1.0 - cfg.beta2) * gi * gi;
    m.data[i] = static_cast<S>(mi);
    v.data[i] = static_cast<S>(vi);
    double update = cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.epsilon);
    p.data[i] = static_cast<S>(static_cast<double>(p.data[i]) - update);
    if (!std::isfinite(static_cast<double>(p.data[i])))
      throw TrainingError("non-finite parameter after adam update");
  }
}

template <class S>
class Adam {
 public:
  Adam(const Graph<S>& g, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto& p : g.params()) {
      m_.emplace_back(p.value.shape);
      v_.emplace_back(p.value.shape);
    }
  }

  void step(Graph<S>& g) {
    auto& ps = g.params();
    if (ps.size() != m_.size()) throw ConfigError("adam state does not match graph parameters");
    ++t_;
    for (size_t i = 0; i < ps.size(); ++i) adam_update(ps[i].value, ps[i].grad, m_[i], v_[i], t_, cfg_);
  }

  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

}  // namespace semiseg
