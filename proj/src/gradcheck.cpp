#include "semiseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "semiseg/rng.hpp"

namespace semiseg {

std::vector<std::string> GradCheckReport::failing_params() const {
  std::vector<std::string> names;
  for (const auto& f : failures)
    if (names.empty() || names.back() != f.param) names.push_back(f.param);
  return names;
}

GradCheckReport grad_check(Graph<double>& g, int loss_node, const GradCheckOptions& opt) {
  g.forward_to(loss_node);
  g.zero_grad();
  g.backward(loss_node);

  std::vector<Tensor<double>> analytic;
  analytic.reserve(g.params().size());
  for (const auto& p : g.params()) analytic.push_back(p.grad);

  GradCheckReport rep;
  for (size_t pi = 0; pi < g.params().size(); ++pi) {
    auto& p = g.params()[pi];
    const int64_t n = p.value.numel();
    std::vector<int64_t> coords;
    if (opt.max_coords_per_param == 0 || static_cast<size_t>(n) <= opt.max_coords_per_param) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      // partial Fisher-Yates: distinct sampled coordinates, stable per (seed, param)
      std::vector<int64_t> all(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
      RandomStream rs(derive_seed(opt.sample_seed, "gradcheck/" + p.name));
      for (size_t k = 0; k < opt.max_coords_per_param; ++k) {
        size_t j = k + static_cast<size_t>(rs.below(static_cast<uint64_t>(n) - k));
        std::swap(all[k], all[j]);
      }
      coords.assign(all.begin(), all.begin() + static_cast<int64_t>(opt.max_coords_per_param));
    }
    for (int64_t idx : coords) {
      const double orig = p.value.data[static_cast<size_t>(idx)];
      p.value.data[static_cast<size_t>(idx)] = orig + opt.h;
      g.forward_to(loss_node);
      double lp = g.value_of(loss_node);
      p.value.data[static_cast<size_t>(idx)] = orig - opt.h;
      g.forward_to(loss_node);
      double lm = g.value_of(loss_node);
      p.value.data[static_cast<size_t>(idx)] = orig;
      double numeric = (lp - lm) / (2.0 * opt.h);
      double a = analytic[pi].data[static_cast<size_t>(idx)];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.coords_checked;
      if (rel > opt.tolerance) rep.failures.push_back({p.name, idx, a, numeric, rel});
    }
  }
  // leave the graph consistent with unperturbed parameters
  g.forward_to(loss_node);
  return rep;
}

}  // namespace semiseg
