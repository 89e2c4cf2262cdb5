#pragma once

// Central-difference verification of analytic gradients on a 64-bit
// graph. Inputs must be set beforehand; parameters are perturbed in
// place and restored.

#include <string>
#include <vector>

#include "semiseg/graph.hpp"

namespace semiseg {

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  // cap on checked coordinates per parameter; 0 means all. Sampled
  // coordinates are drawn deterministically from sample_seed.
  size_t max_coords_per_param = 0;
  uint64_t sample_seed = 0x5eed;
};

struct GradCheckEntry {
  std::string param;
  int64_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  size_t coords_checked = 0;
  std::vector<GradCheckEntry> failures;

  bool ok() const { return failures.empty(); }
  std::vector<std::string> failing_params() const;
};

// rel err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
GradCheckReport grad_check(Graph<double>& g, int loss_node, const GradCheckOptions& opt = {});

}  // namespace semiseg
