#pragma once

// Image degradations used to build self-supervised restoration pairs:
// SR keeps every ratio-th line and replicates it back to full size,
// PS permutes whole lines with a seeded Fisher-Yates shuffle, and BOTH
// subsamples along one axis then shuffles the complementary axis.

#include <string>

#include "semiseg/rng.hpp"
#include "semiseg/tensor.hpp"

namespace semiseg {

enum class DegradeMode { SR, PS, BOTH };
enum class LineAxis { Rows, Cols };  // Rows = lines indexed by y, Cols = by x

const char* to_string(DegradeMode m);
DegradeMode degrade_mode_from_string(const std::string& s);
const char* to_string(LineAxis a);

struct DegradeSpec {
  DegradeMode mode = DegradeMode::BOTH;
  int ratio = 4;  // sampled from {4,6,8}
  LineAxis axis = LineAxis::Rows;
  uint64_t shuffle_seed = 0;
};

// out line i = in line ratio*floor(i/ratio); for extents not divisible by
// ratio the final kept line simply repeats through the tail
Tensor<double> downsample_replicate(const Tensor<double>& image, int ratio, LineAxis axis);

// permutes whole lines; the permutation is Fisher-Yates from the seed
Tensor<double> shuffle_lines(const Tensor<double>& image, LineAxis axis, uint64_t seed);

Tensor<double> degrade(const Tensor<double>& image, const DegradeSpec& spec);

// draws ratio (uniform over {4,6,8}), axis (uniform), shuffle seed; the
// three draws always happen, in that order, regardless of mode
DegradeSpec sample_spec(RandomStream& rs, DegradeMode mode);

}  // namespace semiseg
