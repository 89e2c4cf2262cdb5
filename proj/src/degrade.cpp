#include "semiseg/degrade.hpp"

#include "semiseg/errors.hpp"

namespace semiseg {

const char* to_string(DegradeMode m) {
  switch (m) {
    case DegradeMode::SR: return "sr";
    case DegradeMode::PS: return "ps";
    case DegradeMode::BOTH: return "both";
  }
  throw ConfigError("bad degrade mode");
}

DegradeMode degrade_mode_from_string(const std::string& s) {
  if (s == "sr") return DegradeMode::SR;
  if (s == "ps") return DegradeMode::PS;
  if (s == "both") return DegradeMode::BOTH;
  throw ConfigError("unknown degrade mode: " + s);
}

const char* to_string(LineAxis a) { return a == LineAxis::Rows ? "rows" : "cols"; }

namespace {

void require_2d(const Tensor<double>& image) {
  if (image.rank() != 2) throw ShapeError("degradations expect 2-d images, got " + shape_str(image.shape));
}

int64_t line_count(const Tensor<double>& image, LineAxis axis) {
  return axis == LineAxis::Rows ? image.shape[0] : image.shape[1];
}

}  // namespace

Tensor<double> downsample_replicate(const Tensor<double>& image, int ratio, LineAxis axis) {
  require_2d(image);
  if (ratio < 1) throw ConfigError("ratio must be >= 1");
  int64_t n = line_count(image, axis);
  if (ratio >= n) throw ConfigError("ratio must be smaller than the image extent");
  Tensor<double> out(image.shape);
  int64_t h = image.shape[0], w = image.shape[1];
  if (axis == LineAxis::Rows) {
    for (int64_t y = 0; y < h; ++y) {
      int64_t src = (y / ratio) * ratio;
      for (int64_t x = 0; x < w; ++x) out.at2(y, x) = image.at2(src, x);
    }
  } else {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at2(y, x) = image.at2(y, (x / ratio) * ratio);
  }
  return out;
}

Tensor<double> shuffle_lines(const Tensor<double>& image, LineAxis axis, uint64_t seed) {
  require_2d(image);
  int64_t n = line_count(image, axis);
  RandomStream rs(seed);
  std::vector<int> perm = rs.permutation(static_cast<int>(n));
  Tensor<double> out(image.shape);
  int64_t h = image.shape[0], w = image.shape[1];
  if (axis == LineAxis::Rows) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at2(y, x) = image.at2(perm[static_cast<size_t>(y)], x);
  } else {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at2(y, x) = image.at2(y, perm[static_cast<size_t>(x)]);
  }
  return out;
}

Tensor<double> degrade(const Tensor<double>& image, const DegradeSpec& spec) {
  switch (spec.mode) {
    case DegradeMode::SR:
      return downsample_replicate(image, spec.ratio, spec.axis);
    case DegradeMode::PS:
      return shuffle_lines(image, spec.axis, spec.shuffle_seed);
    case DegradeMode::BOTH: {
      Tensor<double> sub = downsample_replicate(image, spec.ratio, spec.axis);
      LineAxis other = spec.axis == LineAxis::Rows ? LineAxis::Cols : LineAxis::Rows;
      return shuffle_lines(sub, other, spec.shuffle_seed);
    }
  }
  throw ConfigError("bad degrade mode");
}

DegradeSpec sample_spec(RandomStream& rs, DegradeMode mode) {
  static constexpr int kRatios[3] = {4, 6, 8};
  DegradeSpec s;
  s.mode = mode;
  s.ratio = kRatios[rs.below(3)];
  s.axis = rs.below(2) ? LineAxis::Cols : LineAxis::Rows;
  s.shuffle_seed = rs.next_u64();
  return s;
}

}  // namespace semiseg
