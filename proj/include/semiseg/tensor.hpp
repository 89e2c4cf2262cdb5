#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "semiseg/errors.hpp"

namespace semiseg {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative tensor dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

template <class S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape shp) : shape(std::move(shp)), data(static_cast<size_t>(numel_of(shape)), S(0)) {}
  Tensor(Shape shp, S fill) : shape(std::move(shp)), data(static_cast<size_t>(numel_of(shape)), fill) {}

  static Tensor zeros(Shape shp) { return Tensor(std::move(shp)); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  // row-major offsets for the common ranks
  S& at2(int64_t y, int64_t x) { return data[static_cast<size_t>(y * shape[1] + x)]; }
  S at2(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * shape[1] + x)]; }
  S& at3(int64_t c, int64_t y, int64_t x) {
    return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)];
  }
  S at3(int64_t c, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <class S>
struct dtype_traits;

template <>
struct dtype_traits<float> {
  static constexpr uint8_t code = 1;
  static constexpr const char* name = "f32";
};

template <>
struct dtype_traits<double> {
  static constexpr uint8_t code = 2;
  static constexpr const char* name = "f64";
};

// integer class mask for segmentation labels, ids in [0, num_classes)
struct ClassMask {
  Shape shape;  // (H,W) or (D,H,W)
  std::vector<uint8_t> data;

  ClassMask() = default;
  explicit ClassMask(Shape shp) : shape(std::move(shp)), data(static_cast<size_t>(numel_of(shape)), 0) {}

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  uint8_t& at2(int64_t y, int64_t x) { return data[static_cast<size_t>(y * shape[1] + x)]; }
  uint8_t at2(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * shape[1] + x)]; }
  uint8_t& at3(int64_t z, int64_t y, int64_t x) {
    return data[static_cast<size_t>((z * shape[1] + y) * shape[2] + x)];
  }
  uint8_t at3(int64_t z, int64_t y, int64_t x) const {
    return data[static_cast<size_t>((z * shape[1] + y) * shape[2] + x)];
  }
  bool operator==(const ClassMask& o) const { return shape == o.shape && data == o.data; }
};

}  // namespace semiseg
