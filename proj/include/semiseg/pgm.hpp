#pragma once

// Binary PGM (P5) image I/O. Intensity images are 16-bit (maxval 65535,
// most significant byte first, per the netpbm format); class masks are
// 8-bit with raw class ids as pixel values.

#include <filesystem>
#include <string>

#include "semiseg/tensor.hpp"

namespace semiseg {

// value range [0,1], stored as round(v * 65535)
void write_pgm16(const std::filesystem::path& path, const Tensor<double>& image);
Tensor<double> read_pgm16(const std::filesystem::path& path);

void write_pgm8(const std::filesystem::path& path, const ClassMask& mask);
ClassMask read_pgm8(const std::filesystem::path& path);

}  // namespace semiseg
