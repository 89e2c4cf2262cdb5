#include "semiseg/pgm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "semiseg/errors.hpp"

namespace semiseg {
namespace {

void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

struct PgmHeader {
  int64_t width = 0, height = 0, maxval = 0;
};

PgmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') throw IoError("not a binary PGM (P5): " + path.string());
  PgmHeader h;
  skip_ws_and_comments(in);
  in >> h.width;
  skip_ws_and_comments(in);
  in >> h.height;
  skip_ws_and_comments(in);
  in >> h.maxval;
  in.get();  // single whitespace byte before raster
  if (!in || h.width <= 0 || h.height <= 0) throw IoError("bad PGM header: " + path.string());
  return h;
}

std::vector<uint8_t> read_raster(std::istream& in, size_t bytes, const std::filesystem::path& path) {
  std::vector<uint8_t> raw(bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(in.gcount()) != bytes) throw IoError("truncated PGM raster: " + path.string());
  return raw;
}

}  // namespace

void write_pgm16(const std::filesystem::path& path, const Tensor<double>& image) {
  if (image.rank() != 2) throw ShapeError("write_pgm16 expects a 2-d image, got " + shape_str(image.shape));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out << "P5\n" << image.shape[1] << " " << image.shape[0] << "\n65535\n";
  std::vector<uint8_t> raw(static_cast<size_t>(image.numel()) * 2);
  for (int64_t i = 0; i < image.numel(); ++i) {
    double v = image.data[static_cast<size_t>(i)];
    if (!(v >= 0.0 && v <= 1.0)) throw IoError("pixel outside [0,1] in " + path.string());
    auto q = static_cast<uint16_t>(std::lround(v * 65535.0));
    raw[static_cast<size_t>(2 * i)] = static_cast<uint8_t>(q >> 8);
    raw[static_cast<size_t>(2 * i) + 1] = static_cast<uint8_t>(q & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("short write: " + path.string());
}

Tensor<double> read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  PgmHeader h = read_header(in, path);
  if (h.maxval != 65535) throw IoError("expected maxval 65535: " + path.string());
  auto raw = read_raster(in, static_cast<size_t>(h.width) * static_cast<size_t>(h.height) * 2, path);
  Tensor<double> img({h.height, h.width});
  for (int64_t i = 0; i < img.numel(); ++i) {
    uint16_t q = static_cast<uint16_t>((raw[static_cast<size_t>(2 * i)] << 8) | raw[static_cast<size_t>(2 * i) + 1]);
    img.data[static_cast<size_t>(i)] = q / 65535.0;
  }
  return img;
}

void write_pgm8(const std::filesystem::path& path, const ClassMask& mask) {
  if (mask.shape.size() != 2) throw ShapeError("write_pgm8 expects a 2-d mask");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path.string());
  out << "P5\n" << mask.shape[1] << " " << mask.shape[0] << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.data.data()), static_cast<std::streamsize>(mask.data.size()));
  if (!out) throw IoError("short write: " + path.string());
}

ClassMask read_pgm8(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  PgmHeader h = read_header(in, path);
  if (h.maxval != 255) throw IoError("expected maxval 255: " + path.string());
  auto raw = read_raster(in, static_cast<size_t>(h.width) * static_cast<size_t>(h.height), path);
  ClassMask m({h.height, h.width});
  m.data.assign(raw.begin(), raw.end());
  return m;
}

}  // namespace semiseg
