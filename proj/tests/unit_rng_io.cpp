#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "semiseg/jsonio.hpp"
#include "semiseg/pgm.hpp"
#include "semiseg/rng.hpp"
#include "semiseg/tensor.hpp"

using namespace semiseg;
namespace fs = std::filesystem;

static fs::path tmpdir() {
  fs::path d = fs::temp_directory_path() / "semiseg_test_io";
  fs::create_directories(d);
  return d;
}

TEST_CASE("fnv1a64 matches published vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("abc") == 0xe71fa2190541574bULL);
  const char bytes[] = {'a', 'b', 'c'};
  CHECK(fnv1a64_bytes(bytes, 3) == fnv1a64("abc"));
}

TEST_CASE("splitmix64 matches published sequence from state 0") {
  uint64_t s = 0;
  CHECK(splitmix64(s) == 0xe220a8397b1dcdafULL);
  CHECK(splitmix64(s) == 0x6e789e6aa1b965f4ULL);
  CHECK(splitmix64(s) == 0x06c45d188009454fULL);
}

TEST_CASE("derive_seed separates tags and indices") {
  std::set<uint64_t> seen;
  for (const char* tag : {"init/w", "phantom/geo/L000", "phantom/noise/L000", "val_degrade",
                          "pretrain_order", "sup_order", "pseudo_order", "partial_third"}) {
    CHECK(seen.insert(derive_seed(42, tag)).second);
  }
  for (uint64_t i = 0; i < 50; ++i) CHECK(seen.insert(derive_seed(42, "epoch", i)).second);
  CHECK(derive_seed(1, "x") != derive_seed(2, "x"));
  CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
}

TEST_CASE("RandomStream is deterministic per seed") {
  RandomStream a(99), b(99), c(100);
  bool any_diff = false;
  for (int i = 0; i < 64; ++i) {
    uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    if (va != c.next_u64()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1) with sane mean") {
  RandomStream rs(7);
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rs.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("below is in range and roughly uniform") {
  RandomStream rs(11);
  int counts[7] = {0};
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    uint64_t v = rs.below(7);
    REQUIRE(v < 7);
    counts[v]++;
  }
  for (int k = 0; k < 7; ++k) CHECK(std::abs(counts[k] - n / 7) < 600);
  CHECK_THROWS_AS(rs.below(0), ConfigError);
}

TEST_CASE("uniform_int respects inclusive bounds") {
  RandomStream rs(13);
  bool lo_hit = false, hi_hit = false;
  for (int i = 0; i < 2000; ++i) {
    int64_t v = rs.uniform_int(-3, 4);
    REQUIRE(v >= -3);
    REQUIRE(v <= 4);
    lo_hit |= v == -3;
    hi_hit |= v == 4;
  }
  CHECK(lo_hit);
  CHECK(hi_hit);
  CHECK_THROWS_AS(rs.uniform_int(2, 1), ConfigError);
}

TEST_CASE("normal has near-standard moments") {
  RandomStream rs(17);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rs.normal();
    REQUIRE(std::isfinite(x));
    sum += x;
    sq += x * x;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(1).scale(0.02));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("permutation is a permutation and seed-stable") {
  RandomStream rs(23);
  std::vector<int> p = rs.permutation(40);
  std::vector<int> q = p;
  std::sort(q.begin(), q.end());
  for (int i = 0; i < 40; ++i) CHECK(q[static_cast<size_t>(i)] == i);
  RandomStream rs2(23);
  CHECK(rs2.permutation(40) == p);
}

TEST_CASE("tensor indexing is row-major") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.data.size() == 24);
  t.at3(1, 2, 3) = 5.0;
  CHECK(t.data[23] == 5.0);
  Tensor<double> m({3, 4});
  m.at2(2, 1) = 7.0;
  CHECK(m.data[9] == 7.0);
  CHECK(t.all_finite());
  t.at3(0, 0, 1) = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("16-bit pgm round trip is quantization-exact") {
  RandomStream rs(31);
  Tensor<double> img({9, 13});
  for (auto& v : img.data) v = rs.uniform();
  fs::path p = tmpdir() / "img.pgm";
  write_pgm16(p, img);
  Tensor<double> back = read_pgm16(p);
  REQUIRE(back.shape == img.shape);
  for (size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 65535.0 + 1e-12);
  // quantized values round trip exactly
  write_pgm16(p, back);
  Tensor<double> again = read_pgm16(p);
  CHECK(again.data == back.data);
}

TEST_CASE("pgm rejects out-of-range pixels and bad files") {
  Tensor<double> img({2, 2});
  img.data = {0.0, 0.5, 1.0, 1.5};
  fs::path p = tmpdir() / "bad.pgm";
  CHECK_THROWS_AS(write_pgm16(p, img), IoError);

  img.data = {0.0, 0.5, 1.0, 1.0};
  write_pgm16(p, img);
  // truncate the payload
  auto size = fs::file_size(p);
  fs::resize_file(p, size - 3);
  CHECK_THROWS_AS(read_pgm16(p), IoError);

  std::ofstream(p) << "P6 2 2 255\n\0\0\0\0";
  CHECK_THROWS_AS(read_pgm16(p), IoError);
  CHECK_THROWS_AS(read_pgm16(tmpdir() / "missing.pgm"), IoError);
}

TEST_CASE("8-bit mask pgm round trips class ids exactly") {
  ClassMask m({5, 4});
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<uint8_t>(i % 3);
  fs::path p = tmpdir() / "mask.pgm";
  write_pgm8(p, m);
  ClassMask back = read_pgm8(p);
  CHECK(back.shape == m.shape);
  CHECK(back.data == m.data);
}

TEST_CASE("json hash is canonical over key order") {
  json a = {{"b", 2}, {"a", 1}};
  json b = {{"a", 1}, {"b", 2}};
  CHECK(json_hash(a) == json_hash(b));
  json c = {{"a", 1}, {"b", 3}};
  CHECK(json_hash(a) != json_hash(c));
  fs::path p = tmpdir() / "r.json";
  save_json(p, a);
  CHECK(load_json(p) == a);
  CHECK(hex16(0xabcULL) == "0000000000000abc");
}
