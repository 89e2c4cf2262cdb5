#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "semiseg/dataset.hpp"
#include "semiseg/phantom.hpp"
#include "semiseg/rng.hpp"

using namespace semiseg;
namespace fs = std::filesystem;

static PhantomConfig small_cfg(uint64_t seed = 3) {
  PhantomConfig cfg;
  cfg.side = 24;
  cfg.slices_per_view = 3;
  cfg.seed = seed;
  return cfg;
}

TEST_CASE("volume generation is deterministic and id-sensitive") {
  PhantomConfig cfg = small_cfg();
  PhantomVolume a = generate_volume(cfg, "L000");
  PhantomVolume b = generate_volume(cfg, "L000");
  CHECK(a.intensity.data == b.intensity.data);
  CHECK(a.labels.data == b.labels.data);
  PhantomVolume c = generate_volume(cfg, "L001");
  CHECK(a.intensity.data != c.intensity.data);
  CHECK(a.labels.data != c.labels.data);
}

TEST_CASE("labels replay exactly from the subject geometry") {
  PhantomConfig cfg = small_cfg(11);
  for (const char* id : {"L000", "U004"}) {
    PhantomVolume vol = generate_volume(cfg, id);
    OrganGeometry geo = subject_geometry(cfg, id);
    const int n = cfg.side;
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          uint8_t expect = kClassBackground;
          if (geo.inside_bladder(z, y, x))
            expect = kClassBladder;
          else if (geo.inside_uterus(z, y, x))
            expect = kClassUterus;
          REQUIRE(vol.labels.at3(z, y, x) == expect);
        }
  }
}

TEST_CASE("organs never overlap in the analytic membership") {
  PhantomConfig cfg = small_cfg(19);
  OrganGeometry geo = subject_geometry(cfg, "L002");
  const int n = cfg.side;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        REQUIRE_FALSE((geo.inside_bladder(z, y, x) && geo.inside_uterus(z, y, x)));
}

TEST_CASE("intensity is clamped and class-separated") {
  PhantomConfig cfg = small_cfg(7);
  PhantomVolume vol = generate_volume(cfg, "L003");
  double sums[3] = {0, 0, 0};
  int64_t counts[3] = {0, 0, 0};
  for (size_t i = 0; i < vol.intensity.data.size(); ++i) {
    double v = vol.intensity.data[i];
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    sums[vol.labels.data[i]] += v;
    counts[vol.labels.data[i]]++;
  }
  REQUIRE(counts[kClassUterus] > 0);
  REQUIRE(counts[kClassBladder] > 0);
  double bg = sums[0] / counts[0], ut = sums[1] / counts[1], bl = sums[2] / counts[2];
  CHECK(bl > 0.7);       // bright organ
  CHECK(ut > bg + 0.1);  // medium organ above background
  CHECK(bl > ut + 0.1);
}

TEST_CASE("organ volume fractions stay inside the contract") {
  PhantomConfig cfg = small_cfg(23);
  for (const char* id : {"L000", "L001", "U000", "U001", "U002"}) {
    PhantomVolume vol = generate_volume(cfg, id);
    int64_t fg[3] = {0, 0, 0};
    for (uint8_t c : vol.labels.data) fg[c]++;
    double total = static_cast<double>(vol.labels.data.size());
    for (int c = 1; c < kNumClasses; ++c) {
      double frac = fg[c] / total;
      CHECK(frac >= 0.01);
      CHECK(frac <= 0.25);
    }
  }
}

TEST_CASE("both organs appear in every central slice") {
  PhantomConfig cfg = small_cfg(29);
  PhantomVolume vol = generate_volume(cfg, "L000");
  const int n = cfg.side, mid = n / 2;
  for (int view = 0; view < 3; ++view) {
    bool has[3] = {false, false, false};
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        uint8_t c = view == 0   ? vol.labels.at3(mid, a, b)
                    : view == 1 ? vol.labels.at3(a, mid, b)
                                : vol.labels.at3(a, b, mid);
        has[c] = true;
      }
    CHECK(has[kClassUterus]);
    CHECK(has[kClassBladder]);
  }
}

TEST_CASE("slice planes follow floor(n*(2i+1)/(2s)) in all views") {
  PhantomConfig cfg = small_cfg(31);
  PhantomVolume vol = generate_volume(cfg, "L001");
  const int n = cfg.side;
  for (int s : {1, 3, n}) {
    std::vector<Sample2d> samples = slice_views(vol, s);
    REQUIRE(static_cast<int>(samples.size()) == 3 * s);
    for (const Sample2d& smp : samples) {
      int i = -1;
      // recover the per-view slice counter from the plane index
      for (int k = 0; k < s; ++k)
        if (n * (2 * k + 1) / (2 * s) == smp.slice) i = k;
      REQUIRE(i >= 0);
      REQUIRE(smp.image.shape == Shape{n, n});
      for (int64_t a = 0; a < n; ++a)
        for (int64_t b = 0; b < n; ++b) {
          double expect = smp.view == "axial"     ? vol.intensity.at3(smp.slice, a, b)
                          : smp.view == "coronal" ? vol.intensity.at3(a, smp.slice, b)
                                                  : vol.intensity.at3(a, b, smp.slice);
          uint8_t lbl = smp.view == "axial"     ? vol.labels.at3(smp.slice, a, b)
                        : smp.view == "coronal" ? vol.labels.at3(a, smp.slice, b)
                                                : vol.labels.at3(a, b, smp.slice);
          REQUIRE(smp.image.at2(a, b) == expect);
          REQUIRE(smp.mask.at2(a, b) == lbl);
        }
    }
  }
  // s == 1 extracts the central plane
  std::vector<Sample2d> central = slice_views(vol, 1);
  for (const auto& smp : central) CHECK(smp.slice == n / 2);
}

TEST_CASE("config validation rejects bad values") {
  PhantomConfig cfg = small_cfg();
  CHECK_NOTHROW(cfg.validate());
  PhantomConfig bad = cfg;
  bad.side = 8;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.slices_per_view = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.slices_per_view = cfg.side + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.organ_count = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.noise_sigma = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.texture_amp = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("texture_amp scales the random fields only") {
  PhantomConfig cfg = small_cfg(17);
  cfg.noise_sigma = 0.0;
  cfg.texture_amp = 0.0;
  PhantomVolume vol = generate_volume(cfg, "S0");
  // with all stochastic texture off the uterus is perfectly flat at the
  // subject's own tissue level and the background keeps only the bias ramp
  int n = cfg.side;
  double lo = 1.0, hi = 0.0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (vol.labels.at3(z, y, x) == kClassUterus) {
          double v = vol.intensity.at3(z, y, x);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
  CHECK(lo == hi);
  CHECK(lo >= 0.42);
  CHECK(hi <= 0.62);
  CHECK(PhantomConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}

static uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes);
}

TEST_CASE("dataset build is reproducible byte for byte") {
  PhantomConfig cfg = small_cfg(41);
  SplitCounts split{2, 1, 1};
  fs::path d1 = fs::temp_directory_path() / "semiseg_ds_a";
  fs::path d2 = fs::temp_directory_path() / "semiseg_ds_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::path m1 = build_dataset(cfg, 4, 2, split, d1);
  fs::path m2 = build_dataset(cfg, 4, 2, split, d2);
  CHECK(file_hash(m1) == file_hash(m2));

  Manifest man = Manifest::from_json(load_json(m1));
  audit_manifest(man);
  REQUIRE(man.labeled_subjects.size() == 4);
  REQUIRE(man.unlabeled_subjects.size() == 2);
  for (const auto& s : man.samples) {
    CHECK(file_hash(d1 / s.path) == file_hash(d2 / s.path));
    if (s.has_mask) CHECK(file_hash(d1 / s.mask_path) == file_hash(d2 / s.mask_path));
  }

  // labeled samples carry masks, unlabeled do not; split honors the counts
  int labeled_samples = 0, unlabeled_samples = 0;
  for (const auto& s : man.samples) {
    bool labeled = s.subject[0] == 'L';
    CHECK(s.has_mask == labeled);
    (labeled ? labeled_samples : unlabeled_samples)++;
  }
  CHECK(labeled_samples == 4 * 3 * cfg.slices_per_view);
  CHECK(unlabeled_samples == 2 * 3 * cfg.slices_per_view);
  int in_split[3] = {0, 0, 0};
  for (const auto& [subj, sp] : man.split) {
    if (subj[0] == 'U') {
      CHECK(sp == "train");
      continue;
    }
    if (sp == "train") in_split[0]++;
    if (sp == "val") in_split[1]++;
    if (sp == "test") in_split[2]++;
  }
  CHECK(in_split[0] == 2);
  CHECK(in_split[1] == 1);
  CHECK(in_split[2] == 1);

  // split counts must cover the labeled subjects exactly
  CHECK_THROWS_AS(build_dataset(cfg, 5, 2, split, fs::temp_directory_path() / "semiseg_ds_c"),
                  ConfigError);
  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(fs::temp_directory_path() / "semiseg_ds_c");
}
