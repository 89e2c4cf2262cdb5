#include "semiseg/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "semiseg/pgm.hpp"
#include "semiseg/rng.hpp"

namespace semiseg {
namespace {

constexpr int kMaxGeometryAttempts = 20;

// trilinear value noise over a small lattice of uniform values in [-1,1]
struct ValueNoise3 {
  int grid;
  std::vector<double> vals;

  ValueNoise3(int g, RandomStream& rs) : grid(g), vals(static_cast<size_t>(g) * g * g) {
    for (auto& v : vals) v = rs.uniform(-1.0, 1.0);
  }

  double lattice(int z, int y, int x) const {
    return vals[static_cast<size_t>((z * grid + y) * grid + x)];
  }

  // coords normalized to [0,1]
  double at(double zn, double yn, double xn) const {
    double gz = zn * (grid - 1), gy = yn * (grid - 1), gx = xn * (grid - 1);
    int z0 = std::min(static_cast<int>(gz), grid - 2);
    int y0 = std::min(static_cast<int>(gy), grid - 2);
    int x0 = std::min(static_cast<int>(gx), grid - 2);
    double fz = gz - z0, fy = gy - y0, fx = gx - x0;
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
          acc += w * lattice(z0 + dz, y0 + dy, x0 + dx);
        }
    return acc;
  }
};

struct SubjectFields {
  ValueNoise3 bg_noise;
  ValueNoise3 organ_noise;
  double bias_dir[3];   // z,y,x coefficients
  double tex_freq[3];
  double tex_phase[3];
  // per-subject tissue levels: acquisition gain differs between scans, so
  // absolute intensity carries no meaning across subjects and a network
  // keyed on fixed thresholds will not transfer
  double bladder_base;
  double uterus_base;
  double bg_base;

  explicit SubjectFields(RandomStream& rs)
      : bg_noise(5, rs), organ_noise(4, rs) {
    for (auto& c : bias_dir) c = rs.uniform(-1.0, 1.0);
    for (auto& f : tex_freq) f = static_cast<double>(rs.uniform_int(3, 5));
    for (auto& p : tex_phase) p = rs.uniform(0.0, 2.0 * M_PI);
    bladder_base = rs.uniform(0.78, 0.92);
    uterus_base = rs.uniform(0.42, 0.62);
    bg_base = rs.uniform(0.14, 0.30);
  }
};

// background blobs that share the uterus appearance model; they carry the
// background label, so intensity alone cannot say "uterus" and the
// classifier has to use shape and context
struct Distractor {
  double center[3];
  double axes[3];
  double base;

  bool inside(double z, double y, double x) const {
    double dz = (z - center[0]) / axes[0];
    double dy = (y - center[1]) / axes[1];
    double dx = (x - center[2]) / axes[2];
    return dz * dz + dy * dy + dx * dx <= 1.0;
  }
};

std::vector<Distractor> draw_distractors(RandomStream& rs, const OrganGeometry& g,
                                         double uterus_base, int side) {
  double n = static_cast<double>(side);
  double reach_b = std::max({g.bladder_axes[0], g.bladder_axes[1], g.bladder_axes[2]});
  double reach_u = std::max({g.uterus_axes[0], g.uterus_axes[1], g.uterus_axes[2]}) *
                   (1.0 + g.perturb_amp);
  std::vector<Distractor> out;
  int want = static_cast<int>(rs.uniform_int(2, 4));
  for (int i = 0; i < want; ++i) {
    Distractor d;
    for (auto& a : d.axes) a = rs.uniform(0.04, 0.08) * n;
    d.base = uterus_base + rs.uniform(-0.05, 0.05);
    double dmax = std::max({d.axes[0], d.axes[1], d.axes[2]});
    // keep blobs clear of both organs so no uterus-looking tissue touches a
    // true boundary; a failed placement is dropped, not retried forever
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      for (auto& c : d.center) c = rs.uniform(0.08, 0.92) * (n - 1.0);
      auto dist = [&d](const double* c) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (d.center[k] - c[k]) * (d.center[k] - c[k]);
        return std::sqrt(s);
      };
      placed = dist(g.bladder_center) > reach_b + dmax + 0.02 * n &&
               dist(g.uterus_center) > reach_u + dmax + 0.02 * n;
    }
    if (placed) out.push_back(d);
  }
  return out;
}

OrganGeometry draw_geometry(RandomStream& rs, int side) {
  OrganGeometry g;
  double n = static_cast<double>(side);
  double mid = (n - 1.0) / 2.0;
  double off[3];
  for (int k = 0; k < 3; ++k) off[k] = rs.uniform(0.08, 0.24);
  // the relative arrangement is anatomically fixed: the bladder sits on
  // the low-coordinate side of the uterus on every axis, so subjects are
  // never mirror images of each other
  for (int k = 0; k < 3; ++k) {
    g.bladder_center[k] = mid - off[k] * n;
    g.uterus_center[k] = mid + off[k] * n;
  }
  // semi-axes exceed the center offset so both organs always cross the
  // three central planes of the volume
  for (int k = 0; k < 3; ++k) g.bladder_axes[k] = (off[k] + rs.uniform(0.02, 0.09)) * n;
  for (int k = 0; k < 3; ++k) g.uterus_axes[k] = (off[k] + rs.uniform(0.03, 0.11)) * n;
  g.perturb_amp = rs.uniform(0.04, 0.16);
  g.k_theta = static_cast<int>(rs.uniform_int(2, 4));
  g.k_phi = static_cast<int>(rs.uniform_int(2, 4));
  g.phase = rs.uniform(0.0, 2.0 * M_PI);
  return g;
}

struct GeometryCheck {
  bool ok = false;
  std::string reason;
};

GeometryCheck check_rasterized(const ClassMask& labels, int side) {
  int64_t total = labels.numel();
  int64_t count[kNumClasses] = {0, 0, 0};
  for (uint8_t v : labels.data) ++count[v];
  for (uint8_t cls : {kClassUterus, kClassBladder}) {
    double frac = static_cast<double>(count[cls]) / static_cast<double>(total);
    if (frac < 0.01 || frac > 0.25)
      return {false, "organ fraction out of range for class " + std::to_string(cls)};
  }
  // every view's central plane must show both organs
  int c = side / 2;
  bool seen[3][kNumClasses] = {};
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        uint8_t v = labels.at3(z, y, x);
        if (!v) continue;
        if (z == c) seen[0][v] = true;
        if (y == c) seen[1][v] = true;
        if (x == c) seen[2][v] = true;
      }
  for (int a = 0; a < 3; ++a)
    for (uint8_t cls : {kClassUterus, kClassBladder})
      if (!seen[a][cls]) return {false, "central slice misses a class"};
  return {true, ""};
}

// labels + validity; overlap of the two membership tests fails the draw
bool rasterize_labels(const OrganGeometry& g, int side, ClassMask& labels) {
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        bool b = g.inside_bladder(z, y, x);
        bool u = g.inside_uterus(z, y, x);
        if (b && u) return false;
        labels.at3(z, y, x) = b ? kClassBladder : (u ? kClassUterus : kClassBackground);
      }
  return true;
}

OrganGeometry accepted_geometry(const PhantomConfig& cfg, const std::string& subject_id, ClassMask& labels) {
  RandomStream geo(derive_seed(cfg.seed, "phantom/geo/" + subject_id));
  for (int attempt = 0; attempt < kMaxGeometryAttempts; ++attempt) {
    OrganGeometry g = draw_geometry(geo, cfg.side);
    labels = ClassMask({cfg.side, cfg.side, cfg.side});
    if (!rasterize_labels(g, cfg.side, labels)) continue;
    GeometryCheck chk = check_rasterized(labels, cfg.side);
    if (chk.ok) return g;
  }
  throw GenerationError("phantom geometry unsatisfiable after " + std::to_string(kMaxGeometryAttempts) +
                        " attempts (seed " + std::to_string(cfg.seed) + ", subject " + subject_id + ")");
}

}  // namespace

void PhantomConfig::validate() const {
  if (side < 16) throw ConfigError("phantom side must be >= 16");
  if (slices_per_view < 1 || slices_per_view > side)
    throw ConfigError("slices_per_view must be in [1, side]");
  if (noise_sigma < 0 || noise_sigma > 0.2) throw ConfigError("noise_sigma must be in [0, 0.2]");
  if (bias_strength < 0 || bias_strength > 0.3) throw ConfigError("bias_strength must be in [0, 0.3]");
  if (texture_amp < 0 || texture_amp > 1.0) throw ConfigError("texture_amp must be in [0, 1]");
  if (organ_count != 2) throw ConfigError("organ_count is fixed at 2");
}

json PhantomConfig::to_json() const {
  return json{{"side", side},
              {"slices_per_view", slices_per_view},
              {"noise_sigma", noise_sigma},
              {"bias_strength", bias_strength},
              {"texture_amp", texture_amp},
              {"organ_count", organ_count},
              {"seed", seed}};
}

PhantomConfig PhantomConfig::from_json(const json& j) {
  PhantomConfig c;
  c.side = j.value("side", c.side);
  c.slices_per_view = j.value("slices_per_view", c.slices_per_view);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.bias_strength = j.value("bias_strength", c.bias_strength);
  c.texture_amp = j.value("texture_amp", c.texture_amp);
  c.organ_count = j.value("organ_count", c.organ_count);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

bool OrganGeometry::inside_bladder(double z, double y, double x) const {
  double dz = (z - bladder_center[0]) / bladder_axes[0];
  double dy = (y - bladder_center[1]) / bladder_axes[1];
  double dx = (x - bladder_center[2]) / bladder_axes[2];
  return dz * dz + dy * dy + dx * dx <= 1.0;
}

bool OrganGeometry::inside_uterus(double z, double y, double x) const {
  double uz = (z - uterus_center[0]) / uterus_axes[0];
  double uy = (y - uterus_center[1]) / uterus_axes[1];
  double ux = (x - uterus_center[2]) / uterus_axes[2];
  double r = std::sqrt(ux * ux + uy * uy + uz * uz);
  if (r == 0.0) return true;
  double theta = std::atan2(uy, ux);
  double phi = std::acos(std::clamp(uz / r, -1.0, 1.0));
  // integer k_theta keeps the field continuous across the theta wrap;
  // sin(k_phi * phi) vanishes at the poles where theta is undefined
  double rho = 1.0 + perturb_amp * std::sin(k_theta * theta + phase) * std::sin(k_phi * phi);
  return r <= rho;
}

OrganGeometry subject_geometry(const PhantomConfig& cfg, const std::string& subject_id) {
  cfg.validate();
  ClassMask scratch;
  return accepted_geometry(cfg, subject_id, scratch);
}

PhantomVolume generate_volume(const PhantomConfig& cfg, const std::string& subject_id) {
  cfg.validate();
  PhantomVolume vol;
  vol.subject_id = subject_id;
  vol.labels = ClassMask({cfg.side, cfg.side, cfg.side});
  OrganGeometry g = accepted_geometry(cfg, subject_id, vol.labels);

  RandomStream field_rs(derive_seed(cfg.seed, "phantom/field/" + subject_id));
  SubjectFields f(field_rs);
  RandomStream dis_rs(derive_seed(cfg.seed, "phantom/distract/" + subject_id));
  std::vector<Distractor> distractors = draw_distractors(dis_rs, g, f.uterus_base, cfg.side);
  RandomStream noise_rs(derive_seed(cfg.seed, "phantom/noise/" + subject_id));

  int n = cfg.side;
  double inv = 1.0 / (n - 1.0);
  vol.intensity = Tensor<double>({n, n, n});
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double zn = z * inv, yn = y * inv, xn = x * inv;
        // shared "soft tissue" texture, so a distractor blob is locally
        // indistinguishable from uterine tissue
        auto tissue = [&](double base) {
          double tex = std::sin(2 * M_PI * f.tex_freq[0] * zn + f.tex_phase[0]) *
                       std::sin(2 * M_PI * f.tex_freq[1] * yn + f.tex_phase[1]) *
                       std::sin(2 * M_PI * f.tex_freq[2] * xn + f.tex_phase[2]);
          return base + cfg.texture_amp * (0.07 * tex + 0.04 * f.organ_noise.at(zn, yn, xn));
        };
        double v;
        switch (vol.labels.at3(z, y, x)) {
          case kClassBladder: {
            double dz = (z - g.bladder_center[0]) / g.bladder_axes[0];
            double dy = (y - g.bladder_center[1]) / g.bladder_axes[1];
            double dx = (x - g.bladder_center[2]) / g.bladder_axes[2];
            v = f.bladder_base - 0.04 * (dz * dz + dy * dy + dx * dx);
            break;
          }
          case kClassUterus:
            v = tissue(f.uterus_base);
            break;
          default: {
            const Distractor* hit = nullptr;
            for (const Distractor& d : distractors)
              if (d.inside(z, y, x)) { hit = &d; break; }
            if (hit) {
              v = tissue(hit->base);
            } else {
              double bias = cfg.bias_strength *
                            (f.bias_dir[0] * (zn - 0.5) + f.bias_dir[1] * (yn - 0.5) + f.bias_dir[2] * (xn - 0.5));
              v = f.bg_base + cfg.texture_amp * 0.10 * f.bg_noise.at(zn, yn, xn) + bias;
            }
          }
        }
        v += noise_rs.normal(0.0, cfg.noise_sigma);
        vol.intensity.at3(z, y, x) = std::clamp(v, 0.0, 1.0);
      }
  return vol;
}

std::vector<Sample2d> slice_views(const PhantomVolume& vol, int slices_per_view) {
  int n = static_cast<int>(vol.intensity.shape[0]);
  if (slices_per_view < 1 || slices_per_view > n)
    throw ConfigError("slices_per_view must be in [1, side]");
  std::vector<Sample2d> out;
  out.reserve(static_cast<size_t>(slices_per_view) * 3);
  const char* views[3] = {"axial", "coronal", "sagittal"};
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < slices_per_view; ++i) {
      int idx = static_cast<int>((static_cast<int64_t>(n) * (2 * i + 1)) / (2 * slices_per_view));
      Sample2d s;
      s.view = views[a];
      s.subject = vol.subject_id;
      s.slice = idx;
      s.image = Tensor<double>({n, n});
      s.mask = ClassMask({n, n});
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          // axial: (y,x) at fixed z; coronal: (z,x) at fixed y; sagittal: (z,y) at fixed x
          int z = a == 0 ? idx : r;
          int y = a == 0 ? r : (a == 1 ? idx : c);
          int x = a == 2 ? idx : c;
          s.image.at2(r, c) = vol.intensity.at3(z, y, x);
          s.mask.at2(r, c) = vol.labels.at3(z, y, x);
        }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::filesystem::path build_dataset(const PhantomConfig& cfg, int n_labeled, int n_unlabeled,
                                    const SplitCounts& split, const std::filesystem::path& out_dir) {
  cfg.validate();
  if (n_labeled < 0 || n_unlabeled < 0) throw ConfigError("subject counts must be >= 0");
  if (split.train < 0 || split.val < 0 || split.test < 0) throw ConfigError("split counts must be >= 0");
  if (split.train + split.val + split.test != n_labeled)
    throw ConfigError("split counts must sum to the labeled subject count");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");

  char buf[32];
  auto subject_name = [&buf](const char* prefix, int i) {
    std::snprintf(buf, sizeof buf, "%s%03d", prefix, i);
    return std::string(buf);
  };

  json manifest;
  auto& labeled = manifest["subjects"]["labeled"] = json::array();
  auto& unlabeled = manifest["subjects"]["unlabeled"] = json::array();
  auto& split_j = manifest["split"] = json::object();
  auto& samples = manifest["samples"] = json::array();

  auto emit_subject = [&](const std::string& id, bool with_mask) {
    PhantomVolume vol = generate_volume(cfg, id);
    fs::create_directories(out_dir / "images" / id);
    if (with_mask) fs::create_directories(out_dir / "masks" / id);
    for (const Sample2d& s : slice_views(vol, cfg.slices_per_view)) {
      std::snprintf(buf, sizeof buf, "%s_%03d.pgm", s.view.c_str(), s.slice);
      std::string img_rel = "images/" + id + "/" + buf;
      write_pgm16(out_dir / img_rel, s.image);
      json rec{{"path", img_rel}, {"view", s.view}, {"subject", s.subject}, {"slice", s.slice}};
      if (with_mask) {
        std::string msk_rel = "masks/" + id + "/" + buf;
        write_pgm8(out_dir / msk_rel, s.mask);
        rec["mask_path"] = msk_rel;
      } else {
        rec["mask_path"] = nullptr;
      }
      samples.push_back(std::move(rec));
    }
  };

  for (int i = 0; i < n_labeled; ++i) {
    std::string id = subject_name("L", i);
    labeled.push_back(id);
    split_j[id] = i < split.train ? "train" : (i < split.train + split.val ? "val" : "test");
    emit_subject(id, true);
  }
  for (int i = 0; i < n_unlabeled; ++i) {
    std::string id = subject_name("U", i);
    unlabeled.push_back(id);
    split_j[id] = "train";
    emit_subject(id, false);
  }

  manifest["config"] = json{{"phantom", cfg.to_json()},
                            {"n_labeled", n_labeled},
                            {"n_unlabeled", n_unlabeled},
                            {"split_counts", {{"train", split.train}, {"val", split.val}, {"test", split.test}}}};

  fs::path mpath = out_dir / "manifest.json";
  save_json(mpath, manifest);
  return mpath;
}

}  // namespace semiseg
