#pragma once

// Synthetic pelvic-like phantom volumes: a bright near-homogeneous
// "bladder" ellipsoid with a sharp boundary and a medium-intensity
// "uterus" blob with a sinusoidally perturbed boundary and internal
// texture, embedded in a noisy background with a smooth bias field.
// Geometry and per-tissue intensity levels are drawn per subject (scan
// gain is not comparable between acquisitions), and the background holds
// a few blobs with uterus-like appearance (bowel reads much like uterine
// tissue), so neither fixed thresholds nor per-image relative intensity
// identify the organs; a segmenter needs shape and context statistics,
// which a couple of labeled subjects undersample. Ground-truth labels
// come from the same analytic membership tests that drive rasterization,
// so they are exact by construction.

#include <filesystem>
#include <string>
#include <vector>

#include "semiseg/jsonio.hpp"
#include "semiseg/tensor.hpp"

namespace semiseg {

inline constexpr int kNumClasses = 3;  // 0 background, 1 uterus, 2 bladder
inline constexpr uint8_t kClassBackground = 0;
inline constexpr uint8_t kClassUterus = 1;
inline constexpr uint8_t kClassBladder = 2;

struct PhantomConfig {
  int side = 64;            // cubic volume edge, >= 16
  int slices_per_view = 10; // slices extracted per orientation, 1..side
  double noise_sigma = 0.03;
  double bias_strength = 0.10;
  double texture_amp = 1.0; // scales the random texture fields, 0..1
  int organ_count = 2;      // fixed; validated
  uint64_t seed = 1;

  void validate() const;
  json to_json() const;
  static PhantomConfig from_json(const json& j);
};

struct PhantomVolume {
  std::string subject_id;
  Tensor<double> intensity;  // (Z,Y,X), values in [0,1]
  ClassMask labels;          // (Z,Y,X), class ids
};

// analytic geometry drawn for one subject; exposed so tests can replay
// membership independently of the rasterizer
struct OrganGeometry {
  double bladder_center[3];  // voxel coords, order z,y,x
  double bladder_axes[3];
  double uterus_center[3];
  double uterus_axes[3];
  double perturb_amp = 0;
  int k_theta = 2, k_phi = 2;
  double phase = 0;

  bool inside_bladder(double z, double y, double x) const;
  bool inside_uterus(double z, double y, double x) const;
};

PhantomVolume generate_volume(const PhantomConfig& cfg, const std::string& subject_id);

// geometry actually used for a subject (after any retries); for tests
OrganGeometry subject_geometry(const PhantomConfig& cfg, const std::string& subject_id);

struct Sample2d {
  Tensor<double> image;  // (H,W)
  ClassMask mask;        // (H,W)
  std::string view;      // "axial" | "coronal" | "sagittal"
  std::string subject;
  int slice = 0;         // plane index within the volume
};

// axial fixes z, coronal fixes y, sagittal fixes x; the s slice planes are
// evenly spread with the formula floor(side*(2i+1)/(2s)), which yields every
// plane when s == side and the central plane when s == 1
std::vector<Sample2d> slice_views(const PhantomVolume& vol, int slices_per_view);

struct SplitCounts {
  int train = 10, val = 2, test = 4;
};

// writes images/, masks/ and manifest.json under out_dir; returns the
// manifest path; regenerating with the same config is byte-identical
std::filesystem::path build_dataset(const PhantomConfig& cfg, int n_labeled, int n_unlabeled,
                                    const SplitCounts& split, const std::filesystem::path& out_dir);

}  // namespace semiseg
