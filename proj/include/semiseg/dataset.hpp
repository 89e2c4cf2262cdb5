#pragma once

// Manifest-driven dataset loading and training-pool selection. The
// manifest is audited for structural contradictions before anything is
// read, and every stage re-audits through load time so that a stale or
// hand-edited manifest fails loudly instead of silently skewing a run.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "semiseg/jsonio.hpp"
#include "semiseg/tensor.hpp"

namespace semiseg {

struct SampleRef {
  std::string path;       // image, relative to the manifest directory
  std::string mask_path;  // empty when has_mask is false
  bool has_mask = false;
  std::string view;  // axial | coronal | sagittal
  std::string subject;
  int slice = 0;
};

struct Manifest {
  std::vector<std::string> labeled_subjects;
  std::vector<std::string> unlabeled_subjects;
  std::map<std::string, std::string> split;  // subject -> train | val | test
  std::vector<SampleRef> samples;
  json config;  // optional generator block, carried through

  static Manifest from_json(const json& j);
  json to_json() const;
};

// throws on contradictions: unknown subjects, labeled samples without
// masks, masked unlabeled samples, unlabeled subjects outside the train
// split, duplicate paths, bad split values
void audit_manifest(const Manifest& m);

struct LoadedSample {
  SampleRef ref;
  Tensor<double> image;  // (H,W), values in [0,1]
  ClassMask mask;        // empty when ref.has_mask is false
};

struct Dataset {
  std::filesystem::path root;
  Manifest manifest;
  uint64_t manifest_hash = 0;  // of the manifest file bytes
  std::vector<LoadedSample> samples;
  std::map<std::string, std::vector<int>> by_subject;
  int side = 0;

  const LoadedSample& sample(int idx) const { return samples[static_cast<size_t>(idx)]; }
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

enum class ViewFilter { All, Axial, Coronal, Sagittal, PartialThird };

const char* to_string(ViewFilter v);
ViewFilter view_filter_from_string(const std::string& s);

struct Selection {
  int labeled_subjects_used = -1;  // first N train-split labeled subjects; -1 = all
  ViewFilter view = ViewFilter::All;
  uint64_t seed = 1;  // drives the partial-third subsample
};

struct Pools {
  std::vector<int> labeled_train;
  std::vector<int> unlabeled_train;
  std::vector<int> val;
  std::vector<int> test;
  std::vector<std::string> labeled_train_subjects;
};

// view filters narrow the training pools only; val/test keep all views.
// partial_third keeps a seeded third of the labeled training slices.
Pools select_pools(const Dataset& ds, const Selection& sel);

}  // namespace semiseg
