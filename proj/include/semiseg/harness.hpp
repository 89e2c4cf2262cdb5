#pragma once

// Experiment harness: a single experiment = (method, arch, degradation
// mode, supervised loss, labeled-subject count, view filter, seed) run
// end to end through the pipeline and evaluated on the test split. An
// ablation matrix is a union of sweeps over those axes, fanned out over
// seeds, with completed runs skipped by config hash and shared stages
// (restoration pretraining, fine-tuning) reused through a content-keyed
// stage cache.

#include <filesystem>
#include <optional>
#include <vector>

#include "semiseg/pipeline.hpp"

namespace semiseg {

enum class Method { Baseline, SelfSL, SemiSL };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct ExperimentSpec {
  Method method = Method::SemiSL;
  Arch arch = Arch::UNet;
  int labeled_subjects_used = -1;  // -1 = all labeled training subjects
  ViewFilter view = ViewFilter::All;
  uint64_t seed = 1;
  ModelConfig model;   // head is set per stage by the pipeline
  TrainConfig train;   // carries loss, degrade mode, precision, epochs
  int pretrain_epochs = -1;  // -1 = train.epochs

  json to_json() const;
  static ExperimentSpec from_json(const json& j);
  json cell_json() const;       // identity without the seed
  std::string cell_key() const; // readable, includes a short cell hash
  uint64_t hash() const { return json_hash(to_json()); }
  std::string run_dir_name() const;
};

struct StageCache {
  std::filesystem::path dir;

  explicit StageCache(std::filesystem::path d);
  std::optional<StageResult> find(const std::string& key) const;
  void store(const std::string& key, const StageResult& result) const;
};

// runs (or resumes) one experiment; writes config.json, stage records,
// checkpoints and metrics.json under run_dir
MetricsRecord run_experiment(const Dataset& ds, const ExperimentSpec& spec,
                             const std::filesystem::path& run_dir, const StageCache* cache);

struct MatrixConfig {
  std::filesystem::path dataset_manifest;
  ExperimentSpec base;
  std::vector<json> sweeps;
  std::vector<uint64_t> seeds;
  json raw;

  static MatrixConfig from_json(const json& j, const std::filesystem::path& config_dir);
  static MatrixConfig load(const std::filesystem::path& path);
  // seed field left at 0; deduplicated union of sweep cross products
  std::vector<ExperimentSpec> cells() const;
};

struct CellOutcome {
  ExperimentSpec spec;  // seed = 0
  std::vector<uint64_t> ok_seeds;
  std::vector<MetricsRecord> runs;  // parallel to ok_seeds
  std::vector<uint64_t> failed_seeds;
  std::vector<double> median_mean_per_class;
  std::vector<double> median_std_per_class;
  double median_foreground = 0;

  json to_json() const;
};

struct ReportBundle {
  json matrix;
  ExperimentSpec base;  // unswept axes default to these values
  std::vector<uint64_t> seeds;
  std::vector<CellOutcome> cells;
  bool any_failure = false;

  const CellOutcome* find_cell(Method m, Arch a, DegradeMode mode, SupLoss loss, int labeled,
                               ViewFilter view) const;
};

// jobs <= 1 runs inline; otherwise cells*seeds are distributed over
// forked worker processes. A failed run is recorded, not fatal.
ReportBundle run_ablation_matrix(const MatrixConfig& m, const std::filesystem::path& out_dir, int jobs);

// rebuilds the bundle from an out_dir produced by run_ablation_matrix
ReportBundle collect_ablation(const MatrixConfig& m, const std::filesystem::path& out_dir);

double median(std::vector<double> xs);

}  // namespace semiseg
