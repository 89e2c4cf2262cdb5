#pragma once

// The three-stage training pipeline:
//   1. restoration pretraining on degraded/original pairs from all
//      training images, labeled and unlabeled alike (no labels touched);
//   2. supervised fine-tuning of the segmentation head + trunk from the
//      restoration trunk (or from scratch, for the baseline);
//   3. semi-supervised training from pseudo labels: argmax predictions
//      of the fine-tuned network on the unlabeled pool, trained jointly
//      with the labeled data. The semi-supervised network is initialized
//      from the restoration checkpoint, never from the fine-tuned one.
// Validation for stage 1 is L1 on fixed degraded pairs from val
// subjects; stages 2-3 validate on mean foreground per-subject DSC. The
// best-validation epoch (including epoch 0, the initial weights) is what
// each stage returns.

#include <limits>
#include <optional>

#include "semiseg/adam.hpp"
#include "semiseg/checkpoint.hpp"
#include "semiseg/dataset.hpp"
#include "semiseg/degrade.hpp"
#include "semiseg/losses.hpp"
#include "semiseg/models.hpp"
#include "semiseg/phantom.hpp"

namespace semiseg {

enum class Precision { F32, F64 };
enum class SupLoss { CE, DL };

const char* to_string(Precision p);
Precision precision_from_string(const std::string& s);
const char* to_string(SupLoss l);
SupLoss sup_loss_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  uint64_t seed = 1;
  Precision precision = Precision::F64;
  SupLoss sup_loss = SupLoss::CE;
  DegradeMode degrade_mode = DegradeMode::BOTH;

  void validate() const;
  json to_json() const;
  static TrainConfig from_json(const json& j);
  AdamConfig adam() const { return {lr, beta1, beta2, epsilon}; }
};

struct StageRecord {
  std::string stage;       // cnn1 | cnn2 | cnn3
  std::string init;        // scratch | cnn1-transfer
  std::string val_metric;  // l1 | mean_dsc
  int epochs = 0;
  int best_epoch = 0;  // 0 = initial weights
  double best_val = 0;
  double identity_l1 = std::numeric_limits<double>::quiet_NaN();  // stage 1 only
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_curve;   // per epoch, starting at epoch 0
  uint64_t checkpoint_hash = 0;

  json to_json() const;
};

struct StageResult {
  Checkpoint ckpt;
  StageRecord record;
};

struct PseudoLabels {
  std::vector<std::pair<int, ClassMask>> by_sample;  // dataset sample index -> mask
  uint64_t source_hash = 0;                          // hash of the producing checkpoint
};

StageResult pretrain_restoration(const Dataset& ds, const Pools& pools, const ModelConfig& model,
                                 const TrainConfig& train);

StageResult finetune_segmentation(const Dataset& ds, const Pools& pools, const Checkpoint& cnn1,
                                  const ModelConfig& model, const TrainConfig& train);

// baseline: same supervised loop, randomly initialized
StageResult train_scratch_segmentation(const Dataset& ds, const Pools& pools, const ModelConfig& model,
                                       const TrainConfig& train);

PseudoLabels predict_pseudo_labels(const Dataset& ds, const Pools& pools, const Checkpoint& cnn2);

// pairs every labeled batch with an equal-size pseudo-labeled batch and
// minimizes supervised loss + MSE against the pseudo one-hots; with an
// empty pseudo set the trajectory is bit-identical to fine-tuning
StageResult train_semi(const Dataset& ds, const Pools& pools, const Checkpoint& cnn1,
                       const PseudoLabels& pseudo, const ModelConfig& model, const TrainConfig& train);

struct MetricsRecord {
  std::string stage;
  uint64_t checkpoint_hash = 0;
  int num_classes = kNumClasses;
  // canonical aggregation: per-subject pooled DSC over all test slices
  std::map<std::string, std::vector<double>> per_subject;                         // subject -> per class
  std::map<std::string, std::map<std::string, std::vector<double>>> per_view;     // view -> subject -> per class
  std::vector<double> mean_per_class, std_per_class;  // across subjects (sample std)
  double foreground_mean = 0;                         // mean of mean_per_class over classes >= 1
  // alternative aggregation for comparison: per slice
  std::vector<double> image_mean_per_class, image_std_per_class;

  json to_json() const;
  static MetricsRecord from_json(const json& j);
};

MetricsRecord evaluate(const Dataset& ds, const Pools& pools, const Checkpoint& ckpt);

}  // namespace semiseg
