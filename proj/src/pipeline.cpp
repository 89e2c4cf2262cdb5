#include "semiseg/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "semiseg/adam.hpp"
#include "semiseg/errors.hpp"
#include "semiseg/rng.hpp"

namespace semiseg {

const char* to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw ConfigError("unknown precision: " + s);
}

const char* to_string(SupLoss l) { return l == SupLoss::CE ? "ce" : "dl"; }

SupLoss sup_loss_from_string(const std::string& s) {
  if (s == "ce") return SupLoss::CE;
  if (s == "dl") return SupLoss::DL;
  throw ConfigError("unknown supervised loss: " + s);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must be in [0,1)");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be > 0");
}

json TrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"batch_size", batch_size},
              {"lr", lr},
              {"beta1", beta1},
              {"beta2", beta2},
              {"epsilon", epsilon},
              {"seed", seed},
              {"precision", to_string(precision)},
              {"sup_loss", to_string(sup_loss)},
              {"degrade_mode", to_string(degrade_mode)}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  if (j.contains("precision")) c.precision = precision_from_string(j.at("precision").get<std::string>());
  if (j.contains("sup_loss")) c.sup_loss = sup_loss_from_string(j.at("sup_loss").get<std::string>());
  if (j.contains("degrade_mode"))
    c.degrade_mode = degrade_mode_from_string(j.at("degrade_mode").get<std::string>());
  c.validate();
  return c;
}

json StageRecord::to_json() const {
  json j{{"stage", stage},
         {"init", init},
         {"val_metric", val_metric},
         {"epochs", epochs},
         {"best_epoch", best_epoch},
         {"best_val", best_val},
         {"train_loss", train_loss},
         {"val_curve", val_curve},
         {"checkpoint_hash", hex16(checkpoint_hash)}};
  if (std::isfinite(identity_l1)) j["identity_l1"] = identity_l1;
  return j;
}

json MetricsRecord::to_json() const {
  json j{{"stage", stage},
         {"checkpoint_hash", hex16(checkpoint_hash)},
         {"num_classes", num_classes},
         {"per_subject", per_subject},
         {"per_view", per_view},
         {"mean_per_class", mean_per_class},
         {"std_per_class", std_per_class},
         {"foreground_mean", foreground_mean},
         {"image_mean_per_class", image_mean_per_class},
         {"image_std_per_class", image_std_per_class}};
  return j;
}

MetricsRecord MetricsRecord::from_json(const json& j) {
  MetricsRecord r;
  r.stage = j.at("stage").get<std::string>();
  r.checkpoint_hash = std::stoull(j.at("checkpoint_hash").get<std::string>(), nullptr, 16);
  r.num_classes = j.at("num_classes").get<int>();
  r.per_subject = j.at("per_subject").get<std::map<std::string, std::vector<double>>>();
  r.per_view = j.at("per_view").get<std::map<std::string, std::map<std::string, std::vector<double>>>>();
  r.mean_per_class = j.at("mean_per_class").get<std::vector<double>>();
  r.std_per_class = j.at("std_per_class").get<std::vector<double>>();
  r.foreground_mean = j.at("foreground_mean").get<double>();
  r.image_mean_per_class = j.at("image_mean_per_class").get<std::vector<double>>();
  r.image_std_per_class = j.at("image_std_per_class").get<std::vector<double>>();
  return r;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size() - 1);
  return {mean, std::sqrt(var)};
}

template <class S>
Tensor<S> image_input(const Tensor<double>& img) {
  Tensor<S> t({1, img.shape[0], img.shape[1]});
  for (size_t i = 0; i < img.data.size(); ++i) t.data[i] = static_cast<S>(img.data[i]);
  return t;
}

template <class S>
Tensor<S> onehot_input(const ClassMask& mask, int num_classes) {
  return tensor_cast<S>(onehot(mask, num_classes));
}

template <class S>
double mean_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  double acc = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    acc += std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
  return acc / static_cast<double>(a.numel());
}

void require_matching_side(const Dataset& ds, const ModelConfig& cfg) {
  if (ds.side != cfg.input_side)
    throw ConfigError("dataset side " + std::to_string(ds.side) + " does not match model input_side " +
                      std::to_string(cfg.input_side));
}

template <class S>
std::vector<int> epoch_order(const std::vector<int>& pool, uint64_t seed, const char* tag, int epoch) {
  std::vector<int> order = pool;
  RandomStream rs(derive_seed(seed, tag, static_cast<uint64_t>(epoch)));
  rs.shuffle(order);
  return order;
}

// mean over val subjects of (mean over foreground classes of pooled DSC)
template <class S>
double val_mean_fg_dsc(Graph<S>& g, int out_id, const Dataset& ds, const std::vector<int>& val_pool) {
  std::map<std::string, std::vector<DscCounts>> counts;
  for (int idx : val_pool) {
    const LoadedSample& s = ds.sample(idx);
    g.set_input("image", image_input<S>(s.image));
    g.forward_to(out_id);
    ClassMask pred = argmax_mask(g.tensor_of(out_id));
    auto& cs = counts[s.ref.subject];
    if (cs.empty()) cs.resize(kNumClasses);
    for (int c = 1; c < kNumClasses; ++c) cs[static_cast<size_t>(c)].add(pred, s.mask, static_cast<uint8_t>(c));
  }
  double acc = 0;
  for (auto& [subj, cs] : counts) {
    double fg = 0;
    for (int c = 1; c < kNumClasses; ++c) fg += cs[static_cast<size_t>(c)].dsc();
    acc += fg / static_cast<double>(kNumClasses - 1);
  }
  return acc / static_cast<double>(counts.size());
}

template <class S>
StageResult pretrain_impl(const Dataset& ds, const Pools& pools, const ModelConfig& model,
                          const TrainConfig& train) {
  ModelConfig cfg = model;
  cfg.head = HeadKind::Restoration;
  cfg.validate();
  require_matching_side(ds, cfg);
  std::vector<int> pool = pools.labeled_train;
  pool.insert(pool.end(), pools.unlabeled_train.begin(), pools.unlabeled_train.end());
  if (pool.empty()) throw ConfigError("restoration pretraining has no training images");
  if (pools.val.empty()) throw ConfigError("restoration pretraining needs a validation pool");

  Graph<S> g = build_model<S>(cfg, train.seed);
  const int loss_id = g.require_node("loss_l1");
  const int out_id = g.require_node("head_act");

  // validation pairs are fixed once from their own stream so the epoch
  // loop cannot disturb them
  RandomStream val_rs(derive_seed(train.seed, "val_degrade"));
  std::vector<std::pair<Tensor<S>, Tensor<S>>> val_pairs;
  double identity_acc = 0;
  for (int idx : pools.val) {
    const Tensor<double>& img = ds.sample(idx).image;
    DegradeSpec spec = sample_spec(val_rs, train.degrade_mode);
    Tensor<double> deg = degrade(img, spec);
    identity_acc += l1_loss(deg, img);
    val_pairs.emplace_back(image_input<S>(deg), image_input<S>(img));
  }
  const double identity_l1 = identity_acc / static_cast<double>(val_pairs.size());

  auto val_l1 = [&]() {
    double acc = 0;
    for (const auto& [din, dorig] : val_pairs) {
      g.set_input("image", din);
      g.forward_to(out_id);
      acc += mean_abs_diff(g.tensor_of(out_id), dorig);
    }
    return acc / static_cast<double>(val_pairs.size());
  };

  StageRecord rec;
  rec.stage = "cnn1";
  rec.init = "scratch";
  rec.val_metric = "l1";
  rec.epochs = train.epochs;
  rec.identity_l1 = identity_l1;

  Adam<S> opt(g, train.adam());
  double best = val_l1();
  int best_epoch = 0;
  auto best_params = g.snapshot_params();
  rec.val_curve.push_back(best);

  for (int e = 1; e <= train.epochs; ++e) {
    std::vector<int> order = epoch_order<S>(pool, train.seed, "pretrain_order", e);
    RandomStream deg_rs(derive_seed(train.seed, "pretrain_degrade", static_cast<uint64_t>(e)));
    double loss_sum = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(train.batch_size)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(train.batch_size));
      double inv_b = 1.0 / static_cast<double>(stop - start);
      g.zero_grad();
      for (size_t i = start; i < stop; ++i) {
        const Tensor<double>& img = ds.sample(order[i]).image;
        DegradeSpec spec = sample_spec(deg_rs, train.degrade_mode);
        g.set_input("image", image_input<S>(degrade(img, spec)));
        g.set_input("target_image", image_input<S>(img));
        g.forward_to(loss_id);
        loss_sum += g.value_of(loss_id);
        g.backward(loss_id, inv_b);
      }
      opt.step(g);
    }
    rec.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    double v = val_l1();
    rec.val_curve.push_back(v);
    if (v < best) {
      best = v;
      best_epoch = e;
      best_params = g.snapshot_params();
    }
  }
  g.restore_params(best_params);
  rec.best_epoch = best_epoch;
  rec.best_val = best;

  json meta{{"stage", "cnn1"},
            {"model", cfg.to_json()},
            {"train", train.to_json()},
            {"init", "scratch"},
            {"best_epoch", best_epoch},
            {"best_val", best},
            {"val_metric", "l1"},
            {"identity_l1", identity_l1},
            {"precision", to_string(train.precision)}};
  Checkpoint ckpt = checkpoint_from_graph(g, std::move(meta));
  rec.checkpoint_hash = ckpt.content_hash();
  return {std::move(ckpt), std::move(rec)};
}

template <class S>
StageResult seg_train_impl(const Dataset& ds, const Pools& pools, const Checkpoint* cnn1,
                           const PseudoLabels* pseudo, const ModelConfig& model, const TrainConfig& train,
                           Stage stage) {
  ModelConfig cfg = model;
  cfg.head = HeadKind::Segmentation;
  cfg.num_classes = kNumClasses;
  cfg.validate();
  require_matching_side(ds, cfg);
  if (pools.labeled_train.empty()) throw ConfigError("supervised training has no labeled samples");
  if (pools.val.empty()) throw ConfigError("supervised training needs a validation pool");

  Graph<S> g = build_model<S>(cfg, train.seed);
  StageRecord rec;
  rec.stage = to_string(stage);
  rec.init = "scratch";
  rec.val_metric = "mean_dsc";
  rec.epochs = train.epochs;
  json src_hash;
  if (cnn1) {
    transfer_trunk(*cnn1, g, cfg, stage);
    rec.init = "cnn1-transfer";
    src_hash = hex16(cnn1->content_hash());
  }
  const int sup_loss_id = g.require_node(train.sup_loss == SupLoss::CE ? "loss_ce" : "loss_dice");
  const int mse_loss_id = g.require_node("loss_mse");
  const int out_id = g.require_node("head_act");

  // one-hot targets are reused every epoch; build them once
  std::map<int, Tensor<S>> sup_targets;
  for (int idx : pools.labeled_train)
    sup_targets.emplace(idx, onehot_input<S>(ds.sample(idx).mask, kNumClasses));
  std::vector<std::pair<int, Tensor<S>>> pseudo_items;
  if (pseudo)
    for (const auto& [idx, mask] : pseudo->by_sample)
      pseudo_items.emplace_back(idx, onehot_input<S>(mask, kNumClasses));

  Adam<S> opt(g, train.adam());
  double best = val_mean_fg_dsc(g, out_id, ds, pools.val);
  int best_epoch = 0;
  auto best_params = g.snapshot_params();
  rec.val_curve.push_back(best);

  for (int e = 1; e <= train.epochs; ++e) {
    std::vector<int> order = epoch_order<S>(pools.labeled_train, train.seed, "sup_order", e);
    // the pseudo stream is only created when pseudo items exist, so an
    // empty pseudo set leaves the supervised trajectory untouched
    std::vector<int> pseudo_order;
    size_t ppos = 0;
    if (!pseudo_items.empty()) {
      pseudo_order.resize(pseudo_items.size());
      for (size_t i = 0; i < pseudo_order.size(); ++i) pseudo_order[i] = static_cast<int>(i);
      RandomStream prs(derive_seed(train.seed, "pseudo_order", static_cast<uint64_t>(e)));
      prs.shuffle(pseudo_order);
    }
    double loss_sum = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(train.batch_size)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(train.batch_size));
      double inv_b = 1.0 / static_cast<double>(stop - start);
      g.zero_grad();
      for (size_t i = start; i < stop; ++i) {
        int idx = order[i];
        g.set_input("image", image_input<S>(ds.sample(idx).image));
        g.set_input("target_onehot", sup_targets.at(idx));
        g.forward_to(sup_loss_id);
        loss_sum += g.value_of(sup_loss_id);
        g.backward(sup_loss_id, inv_b);
      }
      if (!pseudo_items.empty()) {
        for (size_t i = start; i < stop; ++i) {
          const auto& [idx, target] = pseudo_items[static_cast<size_t>(
              pseudo_order[ppos % pseudo_order.size()])];
          ++ppos;
          g.set_input("image", image_input<S>(ds.sample(idx).image));
          g.set_input("target_onehot", target);
          g.forward_to(mse_loss_id);
          loss_sum += g.value_of(mse_loss_id);
          g.backward(mse_loss_id, inv_b);
        }
      }
      opt.step(g);
    }
    rec.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    double v = val_mean_fg_dsc(g, out_id, ds, pools.val);
    rec.val_curve.push_back(v);
    if (v > best) {
      best = v;
      best_epoch = e;
      best_params = g.snapshot_params();
    }
  }
  g.restore_params(best_params);
  rec.best_epoch = best_epoch;
  rec.best_val = best;

  json meta{{"stage", to_string(stage)},
            {"model", cfg.to_json()},
            {"train", train.to_json()},
            {"init", rec.init},
            {"best_epoch", best_epoch},
            {"best_val", best},
            {"val_metric", "mean_dsc"},
            {"precision", to_string(train.precision)}};
  if (!src_hash.is_null()) meta["source_cnn1_hash"] = src_hash;
  if (pseudo) {
    meta["pseudo_source_hash"] = hex16(pseudo->source_hash);
    meta["pseudo_count"] = pseudo->by_sample.size();
  }
  Checkpoint ckpt = checkpoint_from_graph(g, std::move(meta));
  rec.checkpoint_hash = ckpt.content_hash();
  return {std::move(ckpt), std::move(rec)};
}

template <class S>
PseudoLabels pseudo_impl(const Dataset& ds, const Pools& pools, const Checkpoint& cnn2) {
  ModelConfig cfg = cnn2.model_config();
  require_matching_side(ds, cfg);
  Graph<S> g = build_model<S>(cfg, 0);
  load_checkpoint_into(cnn2, g);
  const int out_id = g.require_node("head_act");
  PseudoLabels out;
  out.source_hash = cnn2.content_hash();
  for (int idx : pools.unlabeled_train) {
    g.set_input("image", image_input<S>(ds.sample(idx).image));
    g.forward_to(out_id);
    out.by_sample.emplace_back(idx, argmax_mask(g.tensor_of(out_id)));
  }
  return out;
}

template <class S>
MetricsRecord evaluate_impl(const Dataset& ds, const Pools& pools, const Checkpoint& ckpt) {
  ModelConfig cfg = ckpt.model_config();
  require_matching_side(ds, cfg);
  Graph<S> g = build_model<S>(cfg, 0);
  load_checkpoint_into(ckpt, g);
  const int out_id = g.require_node("head_act");

  MetricsRecord r;
  r.stage = ckpt.stage();
  r.checkpoint_hash = ckpt.content_hash();
  r.num_classes = cfg.num_classes;

  std::map<std::string, std::vector<DscCounts>> subj_counts;
  std::map<std::string, std::map<std::string, std::vector<DscCounts>>> view_counts;
  std::vector<std::vector<double>> image_dsc(static_cast<size_t>(cfg.num_classes));
  for (int idx : pools.test) {
    const LoadedSample& s = ds.sample(idx);
    g.set_input("image", image_input<S>(s.image));
    g.forward_to(out_id);
    ClassMask pred = argmax_mask(g.tensor_of(out_id));
    auto& sc = subj_counts[s.ref.subject];
    auto& vc = view_counts[s.ref.view][s.ref.subject];
    if (sc.empty()) sc.resize(static_cast<size_t>(cfg.num_classes));
    if (vc.empty()) vc.resize(static_cast<size_t>(cfg.num_classes));
    for (int c = 0; c < cfg.num_classes; ++c) {
      sc[static_cast<size_t>(c)].add(pred, s.mask, static_cast<uint8_t>(c));
      vc[static_cast<size_t>(c)].add(pred, s.mask, static_cast<uint8_t>(c));
      image_dsc[static_cast<size_t>(c)].push_back(dsc_metric(pred, s.mask, static_cast<uint8_t>(c)));
    }
  }

  std::vector<std::vector<double>> per_class(static_cast<size_t>(cfg.num_classes));
  for (const auto& [subj, cs] : subj_counts) {
    std::vector<double> row;
    for (int c = 0; c < cfg.num_classes; ++c) {
      double d = cs[static_cast<size_t>(c)].dsc();
      row.push_back(d);
      per_class[static_cast<size_t>(c)].push_back(d);
    }
    r.per_subject[subj] = std::move(row);
  }
  for (const auto& [view, subjects] : view_counts)
    for (const auto& [subj, cs] : subjects) {
      std::vector<double> row;
      for (int c = 0; c < cfg.num_classes; ++c) row.push_back(cs[static_cast<size_t>(c)].dsc());
      r.per_view[view][subj] = std::move(row);
    }
  double fg = 0;
  for (int c = 0; c < cfg.num_classes; ++c) {
    auto [m, sd] = mean_std(per_class[static_cast<size_t>(c)]);
    r.mean_per_class.push_back(m);
    r.std_per_class.push_back(sd);
    if (c >= 1) fg += m;
    auto [im, isd] = mean_std(image_dsc[static_cast<size_t>(c)]);
    r.image_mean_per_class.push_back(im);
    r.image_std_per_class.push_back(isd);
  }
  r.foreground_mean = fg / static_cast<double>(cfg.num_classes - 1);
  return r;
}

}  // namespace

StageResult pretrain_restoration(const Dataset& ds, const Pools& pools, const ModelConfig& model,
                                 const TrainConfig& train) {
  train.validate();
  return train.precision == Precision::F64 ? pretrain_impl<double>(ds, pools, model, train)
                                           : pretrain_impl<float>(ds, pools, model, train);
}

StageResult finetune_segmentation(const Dataset& ds, const Pools& pools, const Checkpoint& cnn1,
                                  const ModelConfig& model, const TrainConfig& train) {
  train.validate();
  return train.precision == Precision::F64
             ? seg_train_impl<double>(ds, pools, &cnn1, nullptr, model, train, Stage::Cnn2)
             : seg_train_impl<float>(ds, pools, &cnn1, nullptr, model, train, Stage::Cnn2);
}

StageResult train_scratch_segmentation(const Dataset& ds, const Pools& pools, const ModelConfig& model,
                                       const TrainConfig& train) {
  train.validate();
  return train.precision == Precision::F64
             ? seg_train_impl<double>(ds, pools, nullptr, nullptr, model, train, Stage::Cnn2)
             : seg_train_impl<float>(ds, pools, nullptr, nullptr, model, train, Stage::Cnn2);
}

PseudoLabels predict_pseudo_labels(const Dataset& ds, const Pools& pools, const Checkpoint& cnn2) {
  if (cnn2.stage() != "cnn2")
    throw StageError("pseudo labels must come from the fine-tuned segmentation checkpoint (stage cnn2), got '" +
                     cnn2.stage() + "'");
  Precision p = precision_from_string(cnn2.metadata.at("precision").get<std::string>());
  return p == Precision::F64 ? pseudo_impl<double>(ds, pools, cnn2) : pseudo_impl<float>(ds, pools, cnn2);
}

StageResult train_semi(const Dataset& ds, const Pools& pools, const Checkpoint& cnn1,
                       const PseudoLabels& pseudo, const ModelConfig& model, const TrainConfig& train) {
  train.validate();
  return train.precision == Precision::F64
             ? seg_train_impl<double>(ds, pools, &cnn1, &pseudo, model, train, Stage::Cnn3)
             : seg_train_impl<float>(ds, pools, &cnn1, &pseudo, model, train, Stage::Cnn3);
}

MetricsRecord evaluate(const Dataset& ds, const Pools& pools, const Checkpoint& ckpt) {
  if (pools.test.empty()) throw ConfigError("evaluation needs a non-empty test pool");
  ModelConfig cfg = ckpt.model_config();
  if (cfg.head != HeadKind::Segmentation)
    throw StageError("evaluate expects a segmentation checkpoint, got a restoration head");
  // belt and braces: the split construction already guarantees this
  for (int idx : pools.test) {
    const std::string& subj = ds.sample(idx).ref.subject;
    if (ds.manifest.split.at(subj) != "test")
      throw ConfigError("test pool contains non-test subject " + subj);
  }
  Precision p = precision_from_string(ckpt.metadata.at("precision").get<std::string>());
  return p == Precision::F64 ? evaluate_impl<double>(ds, pools, ckpt) : evaluate_impl<float>(ds, pools, ckpt);
}

}  // namespace semiseg
