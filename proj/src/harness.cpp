#include "semiseg/harness.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <functional>
#include <iostream>
#include <set>

#include "semiseg/errors.hpp"

namespace semiseg {

const char* to_string(Method m) {
  switch (m) {
    case Method::Baseline: return "baseline";
    case Method::SelfSL: return "self_sl";
    case Method::SemiSL: return "semi_sl";
  }
  throw ConfigError("bad method");
}

Method method_from_string(const std::string& s) {
  if (s == "baseline") return Method::Baseline;
  if (s == "self_sl") return Method::SelfSL;
  if (s == "semi_sl") return Method::SemiSL;
  throw ConfigError("unknown method: " + s);
}

json ExperimentSpec::to_json() const {
  return json{{"method", to_string(method)},
              {"arch", to_string(arch)},
              {"labeled_subjects_used", labeled_subjects_used},
              {"view", to_string(view)},
              {"seed", seed},
              {"model", model.to_json()},
              {"train", train.to_json()},
              {"pretrain_epochs", pretrain_epochs}};
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
  ExperimentSpec s;
  if (j.contains("method")) s.method = method_from_string(j.at("method").get<std::string>());
  if (j.contains("arch")) s.arch = arch_from_string(j.at("arch").get<std::string>());
  s.labeled_subjects_used = j.value("labeled_subjects_used", -1);
  if (j.contains("view")) s.view = view_filter_from_string(j.at("view").get<std::string>());
  s.seed = j.value("seed", uint64_t{1});
  if (j.contains("model")) s.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) s.train = TrainConfig::from_json(j.at("train"));
  s.pretrain_epochs = j.value("pretrain_epochs", -1);
  s.model.arch = s.arch;
  return s;
}

json ExperimentSpec::cell_json() const {
  json j = to_json();
  j.erase("seed");
  // the per-run seed also feeds train.seed; identity must ignore it
  j["train"].erase("seed");
  return j;
}

std::string ExperimentSpec::cell_key() const {
  std::string key = std::string(to_string(method)) + "-" + to_string(arch) + "-" +
                    to_string(train.degrade_mode) + "-" + to_string(train.sup_loss) + "-n" +
                    (labeled_subjects_used < 0 ? std::string("all") : std::to_string(labeled_subjects_used)) +
                    "-" + to_string(view);
  return key + "-" + hex16(json_hash(cell_json())).substr(8);
}

std::string ExperimentSpec::run_dir_name() const { return cell_key() + "-s" + std::to_string(seed); }

StageCache::StageCache(std::filesystem::path d) : dir(std::move(d)) {
  std::filesystem::create_directories(dir);
}

std::optional<StageResult> StageCache::find(const std::string& key) const {
  namespace fs = std::filesystem;
  fs::path cell = dir / key;
  if (!fs::exists(cell / "checkpoint.ckpt") || !fs::exists(cell / "record.json")) return std::nullopt;
  StageResult r;
  r.ckpt = Checkpoint::load(cell / "checkpoint.ckpt");
  json rec = load_json(cell / "record.json");
  r.record.stage = rec.at("stage").get<std::string>();
  r.record.init = rec.at("init").get<std::string>();
  r.record.val_metric = rec.at("val_metric").get<std::string>();
  r.record.epochs = rec.at("epochs").get<int>();
  r.record.best_epoch = rec.at("best_epoch").get<int>();
  r.record.best_val = rec.at("best_val").get<double>();
  if (rec.contains("identity_l1")) r.record.identity_l1 = rec.at("identity_l1").get<double>();
  r.record.train_loss = rec.at("train_loss").get<std::vector<double>>();
  r.record.val_curve = rec.at("val_curve").get<std::vector<double>>();
  r.record.checkpoint_hash = std::stoull(rec.at("checkpoint_hash").get<std::string>(), nullptr, 16);
  return r;
}

void StageCache::store(const std::string& key, const StageResult& result) const {
  namespace fs = std::filesystem;
  fs::path tmp = dir / (".tmp-" + key + "-" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  result.ckpt.save(tmp / "checkpoint.ckpt");
  save_json(tmp / "record.json", result.record.to_json());
  std::error_code ec;
  fs::rename(tmp, dir / key, ec);
  if (ec) {  // another worker finished first; keep theirs
    fs::remove_all(tmp);
  }
}

namespace {

std::string stage_key(const char* purpose, const Dataset& ds, const ExperimentSpec& spec,
                      const ModelConfig& model, const TrainConfig& tr, const std::string& upstream) {
  json j{{"purpose", purpose},
         {"manifest", hex16(ds.manifest_hash)},
         {"labeled_subjects_used", spec.labeled_subjects_used},
         {"view", to_string(spec.view)},
         {"model", model.to_json()},
         {"train", tr.to_json()},
         {"upstream", upstream}};
  return hex16(json_hash(j));
}

StageResult cached_stage(const StageCache* cache, const std::string& key,
                         const std::function<StageResult()>& compute) {
  if (cache) {
    if (auto hit = cache->find(key)) return std::move(*hit);
  }
  StageResult r = compute();
  if (cache) cache->store(key, r);
  return r;
}

}  // namespace

MetricsRecord run_experiment(const Dataset& ds, const ExperimentSpec& spec,
                             const std::filesystem::path& run_dir, const StageCache* cache) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  json spec_json = spec.to_json();
  if (fs::exists(run_dir / "config.json") && fs::exists(run_dir / "metrics.json")) {
    if (load_json(run_dir / "config.json") != spec_json)
      throw IoError("run directory holds a different configuration: " + run_dir.string());
    return MetricsRecord::from_json(load_json(run_dir / "metrics.json"));
  }
  save_json(run_dir / "config.json", spec_json);

  Selection sel{spec.labeled_subjects_used, spec.view, spec.seed};
  Pools pools = select_pools(ds, sel);
  TrainConfig tr = spec.train;
  tr.seed = spec.seed;
  ModelConfig model = spec.model;
  model.arch = spec.arch;
  model.input_side = ds.side;

  auto run_stage = [&](const char* purpose, const TrainConfig& cfg, const std::string& upstream,
                       const std::function<StageResult()>& compute) {
    StageResult r = cached_stage(cache, stage_key(purpose, ds, spec, model, cfg, upstream), compute);
    save_json(run_dir / (std::string("stage_") + purpose + ".json"), r.record.to_json());
    r.ckpt.save(run_dir / (std::string(purpose) + ".ckpt"));
    return r;
  };

  Checkpoint final_ckpt;
  if (spec.method == Method::Baseline) {
    StageResult b = run_stage("cnn2", tr, "scratch",
                              [&] { return train_scratch_segmentation(ds, pools, model, tr); });
    final_ckpt = std::move(b.ckpt);
  } else {
    TrainConfig tr1 = tr;
    if (spec.pretrain_epochs >= 0) tr1.epochs = spec.pretrain_epochs;
    StageResult cnn1 =
        run_stage("cnn1", tr1, "", [&] { return pretrain_restoration(ds, pools, model, tr1); });
    StageResult cnn2 = run_stage("cnn2", tr, hex16(cnn1.ckpt.content_hash()), [&] {
      return finetune_segmentation(ds, pools, cnn1.ckpt, model, tr);
    });
    if (spec.method == Method::SelfSL) {
      final_ckpt = std::move(cnn2.ckpt);
    } else {
      PseudoLabels pseudo = predict_pseudo_labels(ds, pools, cnn2.ckpt);
      std::string upstream = hex16(cnn1.ckpt.content_hash()) + "+" + hex16(pseudo.source_hash);
      StageResult cnn3 = run_stage("cnn3", tr, upstream, [&] {
        return train_semi(ds, pools, cnn1.ckpt, pseudo, model, tr);
      });
      final_ckpt = std::move(cnn3.ckpt);
    }
  }

  MetricsRecord metrics = evaluate(ds, pools, final_ckpt);
  save_json(run_dir / "metrics.json", metrics.to_json());
  return metrics;
}

namespace {

void apply_axis(ExperimentSpec& spec, const std::string& key, const json& v) {
  if (key == "method")
    spec.method = method_from_string(v.get<std::string>());
  else if (key == "arch") {
    spec.arch = arch_from_string(v.get<std::string>());
    spec.model.arch = spec.arch;
  } else if (key == "mode")
    spec.train.degrade_mode = degrade_mode_from_string(v.get<std::string>());
  else if (key == "loss")
    spec.train.sup_loss = sup_loss_from_string(v.get<std::string>());
  else if (key == "labeled_subjects_used")
    spec.labeled_subjects_used = v.get<int>();
  else if (key == "view")
    spec.view = view_filter_from_string(v.get<std::string>());
  else if (key == "epochs")
    spec.train.epochs = v.get<int>();
  else if (key == "pretrain_epochs")
    spec.pretrain_epochs = v.get<int>();
  else if (key == "precision")
    spec.train.precision = precision_from_string(v.get<std::string>());
  else
    throw ConfigError("unknown sweep axis: " + key);
}

}  // namespace

MatrixConfig MatrixConfig::from_json(const json& j, const std::filesystem::path& config_dir) {
  MatrixConfig m;
  m.raw = j;
  std::filesystem::path ds = j.at("dataset").get<std::string>();
  m.dataset_manifest = std::filesystem::absolute(ds.is_absolute() ? ds : config_dir / ds);
  m.raw["dataset"] = m.dataset_manifest.string();
  if (j.contains("base")) m.base = ExperimentSpec::from_json(j.at("base"));
  if (j.contains("model")) m.base.model = ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) m.base.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("pretrain_epochs")) m.base.pretrain_epochs = j.at("pretrain_epochs").get<int>();
  if (j.contains("seeds"))
    m.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  else
    m.seeds = {1};
  if (m.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (!j.contains("sweeps") || !j.at("sweeps").is_array() || j.at("sweeps").empty())
    throw ConfigError("ablation config needs a non-empty 'sweeps' array");
  for (const auto& s : j.at("sweeps")) {
    if (!s.is_object() || s.empty())
      throw ConfigError("each sweep must be a non-empty object of axis -> value(s)");
    // probe every axis value now so a typo fails at load, not mid-run
    ExperimentSpec probe = m.base;
    for (const auto& [key, value] : s.items()) {
      std::vector<json> vals;
      if (value.is_array())
        vals.assign(value.begin(), value.end());
      else
        vals.push_back(value);
      if (vals.empty()) throw ConfigError("sweep axis '" + key + "' has no values");
      for (const json& v : vals) {
        try {
          apply_axis(probe, key, v);
        } catch (const json::exception&) {
          throw ConfigError("bad value for sweep axis '" + key + "': " + v.dump());
        }
      }
    }
    m.sweeps.push_back(s);
  }
  return m;
}

MatrixConfig MatrixConfig::load(const std::filesystem::path& path) {
  return from_json(load_json(path), path.parent_path());
}

std::vector<ExperimentSpec> MatrixConfig::cells() const {
  std::vector<ExperimentSpec> out;
  std::set<std::string> seen;
  for (const json& sweep : sweeps) {
    std::vector<std::pair<std::string, std::vector<json>>> axes;
    for (const auto& [key, value] : sweep.items()) {
      std::vector<json> vals;
      if (value.is_array())
        vals.assign(value.begin(), value.end());
      else
        vals.push_back(value);
      if (vals.empty()) throw ConfigError("sweep axis '" + key + "' has no values");
      axes.emplace_back(key, std::move(vals));
    }
    std::sort(axes.begin(), axes.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<size_t> idx(axes.size(), 0);
    for (;;) {
      ExperimentSpec spec = base;
      spec.seed = 0;
      spec.train.seed = 0;
      for (size_t a = 0; a < axes.size(); ++a) apply_axis(spec, axes[a].first, axes[a].second[idx[a]]);
      if (seen.insert(spec.cell_json().dump()).second) out.push_back(spec);
      size_t a = axes.size();
      while (a > 0) {
        --a;
        if (++idx[a] < axes[a].second.size()) break;
        idx[a] = 0;
        if (a == 0) {
          a = SIZE_MAX;
          break;
        }
      }
      if (axes.empty() || a == SIZE_MAX) break;
    }
  }
  return out;
}

json CellOutcome::to_json() const {
  json runs_j = json::array();
  for (size_t i = 0; i < runs.size(); ++i)
    runs_j.push_back(json{{"seed", ok_seeds[i]}, {"metrics", runs[i].to_json()}});
  return json{{"cell", spec.cell_key()},
              {"spec", spec.cell_json()},
              {"runs", runs_j},
              {"failed_seeds", failed_seeds},
              {"median_mean_per_class", median_mean_per_class},
              {"median_std_per_class", median_std_per_class},
              {"median_foreground", median_foreground}};
}

const CellOutcome* ReportBundle::find_cell(Method m, Arch a, DegradeMode mode, SupLoss loss, int labeled,
                                           ViewFilter view) const {
  for (const auto& c : cells) {
    if (c.spec.method == m && c.spec.arch == a && c.spec.train.degrade_mode == mode &&
        c.spec.train.sup_loss == loss && c.spec.labeled_subjects_used == labeled && c.spec.view == view)
      return &c;
  }
  return nullptr;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw ConfigError("median of empty set");
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

namespace {

struct Task {
  size_t cell;
  uint64_t seed;
};

void run_task_inline(const Dataset& ds, const ExperimentSpec& cell, uint64_t seed,
                     const std::filesystem::path& out_dir, const StageCache& cache) {
  ExperimentSpec spec = cell;
  spec.seed = seed;
  spec.train.seed = seed;
  run_experiment(ds, spec, out_dir / "runs" / spec.run_dir_name(), &cache);
}

}  // namespace

ReportBundle run_ablation_matrix(const MatrixConfig& m, const std::filesystem::path& out_dir, int jobs) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "runs");
  save_json(out_dir / "matrix.json", m.raw);
  Dataset ds = load_dataset(m.dataset_manifest);
  StageCache cache(out_dir / "stages");
  std::vector<ExperimentSpec> cells = m.cells();
  if (cells.empty()) throw ConfigError("ablation matrix has no cells");

  std::vector<Task> tasks;
  for (size_t c = 0; c < cells.size(); ++c)
    for (uint64_t s : m.seeds) tasks.push_back({c, s});

  if (jobs <= 1) {
    for (const Task& t : tasks) {
      try {
        run_task_inline(ds, cells[t.cell], t.seed, out_dir, cache);
      } catch (const std::exception& e) {
        std::cerr << "[ablate] cell " << cells[t.cell].cell_key() << " seed " << t.seed
                  << " failed: " << e.what() << "\n";
      }
    }
  } else {
    size_t next = 0;
    int active = 0;
    auto spawn = [&](const Task& t) {
      pid_t pid = fork();
      if (pid < 0) throw Error("fork failed");
      if (pid == 0) {
        try {
          run_task_inline(ds, cells[t.cell], t.seed, out_dir, cache);
          _exit(0);
        } catch (const std::exception& e) {
          std::cerr << "[ablate] cell " << cells[t.cell].cell_key() << " seed " << t.seed
                    << " failed: " << e.what() << "\n";
          _exit(2);
        }
      }
      ++active;
    };
    while (next < tasks.size() || active > 0) {
      while (next < tasks.size() && active < jobs) spawn(tasks[next++]);
      int status = 0;
      if (waitpid(-1, &status, 0) > 0) --active;
    }
  }
  return collect_ablation(m, out_dir);
}

ReportBundle collect_ablation(const MatrixConfig& m, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  ReportBundle bundle;
  bundle.matrix = m.raw;
  bundle.base = m.base;
  bundle.seeds = m.seeds;
  for (const ExperimentSpec& cell : m.cells()) {
    CellOutcome oc;
    oc.spec = cell;
    for (uint64_t s : m.seeds) {
      ExperimentSpec spec = cell;
      spec.seed = s;
      spec.train.seed = s;
      fs::path metrics = out_dir / "runs" / spec.run_dir_name() / "metrics.json";
      if (fs::exists(metrics)) {
        oc.ok_seeds.push_back(s);
        oc.runs.push_back(MetricsRecord::from_json(load_json(metrics)));
      } else {
        oc.failed_seeds.push_back(s);
        bundle.any_failure = true;
      }
    }
    if (!oc.runs.empty()) {
      int L = oc.runs.front().num_classes;
      for (int c = 0; c < L; ++c) {
        std::vector<double> means, stds;
        for (const auto& r : oc.runs) {
          means.push_back(r.mean_per_class[static_cast<size_t>(c)]);
          stds.push_back(r.std_per_class[static_cast<size_t>(c)]);
        }
        oc.median_mean_per_class.push_back(median(means));
        oc.median_std_per_class.push_back(median(stds));
      }
      std::vector<double> fgs;
      for (const auto& r : oc.runs) fgs.push_back(r.foreground_mean);
      oc.median_foreground = median(fgs);
    }
    bundle.cells.push_back(std::move(oc));
  }
  return bundle;
}

}  // namespace semiseg
