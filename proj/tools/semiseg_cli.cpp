#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "semiseg/errors.hpp"
#include "semiseg/pgm.hpp"
#include "semiseg/report.hpp"

using namespace semiseg;

namespace {

struct Opts {
  // data generation
  std::string out;
  int side = 64;
  int slices = 10;
  int labeled = 16;
  int unlabeled = 32;
  int train_subjects = 10, val_subjects = 2, test_subjects = 4;
  double noise = 0.03, bias = 0.10, texture = 1.0;
  // shared
  std::string data;
  uint64_t seed = 1;
  // model
  std::string arch = "unet";
  int depth = 4;
  int base_channels = 16;
  // training
  int epochs = 200;
  int batch = 8;
  double lr = 2e-4;
  std::string precision = "f64";
  std::string loss = "ce";
  std::string mode = "both";
  // selection
  int use_labeled = -1;
  std::string view = "all";
  // stage inputs
  std::string cnn1, cnn2, pseudo_dir, checkpoint;
  bool scratch = false;
  // ablation
  std::string config;
  int jobs = 1;
};

void add_model_opts(CLI::App* cmd, Opts& o) {
  cmd->add_option("--arch", o.arch, "unet | unetpp")->check(CLI::IsMember({"unet", "unetpp"}));
  cmd->add_option("--depth", o.depth, "encoder depth");
  cmd->add_option("--base-channels", o.base_channels, "channels at full resolution");
}

void add_train_opts(CLI::App* cmd, Opts& o) {
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--batch", o.batch);
  cmd->add_option("--lr", o.lr);
  cmd->add_option("--precision", o.precision)->check(CLI::IsMember({"f32", "f64"}));
  cmd->add_option("--loss", o.loss, "supervised loss: ce | dl")->check(CLI::IsMember({"ce", "dl"}));
  cmd->add_option("--mode", o.mode, "degradation task: sr | ps | both")
      ->check(CLI::IsMember({"sr", "ps", "both"}));
  cmd->add_option("--seed", o.seed);
}

void add_selection_opts(CLI::App* cmd, Opts& o) {
  cmd->add_option("--labeled-subjects", o.use_labeled, "labeled training subjects to keep (-1 = all)");
  cmd->add_option("--view", o.view, "training-view filter")
      ->check(CLI::IsMember({"all", "axial", "coronal", "sagittal", "partial_third"}));
}

ModelConfig model_from(const Opts& o, const Dataset& ds) {
  ModelConfig m;
  m.arch = arch_from_string(o.arch);
  m.depth = o.depth;
  m.base_channels = o.base_channels;
  m.input_side = ds.side;
  return m;
}

TrainConfig train_from(const Opts& o) {
  TrainConfig t;
  t.epochs = o.epochs;
  t.batch_size = o.batch;
  t.lr = o.lr;
  t.seed = o.seed;
  t.precision = precision_from_string(o.precision);
  t.sup_loss = sup_loss_from_string(o.loss);
  t.degrade_mode = degrade_mode_from_string(o.mode);
  return t;
}

Pools pools_from(const Opts& o, const Dataset& ds) {
  Selection sel{o.use_labeled, view_filter_from_string(o.view), o.seed};
  return select_pools(ds, sel);
}

void save_stage(const StageResult& r, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  r.ckpt.save(out / "checkpoint.ckpt");
  save_json(out / "record.json", r.record.to_json());
  std::cout << r.record.stage << ": best epoch " << r.record.best_epoch << " (" << r.record.val_metric
            << " " << r.record.best_val << "), checkpoint " << hex16(r.record.checkpoint_hash) << "\n";
}

void save_pseudo(const PseudoLabels& p, const std::filesystem::path& out) {
  std::filesystem::create_directories(out / "masks");
  json samples = json::array();
  for (const auto& [index, mask] : p.by_sample) {
    char name[32];
    std::snprintf(name, sizeof(name), "pseudo_%05d.pgm", index);
    write_pgm8(out / "masks" / name, mask);
    samples.push_back(json{{"index", index}, {"mask", std::string("masks/") + name}});
  }
  save_json(out / "pseudo.json", json{{"source_hash", hex16(p.source_hash)}, {"samples", samples}});
  std::cout << "wrote " << p.by_sample.size() << " pseudo masks to " << out.string() << "\n";
}

PseudoLabels load_pseudo(const std::filesystem::path& dir) {
  json j = load_json(dir / "pseudo.json");
  PseudoLabels p;
  p.source_hash = std::stoull(j.at("source_hash").get<std::string>(), nullptr, 16);
  for (const auto& s : j.at("samples")) {
    ClassMask m = read_pgm8(dir / s.at("mask").get<std::string>());
    p.by_sample.emplace_back(s.at("index").get<int>(), std::move(m));
  }
  return p;
}

int dispatch(const CLI::App& app, Opts& o) {
  if (app.got_subcommand("gen-data")) {
    PhantomConfig cfg;
    cfg.side = o.side;
    cfg.slices_per_view = o.slices;
    cfg.noise_sigma = o.noise;
    cfg.bias_strength = o.bias;
    cfg.texture_amp = o.texture;
    cfg.seed = o.seed;
    SplitCounts split{o.train_subjects, o.val_subjects, o.test_subjects};
    auto manifest = build_dataset(cfg, o.labeled, o.unlabeled, split, o.out);
    std::cout << "dataset written; manifest: " << manifest.string() << "\n";
    return 0;
  }

  if (app.got_subcommand("ablate")) {
    MatrixConfig m = MatrixConfig::load(o.config);
    ReportBundle bundle = run_ablation_matrix(m, o.out, o.jobs);
    write_reports(bundle, std::filesystem::path(o.out) / "report");
    std::cout << "report written to " << (std::filesystem::path(o.out) / "report").string() << "\n";
    if (bundle.any_failure) {
      std::cerr << "some runs failed; their cells carry failed_seeds in summary.json\n";
      return 3;
    }
    return 0;
  }
  if (app.got_subcommand("report")) {
    MatrixConfig m = MatrixConfig::load(std::filesystem::path(o.out) / "matrix.json");
    ReportBundle bundle = collect_ablation(m, o.out);
    write_reports(bundle, std::filesystem::path(o.out) / "report");
    std::cout << "report written to " << (std::filesystem::path(o.out) / "report").string() << "\n";
    return bundle.any_failure ? 3 : 0;
  }

  Dataset ds = load_dataset(o.data);
  Pools pools = pools_from(o, ds);

  if (app.got_subcommand("pretrain")) {
    save_stage(pretrain_restoration(ds, pools, model_from(o, ds), train_from(o)), o.out);
  } else if (app.got_subcommand("finetune")) {
    if (o.scratch == !o.cnn1.empty())
      throw ConfigError("finetune needs exactly one of --cnn1 <checkpoint> or --scratch");
    StageResult r = o.scratch
                        ? train_scratch_segmentation(ds, pools, model_from(o, ds), train_from(o))
                        : finetune_segmentation(ds, pools, Checkpoint::load(o.cnn1), model_from(o, ds),
                                                train_from(o));
    save_stage(r, o.out);
  } else if (app.got_subcommand("pseudo")) {
    save_pseudo(predict_pseudo_labels(ds, pools, Checkpoint::load(o.cnn2)), o.out);
  } else if (app.got_subcommand("semi")) {
    save_stage(train_semi(ds, pools, Checkpoint::load(o.cnn1), load_pseudo(o.pseudo_dir),
                          model_from(o, ds), train_from(o)),
               o.out);
  } else if (app.got_subcommand("eval")) {
    MetricsRecord m = evaluate(ds, pools, Checkpoint::load(o.checkpoint));
    save_json(o.out, m.to_json());
    std::cout << "test DSC per class (mean +/- std across subjects):\n";
    for (int c = 0; c < m.num_classes; ++c)
      std::cout << "  class " << c << ": " << format_dsc(m.mean_per_class[c], m.std_per_class[c]) << "\n";
    std::cout << "foreground mean: " << m.foreground_mean << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage semi-supervised segmentation of synthetic pelvic-like phantoms"};
  app.require_subcommand(1);
  Opts o;

  auto* gen = app.add_subcommand("gen-data", "generate a seeded phantom dataset");
  gen->add_option("--out", o.out, "dataset directory")->required();
  gen->add_option("--side", o.side, "volume edge length");
  gen->add_option("--slices", o.slices, "slices per view per subject");
  gen->add_option("--labeled", o.labeled, "labeled subjects (split into train/val/test)");
  gen->add_option("--unlabeled", o.unlabeled, "unlabeled subjects");
  gen->add_option("--train", o.train_subjects, "labeled subjects in the train split");
  gen->add_option("--val", o.val_subjects, "labeled subjects in the val split");
  gen->add_option("--test", o.test_subjects, "labeled subjects in the test split");
  gen->add_option("--noise", o.noise, "gaussian noise sigma");
  gen->add_option("--bias", o.bias, "bias field strength");
  gen->add_option("--texture", o.texture, "random texture amplitude scale");
  gen->add_option("--seed", o.seed);

  auto* pre = app.add_subcommand("pretrain", "self-supervised restoration pretraining (stage 1)");
  pre->add_option("--data", o.data, "dataset manifest.json")->required();
  pre->add_option("--out", o.out, "output directory")->required();
  add_model_opts(pre, o);
  add_train_opts(pre, o);
  add_selection_opts(pre, o);

  auto* fin = app.add_subcommand("finetune", "supervised segmentation fine-tuning (stage 2)");
  fin->add_option("--data", o.data)->required();
  fin->add_option("--out", o.out)->required();
  fin->add_option("--cnn1", o.cnn1, "restoration checkpoint to initialize from");
  fin->add_flag("--scratch", o.scratch, "random initialization (the supervised baseline)");
  add_model_opts(fin, o);
  add_train_opts(fin, o);
  add_selection_opts(fin, o);

  auto* pse = app.add_subcommand("pseudo", "predict pseudo labels on the unlabeled pool");
  pse->add_option("--data", o.data)->required();
  pse->add_option("--cnn2", o.cnn2, "fine-tuned checkpoint")->required();
  pse->add_option("--out", o.out, "output directory")->required();
  pse->add_option("--seed", o.seed);
  add_selection_opts(pse, o);

  auto* sem = app.add_subcommand("semi", "semi-supervised training on labels + pseudo labels (stage 3)");
  sem->add_option("--data", o.data)->required();
  sem->add_option("--cnn1", o.cnn1, "restoration checkpoint to initialize from")->required();
  sem->add_option("--pseudo", o.pseudo_dir, "directory written by the pseudo command")->required();
  sem->add_option("--out", o.out)->required();
  add_model_opts(sem, o);
  add_train_opts(sem, o);
  add_selection_opts(sem, o);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ev->add_option("--data", o.data)->required();
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--out", o.out, "metrics json path")->required();
  ev->add_option("--seed", o.seed);
  add_selection_opts(ev, o);

  auto* abl = app.add_subcommand("ablate", "run an ablation matrix and write reports");
  abl->add_option("--config", o.config, "matrix json")->required();
  abl->add_option("--out", o.out, "output directory")->required();
  abl->add_option("--jobs", o.jobs, "parallel worker processes");

  auto* rep = app.add_subcommand("report", "rebuild reports from an ablation output directory");
  rep->add_option("--out", o.out, "ablation output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    return dispatch(app, o);
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
