#include "semiseg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "semiseg/errors.hpp"
#include "semiseg/pgm.hpp"
#include "semiseg/phantom.hpp"
#include "semiseg/rng.hpp"

namespace semiseg {

Manifest Manifest::from_json(const json& j) {
  Manifest m;
  try {
    for (const auto& s : j.at("subjects").at("labeled")) m.labeled_subjects.push_back(s.get<std::string>());
    for (const auto& s : j.at("subjects").at("unlabeled")) m.unlabeled_subjects.push_back(s.get<std::string>());
    for (const auto& [k, v] : j.at("split").items()) m.split[k] = v.get<std::string>();
    for (const auto& rec : j.at("samples")) {
      SampleRef r;
      r.path = rec.at("path").get<std::string>();
      if (!rec.at("mask_path").is_null()) {
        r.mask_path = rec.at("mask_path").get<std::string>();
        r.has_mask = true;
      }
      r.view = rec.at("view").get<std::string>();
      r.subject = rec.at("subject").get<std::string>();
      r.slice = rec.at("slice").get<int>();
      m.samples.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  if (j.contains("config")) m.config = j.at("config");
  return m;
}

json Manifest::to_json() const {
  json j;
  j["subjects"]["labeled"] = labeled_subjects;
  j["subjects"]["unlabeled"] = unlabeled_subjects;
  j["split"] = split;
  auto& arr = j["samples"] = json::array();
  for (const auto& s : samples) {
    json rec{{"path", s.path}, {"view", s.view}, {"subject", s.subject}, {"slice", s.slice}};
    rec["mask_path"] = s.has_mask ? json(s.mask_path) : json(nullptr);
    arr.push_back(std::move(rec));
  }
  if (!config.is_null()) j["config"] = config;
  return j;
}

void audit_manifest(const Manifest& m) {
  std::set<std::string> labeled(m.labeled_subjects.begin(), m.labeled_subjects.end());
  std::set<std::string> unlabeled(m.unlabeled_subjects.begin(), m.unlabeled_subjects.end());
  if (labeled.size() != m.labeled_subjects.size() || unlabeled.size() != m.unlabeled_subjects.size())
    throw ConfigError("manifest audit: duplicate subject ids");
  for (const auto& s : labeled)
    if (unlabeled.count(s)) throw ConfigError("manifest audit: subject both labeled and unlabeled: " + s);
  for (const auto& [subj, sp] : m.split) {
    if (sp != "train" && sp != "val" && sp != "test")
      throw ConfigError("manifest audit: bad split value '" + sp + "' for " + subj);
    if (!labeled.count(subj) && !unlabeled.count(subj))
      throw ConfigError("manifest audit: split entry for unknown subject " + subj);
  }
  for (const auto& s : labeled)
    if (!m.split.count(s)) throw ConfigError("manifest audit: labeled subject missing split: " + s);
  for (const auto& s : unlabeled) {
    auto it = m.split.find(s);
    if (it == m.split.end()) throw ConfigError("manifest audit: unlabeled subject missing split: " + s);
    if (it->second != "train")
      throw ConfigError("manifest audit: unlabeled subject must be in the train split: " + s);
  }
  std::set<std::string> paths;
  std::set<std::string> views{"axial", "coronal", "sagittal"};
  for (const auto& r : m.samples) {
    if (!paths.insert(r.path).second) throw ConfigError("manifest audit: duplicate sample path " + r.path);
    if (!views.count(r.view)) throw ConfigError("manifest audit: bad view '" + r.view + "'");
    bool is_labeled = labeled.count(r.subject) > 0;
    if (!is_labeled && !unlabeled.count(r.subject))
      throw ConfigError("manifest audit: sample for unknown subject " + r.subject);
    if (is_labeled && !r.has_mask)
      throw ConfigError("manifest audit: labeled sample lacks a mask: " + r.path);
    if (!is_labeled && r.has_mask)
      throw ConfigError("manifest audit: unlabeled sample carries a mask: " + r.path);
  }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.root = manifest_path.parent_path();
  {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + manifest_path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ds.manifest_hash = fnv1a64(bytes);
  }
  ds.manifest = Manifest::from_json(load_json(manifest_path));
  audit_manifest(ds.manifest);
  ds.samples.reserve(ds.manifest.samples.size());
  for (const auto& ref : ds.manifest.samples) {
    LoadedSample s;
    s.ref = ref;
    s.image = read_pgm16(ds.root / ref.path);
    if (s.image.shape[0] != s.image.shape[1]) throw IoError("non-square image: " + ref.path);
    int side = static_cast<int>(s.image.shape[0]);
    if (ds.side == 0)
      ds.side = side;
    else if (ds.side != side)
      throw IoError("inconsistent image sizes in dataset (" + ref.path + ")");
    if (ref.has_mask) {
      s.mask = read_pgm8(ds.root / ref.mask_path);
      if (s.mask.shape != s.image.shape) throw IoError("mask/image size mismatch: " + ref.mask_path);
      for (uint8_t v : s.mask.data)
        if (v >= kNumClasses) throw IoError("mask class id out of range: " + ref.mask_path);
    }
    ds.by_subject[ref.subject].push_back(static_cast<int>(ds.samples.size()));
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ConfigError("dataset has no samples");
  return ds;
}

const char* to_string(ViewFilter v) {
  switch (v) {
    case ViewFilter::All: return "all";
    case ViewFilter::Axial: return "axial";
    case ViewFilter::Coronal: return "coronal";
    case ViewFilter::Sagittal: return "sagittal";
    case ViewFilter::PartialThird: return "partial_third";
  }
  throw ConfigError("bad view filter");
}

ViewFilter view_filter_from_string(const std::string& s) {
  if (s == "all") return ViewFilter::All;
  if (s == "axial") return ViewFilter::Axial;
  if (s == "coronal") return ViewFilter::Coronal;
  if (s == "sagittal") return ViewFilter::Sagittal;
  if (s == "partial_third") return ViewFilter::PartialThird;
  throw ConfigError("unknown view filter: " + s);
}

Pools select_pools(const Dataset& ds, const Selection& sel) {
  const Manifest& m = ds.manifest;
  std::vector<std::string> train_labeled;
  for (const auto& s : m.labeled_subjects)
    if (m.split.at(s) == "train") train_labeled.push_back(s);
  if (sel.labeled_subjects_used >= 0) {
    if (sel.labeled_subjects_used < 1)
      throw ConfigError("labeled_subjects_used must be >= 1");
    if (static_cast<size_t>(sel.labeled_subjects_used) > train_labeled.size())
      throw ConfigError("labeled_subjects_used exceeds the " + std::to_string(train_labeled.size()) +
                        " labeled training subjects in the manifest");
    train_labeled.resize(static_cast<size_t>(sel.labeled_subjects_used));
  }
  std::set<std::string> train_set(train_labeled.begin(), train_labeled.end());

  auto view_ok = [&sel](const std::string& v) {
    switch (sel.view) {
      case ViewFilter::Axial: return v == "axial";
      case ViewFilter::Coronal: return v == "coronal";
      case ViewFilter::Sagittal: return v == "sagittal";
      default: return true;
    }
  };

  Pools p;
  p.labeled_train_subjects = train_labeled;
  std::set<std::string> unlabeled(m.unlabeled_subjects.begin(), m.unlabeled_subjects.end());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const SampleRef& r = ds.samples[i].ref;
    int idx = static_cast<int>(i);
    if (train_set.count(r.subject)) {
      if (view_ok(r.view)) p.labeled_train.push_back(idx);
    } else if (unlabeled.count(r.subject)) {
      if (view_ok(r.view)) p.unlabeled_train.push_back(idx);
    } else {
      const std::string& sp = m.split.at(r.subject);
      if (sp == "val")
        p.val.push_back(idx);
      else if (sp == "test")
        p.test.push_back(idx);
      // train-split labeled subjects beyond labeled_subjects_used are dropped
    }
  }
  if (sel.view == ViewFilter::PartialThird) {
    std::vector<int> shuffled = p.labeled_train;
    RandomStream rs(derive_seed(sel.seed, "partial_third"));
    rs.shuffle(shuffled);
    size_t keep = (shuffled.size() + 2) / 3;
    shuffled.resize(keep);
    std::sort(shuffled.begin(), shuffled.end());
    p.labeled_train = std::move(shuffled);
  }
  return p;
}

}  // namespace semiseg
