#include "semiseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "semiseg/errors.hpp"
#include "semiseg/phantom.hpp"

namespace semiseg {

std::string format_dsc(double mean, double stddev) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << mean << " +/- " << stddev;
  return os.str();
}

namespace {

const char* class_label(int c) {
  switch (c) {
    case kClassBackground: return "background";
    case kClassUterus: return "uterus";
    case kClassBladder: return "bladder";
  }
  return "?";
}

constexpr int kForeground[] = {kClassUterus, kClassBladder};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_table(const Table& t, const std::filesystem::path& base_path) {
  std::ofstream csv(base_path.string() + ".csv");
  if (!csv) throw IoError("cannot write " + base_path.string() + ".csv");
  auto join = [&](const std::vector<std::string>& cells) {
    std::string line;
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ",";
      line += cells[i];
    }
    return line;
  };
  csv << join(t.header) << "\n";
  for (const auto& r : t.rows) csv << join(r) << "\n";

  std::vector<size_t> width(t.header.size(), 0);
  for (size_t i = 0; i < t.header.size(); ++i) width[i] = t.header[i].size();
  for (const auto& r : t.rows)
    for (size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::ofstream txt(base_path.string() + ".txt");
  if (!txt) throw IoError("cannot write " + base_path.string() + ".txt");
  auto emit = [&](const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) {
      txt << std::left << std::setw(static_cast<int>(width[i])) << cells[i];
      if (i + 1 < cells.size()) txt << "  ";
    }
    txt << "\n";
  };
  emit(t.header);
  std::string rule;
  for (size_t i = 0; i < width.size(); ++i) {
    rule += std::string(width[i], '-');
    if (i + 1 < width.size()) rule += "  ";
  }
  txt << rule << "\n";
  for (const auto& r : t.rows) emit(r);
}

struct Query {
  Method method = Method::Baseline;
  std::optional<Arch> arch;
  std::optional<DegradeMode> mode;
  std::optional<SupLoss> loss;
  std::optional<int> labeled;
  std::optional<ViewFilter> view;
};

const CellOutcome* find(const ReportBundle& b, const Query& q) {
  for (const auto& c : b.cells) {
    if (c.runs.empty()) continue;
    if (c.spec.method != q.method) continue;
    if (q.arch && c.spec.arch != *q.arch) continue;
    if (q.mode && c.spec.train.degrade_mode != *q.mode) continue;
    if (q.loss && c.spec.train.sup_loss != *q.loss) continue;
    if (q.labeled && c.spec.labeled_subjects_used != *q.labeled) continue;
    if (q.view && c.spec.view != *q.view) continue;
    return &c;
  }
  return nullptr;
}

std::string stat(const CellOutcome* c, int cls) {
  if (!c) return "-";
  return format_dsc(c->median_mean_per_class[static_cast<size_t>(cls)],
                    c->median_std_per_class[static_cast<size_t>(cls)]);
}

// a baseline run never touches the degradation pipeline, so a matrix
// that sweeps modes only over self/semi cells still has one to show
const CellOutcome* find_baseline(const ReportBundle& b, Query q) {
  if (const CellOutcome* c = find(b, q)) return c;
  q.mode.reset();
  return find(b, q);
}

Table restoration_tasks_table(const ReportBundle& b) {
  Table t;
  t.header = {"arch", "task"};
  for (int cls : kForeground) {
    t.header.push_back(std::string(class_label(cls)) + "_baseline");
    t.header.push_back(std::string(class_label(cls)) + "_self");
  }
  for (Arch arch : {Arch::UNet, Arch::UNetPP}) {
    for (DegradeMode mode : {DegradeMode::SR, DegradeMode::PS, DegradeMode::BOTH}) {
      Query self{Method::SelfSL, arch, mode, b.base.train.sup_loss, b.base.labeled_subjects_used,
                 b.base.view};
      Query base = self;
      base.method = Method::Baseline;
      const CellOutcome* cs = find(b, self);
      const CellOutcome* cb = find_baseline(b, base);
      if (!cs && !cb) continue;
      std::vector<std::string> row{to_string(arch), to_string(mode)};
      for (int cls : kForeground) {
        row.push_back(stat(cb, cls));
        row.push_back(stat(cs, cls));
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

Table loss_functions_table(const ReportBundle& b) {
  Table t;
  t.header = {"arch", "loss"};
  for (int cls : kForeground) {
    t.header.push_back(std::string(class_label(cls)) + "_baseline");
    t.header.push_back(std::string(class_label(cls)) + "_semi");
  }
  for (Arch arch : {Arch::UNet, Arch::UNetPP}) {
    for (SupLoss loss : {SupLoss::DL, SupLoss::CE}) {
      Query semi{Method::SemiSL, arch, b.base.train.degrade_mode, loss, b.base.labeled_subjects_used,
                 b.base.view};
      Query base = semi;
      base.method = Method::Baseline;
      const CellOutcome* cm = find(b, semi);
      const CellOutcome* cb = find_baseline(b, base);
      if (!cm && !cb) continue;
      std::vector<std::string> row{to_string(arch), to_string(loss)};
      for (int cls : kForeground) {
        row.push_back(stat(cb, cls));
        row.push_back(stat(cm, cls));
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

std::vector<int> labeled_counts_present(const ReportBundle& b) {
  std::vector<int> counts;
  for (const auto& c : b.cells) {
    if (c.spec.view != b.base.view || c.spec.arch != b.base.arch) continue;
    int n = c.spec.labeled_subjects_used;
    if (std::find(counts.begin(), counts.end(), n) == counts.end()) counts.push_back(n);
  }
  std::sort(counts.begin(), counts.end(), [](int a, int x) {
    if ((a < 0) != (x < 0)) return x < 0;  // "all" (-1) sorts last
    return a < x;
  });
  return counts;
}

Table method_table(const std::string& row_name,
                   const std::function<std::vector<std::vector<std::string>>(void)>& make_rows) {
  Table t;
  t.header = {row_name};
  for (int cls : kForeground)
    for (const char* m : {"baseline", "self", "semi"})
      t.header.push_back(std::string(class_label(cls)) + "_" + m);
  t.rows = make_rows();
  return t;
}

std::vector<std::string> three_method_row(const ReportBundle& b, std::string label, int labeled,
                                          ViewFilter view) {
  Query q{Method::Baseline, b.base.arch, b.base.train.degrade_mode, b.base.train.sup_loss, labeled, view};
  const CellOutcome* cb = find_baseline(b, q);
  q.method = Method::SelfSL;
  const CellOutcome* cs = find(b, q);
  q.method = Method::SemiSL;
  const CellOutcome* cm = find(b, q);
  if (!cb && !cs && !cm) return {};
  std::vector<std::string> row{std::move(label)};
  for (int cls : kForeground) {
    row.push_back(stat(cb, cls));
    row.push_back(stat(cs, cls));
    row.push_back(stat(cm, cls));
  }
  return row;
}

Table labeled_counts_table(const ReportBundle& b) {
  return method_table("labeled_subjects", [&] {
    std::vector<std::vector<std::string>> rows;
    for (int n : labeled_counts_present(b)) {
      auto row = three_method_row(b, n < 0 ? "all" : std::to_string(n), n, b.base.view);
      if (!row.empty()) rows.push_back(std::move(row));
    }
    return rows;
  });
}

Table view_filters_table(const ReportBundle& b) {
  return method_table("training_views", [&] {
    std::vector<std::vector<std::string>> rows;
    for (ViewFilter v : {ViewFilter::Coronal, ViewFilter::Sagittal, ViewFilter::Axial,
                         ViewFilter::PartialThird, ViewFilter::All}) {
      auto row = three_method_row(b, to_string(v), b.base.labeled_subjects_used, v);
      if (!row.empty()) rows.push_back(std::move(row));
    }
    return rows;
  });
}

double vec_mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double vec_sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double m = vec_mean(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string per_view_stat(const CellOutcome* c, const std::string& test_view, int cls) {
  if (!c) return "-";
  std::vector<double> means, stds;
  for (const auto& r : c->runs) {
    auto it = r.per_view.find(test_view);
    if (it == r.per_view.end() || it->second.empty()) continue;
    std::vector<double> per_subject;
    for (const auto& [subject, per_class] : it->second)
      per_subject.push_back(per_class[static_cast<size_t>(cls)]);
    means.push_back(vec_mean(per_subject));
    stds.push_back(vec_sample_std(per_subject));
  }
  if (means.empty()) return "-";
  return format_dsc(median(means), median(stds));
}

Table view_transfer_table(const ReportBundle& b) {
  Table t;
  t.header = {"trained_on"};
  const char* test_views[] = {"axial", "coronal", "sagittal"};
  for (int cls : kForeground)
    for (const char* v : test_views) t.header.push_back(std::string(class_label(cls)) + "_" + v);
  for (ViewFilter v : {ViewFilter::Coronal, ViewFilter::Sagittal, ViewFilter::Axial}) {
    Query q{Method::SemiSL, b.base.arch, b.base.train.degrade_mode, b.base.train.sup_loss,
            b.base.labeled_subjects_used, v};
    const CellOutcome* c = find(b, q);
    if (!c) continue;
    std::vector<std::string> row{to_string(v)};
    for (int cls : kForeground)
      for (const char* tv : test_views) row.push_back(per_view_stat(c, tv, cls));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_cells_csv(const ReportBundle& b, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "cell,method,arch,mode,loss,labeled_subjects,view,class,median_dsc_mean,median_dsc_std,"
         "median_foreground,seeds_ok,seeds_failed\n";
  for (const auto& c : b.cells) {
    for (int cls : kForeground) {
      out << c.spec.cell_key() << "," << to_string(c.spec.method) << "," << to_string(c.spec.arch) << ","
          << to_string(c.spec.train.degrade_mode) << "," << to_string(c.spec.train.sup_loss) << ","
          << (c.spec.labeled_subjects_used < 0 ? std::string("all")
                                               : std::to_string(c.spec.labeled_subjects_used))
          << "," << to_string(c.spec.view) << "," << class_label(cls) << ",";
      if (c.runs.empty()) {
        out << "-,-,-";
      } else {
        out << std::fixed << std::setprecision(6)
            << c.median_mean_per_class[static_cast<size_t>(cls)] << ","
            << c.median_std_per_class[static_cast<size_t>(cls)] << "," << c.median_foreground;
      }
      out << "," << c.ok_seeds.size() << "," << c.failed_seeds.size() << "\n";
    }
  }
}

struct SeriesPoint {
  double x, y;
};

void write_svg(const ReportBundle& b, const std::filesystem::path& path) {
  struct Series {
    const char* name;
    const char* color;
    Method method;
    std::vector<SeriesPoint> pts;
  };
  Series series[] = {{"baseline", "#1f77b4", Method::Baseline, {}},
                     {"self_sl", "#ff7f0e", Method::SelfSL, {}},
                     {"semi_sl", "#2ca02c", Method::SemiSL, {}}};
  std::vector<int> counts = labeled_counts_present(b);
  double xmin = 1e30, xmax = -1e30;
  for (int n : counts) {
    if (n < 0) continue;  // only explicit counts are plottable
    for (auto& s : series) {
      Query q{s.method, b.base.arch, b.base.train.degrade_mode, b.base.train.sup_loss, n, b.base.view};
      const CellOutcome* c = s.method == Method::Baseline ? find_baseline(b, q) : find(b, q);
      if (!c) continue;
      s.pts.push_back({static_cast<double>(n), c->median_foreground});
      xmin = std::min(xmin, static_cast<double>(n));
      xmax = std::max(xmax, static_cast<double>(n));
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;

  const double W = 640, H = 420, ml = 64, mr = 20, mt = 20, mb = 52;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double y) { return mt + (1.0 - y) * ph; };  // DSC axis fixed to [0, 1]

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(1);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double y = i / 5.0;
    svg << "<line x1=\"" << ml << "\" y1=\"" << Y(y) << "\" x2=\"" << ml + pw << "\" y2=\"" << Y(y)
        << "\" stroke=\"#dddddd\"/>\n";
    svg << "<text x=\"" << ml - 8 << "\" y=\"" << Y(y) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << std::setprecision(1)
        << y << "</text>\n";
  }
  for (int n : counts) {
    if (n < 0) continue;
    svg << "<line x1=\"" << X(n) << "\" y1=\"" << mt + ph << "\" x2=\"" << X(n) << "\" y2=\""
        << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << X(n) << "\" y=\"" << mt + ph + 20
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << n << "</text>\n";
  }
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">labeled training "
         "subjects</text>\n";
  svg << "<text x=\"16\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 "
         "16 "
      << mt + ph / 2 << ")\">foreground DSC</text>\n";

  for (const auto& s : series) {
    if (s.pts.empty()) continue;
    svg << "<polyline id=\"series-" << s.name << "\" fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : s.pts) svg << X(p.x) << "," << std::setprecision(2) << Y(p.y) << " ";
    svg << "\"/>\n";
    for (const auto& p : s.pts)
      svg << "<circle cx=\"" << X(p.x) << "\" cy=\"" << std::setprecision(2) << Y(p.y)
          << "\" r=\"3.5\" fill=\"" << s.color << "\"/>\n";
  }
  double lx = ml + 14, ly = mt + 14;
  for (const auto& s : series) {
    svg << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 26 << "\" y2=\"" << ly
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << lx + 32 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.name << "</text>\n";
    ly += 18;
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << svg.str();
}

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void write_reports(const ReportBundle& bundle, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_table(restoration_tasks_table(bundle), out_dir / "restoration_tasks");
  write_table(loss_functions_table(bundle), out_dir / "loss_functions");
  write_table(labeled_counts_table(bundle), out_dir / "labeled_counts");
  write_table(view_filters_table(bundle), out_dir / "view_filters");
  write_table(view_transfer_table(bundle), out_dir / "view_transfer");
  write_cells_csv(bundle, out_dir / "cells.csv");
  write_svg(bundle, out_dir / "dsc_vs_labeled.svg");

  json cells = json::array();
  for (const auto& c : bundle.cells) cells.push_back(c.to_json());
  json summary{{"generated_at", utc_now()},
               {"matrix", bundle.matrix},
               {"seeds", bundle.seeds},
               {"any_failure", bundle.any_failure},
               {"cells", cells}};
  save_json(out_dir / "summary.json", summary);
}

}  // namespace semiseg
