#pragma once

// Report emitters for an ablation bundle. Each table is written twice,
// as a CSV and as an aligned text rendering of the same grid:
//   restoration_tasks  - architecture x restoration task, baseline vs
//                        self-supervised
//   loss_functions     - architecture x supervised loss, baseline vs
//                        semi-supervised
//   labeled_counts     - labeled-subject count x method
//   view_filters       - training-view filter x method
//   view_transfer      - single-view-trained models scored per test view
// plus cells.csv (every cell, numeric), dsc_vs_labeled.svg (foreground
// DSC against labeled-subject count, one series per method) and
// summary.json (the whole bundle; its only timestamp is generated_at).
// Cells the matrix did not cover render as "-".

#include "semiseg/harness.hpp"

namespace semiseg {

void write_reports(const ReportBundle& bundle, const std::filesystem::path& out_dir);

// "0.812 +/- 0.034" with 3 decimals; used by every table cell
std::string format_dsc(double mean, double stddev);

}  // namespace semiseg
