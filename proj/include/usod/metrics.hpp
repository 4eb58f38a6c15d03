#pragma once

#include <string>
#include <vector>

#include "usod/tensor.hpp"

namespace usod {

// Adaptive-threshold F-measure: binarize pred at min(2 * mean(pred), 1)
// (inclusive), then F = (1 + beta2) P R / (beta2 P + R); 0 on an empty
// denominator. gt is binarized at 0.5.
double f_beta(const Tensor& pred, const Tensor& gt, double beta2 = 0.3);

// Mean absolute per-pixel error.
double mae(const Tensor& pred, const Tensor& gt);

// Enhanced-alignment measure over the adaptively binarized prediction:
// align = 2 a b / (a^2 + b^2) on mean-centered maps, phi = (1 + align)^2 / 4,
// E = mean(phi). Degenerate ground truths follow the measure's source
// convention: all-zero gt scores mean(1 - pred_bin), all-one gt scores
// mean(pred_bin).
double e_measure(const Tensor& pred, const Tensor& gt);

struct EvalRow {
  std::string dataset;
  int64_t image_count = 0;
  double f_beta = 0.0;
  double e_measure = 0.0;
  double mae = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string config_hash;
  std::vector<std::string> errors;  // unmatched filenames, load failures
};

// Scores filename-matched PNG pairs. If pred_dir directly contains images it
// is treated as one dataset; otherwise each immediate subdirectory present in
// both trees becomes a dataset row. Predictions are bilinearly resized to the
// ground-truth resolution before scoring. An empty filename intersection is a
// hard error.
EvalReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir);

// Delimiter-separated table (TSV) of the report rows.
std::string report_table(const EvalReport& report);

// Writes the table plus an error section to a text file.
void write_report(const EvalReport& report, const std::string& path);

}  // namespace usod
