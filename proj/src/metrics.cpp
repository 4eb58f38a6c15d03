#include "usod/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "usod/autodiff.hpp"
#include "usod/common.hpp"
#include "usod/image_io.hpp"

namespace fs = std::filesystem;

namespace usod {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt))
    throw ContractError("metric: size mismatch " + pred.shape_str() + " vs " + gt.shape_str());
  if (pred.numel() == 0) throw ContractError("metric: empty maps");
}

double adaptive_threshold(const Tensor& pred) { return std::min(2.0 * pred.mean(), 1.0); }

}  // namespace

double f_beta(const Tensor& pred, const Tensor& gt, double beta2) {
  check_pair(pred, gt);
  double thr = adaptive_threshold(pred);
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    bool p = pred[i] >= thr;
    bool g = gt[i] >= 0.5;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp == 0) return 0.0;
  double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  double denom = beta2 * precision + recall;
  return denom > 0.0 ? (1.0 + beta2) * precision * recall / denom : 0.0;
}

double mae(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt);
  double s = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.numel());
}

double e_measure(const Tensor& pred, const Tensor& gt) {
  check_pair(pred, gt);
  int64_t n = pred.numel();
  double thr = adaptive_threshold(pred);
  std::vector<double> pb(static_cast<size_t>(n)), gb(static_cast<size_t>(n));
  int64_t gt_fg = 0;
  for (int64_t i = 0; i < n; ++i) {
    pb[static_cast<size_t>(i)] = pred[i] >= thr ? 1.0 : 0.0;
    gb[static_cast<size_t>(i)] = gt[i] >= 0.5 ? 1.0 : 0.0;
    gt_fg += gb[static_cast<size_t>(i)] != 0.0;
  }
  double sum = 0.0;
  if (gt_fg == 0) {
    for (double v : pb) sum += 1.0 - v;
    return sum / static_cast<double>(n);
  }
  if (gt_fg == n) {
    for (double v : pb) sum += v;
    return sum / static_cast<double>(n);
  }
  double mean_p = 0.0, mean_g = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    mean_p += pb[static_cast<size_t>(i)];
    mean_g += gb[static_cast<size_t>(i)];
  }
  mean_p /= static_cast<double>(n);
  mean_g /= static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    double a = gb[static_cast<size_t>(i)] - mean_g;
    double b = pb[static_cast<size_t>(i)] - mean_p;
    double denom = a * a + b * b;
    // denom > 0 everywhere here: a is never 0 once gt has both classes.
    double align = 2.0 * a * b / denom;
    double phi = (1.0 + align) * (1.0 + align) / 4.0;
    sum += phi;
  }
  return sum / static_cast<double>(n);
}

namespace {

Tensor load_plane(const std::string& path) {
  Tensor t = load_mask(path);  // 1 x 1 x H x W
  return t.reshaped({t.dim(2), t.dim(3)});
}

EvalRow score_directory(const std::string& pred_dir, const std::string& gt_dir,
                        const std::string& dataset, std::vector<std::string>& errors) {
  auto preds = list_images(pred_dir);
  auto gts = list_images(gt_dir);
  std::vector<std::string> common;
  std::set_intersection(preds.begin(), preds.end(), gts.begin(), gts.end(),
                        std::back_inserter(common));
  for (const auto& name : preds)
    if (!std::binary_search(gts.begin(), gts.end(), name))
      errors.push_back(dataset + "/" + name + ": no matching ground truth");
  for (const auto& name : gts)
    if (!std::binary_search(preds.begin(), preds.end(), name))
      errors.push_back(dataset + "/" + name + ": no matching prediction");
  if (common.empty())
    throw IoError("no filename-matched prediction/ground-truth pairs under " + pred_dir);

  EvalRow row;
  row.dataset = dataset;
  for (const auto& name : common) {
    Tensor pred = load_plane((fs::path(pred_dir) / name).string());
    Tensor gt = load_plane((fs::path(gt_dir) / name).string());
    if (!pred.same_shape(gt)) {
      Tensor p4 = pred.reshaped({1, 1, pred.dim(0), pred.dim(1)});
      p4 = ad::resize_bilinear_tensor(p4, gt.dim(0), gt.dim(1));
      pred = p4.reshaped({gt.dim(0), gt.dim(1)});
    }
    row.f_beta += f_beta(pred, gt);
    row.e_measure += e_measure(pred, gt);
    row.mae += mae(pred, gt);
    ++row.image_count;
  }
  row.f_beta /= static_cast<double>(row.image_count);
  row.e_measure /= static_cast<double>(row.image_count);
  row.mae /= static_cast<double>(row.image_count);
  return row;
}

}  // namespace

EvalReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir) {
  EvalReport report;
  auto direct = list_images(pred_dir);
  if (!direct.empty()) {
    report.rows.push_back(score_directory(pred_dir, gt_dir, ".", report.errors));
    return report;
  }
  auto pred_sets = list_subdirs(pred_dir);
  auto gt_sets = list_subdirs(gt_dir);
  std::vector<std::string> common;
  std::set_intersection(pred_sets.begin(), pred_sets.end(), gt_sets.begin(), gt_sets.end(),
                        std::back_inserter(common));
  if (common.empty()) throw IoError("no images and no shared dataset subdirectories in " + pred_dir);
  for (const auto& ds : common)
    report.rows.push_back(score_directory((fs::path(pred_dir) / ds).string(),
                                          (fs::path(gt_dir) / ds).string(), ds, report.errors));
  return report;
}

std::string report_table(const EvalReport& report) {
  std::string out = "dataset\timages\tf_beta\te_measure\tmae\n";
  char line[256];
  for (const auto& row : report.rows) {
    std::snprintf(line, sizeof(line), "%s\t%lld\t%.4f\t%.4f\t%.4f\n", row.dataset.c_str(),
                  static_cast<long long>(row.image_count), row.f_beta, row.e_measure, row.mae);
    out += line;
  }
  return out;
}

void write_report(const EvalReport& report, const std::string& path) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write report: " + path);
  os << report_table(report);
  if (!report.config_hash.empty()) os << "config_hash\t" << report.config_hash << "\n";
  if (!report.errors.empty()) {
    os << "\nerrors:\n";
    for (const auto& e : report.errors) os << "  " << e << "\n";
  }
}

}  // namespace usod
