#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "usod/common.hpp"
#include "usod/image_io.hpp"
#include "usod/metrics.hpp"

using namespace usod;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("usod_metrics_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor plane(int64_t h, int64_t w, const std::vector<double>& vals) {
  return Tensor({h, w}, vals);
}

// Independent F-measure reference: explicit confusion matrix over the
// adaptive threshold, written without reusing any library helper.
double f_beta_reference(const Tensor& pred, const Tensor& gt, double beta2) {
  double mean = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) mean += pred[i];
  mean /= static_cast<double>(pred.numel());
  double thr = 2.0 * mean < 1.0 ? 2.0 * mean : 1.0;
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    bool p = pred[i] >= thr;
    bool g = gt[i] >= 0.5;
    if (p && g)
      ++tp;
    else if (p)
      ++fp;
    else if (g)
      ++fn;
    else
      ++tn;
  }
  (void)tn;
  if (tp == 0) return 0.0;
  double prec = double(tp) / double(tp + fp);
  double rec = double(tp) / double(tp + fn);
  if (beta2 * prec + rec <= 0.0) return 0.0;
  return (1.0 + beta2) * prec * rec / (beta2 * prec + rec);
}

void save_binary_mask(const fs::path& p, int64_t h, int64_t w,
                      const std::vector<double>& vals) {
  save_mask_png(p.string(), Tensor({h, w}, vals));
}

}  // namespace

TEST_CASE("perfect prediction scores (1, 1, 0)") {
  Tensor gt = plane(4, 4, {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  CHECK(f_beta(gt, gt) == 1.0);
  CHECK(e_measure(gt, gt) == 1.0);
  CHECK(mae(gt, gt) == 0.0);
}

TEST_CASE("F-measure hand cases pin the adaptive threshold") {
  // Two predicted pixels, one correct: P = R = 1/2, and F collapses to the
  // shared value whatever beta is.
  std::vector<double> pv(16, 0.0), gv(16, 0.0);
  pv[0] = pv[1] = 1.0;
  gv[0] = gv[2] = 1.0;
  double f = f_beta(plane(4, 4, pv), plane(4, 4, gv));
  CHECK(f == doctest::Approx(0.5).epsilon(1e-12));

  // Asymmetric case (P = 1/3, R = 1) separates the beta weighting.
  std::vector<double> pv2(16, 0.0), gv2(16, 0.0);
  pv2[0] = pv2[1] = pv2[2] = 1.0;  // mean 3/16 -> thr 0.375
  gv2[0] = 1.0;
  double prec_weighted = f_beta(plane(4, 4, pv2), plane(4, 4, gv2));
  CHECK(prec_weighted == doctest::Approx(1.3 / 3.3).epsilon(1e-12));
  double f1 = f_beta(plane(4, 4, pv2), plane(4, 4, gv2), 1.0);
  CHECK(f1 == doctest::Approx(0.5).epsilon(1e-12));

  // The threshold is inclusive: values exactly at 2*mean count as positive.
  Tensor p2 = plane(2, 2, {0.5, 0.5, 0.0, 0.0});  // mean 0.25 -> thr 0.5
  Tensor g2 = plane(2, 2, {1.0, 1.0, 0.0, 0.0});
  CHECK(f_beta(p2, g2) == 1.0);

  // The threshold caps at 1, so only exact ones stay positive on a bright map.
  Tensor p3 = plane(2, 2, {1.0, 0.9, 0.9, 0.9});  // 2*mean = 1.85 -> thr 1
  Tensor g3 = plane(2, 2, {1.0, 0.0, 0.0, 0.0});
  CHECK(f_beta(p3, g3) == 1.0);
  Tensor p4 = plane(2, 2, {0.9, 0.9, 0.9, 0.9});  // nothing reaches thr 1
  CHECK(f_beta(p4, g3) == 0.0);

  // No predicted positives or no true positives: zero by convention.
  Tensor empty = plane(2, 2, {0.2, 0.2, 0.2, 0.2});  // thr 0.4, none pass
  CHECK(f_beta(empty, g3) == 0.0);
}

TEST_CASE("F-measure agrees with a brute-force confusion matrix on random maps") {
  Rng rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor pred({16, 16});
    Tensor gt({16, 16});
    for (int64_t i = 0; i < 256; ++i) {
      pred[i] = rng.uniform();
      gt[i] = rng.bernoulli(0.5 * rng.uniform() + 0.1) ? 1.0 : 0.0;
    }
    double got = f_beta(pred, gt);
    double want = f_beta_reference(pred, gt, 0.3);
    CHECK(std::abs(got - want) <= 1e-9);
  }
}

TEST_CASE("mean absolute error is the plain per-pixel average") {
  Tensor a = plane(2, 2, {0.0, 0.5, 1.0, 0.25});
  Tensor b = plane(2, 2, {1.0, 0.5, 0.0, 0.75});
  CHECK(mae(a, b) == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(mae(b, a) == mae(a, b));
}

TEST_CASE("alignment measure: anti-correlated, constant, and degenerate cases") {
  // Balanced ground truth with the exact complement prediction: E = 0.
  Tensor gt = plane(2, 2, {1.0, 1.0, 0.0, 0.0});
  Tensor anti = plane(2, 2, {0.0, 0.0, 1.0, 1.0});
  CHECK(e_measure(anti, gt) == 0.0);

  // A constant prediction has no contrast: phi = 1/4 everywhere.
  Tensor flat = plane(2, 2, {0.3, 0.3, 0.3, 0.3});
  CHECK(e_measure(flat, gt) == doctest::Approx(0.25).epsilon(1e-12));
  Tensor bright = plane(2, 2, {1.0, 1.0, 1.0, 1.0});
  CHECK(e_measure(bright, gt) == doctest::Approx(0.25).epsilon(1e-12));

  // All-zero ground truth scores the background mass of the binarized map.
  Tensor zero_gt = plane(2, 2, {0.0, 0.0, 0.0, 0.0});
  Tensor p = plane(2, 2, {0.8, 0.2, 0.2, 0.2});  // thr 0.7 -> one positive
  CHECK(e_measure(p, zero_gt) == doctest::Approx(0.75).epsilon(1e-12));

  // All-one ground truth scores the foreground mass.
  Tensor one_gt = plane(2, 2, {1.0, 1.0, 1.0, 1.0});
  CHECK(e_measure(p, one_gt) == doctest::Approx(0.25).epsilon(1e-12));

  // Perfect on a mixed map: 1.
  CHECK(e_measure(gt, gt) == 1.0);
}

TEST_CASE("metrics are stable under spatial permutation and binary rescale") {
  Rng rng(777);
  Tensor pred({8, 8});
  Tensor gt({8, 8});
  for (int64_t i = 0; i < 64; ++i) {
    pred[i] = rng.uniform();
    gt[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
  }
  // Reverse both maps: every metric is permutation-invariant.
  Tensor rp({8, 8}), rg({8, 8});
  for (int64_t i = 0; i < 64; ++i) {
    rp[i] = pred[63 - i];
    rg[i] = gt[63 - i];
  }
  CHECK(f_beta(rp, rg) == doctest::Approx(f_beta(pred, gt)).epsilon(1e-12));
  CHECK(e_measure(rp, rg) == doctest::Approx(e_measure(pred, gt)).epsilon(1e-12));
  CHECK(mae(rp, rg) == doctest::Approx(mae(pred, gt)).epsilon(1e-12));

  // Halving the prediction halves the adaptive threshold bit-for-bit, so the
  // binarization — and with it F — cannot move.
  Tensor half({8, 8});
  for (int64_t i = 0; i < 64; ++i) half[i] = 0.5 * pred[i];
  CHECK(f_beta(half, gt) == f_beta(pred, gt));
}

TEST_CASE("metric inputs must be same-shape and non-empty") {
  Tensor a({2, 2}, 0.5);
  Tensor b({2, 3}, 0.5);
  CHECK_THROWS_AS(f_beta(a, b), ContractError);
  CHECK_THROWS_AS(mae(a, b), ContractError);
  CHECK_THROWS_AS(e_measure(a, b), ContractError);
  Tensor e({0, 4});
  CHECK_THROWS_AS(f_beta(e, e), ContractError);
}

TEST_CASE("directory evaluation: flat layout, averaging, and error listing") {
  fs::path pred = temp_dir("flat_pred");
  fs::path gt = temp_dir("flat_gt");
  // Image a: perfect. Image b: predicted and true regions are disjoint.
  std::vector<double> mask_a = {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  std::vector<double> pred_b = {1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  std::vector<double> gt_b = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1};
  save_binary_mask(pred / "a.png", 4, 4, mask_a);
  save_binary_mask(gt / "a.png", 4, 4, mask_a);
  save_binary_mask(pred / "b.png", 4, 4, pred_b);
  save_binary_mask(gt / "b.png", 4, 4, gt_b);
  // Unmatched files on both sides land in the error list, not in the rows.
  save_binary_mask(pred / "orphan_pred.png", 4, 4, mask_a);
  save_binary_mask(gt / "orphan_gt.png", 4, 4, mask_a);

  EvalReport rep = evaluate_dataset(pred.string(), gt.string());
  REQUIRE(rep.rows.size() == 1);
  const EvalRow& row = rep.rows[0];
  CHECK(row.dataset == ".");
  CHECK(row.image_count == 2);
  // Image a scores (1, 1, 0); image b scores f = 0.
  CHECK(row.f_beta == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(row.mae == doctest::Approx((0.0 + 4.0 / 16.0) / 2.0).epsilon(1e-12));
  REQUIRE(rep.errors.size() == 2);
  CHECK(rep.errors[0].find("orphan_pred.png") != std::string::npos);
  CHECK(rep.errors[0].find("no matching ground truth") != std::string::npos);
  CHECK(rep.errors[1].find("orphan_gt.png") != std::string::npos);

  // Determinism: scoring the same trees twice gives identical tables.
  EvalReport rep2 = evaluate_dataset(pred.string(), gt.string());
  CHECK(report_table(rep) == report_table(rep2));
}

TEST_CASE("directory evaluation resizes predictions to the ground-truth grid") {
  fs::path pred = temp_dir("resize_pred");
  fs::path gt = temp_dir("resize_gt");
  save_mask_png((pred / "a.png").string(), Tensor({8, 8}, 1.0));
  save_mask_png((gt / "a.png").string(), Tensor({16, 16}, 1.0));
  EvalReport rep = evaluate_dataset(pred.string(), gt.string());
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].f_beta == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.rows[0].mae == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("directory evaluation walks shared dataset subdirectories") {
  fs::path pred = temp_dir("sub_pred");
  fs::path gt = temp_dir("sub_gt");
  std::vector<double> m = {1, 0, 0, 1};
  for (const char* ds : {"setA", "setB"}) {
    save_binary_mask(pred / ds / "x.png", 2, 2, m);
    save_binary_mask(gt / ds / "x.png", 2, 2, m);
  }
  // A subdirectory present on only one side is skipped silently.
  save_binary_mask(pred / "setC" / "x.png", 2, 2, m);

  EvalReport rep = evaluate_dataset(pred.string(), gt.string());
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].dataset == "setA");
  CHECK(rep.rows[1].dataset == "setB");
  for (const auto& row : rep.rows) {
    CHECK(row.image_count == 1);
    CHECK(row.f_beta == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("directory evaluation fails hard with nothing to score") {
  fs::path pred = temp_dir("empty_pred");
  fs::path gt = temp_dir("empty_gt");
  // Images exist on both sides but no filename matches.
  save_binary_mask(pred / "a.png", 2, 2, {1, 0, 0, 1});
  save_binary_mask(gt / "b.png", 2, 2, {1, 0, 0, 1});
  CHECK_THROWS_AS(evaluate_dataset(pred.string(), gt.string()), IoError);

  // No images and no shared subdirectories at all.
  fs::path bare = temp_dir("bare_pred");
  fs::path bare_gt = temp_dir("bare_gt");
  CHECK_THROWS_AS(evaluate_dataset(bare.string(), bare_gt.string()), IoError);
}

TEST_CASE("report table and file writer use the documented layout") {
  EvalReport rep;
  rep.rows.push_back({"val", 3, 0.5, 0.25, 0.125});
  rep.rows.push_back({"test", 10, 1.0, 1.0, 0.0});
  std::string want =
      "dataset\timages\tf_beta\te_measure\tmae\n"
      "val\t3\t0.5000\t0.2500\t0.1250\n"
      "test\t10\t1.0000\t1.0000\t0.0000\n";
  CHECK(report_table(rep) == want);

  rep.config_hash = "deadbeef00000000";
  rep.errors.push_back("x.png: no matching prediction");
  fs::path dir = temp_dir("report");
  fs::path out = dir / "nested" / "report.txt";
  write_report(rep, out.string());
  std::ifstream is(out);
  REQUIRE(is.good());
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(text.find(want) == 0);
  CHECK(text.find("config_hash\tdeadbeef00000000") != std::string::npos);
  CHECK(text.find("errors:") != std::string::npos);
  CHECK(text.find("x.png: no matching prediction") != std::string::npos);
}
