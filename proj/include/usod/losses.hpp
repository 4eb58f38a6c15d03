#pragma once

#include <string>

#include "usod/autodiff.hpp"
#include "usod/core_types.hpp"

namespace usod {

// Eq.-style loss weights with the single warm-up switch: (alpha, beta1,
// beta2) = (1, 0, 0) during warm-up epochs, then the post values.
struct LossWeights {
  double alpha_warm = 1.0, beta1_warm = 0.0, beta2_warm = 0.0;
  double alpha_post = 0.1, beta1_post = 1.0, beta2_post = 0.1;
  int64_t warmup_epochs = 1;

  struct Resolved {
    double alpha, beta1, beta2;
  };
  // epoch is 0-based.
  Resolved resolve(int64_t epoch) const;
  void validate() const;
};

struct LscParams {
  int kernel = 5;
  double sigma_color = 0.1;
  double sigma_space = 3.0;
};

// Which pseudo-label feeds which term (the loss-combination ablation grid).
// Rows: A1 pbce(loc)+lsc, A2 pbce(loc)+iou(loc), A3 pbce(loc)+iou(loc)+lsc,
// B1 pbce(det)+lsc, B2 pbce(det)+iou(det), B3 pbce(det)+iou(det)+lsc,
// C1 pbce(det)+iou(loc)+lsc, C2 pbce(loc)+iou(det)+lsc (default).
struct LossWiring {
  LabelKind pbce_target = LabelKind::location;
  LabelKind iou_target = LabelKind::detailed;
  bool use_lsc = true;
  bool use_iou = true;
  std::string row = "C2";

  static LossWiring from_row(const std::string& row);
};

// Cross-entropy over certain (foreground/background) pixels only, averaged by
// the certain-pixel count across the whole batch; ignore pixels contribute
// exactly zero value and gradient. Zero certain pixels -> constant 0 with a
// warning.
ad::Var partial_bce(const ad::Var& prediction, const CertaintyMask& mask, double epsilon = 1e-7);

// Local structure consistency: sum_i sum_{j in k x k window} |M_i - M_j| *
// f(i, j), normalized per image by pixel count, then averaged over the batch.
// f is the color/position Gaussian affinity of the image (constant w.r.t. M).
ad::Var lsc_loss(const ad::Var& prediction, const Tensor& images, const LscParams& params = {});

// Soft IOU: per image 1 - sum(M*G) / sum(M + G - M*G), mean over batch; an
// all-zero union yields 0 for that image.
ad::Var iou_loss(const ad::Var& prediction, const Tensor& target);

// alpha * L_sosl + beta1 * (L_pbce + L_lsc) + beta2 * L_iou with weights
// resolved for the epoch. Zero-weight terms are left out of the graph
// entirely, so their parameters receive no gradient. Undefined component Vars
// are treated as absent (their weight must be zero or the wiring omits them).
ad::Var total_loss(const ad::Var& sosl, const ad::Var& pbce, const ad::Var& lsc,
                   const ad::Var& iou, const LossWeights::Resolved& w);

}  // namespace usod
