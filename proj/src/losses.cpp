#include "usod/losses.hpp"

#include <cmath>
#include <vector>

namespace usod {

LossWeights::Resolved LossWeights::resolve(int64_t epoch) const {
  if (epoch < warmup_epochs) return {alpha_warm, beta1_warm, beta2_warm};
  return {alpha_post, beta1_post, beta2_post};
}

void LossWeights::validate() const {
  for (double v : {alpha_warm, beta1_warm, beta2_warm, alpha_post, beta1_post, beta2_post})
    if (v < 0.0) throw ConfigError("loss weights must be non-negative");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
}

LossWiring LossWiring::from_row(const std::string& row) {
  LossWiring w;
  w.row = row;
  if (row == "A1") {
    w = {LabelKind::location, LabelKind::location, true, false, row};
  } else if (row == "A2") {
    w = {LabelKind::location, LabelKind::location, false, true, row};
  } else if (row == "A3") {
    w = {LabelKind::location, LabelKind::location, true, true, row};
  } else if (row == "B1") {
    w = {LabelKind::detailed, LabelKind::detailed, true, false, row};
  } else if (row == "B2") {
    w = {LabelKind::detailed, LabelKind::detailed, false, true, row};
  } else if (row == "B3") {
    w = {LabelKind::detailed, LabelKind::detailed, true, true, row};
  } else if (row == "C1") {
    w = {LabelKind::detailed, LabelKind::location, true, true, row};
  } else if (row == "C2") {
    w = {LabelKind::location, LabelKind::detailed, true, true, row};
  } else {
    throw ConfigError("unknown loss wiring row: '" + row + "' (expected A1..A3, B1..B3, C1, C2)");
  }
  return w;
}

ad::Var partial_bce(const ad::Var& prediction, const CertaintyMask& mask, double epsilon) {
  const Tensor& mv = mask.data;
  if (!prediction.value().same_shape(mv))
    throw ContractError("partial_bce: prediction " + prediction.value().shape_str() +
                        " vs mask " + mv.shape_str());
  std::vector<int64_t> fg_idx, bg_idx;
  for (int64_t i = 0; i < mv.numel(); ++i) {
    if (mv[i] == kForeground)
      fg_idx.push_back(i);
    else if (mv[i] == kBackground)
      bg_idx.push_back(i);
    else if (mv[i] != kIgnore)
      throw ContractError("partial_bce: mask holds a non-ternary value");
  }
  int64_t certain = static_cast<int64_t>(fg_idx.size() + bg_idx.size());
  if (certain == 0) {
    log_warn("partial_bce: no certain pixels, returning 0 (degenerate label)");
    return ad::constant(Tensor::scalar(0.0));
  }
  double inv = -1.0 / static_cast<double>(certain);
  std::vector<ad::Var> parts;
  std::vector<double> weights;
  if (!fg_idx.empty()) {
    parts.push_back(
        ad::sum_all(ad::vlog(ad::clamp(ad::gather(prediction, std::move(fg_idx)), epsilon, 1.0))));
    weights.push_back(inv);
  }
  if (!bg_idx.empty()) {
    parts.push_back(ad::sum_all(
        ad::vlog(ad::clamp(ad::gather(ad::one_minus(prediction), std::move(bg_idx)), epsilon, 1.0))));
    weights.push_back(inv);
  }
  return ad::affine_sum(parts, weights);
}

ad::Var lsc_loss(const ad::Var& prediction, const Tensor& images, const LscParams& params) {
  const Tensor& pv = prediction.value();
  if (pv.ndim() != 4 || pv.dim(1) != 1)
    throw ContractError("lsc_loss: prediction must be Nx1xHxW, got " + pv.shape_str());
  if (images.ndim() != 4 || images.dim(0) != pv.dim(0) || images.dim(2) != pv.dim(2) ||
      images.dim(3) != pv.dim(3))
    throw ContractError("lsc_loss: image grid mismatch " + images.shape_str() + " vs " +
                        pv.shape_str());
  if (params.kernel < 1 || params.kernel % 2 == 0)
    throw ConfigError("lsc_loss: kernel must be odd and >= 1");
  if (params.sigma_color <= 0.0 || params.sigma_space <= 0.0)
    throw ConfigError("lsc_loss: sigmas must be positive");

  int64_t N = pv.dim(0), H = pv.dim(2), W = pv.dim(3);
  int64_t C = images.dim(1), plane = H * W;
  int r = params.kernel / 2;
  double inv_2sc = 1.0 / (2.0 * params.sigma_color * params.sigma_color);
  double inv_2ss = 1.0 / (2.0 * params.sigma_space * params.sigma_space);

  // Affinities depend only on the image; precompute one row of window
  // weights per pixel: layout [pixel][window-slot].
  int64_t win = static_cast<int64_t>(params.kernel) * params.kernel;
  std::vector<double> affinity(static_cast<size_t>(N * plane * win), 0.0);
  for (int64_t n = 0; n < N; ++n) {
    const double* img = images.data() + n * C * plane;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        int64_t i = y * W + x;
        double* row = affinity.data() + (n * plane + i) * win;
        int64_t slot = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++slot) {
            if (dy == 0 && dx == 0) continue;
            int64_t ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            double color_sq = 0.0;
            for (int64_t c = 0; c < C; ++c) {
              double d = img[c * plane + i] - img[c * plane + ny * W + nx];
              color_sq += d * d;
            }
            double pos_sq = static_cast<double>(dy * dy + dx * dx);
            row[slot] = std::exp(-color_sq * inv_2sc - pos_sq * inv_2ss);
          }
      }
  }

  auto evaluate = [N, H, W, plane, win, r](const Tensor& m, const std::vector<double>& aff,
                                           Tensor* grad_out) {
    double total = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const double* mp = m.data() + n * plane;
      double image_sum = 0.0;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          int64_t i = y * W + x;
          const double* row = aff.data() + (n * plane + i) * win;
          int64_t slot = 0;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx, ++slot) {
              double f = row[slot];
              if (f == 0.0) continue;
              int64_t j = (y + dy) * W + x + dx;
              double diff = mp[i] - mp[j];
              image_sum += std::abs(diff) * f;
              if (grad_out) {
                double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                double g = s * f / static_cast<double>(N * plane);
                (*grad_out)[n * plane + i] += g;
                (*grad_out)[n * plane + j] -= g;
              }
            }
        }
      total += image_sum / static_cast<double>(plane);
    }
    return total / static_cast<double>(N);
  };

  double value = evaluate(pv, affinity, nullptr);
  Tensor pcopy = pv;
  return ad::make_op(Tensor::scalar(value), {prediction},
                     [evaluate, pcopy, affinity](ad::Node& node) {
                       if (!node.inputs[0]->requires_grad) return;
                       Tensor grad(pcopy.shape());
                       evaluate(pcopy, affinity, &grad);
                       Tensor& gx = node.inputs[0]->ensure_grad();
                       for (int64_t i = 0; i < gx.numel(); ++i)
                         gx[i] += grad[i] * node.grad[0];
                     });
}

ad::Var iou_loss(const ad::Var& prediction, const Tensor& target) {
  const Tensor& pv = prediction.value();
  if (!pv.same_shape(target))
    throw ContractError("iou_loss: prediction " + pv.shape_str() + " vs target " +
                        target.shape_str());
  if (pv.ndim() != 4 || pv.dim(1) != 1)
    throw ContractError("iou_loss expects Nx1xHxW maps, got " + pv.shape_str());
  int64_t N = pv.dim(0), plane = pv.dim(2) * pv.dim(3);

  std::vector<double> inter(static_cast<size_t>(N)), uni(static_cast<size_t>(N));
  double value = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const double* m = pv.data() + n * plane;
    const double* g = target.data() + n * plane;
    double I = 0.0, U = 0.0;
    for (int64_t i = 0; i < plane; ++i) {
      double prod = m[i] * g[i];
      I += prod;
      U += m[i] + g[i] - prod;
    }
    inter[static_cast<size_t>(n)] = I;
    uni[static_cast<size_t>(n)] = U;
    value += U > 0.0 ? 1.0 - I / U : 0.0;
  }
  value /= static_cast<double>(N);

  Tensor pcopy = pv, tcopy = target;
  return ad::make_op(
      Tensor::scalar(value), {prediction}, [pcopy, tcopy, inter, uni, N, plane](ad::Node& node) {
        if (!node.inputs[0]->requires_grad) return;
        Tensor& gx = node.inputs[0]->ensure_grad();
        double go = node.grad[0] / static_cast<double>(N);
        for (int64_t n = 0; n < N; ++n) {
          double U = uni[static_cast<size_t>(n)];
          if (U <= 0.0) continue;
          double I = inter[static_cast<size_t>(n)];
          const double* g = tcopy.data() + n * plane;
          for (int64_t i = 0; i < plane; ++i) {
            // d(1 - I/U)/dm_i with dI/dm_i = g_i, dU/dm_i = 1 - g_i.
            double d = -(g[i] * U - I * (1.0 - g[i])) / (U * U);
            gx[n * plane + i] += go * d;
          }
        }
      });
}

ad::Var total_loss(const ad::Var& sosl, const ad::Var& pbce, const ad::Var& lsc,
                   const ad::Var& iou, const LossWeights::Resolved& w) {
  std::vector<ad::Var> parts;
  std::vector<double> weights;
  auto push = [&parts, &weights](const ad::Var& v, double weight, const char* name) {
    if (!v.defined() || weight == 0.0) return;
    if (v.scalar() < 0.0)
      throw ContractError(std::string("total_loss: negative component ") + name);
    parts.push_back(v);
    weights.push_back(weight);
  };
  push(sosl, w.alpha, "sosl");
  push(pbce, w.beta1, "pbce");
  push(lsc, w.beta1, "lsc");
  push(iou, w.beta2, "iou");
  if (parts.empty()) return ad::constant(Tensor::scalar(0.0));
  return ad::affine_sum(parts, weights);
}

}  // namespace usod
