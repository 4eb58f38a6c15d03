#include "usod/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "usod/autodiff.hpp"
#include "usod/common.hpp"

namespace usod {

namespace {

constexpr int kNeighbors = 8;
constexpr int64_t kOffY[kNeighbors] = {-1, -1, -1, 0, 0, 1, 1, 1};
constexpr int64_t kOffX[kNeighbors] = {-1, 0, 1, -1, 1, -1, 0, 1};
constexpr double kSigmaFloor = 1e-6;

double color_distance(const double* img, int64_t C, int64_t plane, int64_t a, int64_t b) {
  double s = 0.0;
  for (int64_t c = 0; c < C; ++c) {
    double d = img[c * plane + a] - img[c * plane + b];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

void RefinerParams::validate() const {
  if (gamma1 <= 0.0 || gamma2 <= 0.0) throw ConfigError("refiner: gamma1 and gamma2 must be > 0");
  if (gamma3 < 0.0) throw ConfigError("refiner: gamma3 must be >= 0");
  if (iterations < 1) throw ConfigError("refiner: iterations must be >= 1");
}

double position_sigma() {
  double norms[kNeighbors];
  double mean = 0.0;
  for (int k = 0; k < kNeighbors; ++k) {
    norms[k] = std::sqrt(static_cast<double>(kOffY[k] * kOffY[k] + kOffX[k] * kOffX[k]));
    mean += norms[k];
  }
  mean /= kNeighbors;
  double var = 0.0;
  for (int k = 0; k < kNeighbors; ++k) var += (norms[k] - mean) * (norms[k] - mean);
  var /= kNeighbors;
  return std::max(std::sqrt(var), kSigmaFloor);
}

double appearance_sigma(const Tensor& image, int64_t n) {
  if (image.ndim() != 4) throw ContractError("appearance_sigma expects NCHW image");
  int64_t C = image.dim(1), H = image.dim(2), W = image.dim(3);
  int64_t plane = H * W;
  const double* img = image.data() + n * C * plane;
  double sum = 0.0, sum_sq = 0.0;
  int64_t count = 0;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      for (int k = 0; k < kNeighbors; ++k) {
        int64_t ny = y + kOffY[k], nx = x + kOffX[k];
        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
        double d = color_distance(img, C, plane, y * W + x, ny * W + nx);
        sum += d;
        sum_sq += d * d;
        ++count;
      }
  if (count == 0) return kSigmaFloor;
  double mean = sum / static_cast<double>(count);
  double var = sum_sq / static_cast<double>(count) - mean * mean;
  return std::max(std::sqrt(std::max(var, 0.0)), kSigmaFloor);
}

std::pair<double, double> pairwise_distances(const Tensor& image, int64_t n, int64_t yi,
                                             int64_t xi, int64_t yj, int64_t xj,
                                             const RefinerParams& params) {
  params.validate();
  if (image.ndim() != 4) throw ContractError("pairwise_distances expects NCHW image");
  int64_t C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (n < 0 || n >= image.dim(0) || yi < 0 || yi >= H || xi < 0 || xi >= W || yj < 0 ||
      yj >= H || xj < 0 || xj >= W)
    throw ContractError("pairwise_distances: coordinates out of range");
  double sigma_f =
      params.sigma_f_override > 0.0 ? params.sigma_f_override : appearance_sigma(image, n);
  double sigma_p = params.sigma_p_override > 0.0 ? params.sigma_p_override : position_sigma();
  int64_t plane = H * W;
  const double* img = image.data() + n * C * plane;
  double df = color_distance(img, C, plane, yi * W + xi, yj * W + xj) / (params.gamma1 * sigma_f);
  double dy = static_cast<double>(yi - yj), dx = static_cast<double>(xi - xj);
  double dp = std::sqrt(dy * dy + dx * dx) / (params.gamma2 * sigma_p);
  return {-df * df, -dp * dp};
}

namespace {

// Per-pixel affinity rows over the 8 neighbors: kappa = [softmax(d_f) +
// gamma3 * softmax(d_p)] / (1 + gamma3), with out-of-bounds neighbors
// excluded from both softmaxes. Rows sum to 1 over the valid neighbors.
std::vector<double> build_kernels(const Tensor& image, int64_t n, const RefinerParams& params) {
  int64_t C = image.dim(1), H = image.dim(2), W = image.dim(3);
  int64_t plane = H * W;
  const double* img = image.data() + n * C * plane;
  double sigma_f =
      params.sigma_f_override > 0.0 ? params.sigma_f_override : appearance_sigma(image, n);
  double sigma_p = params.sigma_p_override > 0.0 ? params.sigma_p_override : position_sigma();
  double inv_gf = 1.0 / (params.gamma1 * sigma_f);
  double inv_gp = 1.0 / (params.gamma2 * sigma_p);

  std::vector<double> kernels(static_cast<size_t>(plane * kNeighbors), 0.0);
  double ef[kNeighbors], ep[kNeighbors];
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      int64_t i = y * W + x;
      double sum_f = 0.0, sum_p = 0.0;
      for (int k = 0; k < kNeighbors; ++k) {
        int64_t ny = y + kOffY[k], nx = x + kOffX[k];
        if (ny < 0 || ny >= H || nx < 0 || nx >= W) {
          ef[k] = ep[k] = 0.0;
          continue;
        }
        double df = color_distance(img, C, plane, i, ny * W + nx) * inv_gf;
        double norm = std::sqrt(static_cast<double>(kOffY[k] * kOffY[k] + kOffX[k] * kOffX[k]));
        double dp = norm * inv_gp;
        ef[k] = std::exp(-df * df);
        ep[k] = std::exp(-dp * dp);
        sum_f += ef[k];
        sum_p += ep[k];
      }
      if (sum_f <= 0.0 || sum_p <= 0.0) continue;  // isolated pixel (1x1 grid)
      double* row = kernels.data() + i * kNeighbors;
      for (int k = 0; k < kNeighbors; ++k)
        row[k] = (ef[k] / sum_f + params.gamma3 * (ep[k] / sum_p)) / (1.0 + params.gamma3);
    }
  return kernels;
}

void apply_step(const std::vector<double>& kernels, const double* label, int64_t H, int64_t W,
                double* out) {
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      int64_t i = y * W + x;
      const double* row = kernels.data() + i * kNeighbors;
      double avg = 0.0;
      for (int k = 0; k < kNeighbors; ++k) {
        if (row[k] == 0.0) continue;
        avg += row[k] * label[(y + kOffY[k]) * W + x + kOffX[k]];
      }
      out[i] = avg * label[i];
    }
}

void check_grids(const Tensor& label, const Tensor& image) {
  if (label.ndim() != 4 || label.dim(1) != 1)
    throw ContractError("refine: label must be Nx1xHxW, got " + label.shape_str());
  if (image.ndim() != 4) throw ContractError("refine: image must be NCHW");
  if (label.dim(0) != image.dim(0) || label.dim(2) != image.dim(2) ||
      label.dim(3) != image.dim(3))
    throw ContractError("refine: label grid " + label.shape_str() + " does not match image " +
                        image.shape_str());
}

}  // namespace

Tensor refine_step(const Tensor& label, const Tensor& image, const RefinerParams& params) {
  params.validate();
  check_grids(label, image);
  int64_t N = label.dim(0), H = label.dim(2), W = label.dim(3);
  Tensor out(label.shape());
  for (int64_t n = 0; n < N; ++n) {
    std::vector<double> kernels = build_kernels(image, n, params);
    apply_step(kernels, label.data() + n * H * W, H, W, out.data() + n * H * W);
  }
  return out;
}

Tensor refine(const Tensor& label, const Tensor& image, const RefinerParams& params) {
  params.validate();
  check_grids(label, image);
  int64_t N = label.dim(0), H = label.dim(2), W = label.dim(3);

  Tensor work_label = label;
  Tensor work_image = image;
  if (params.half_resolution && H >= 2 && W >= 2) {
    work_label = ad::resize_bilinear_tensor(label, H / 2, W / 2);
    work_image = ad::resize_bilinear_tensor(image, H / 2, W / 2);
  }
  int64_t h = work_label.dim(2), w = work_label.dim(3);
  int64_t plane = h * w;

  Tensor next(work_label.shape());
  for (int64_t n = 0; n < N; ++n) {
    std::vector<double> kernels = build_kernels(work_image, n, params);
    double* cur = work_label.data() + n * plane;
    double* nxt = next.data() + n * plane;
    for (int t = 0; t < params.iterations; ++t) {
      apply_step(kernels, cur, h, w, nxt);
      std::copy_n(nxt, plane, cur);
    }
  }

  // Counteract the Hadamard product's shrinkage: restore per-image max to 1
  // when the input label had confident foreground.
  for (int64_t n = 0; n < N; ++n) {
    const double* orig = label.data() + n * H * W;
    double pre_max = *std::max_element(orig, orig + H * W);
    if (pre_max < params.theta_f) continue;
    double* cur = work_label.data() + n * plane;
    double post_max = *std::max_element(cur, cur + plane);
    if (post_max <= 0.0) continue;
    for (int64_t i = 0; i < plane; ++i) cur[i] /= post_max;
  }

  if (work_label.dim(2) != H || work_label.dim(3) != W)
    work_label = ad::resize_bilinear_tensor(work_label, H, W);
  return work_label;
}

}  // namespace usod
