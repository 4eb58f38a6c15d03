#pragma once

#include <utility>

#include "usod/tensor.hpp"

namespace usod {

// Pixel-adaptive refinement parameters. Appearance/position kernels use the
// 8-way neighborhood; sigma overrides of 0 mean "derive from the data"
// (appearance: per-image std of neighbor-pair color distances; position: std
// of neighbor offset norms). Zero derived sigmas clamp to 1e-6.
struct RefinerParams {
  double gamma1 = 0.4;          // appearance smoothness
  double gamma2 = 0.4;          // position smoothness
  double gamma3 = 0.01;         // position-kernel weight
  int iterations = 10;          // T
  double theta_f = 0.6;         // foreground threshold driving re-normalization
  bool half_resolution = true;  // refine at 1/2 scale, then upsample
  double sigma_f_override = 0.0;
  double sigma_p_override = 0.0;

  void validate() const;
};

// Population standard deviation of the 8 neighbor offset norms.
double position_sigma();

// Population standard deviation of ||color_i - color_j|| over every valid
// 8-neighbor pair of image n (N x C x H x W input).
double appearance_sigma(const Tensor& image, int64_t n);

// Feature / position distances d_f, d_p (both <= 0) between pixels (yi, xi)
// and (yj, xj) of image n.
std::pair<double, double> pairwise_distances(const Tensor& image, int64_t n, int64_t yi,
                                             int64_t xi, int64_t yj, int64_t xj,
                                             const RefinerParams& params);

// One refinement iteration at the label's own resolution: the affinity-
// weighted neighbor average followed by the Hadamard merge with the previous
// label. label is N x 1 x H x W, image N x C x H x W on the same grid.
Tensor refine_step(const Tensor& label, const Tensor& image, const RefinerParams& params);

// T refinement iterations (optionally at half resolution), then per-image
// re-normalization to max 1 whenever the pre-refinement max reached theta_f.
Tensor refine(const Tensor& label, const Tensor& image, const RefinerParams& params);

}  // namespace usod
