#pragma once

#include <vector>

#include "usod/core_types.hpp"

namespace usod {

// Area-ratio suppression parameters. theta_r = +infinity disables suppression
// (identity). literal_algorithm switches to the published pseudo-code exactly
// as printed, which evaluates the ratio test on g_i itself and can therefore
// suppress every object including the largest; the default variant always
// keeps the largest object and applies the test to each following one.
struct UnssParams {
  double theta_r = 2.5;
  double theta_f = 0.6;  // binarization threshold defining "objects"
  bool literal_algorithm = false;

  void validate() const;
};

// Indices (into the area-sorted component list) that survive suppression.
std::vector<size_t> kept_components(const std::vector<int64_t>& sorted_areas,
                                    const UnssParams& params);

// Suppresses disproportionately small components of one 1xHxW / HxW label
// plane: suppressed components' pixels become 0, kept components keep their
// real values, pixels below theta_f are untouched.
Tensor unss(const Tensor& label, const UnssParams& params);

// Per-image application over an Nx1xHxW batch.
Tensor unss_batch(const Tensor& labels, const UnssParams& params);

}  // namespace usod
