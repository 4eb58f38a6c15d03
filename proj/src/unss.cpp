#include "usod/unss.hpp"

#include <cmath>
#include <limits>

namespace usod {

void UnssParams::validate() const {
  if (!(theta_r > 0.0)) throw ConfigError("unss: theta_r must be positive");
  if (!(0.0 < theta_f && theta_f <= 1.0)) throw ConfigError("unss: theta_f must be in (0,1]");
}

std::vector<size_t> kept_components(const std::vector<int64_t>& sorted_areas,
                                    const UnssParams& params) {
  params.validate();
  std::vector<size_t> kept;
  size_t n = sorted_areas.size();
  if (n == 0) return kept;

  if (params.literal_algorithm) {
    // As printed: keep g_i iff it is the last object or area(g_i) <=
    // area(g_{i+1}) * theta_r; stop at the first failure. A large gap right
    // after the biggest object suppresses everything.
    for (size_t i = 0; i < n; ++i) {
      if (i + 1 == n || static_cast<double>(sorted_areas[i]) <=
                            static_cast<double>(sorted_areas[i + 1]) * params.theta_r) {
        kept.push_back(i);
      } else {
        break;
      }
    }
    return kept;
  }

  // Intent-preserving variant: the largest object always survives; each next
  // object survives while the consecutive area ratio stays within theta_r.
  kept.push_back(0);
  for (size_t i = 0; i + 1 < n; ++i) {
    if (static_cast<double>(sorted_areas[i]) <=
        static_cast<double>(sorted_areas[i + 1]) * params.theta_r) {
      kept.push_back(i + 1);
    } else {
      break;
    }
  }
  return kept;
}

namespace {

Tensor unss_plane(const Tensor& plane_in, int64_t H, int64_t W, const UnssParams& params) {
  Tensor plane = plane_in.reshaped({H, W});
  Tensor binary = threshold_binary(plane, params.theta_f);
  ComponentSet comps = connected_components(binary);
  if (comps.empty()) return plane_in;

  std::vector<int64_t> areas;
  areas.reserve(comps.size());
  for (const auto& c : comps) areas.push_back(c.area);
  std::vector<size_t> kept = kept_components(areas, params);

  std::vector<bool> keep(comps.size(), false);
  for (size_t i : kept) keep[i] = true;
  Tensor out = plane_in;
  for (size_t i = 0; i < comps.size(); ++i) {
    if (keep[i]) continue;
    for (int64_t p : comps[i].pixels) out[p] = 0.0;
  }
  return out;
}

}  // namespace

Tensor unss(const Tensor& label, const UnssParams& params) {
  params.validate();
  if (std::isinf(params.theta_r)) return label;
  int64_t H, W;
  if (label.ndim() == 2) {
    H = label.dim(0);
    W = label.dim(1);
  } else if (label.ndim() == 3 && label.dim(0) == 1) {
    H = label.dim(1);
    W = label.dim(2);
  } else if (label.ndim() == 4 && label.dim(0) == 1 && label.dim(1) == 1) {
    H = label.dim(2);
    W = label.dim(3);
  } else {
    throw ContractError("unss expects a single-image label plane, got " + label.shape_str());
  }
  return unss_plane(label, H, W, params);
}

Tensor unss_batch(const Tensor& labels, const UnssParams& params) {
  params.validate();
  if (labels.ndim() != 4 || labels.dim(1) != 1)
    throw ContractError("unss_batch expects Nx1xHxW labels, got " + labels.shape_str());
  if (std::isinf(params.theta_r)) return labels;
  int64_t N = labels.dim(0), H = labels.dim(2), W = labels.dim(3);
  Tensor out = labels;
  for (int64_t n = 0; n < N; ++n) {
    Tensor plane({H, W});
    std::copy_n(labels.data() + n * H * W, H * W, plane.data());
    Tensor filtered = unss_plane(plane, H, W, params);
    std::copy_n(filtered.data(), H * W, out.data() + n * H * W);
  }
  return out;
}

}  // namespace usod
