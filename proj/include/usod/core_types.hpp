#pragma once

#include <string>
#include <vector>

#include "usod/common.hpp"
#include "usod/tensor.hpp"

namespace usod {

// Ternary per-pixel certainty states used by the partial cross-entropy loss.
constexpr double kForeground = 1.0;
constexpr double kBackground = 0.0;
constexpr double kIgnore = -1.0;

enum class LabelKind { location, detailed, prediction };

// N x 3 x H x W image batch with values in [0, 1].
struct ImageBatch {
  Tensor data;

  void validate() const;
  int64_t count() const { return data.dim(0); }
  int64_t height() const { return data.dim(2); }
  int64_t width() const { return data.dim(3); }
};

// N x 1 x H x W real-valued saliency annotation in [0, 1].
struct SaliencyLabel {
  Tensor data;
  LabelKind kind = LabelKind::location;

  void validate() const;
};

// N x 1 x H x W map over {kForeground, kBackground, kIgnore}.
struct CertaintyMask {
  Tensor data;

  int64_t certain_count() const;
};

// One 8-connected region of a binary map; pixels are flat row-major indices
// into the H x W plane, stored in scan order.
struct Component {
  std::vector<int64_t> pixels;
  int64_t area = 0;
};

// Components sorted by decreasing area; equal areas keep first-pixel scan
// order.
using ComponentSet = std::vector<Component>;

// Maps values >= theta_f to foreground, <= theta_g to background, the rest to
// ignore. Requires 0 <= theta_g < theta_f <= 1.
CertaintyMask binarize_certain(const SaliencyLabel& label, double theta_f, double theta_g);

// 8-connectivity connected components of one strictly binary H x W plane.
ComponentSet connected_components(const Tensor& binary_map);

// Convenience: threshold a real-valued plane at `threshold` (inclusive) into a
// strict 0/1 plane.
Tensor threshold_binary(const Tensor& plane, double threshold);

}  // namespace usod
