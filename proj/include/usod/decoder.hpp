#pragma once

#include <vector>

#include "usod/encoder.hpp"
#include "usod/nn.hpp"

namespace usod {

struct DecoderConfig {
  int64_t width = 64;  // lateral channel width
  int levels = 5;      // fused pyramid levels

  void validate() const;
};

// Top-down feature-pyramid decoder: per-level 1x1 lateral projections,
// upsample-and-add from the deepest level, a 3x3 fusion block per merge, and
// a final 1x1 + sigmoid upsampled to the requested output size.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::vector<int64_t>& pyramid_channels, const DecoderConfig& config, Rng& rng);

  ad::Var forward(const FeaturePyramid& pyramid, int64_t out_h, int64_t out_w, bool training);
  void collect(const std::string& prefix, nn::ParamMap& pm);

  // Test hook: forces the output head to zero so sigmoid gives uniform 0.5.
  void zero_head();

 private:
  std::vector<nn::Conv2d> lateral_;
  std::vector<nn::Conv2d> fuse_;
  std::vector<nn::BatchNorm2d> fuse_bn_;
  nn::Conv2d head_;
  DecoderConfig config_;
};

}  // namespace usod
