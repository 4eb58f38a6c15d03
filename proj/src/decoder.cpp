#include "usod/decoder.hpp"

namespace usod {

void DecoderConfig::validate() const {
  if (width < 1) throw ConfigError("decoder: width must be >= 1");
  if (levels < 2) throw ConfigError("decoder: need at least two pyramid levels");
}

Decoder::Decoder(const std::vector<int64_t>& pyramid_channels, const DecoderConfig& config,
                 Rng& rng)
    : config_(config) {
  config.validate();
  if (static_cast<int>(pyramid_channels.size()) != config.levels)
    throw ConfigError("decoder: channel list size " + std::to_string(pyramid_channels.size()) +
                      " != configured levels " + std::to_string(config.levels));
  for (int64_t ch : pyramid_channels)
    lateral_.emplace_back(ch, config.width, 1, 1, 0, /*with_bias=*/true, rng);
  for (int k = 0; k + 1 < config.levels; ++k) {
    fuse_.emplace_back(config.width, config.width, 3, 1, 1, /*with_bias=*/false, rng);
    fuse_bn_.emplace_back(config.width);
  }
  head_ = nn::Conv2d(config.width, 1, 1, 1, 0, /*with_bias=*/true, rng);
}

ad::Var Decoder::forward(const FeaturePyramid& pyramid, int64_t out_h, int64_t out_w,
                         bool training) {
  if (static_cast<int>(pyramid.levels.size()) != config_.levels)
    throw ContractError("decoder: pyramid level count mismatch");
  int top = config_.levels - 1;
  ad::Var h = lateral_[static_cast<size_t>(top)].forward(pyramid.levels[static_cast<size_t>(top)]);
  for (int k = top - 1; k >= 0; --k) {
    ad::Var lat = lateral_[static_cast<size_t>(k)].forward(pyramid.levels[static_cast<size_t>(k)]);
    ad::Var up = ad::resize_bilinear(h, lat.shape()[2], lat.shape()[3]);
    ad::Var merged = ad::add(lat, up);
    merged = fuse_[static_cast<size_t>(k)].forward(merged);
    merged = fuse_bn_[static_cast<size_t>(k)].forward(merged, training);
    h = ad::relu(merged);
  }
  ad::Var logits = head_.forward(h);
  return ad::resize_bilinear(ad::sigmoid(logits), out_h, out_w);
}

void Decoder::collect(const std::string& prefix, nn::ParamMap& pm) {
  for (size_t k = 0; k < lateral_.size(); ++k)
    lateral_[k].collect(prefix + ".lateral" + std::to_string(k + 1), pm);
  for (size_t k = 0; k < fuse_.size(); ++k) {
    fuse_[k].collect(prefix + ".fuse" + std::to_string(k + 1), pm);
    fuse_bn_[k].collect(prefix + ".fuse_bn" + std::to_string(k + 1), pm);
  }
  head_.collect(prefix + ".head", pm);
}

void Decoder::zero_head() {
  head_.weight.value().fill(0.0);
  if (head_.bias) head_.bias->value().fill(0.0);
}

}  // namespace usod
