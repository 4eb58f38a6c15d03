#include "usod/encoder.hpp"

#include <set>

#include "usod/checkpoint.hpp"

namespace usod {

void FeaturePyramid::validate() const {
  for (const auto& level : levels) {
    if (!level.defined()) throw ContractError("FeaturePyramid: undefined level");
    if (!level.value().all_finite()) throw ContractError("FeaturePyramid: non-finite values");
  }
  for (size_t k = 1; k < levels.size(); ++k)
    if (levels[k].shape()[2] >= levels[k - 1].shape()[2] ||
        levels[k].shape()[3] >= levels[k - 1].shape()[3])
      throw ContractError("FeaturePyramid: spatial sizes must strictly decrease");
}

ToyBackbone::ToyBackbone(Rng& rng, int pad) : pad_(pad) {
  const std::vector<int64_t> ch = channels();
  int64_t in_ch = 3;
  const int stage_stride[5] = {1, 2, 2, 2, 2};
  for (int k = 0; k < 5; ++k) {
    convs_[static_cast<size_t>(k)] =
        nn::Conv2d(in_ch, ch[static_cast<size_t>(k)], 3, stage_stride[k], pad, /*with_bias=*/false, rng);
    norms_[static_cast<size_t>(k)] = nn::BatchNorm2d(ch[static_cast<size_t>(k)]);
    in_ch = ch[static_cast<size_t>(k)];
  }
}

FeaturePyramid ToyBackbone::forward(const ad::Var& x, bool training) {
  FeaturePyramid pyr;
  ad::Var h = x;
  for (int k = 0; k < 5; ++k) {
    h = convs_[static_cast<size_t>(k)].forward(h);
    h = norms_[static_cast<size_t>(k)].forward(h, training);
    h = ad::relu(h);
    pyr.levels[static_cast<size_t>(k)] = h;
  }
  return pyr;
}

void ToyBackbone::collect(const std::string& prefix, nn::ParamMap& pm) {
  for (int k = 0; k < 5; ++k) {
    std::string stage = prefix + ".stage" + std::to_string(k + 1);
    convs_[static_cast<size_t>(k)].collect(stage + ".conv", pm);
    norms_[static_cast<size_t>(k)].collect(stage + ".bn", pm);
  }
}

// ---- 50-layer residual backbone ----

namespace {

struct Bottleneck {
  nn::Conv2d conv1, conv2, conv3;
  nn::BatchNorm2d bn1, bn2, bn3;
  bool has_downsample = false;
  nn::Conv2d down_conv;
  nn::BatchNorm2d down_bn;

  Bottleneck() = default;
  Bottleneck(int64_t in_ch, int64_t mid_ch, int64_t out_ch, int stride, Rng& rng) {
    conv1 = nn::Conv2d(in_ch, mid_ch, 1, 1, 0, false, rng);
    bn1 = nn::BatchNorm2d(mid_ch);
    conv2 = nn::Conv2d(mid_ch, mid_ch, 3, stride, 1, false, rng);
    bn2 = nn::BatchNorm2d(mid_ch);
    conv3 = nn::Conv2d(mid_ch, out_ch, 1, 1, 0, false, rng);
    bn3 = nn::BatchNorm2d(out_ch);
    if (stride != 1 || in_ch != out_ch) {
      has_downsample = true;
      down_conv = nn::Conv2d(in_ch, out_ch, 1, stride, 0, false, rng);
      down_bn = nn::BatchNorm2d(out_ch);
    }
  }

  ad::Var forward(const ad::Var& x, bool training) {
    ad::Var h = ad::relu(bn1.forward(conv1.forward(x), training));
    h = ad::relu(bn2.forward(conv2.forward(h), training));
    h = bn3.forward(conv3.forward(h), training);
    ad::Var identity = has_downsample ? down_bn.forward(down_conv.forward(x), training) : x;
    return ad::relu(ad::add(h, identity));
  }

  void collect(const std::string& prefix, nn::ParamMap& pm) {
    conv1.collect(prefix + ".conv1", pm);
    bn1.collect(prefix + ".bn1", pm);
    conv2.collect(prefix + ".conv2", pm);
    bn2.collect(prefix + ".bn2", pm);
    conv3.collect(prefix + ".conv3", pm);
    bn3.collect(prefix + ".bn3", pm);
    if (has_downsample) {
      down_conv.collect(prefix + ".downsample.0", pm);
      down_bn.collect(prefix + ".downsample.1", pm);
    }
  }
};

}  // namespace

struct ResNet50Backbone::Impl {
  nn::Conv2d conv1;
  nn::BatchNorm2d bn1;
  std::vector<Bottleneck> layer1, layer2, layer3, layer4;
};

ResNet50Backbone::ResNet50Backbone(Rng& rng) : impl_(std::make_unique<Impl>()) {
  impl_->conv1 = nn::Conv2d(3, 64, 7, 2, 3, false, rng);
  impl_->bn1 = nn::BatchNorm2d(64);
  auto make_layer = [&rng](std::vector<Bottleneck>& layer, int64_t in_ch, int64_t mid_ch,
                           int64_t out_ch, int blocks, int stride) {
    layer.emplace_back(in_ch, mid_ch, out_ch, stride, rng);
    for (int b = 1; b < blocks; ++b) layer.emplace_back(out_ch, mid_ch, out_ch, 1, rng);
  };
  make_layer(impl_->layer1, 64, 64, 256, 3, 1);
  make_layer(impl_->layer2, 256, 128, 512, 4, 2);
  make_layer(impl_->layer3, 512, 256, 1024, 6, 2);
  make_layer(impl_->layer4, 1024, 512, 2048, 3, 2);
}

ResNet50Backbone::~ResNet50Backbone() = default;

FeaturePyramid ResNet50Backbone::forward(const ad::Var& x, bool training) {
  FeaturePyramid pyr;
  ad::Var h = ad::relu(impl_->bn1.forward(impl_->conv1.forward(x), training));
  pyr.levels[0] = h;  // stride 2
  h = ad::maxpool2d(h, 3, 2, 1);
  for (auto& b : impl_->layer1) h = b.forward(h, training);
  pyr.levels[1] = h;  // stride 4
  for (auto& b : impl_->layer2) h = b.forward(h, training);
  pyr.levels[2] = h;  // stride 8
  for (auto& b : impl_->layer3) h = b.forward(h, training);
  pyr.levels[3] = h;  // stride 16
  for (auto& b : impl_->layer4) h = b.forward(h, training);
  pyr.levels[4] = h;  // stride 32
  return pyr;
}

void ResNet50Backbone::collect(const std::string& prefix, nn::ParamMap& pm) {
  impl_->conv1.collect(prefix + ".conv1", pm);
  impl_->bn1.collect(prefix + ".bn1", pm);
  auto collect_layer = [&](std::vector<Bottleneck>& layer, const std::string& name) {
    for (size_t b = 0; b < layer.size(); ++b)
      layer[b].collect(prefix + "." + name + "." + std::to_string(b), pm);
  };
  collect_layer(impl_->layer1, "layer1");
  collect_layer(impl_->layer2, "layer2");
  collect_layer(impl_->layer3, "layer3");
  collect_layer(impl_->layer4, "layer4");
}

std::unique_ptr<Backbone> make_backbone(const std::string& kind, Rng& rng, int toy_pad) {
  if (kind == "toy") return std::make_unique<ToyBackbone>(rng, toy_pad);
  if (kind == "full" || kind == "resnet50") return std::make_unique<ResNet50Backbone>(rng);
  throw ConfigError("unknown backbone kind: '" + kind + "' (expected 'toy' or 'full')");
}

void load_pretrained(Backbone& backbone, const std::string& path) {
  Archive archive = Archive::load(path);
  nn::ParamMap pm;
  backbone.collect("encoder", pm);

  std::set<std::string> used;
  auto fetch = [&](const std::string& name, const Tensor& current) -> const Tensor& {
    const Tensor* src = archive.find(name);
    if (!src) throw IoError("pretrained weights missing tensor: " + name);
    if (src->shape() != current.shape())
      throw IoError("pretrained tensor " + name + " has shape " + src->shape_str() +
                    ", expected " + current.shape_str());
    used.insert(name);
    return *src;
  };
  // Validate everything before mutating any parameter, so a bad archive
  // cannot leave the backbone half-initialized.
  for (auto& [name, var] : pm.params) fetch(name, var.value());
  for (auto& [name, buf] : pm.buffers) fetch(name, *buf);
  for (auto& [name, var] : pm.params) var.value() = *archive.find(name);
  for (auto& [name, buf] : pm.buffers) *buf = *archive.find(name);

  for (const auto& [name, t] : archive.tensors)
    if (!used.count(name)) log_warn("pretrained archive tensor unused: " + name);
}

Tensor normalize_images(const Tensor& images, const std::vector<double>& mean,
                        const std::vector<double>& std) {
  if (images.ndim() != 4) throw ContractError("normalize_images expects NCHW");
  int64_t C = images.dim(1);
  if (static_cast<int64_t>(mean.size()) != C || static_cast<int64_t>(std.size()) != C)
    throw ConfigError("normalize_images: mean/std size must match channel count");
  for (double s : std)
    if (s <= 0.0) throw ConfigError("normalize_images: std must be positive");
  Tensor out = images;
  int64_t N = images.dim(0), plane = images.dim(2) * images.dim(3);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double* p = out.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i)
        p[i] = (p[i] - mean[static_cast<size_t>(c)]) / std[static_cast<size_t>(c)];
    }
  return out;
}

}  // namespace usod
