#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "usod/nn.hpp"

namespace usod {

// Five feature groups F1..F5 with strictly decreasing spatial size.
struct FeaturePyramid {
  std::array<ad::Var, 5> levels;

  const ad::Var& f(int k) const { return levels[static_cast<size_t>(k - 1)]; }  // k in 1..5
  void validate() const;
};

// Multi-scale feature extractor contract: five levels at fixed strides.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual FeaturePyramid forward(const ad::Var& x, bool training) = 0;
  virtual void collect(const std::string& prefix, nn::ParamMap& pm) = 0;
  virtual std::vector<int> strides() const = 0;
  virtual std::vector<int64_t> channels() const = 0;
};

// Five conv-norm-relu stages, cumulative strides {1,2,4,8,16}, ~53k
// parameters. `pad` of 0 makes every convolution padding-free (shrinking
// outputs), which keeps the stride-translation property exact for tests.
class ToyBackbone : public Backbone {
 public:
  explicit ToyBackbone(Rng& rng, int pad = 1);

  FeaturePyramid forward(const ad::Var& x, bool training) override;
  void collect(const std::string& prefix, nn::ParamMap& pm) override;
  std::vector<int> strides() const override { return {1, 2, 4, 8, 16}; }
  std::vector<int64_t> channels() const override { return {16, 24, 32, 48, 64}; }

 private:
  std::array<nn::Conv2d, 5> convs_;
  std::array<nn::BatchNorm2d, 5> norms_;
  int pad_;
};

// Standard 50-layer residual network, strides {2,4,8,16,32}, channel widths
// {64,256,512,1024,2048}; parameter names follow the conventional layout
// (conv1.weight, bn1.*, layerL.B.convK.*, layerL.B.downsample.{0,1}.*) so
// externally converted checkpoints map one-to-one.
class ResNet50Backbone : public Backbone {
 public:
  explicit ResNet50Backbone(Rng& rng);
  ~ResNet50Backbone() override;

  FeaturePyramid forward(const ad::Var& x, bool training) override;
  void collect(const std::string& prefix, nn::ParamMap& pm) override;
  std::vector<int> strides() const override { return {2, 4, 8, 16, 32}; }
  std::vector<int64_t> channels() const override { return {64, 256, 512, 1024, 2048}; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<Backbone> make_backbone(const std::string& kind, Rng& rng, int toy_pad = 1);

// Loads a named-tensor archive into the backbone. Every backbone parameter
// and buffer must be present with a matching shape (silent partial
// initialization is forbidden); archive tensors that match nothing are
// reported via a warning.
void load_pretrained(Backbone& backbone, const std::string& path);

// Channel-wise (x - mean) / std normalization of an image batch.
Tensor normalize_images(const Tensor& images, const std::vector<double>& mean,
                        const std::vector<double>& std);

}  // namespace usod
