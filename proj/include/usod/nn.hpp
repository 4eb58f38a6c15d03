#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "usod/autodiff.hpp"
#include "usod/common.hpp"

namespace usod::nn {

// Named views over a model's state: trainable parameters plus persistent
// buffers (batch-norm running statistics). Buffer pointers refer to storage
// owned by the layers, so the layers must outlive the map.
struct ParamMap {
  std::vector<std::pair<std::string, ad::Var>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add_param(const std::string& name, const ad::Var& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }
  int64_t param_count() const;
};

struct Conv2d {
  ad::Var weight;  // OC x IC x K x K
  std::optional<ad::Var> bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int64_t in_ch, int64_t out_ch, int kernel, int stride, int pad, bool with_bias, Rng& rng);

  ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, weight, bias, stride, pad); }
  void collect(const std::string& prefix, ParamMap& pm) const;
};

struct BatchNorm2d {
  ad::Var gamma;  // named "weight" for checkpoint compatibility
  ad::Var beta;   // named "bias"
  ad::BatchNormState state;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int64_t channels);

  ad::Var forward(const ad::Var& x, bool training) {
    return ad::batchnorm2d(x, gamma, beta, state, training);
  }
  void collect(const std::string& prefix, ParamMap& pm);
};

// He-normal initialization for convolution weights: std = sqrt(2 / fan_in).
Tensor he_normal(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng);

// Stochastic gradient descent with momentum and decoupled-into-gradient weight
// decay: g = grad + wd * w; v = mu * v + g; w -= lr * v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void add_group(const std::vector<std::pair<std::string, ad::Var>>& params, double lr);
  void step();
  void zero_grad();

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

  // Momentum buffers keyed by parameter name, for checkpointing. Buffers are
  // created lazily on the first step, so a freshly constructed optimizer has
  // an empty map.
  const std::map<std::string, Tensor>& velocity() const { return velocity_; }
  void set_velocity(const std::string& name, Tensor v);

 private:
  struct Group {
    std::vector<std::pair<std::string, ad::Var>> params;
    double lr;
  };
  std::vector<Group> groups_;
  std::map<std::string, Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace usod::nn
