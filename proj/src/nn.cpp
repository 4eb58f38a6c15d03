#include "usod/nn.hpp"

#include <cmath>

namespace usod::nn {

int64_t ParamMap::param_count() const {
  int64_t total = 0;
  for (const auto& [name, v] : params) total += v.numel();
  return total;
}

Tensor he_normal(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
  Tensor t(shape);
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * std;
  return t;
}

Conv2d::Conv2d(int64_t in_ch, int64_t out_ch, int kernel, int stride, int pad, bool with_bias,
               Rng& rng)
    : stride(stride), pad(pad) {
  int64_t fan_in = in_ch * kernel * kernel;
  weight = ad::parameter(he_normal({out_ch, in_ch, kernel, kernel}, fan_in, rng));
  if (with_bias) bias = ad::parameter(Tensor::zeros({out_ch}));
}

void Conv2d::collect(const std::string& prefix, ParamMap& pm) const {
  pm.add_param(prefix + ".weight", weight);
  if (bias) pm.add_param(prefix + ".bias", *bias);
}

BatchNorm2d::BatchNorm2d(int64_t channels) {
  gamma = ad::parameter(Tensor::full({channels}, 1.0));
  beta = ad::parameter(Tensor::zeros({channels}));
  state.running_mean = Tensor::zeros({channels});
  state.running_var = Tensor::full({channels}, 1.0);
}

void BatchNorm2d::collect(const std::string& prefix, ParamMap& pm) {
  pm.add_param(prefix + ".weight", gamma);
  pm.add_param(prefix + ".bias", beta);
  pm.add_buffer(prefix + ".running_mean", &state.running_mean);
  pm.add_buffer(prefix + ".running_var", &state.running_var);
}

void Sgd::add_group(const std::vector<std::pair<std::string, ad::Var>>& params, double lr) {
  if (lr <= 0.0) throw ConfigError("Sgd: learning rate must be positive");
  groups_.push_back({params, lr});
}

void Sgd::step() {
  for (auto& group : groups_) {
    for (auto& [name, var] : group.params) {
      if (!var.has_grad()) continue;  // parameter unused by this step's graph
      Tensor& w = var.value();
      const Tensor& g = var.grad();
      auto it = velocity_.find(name);
      if (it == velocity_.end()) it = velocity_.emplace(name, Tensor::zeros(w.shape())).first;
      Tensor& v = it->second;
      for (int64_t i = 0; i < w.numel(); ++i) {
        double d = g[i] + weight_decay_ * w[i];
        v[i] = momentum_ * v[i] + d;
        w[i] -= group.lr * v[i];
      }
    }
  }
}

void Sgd::zero_grad() {
  for (auto& group : groups_)
    for (auto& [name, var] : group.params) var.zero_grad();
}

void Sgd::set_velocity(const std::string& name, Tensor v) { velocity_[name] = std::move(v); }

}  // namespace usod::nn
