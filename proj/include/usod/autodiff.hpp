#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "usod/tensor.hpp"

namespace usod::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the backward tape. `backward_op` reads this node's grad and
// accumulates into the inputs' grads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_op;

  Tensor& ensure_grad();
};

// Value-semantic handle to a tape node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.defined(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad();
  const NodePtr& node() const { return node_; }

  const std::vector<int64_t>& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  double scalar() const { return node_->value[0]; }

 private:
  friend Var make_op(Tensor, std::vector<Var>, std::function<void(Node&)>);
  NodePtr node_;
};

// Globally disables tape construction while alive (eval / inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

// Builds an op node. `backward` may be empty for ops with constant inputs.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

Var constant(Tensor value);
Var parameter(Tensor value);
Var detach(const Var& x);

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// ---- elementwise / shape ops ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var one_minus(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var vlog(const Var& x);
Var clamp(const Var& x, double lo, double hi);
Var maxn(const std::vector<Var>& xs);
Var mul_const(const Var& x, const Tensor& c);
Var concat_channels(const Var& a, const Var& b);
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var affine_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);
Var gather(const Var& x, std::vector<int64_t> flat_indices);

// Per-image map inversion: out[n] = flags[n] ? 1 - x[n] : x[n].
Var conditional_invert(const Var& x, const std::vector<bool>& flags);

// ---- spatial ops (NCHW) ----
Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, int stride, int pad);
Var maxpool2d(const Var& x, int kernel, int stride, int pad);
Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool training, double momentum = 0.1, double eps = 1e-5);

// out[n,c] = sum_p weights[n,0,p] * feats[n,c,p]
Var weighted_spatial_pool(const Var& weights, const Var& feats);

// Cosine similarity between all row pairs of a (NxC) and b (MxC): out is NxM.
// Zero-norm rows yield similarity 0 (and a warning unless `quiet`).
Var cosine_cross(const Var& a, const Var& b, bool quiet = false);

// Plain-tensor bilinear resize for non-differentiable paths.
Tensor resize_bilinear_tensor(const Tensor& x, int64_t out_h, int64_t out_w);

}  // namespace usod::ad
