#include "usod/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "usod/common.hpp"

namespace usod::ad {

namespace {
bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor& Node::ensure_grad() {
  if (!grad.defined()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->value = std::move(value);
  node_->requires_grad = requires_grad && g_grad_enabled;
}

void Var::zero_grad() {
  // Clears to the undefined state so optimizers can tell "zero gradient this
  // step" apart from "not part of this step's graph".
  if (node_) node_->grad = Tensor();
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  bool req = false;
  if (g_grad_enabled) {
    for (const Var& v : inputs) req = req || v.requires_grad();
  }
  out.node_->requires_grad = req;
  if (req) {
    out.node_->inputs.reserve(inputs.size());
    for (Var& v : inputs) out.node_->inputs.push_back(v.node());
    out.node_->backward_op = std::move(backward);
  }
  return out;
}

Var constant(Tensor value) { return Var(std::move(value), false); }
Var parameter(Tensor value) { return Var(std::move(value), true); }

Var detach(const Var& x) { return constant(x.value()); }

void backward(const Var& root) {
  if (!root.defined() || root.numel() != 1) throw ContractError("backward expects a defined scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS over the DAG.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->inputs.size()) {
      Node* child = node->inputs[next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_op && node->grad.defined()) node->backward_op(*node);
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ContractError(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                        b.value().shape_str());
}

void accumulate(const NodePtr& n, const Tensor& g) {
  if (!n->requires_grad) return;
  Tensor& dst = n->ensure_grad();
  const double* src = g.data();
  double* d = dst.data();
  int64_t m = g.numel();
  for (int64_t i = 0; i < m; ++i) d[i] += src[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    accumulate(n.inputs[0], n.grad);
    accumulate(n.inputs[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    accumulate(n.inputs[0], n.grad);
    if (n.inputs[1]->requires_grad) {
      Tensor neg = n.grad;
      for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
      accumulate(n.inputs[1], neg);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.value();
  const double* pb = b.value().data();
  double* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  Tensor av = a.value(), bv = b.value();
  return make_op(std::move(out), {a, b}, [av, bv](Node& n) {
    if (n.inputs[0]->requires_grad) {
      Tensor g = n.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
      accumulate(n.inputs[0], g);
    }
    if (n.inputs[1]->requires_grad) {
      Tensor g = n.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
      accumulate(n.inputs[1], g);
    }
  });
}

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_op(std::move(out), {x}, [c](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= c;
    accumulate(n.inputs[0], g);
  });
}

Var add_scalar(const Var& x, double c) {
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make_op(std::move(out), {x}, [](Node& n) { accumulate(n.inputs[0], n.grad); });
}

Var one_minus(const Var& x) {
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 - out[i];
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] = -g[i];
    accumulate(n.inputs[0], g);
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  Tensor xv = x.value();
  return make_op(std::move(out), {x}, [xv](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xv[i] <= 0.0) g[i] = 0.0;
    accumulate(n.inputs[0], g);
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  Tensor yv = out;
  return make_op(std::move(out), {x}, [yv](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= yv[i] * (1.0 - yv[i]);
    accumulate(n.inputs[0], g);
  });
}

Var vlog(const Var& x) {
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  Tensor xv = x.value();
  return make_op(std::move(out), {x}, [xv](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] /= xv[i];
    accumulate(n.inputs[0], g);
  });
}

Var clamp(const Var& x, double lo, double hi) {
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(std::max(out[i], lo), hi);
  Tensor xv = x.value();
  return make_op(std::move(out), {x}, [xv, lo, hi](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xv[i] < lo || xv[i] > hi) g[i] = 0.0;
    accumulate(n.inputs[0], g);
  });
}

Var maxn(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractError("maxn: empty input list");
  for (size_t k = 1; k < xs.size(); ++k) check_same_shape(xs[0], xs[k], "maxn");
  int64_t m = xs[0].numel();
  Tensor out = xs[0].value();
  // Ties route the gradient to the lowest branch index.
  std::vector<uint8_t> argmax(static_cast<size_t>(m), 0);
  for (size_t k = 1; k < xs.size(); ++k) {
    const double* p = xs[k].value().data();
    for (int64_t i = 0; i < m; ++i) {
      if (p[i] > out[i]) {
        out[i] = p[i];
        argmax[static_cast<size_t>(i)] = static_cast<uint8_t>(k);
      }
    }
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return make_op(std::move(out), std::move(inputs), [argmax](Node& n) {
    for (size_t k = 0; k < n.inputs.size(); ++k) {
      if (!n.inputs[k]->requires_grad) continue;
      Tensor g = Tensor::zeros(n.grad.shape());
      for (int64_t i = 0; i < g.numel(); ++i)
        if (argmax[static_cast<size_t>(i)] == k) g[i] = n.grad[i];
      accumulate(n.inputs[k], g);
    }
  });
}

Var mul_const(const Var& x, const Tensor& c) {
  if (!x.value().same_shape(c)) throw ContractError("mul_const: shape mismatch");
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
  Tensor cv = c;
  return make_op(std::move(out), {x}, [cv](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= cv[i];
    accumulate(n.inputs[0], g);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 4 || bv.ndim() != 4) throw ContractError("concat_channels expects NCHW tensors");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
    throw ContractError("concat_channels: non-channel dims differ");
  int64_t N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1), H = av.dim(2), W = av.dim(3);
  Tensor out({N, Ca + Cb, H, W});
  int64_t plane = H * W;
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(av.data() + n * Ca * plane, Ca * plane, out.data() + n * (Ca + Cb) * plane);
    std::copy_n(bv.data() + n * Cb * plane, Cb * plane, out.data() + (n * (Ca + Cb) + Ca) * plane);
  }
  return make_op(std::move(out), {a, b}, [N, Ca, Cb, plane](Node& n) {
    if (n.inputs[0]->requires_grad) {
      Tensor& ga = n.inputs[0]->ensure_grad();
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < Ca * plane; ++j) ga[i * Ca * plane + j] += n.grad[i * (Ca + Cb) * plane + j];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gb = n.inputs[1]->ensure_grad();
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < Cb * plane; ++j)
          gb[i * Cb * plane + j] += n.grad[(i * (Ca + Cb) + Ca) * plane + j];
    }
  });
}

Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(x.value().sum());
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    double s = n.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s;
  });
}

Var mean_all(const Var& x) {
  int64_t m = x.numel();
  if (m == 0) throw ContractError("mean_all: empty tensor");
  Tensor out = Tensor::scalar(x.value().sum() / static_cast<double>(m));
  return make_op(std::move(out), {x}, [m](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    double s = n.grad[0] / static_cast<double>(m);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s;
  });
}

Var affine_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size() || scalars.empty())
    throw ContractError("affine_sum: size mismatch or empty");
  double total = 0.0;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].numel() != 1) throw ContractError("affine_sum expects scalar terms");
    total += weights[i] * scalars[i].scalar();
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  std::vector<double> w = weights;
  return make_op(Tensor::scalar(total), std::move(inputs), [w](Node& n) {
    for (size_t i = 0; i < n.inputs.size(); ++i) {
      if (!n.inputs[i]->requires_grad) continue;
      n.inputs[i]->ensure_grad()[0] += w[i] * n.grad[0];
    }
  });
}

Var gather(const Var& x, std::vector<int64_t> flat_indices) {
  Tensor out({static_cast<int64_t>(flat_indices.size())});
  for (size_t k = 0; k < flat_indices.size(); ++k) {
    int64_t idx = flat_indices[k];
    if (idx < 0 || idx >= x.numel()) throw ContractError("gather: index out of range");
    out[static_cast<int64_t>(k)] = x.value()[idx];
  }
  return make_op(std::move(out), {x}, [idx = std::move(flat_indices)](Node& n) {
    Tensor& g = n.inputs[0]->ensure_grad();
    for (size_t k = 0; k < idx.size(); ++k) g[idx[k]] += n.grad[static_cast<int64_t>(k)];
  });
}

Var conditional_invert(const Var& x, const std::vector<bool>& flags) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4 || static_cast<size_t>(xv.dim(0)) != flags.size())
    throw ContractError("conditional_invert: flags must match batch size");
  Tensor out = xv;
  int64_t per = xv.numel() / xv.dim(0);
  for (int64_t n = 0; n < xv.dim(0); ++n) {
    if (!flags[static_cast<size_t>(n)]) continue;
    double* p = out.data() + n * per;
    for (int64_t i = 0; i < per; ++i) p[i] = 1.0 - p[i];
  }
  std::vector<bool> f = flags;
  return make_op(std::move(out), {x}, [f, per](Node& n) {
    Tensor g = n.grad;
    for (int64_t b = 0; b < static_cast<int64_t>(f.size()); ++b) {
      if (!f[static_cast<size_t>(b)]) continue;
      double* p = g.data() + b * per;
      for (int64_t i = 0; i < per; ++i) p[i] = -p[i];
    }
    accumulate(n.inputs[0], g);
  });
}

Var weighted_spatial_pool(const Var& weights, const Var& feats) {
  const Tensor& wv = weights.value();
  const Tensor& fv = feats.value();
  if (wv.ndim() != 4 || fv.ndim() != 4 || wv.dim(1) != 1)
    throw ContractError("weighted_spatial_pool expects Nx1xHxW weights and NxCxHxW features");
  if (wv.dim(0) != fv.dim(0) || wv.dim(2) != fv.dim(2) || wv.dim(3) != fv.dim(3))
    throw ContractError("weighted_spatial_pool: grid mismatch " + wv.shape_str() + " vs " + fv.shape_str());
  int64_t N = fv.dim(0), C = fv.dim(1), P = fv.dim(2) * fv.dim(3);
  Tensor out({N, C});
  for (int64_t n = 0; n < N; ++n) {
    const double* wp = wv.data() + n * P;
    for (int64_t c = 0; c < C; ++c) {
      const double* fp = fv.data() + (n * C + c) * P;
      double s = 0.0;
      for (int64_t p = 0; p < P; ++p) s += wp[p] * fp[p];
      out.at2(n, c) = s;
    }
  }
  Tensor wcopy = wv, fcopy = fv;
  return make_op(std::move(out), {weights, feats}, [wcopy, fcopy, N, C, P](Node& n) {
    if (n.inputs[0]->requires_grad) {
      Tensor& gw = n.inputs[0]->ensure_grad();
      for (int64_t b = 0; b < N; ++b)
        for (int64_t c = 0; c < C; ++c) {
          double go = n.grad.at2(b, c);
          const double* fp = fcopy.data() + (b * C + c) * P;
          double* gp = gw.data() + b * P;
          for (int64_t p = 0; p < P; ++p) gp[p] += go * fp[p];
        }
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gf = n.inputs[1]->ensure_grad();
      for (int64_t b = 0; b < N; ++b) {
        const double* wp = wcopy.data() + b * P;
        for (int64_t c = 0; c < C; ++c) {
          double go = n.grad.at2(b, c);
          double* gp = gf.data() + (b * C + c) * P;
          for (int64_t p = 0; p < P; ++p) gp[p] += go * wp[p];
        }
      }
    }
  });
}

Var cosine_cross(const Var& a, const Var& b, bool quiet) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(1))
    throw ContractError("cosine_cross expects NxC and MxC inputs");
  int64_t N = av.dim(0), M = bv.dim(0), C = av.dim(1);
  auto row_norms = [C](const Tensor& t) {
    std::vector<double> norms(static_cast<size_t>(t.dim(0)));
    for (int64_t i = 0; i < t.dim(0); ++i) {
      double s = 0.0;
      const double* p = t.data() + i * C;
      for (int64_t c = 0; c < C; ++c) s += p[c] * p[c];
      norms[static_cast<size_t>(i)] = std::sqrt(s);
    }
    return norms;
  };
  std::vector<double> ra = row_norms(av), rb = row_norms(bv);
  bool degenerate = false;
  for (double r : ra) degenerate = degenerate || r == 0.0;
  for (double r : rb) degenerate = degenerate || r == 0.0;
  if (degenerate && !quiet)
    log_warn("cosine_cross: zero-norm descriptor, similarity defined as 0 (degenerate image)");

  Tensor out({N, M});
  for (int64_t i = 0; i < N; ++i) {
    for (int64_t j = 0; j < M; ++j) {
      double na = ra[static_cast<size_t>(i)], nb = rb[static_cast<size_t>(j)];
      if (na == 0.0 || nb == 0.0) {
        out.at2(i, j) = 0.0;
        continue;
      }
      double dot = 0.0;
      const double* pa = av.data() + i * C;
      const double* pb = bv.data() + j * C;
      for (int64_t c = 0; c < C; ++c) dot += pa[c] * pb[c];
      out.at2(i, j) = dot / (na * nb);
    }
  }
  Tensor acopy = av, bcopy = bv, sim = out;
  return make_op(std::move(out), {a, b},
                 [acopy, bcopy, sim, ra, rb, N, M, C](Node& n) {
                   // dS_ij/da_i = (b_j/rb - S_ij a_i/ra) / ra, and symmetrically for b_j.
                   Tensor ga = Tensor::zeros(acopy.shape());
                   Tensor gb = Tensor::zeros(bcopy.shape());
                   for (int64_t i = 0; i < N; ++i) {
                     double na = ra[static_cast<size_t>(i)];
                     if (na == 0.0) continue;
                     for (int64_t j = 0; j < M; ++j) {
                       double nb = rb[static_cast<size_t>(j)];
                       if (nb == 0.0) continue;
                       double g = n.grad.at2(i, j);
                       if (g == 0.0) continue;
                       double s = sim.at2(i, j);
                       const double* pa = acopy.data() + i * C;
                       const double* pb = bcopy.data() + j * C;
                       double* gi = ga.data() + i * C;
                       double* gj = gb.data() + j * C;
                       for (int64_t c = 0; c < C; ++c) {
                         gi[c] += g * (pb[c] / (na * nb) - s * pa[c] / (na * na));
                         gj[c] += g * (pa[c] / (na * nb) - s * pb[c] / (nb * nb));
                       }
                     }
                   }
                   accumulate(n.inputs[0], ga);
                   accumulate(n.inputs[1], gb);
                 });
}

}  // namespace usod::ad
