#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "usod/autodiff.hpp"
#include "usod/common.hpp"

namespace usod::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int64_t conv_out_size(int64_t in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Column layout: rows = C*K*K, cols = OH*OW. Zero padding.
void im2col(const double* img, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
            int64_t OH, int64_t OW, double* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        double* dst = col + ((c * k + dy) * k + dx) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride - pad + dy;
          if (iy < 0 || iy >= H) {
            std::fill_n(dst + oy * OW, OW, 0.0);
            continue;
          }
          const double* src_row = img + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t ix = ox * stride - pad + dx;
            dst[oy * OW + ox] = (ix < 0 || ix >= W) ? 0.0 : src_row[ix];
          }
        }
      }
    }
  }
}

void col2im_accumulate(const double* col, int64_t C, int64_t H, int64_t W, int k, int stride,
                       int pad, int64_t OH, int64_t OW, double* img) {
  for (int64_t c = 0; c < C; ++c) {
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const double* src = col + ((c * k + dy) * k + dx) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride - pad + dy;
          if (iy < 0 || iy >= H) continue;
          double* dst_row = img + (c * H + iy) * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t ix = ox * stride - pad + dx;
            if (ix >= 0 && ix < W) dst_row[ix] += src[oy * OW + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias, int stride, int pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.ndim() != 4 || wv.ndim() != 4) throw ContractError("conv2d expects NCHW input and OIKK weight");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t OC = wv.dim(0);
  int k = static_cast<int>(wv.dim(2));
  if (wv.dim(1) != C || wv.dim(2) != wv.dim(3))
    throw ContractError("conv2d: weight " + wv.shape_str() + " incompatible with input " + xv.shape_str());
  int64_t OH = conv_out_size(H, k, stride, pad);
  int64_t OW = conv_out_size(W, k, stride, pad);
  if (OH <= 0 || OW <= 0) throw ContractError("conv2d: output would be empty for input " + xv.shape_str());

  int64_t ck2 = C * k * k;
  Tensor out({N, OC, OH, OW});
  CMapMat wmat(wv.data(), OC, ck2);
  bool direct = (k == 1 && stride == 1 && pad == 0);
  Tensor colbuf;
  if (!direct) colbuf = Tensor({ck2, OH * OW});
  for (int64_t n = 0; n < N; ++n) {
    const double* img = xv.data() + n * C * H * W;
    if (!direct) im2col(img, C, H, W, k, stride, pad, OH, OW, colbuf.data());
    CMapMat col(direct ? img : colbuf.data(), ck2, OH * OW);
    MapMat omat(out.data() + n * OC * OH * OW, OC, OH * OW);
    omat.noalias() = wmat * col;
  }
  if (bias) {
    if (bias->value().numel() != OC) throw ContractError("conv2d: bias size mismatch");
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < OC; ++c) {
        double b = bias->value()[c];
        double* p = out.data() + (n * OC + c) * OH * OW;
        for (int64_t i = 0; i < OH * OW; ++i) p[i] += b;
      }
  }

  std::vector<Var> inputs = {x, weight};
  if (bias) inputs.push_back(*bias);
  Tensor xcopy = xv;
  bool has_bias = bias.has_value();
  return make_op(std::move(out), std::move(inputs),
                 [xcopy, N, C, H, W, OC, k, stride, pad, OH, OW, ck2, has_bias](Node& n) {
                   CMapMat wmat(n.inputs[1]->value.data(), OC, ck2);
                   bool direct = (k == 1 && stride == 1 && pad == 0);
                   Tensor colbuf;
                   if (!direct) colbuf = Tensor({ck2, OH * OW});
                   Tensor dcol({ck2, OH * OW});
                   for (int64_t b = 0; b < N; ++b) {
                     CMapMat gout(n.grad.data() + b * OC * OH * OW, OC, OH * OW);
                     if (n.inputs[1]->requires_grad) {
                       const double* img = xcopy.data() + b * C * H * W;
                       if (!direct) im2col(img, C, H, W, k, stride, pad, OH, OW, colbuf.data());
                       CMapMat col(direct ? img : colbuf.data(), ck2, OH * OW);
                       MapMat gw(n.inputs[1]->ensure_grad().data(), OC, ck2);
                       gw.noalias() += gout * col.transpose();
                     }
                     if (n.inputs[0]->requires_grad) {
                       MapMat dcolmat(dcol.data(), ck2, OH * OW);
                       dcolmat.noalias() = wmat.transpose() * gout;
                       double* gx = n.inputs[0]->ensure_grad().data() + b * C * H * W;
                       if (direct) {
                         for (int64_t i = 0; i < ck2 * OH * OW; ++i) gx[i] += dcol[i];
                       } else {
                         col2im_accumulate(dcol.data(), C, H, W, k, stride, pad, OH, OW, gx);
                       }
                     }
                     if (has_bias && n.inputs[2]->requires_grad) {
                       Tensor& gb = n.inputs[2]->ensure_grad();
                       for (int64_t c = 0; c < OC; ++c) {
                         const double* p = n.grad.data() + (b * OC + c) * OH * OW;
                         double s = 0.0;
                         for (int64_t i = 0; i < OH * OW; ++i) s += p[i];
                         gb[c] += s;
                       }
                     }
                   }
                 });
}

Var maxpool2d(const Var& x, int kernel, int stride, int pad) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ContractError("maxpool2d expects NCHW input");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  int64_t OH = conv_out_size(H, kernel, stride, pad);
  int64_t OW = conv_out_size(W, kernel, stride, pad);
  Tensor out({N, C, OH, OW});
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
  int64_t oidx = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* plane = xv.data() + (n * C + c) * H * W;
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int dy = 0; dy < kernel; ++dy) {
            int64_t iy = oy * stride - pad + dy;
            if (iy < 0 || iy >= H) continue;
            for (int dx = 0; dx < kernel; ++dx) {
              int64_t ix = ox * stride - pad + dx;
              if (ix < 0 || ix >= W) continue;
              double v = plane[iy * W + ix];
              if (v > best) {
                best = v;
                best_idx = (n * C + c) * H * W + iy * W + ix;
              }
            }
          }
          out[oidx] = best;
          argmax[static_cast<size_t>(oidx)] = best_idx;
          ++oidx;
        }
    }
  return make_op(std::move(out), {x}, [argmax](Node& n) {
    Tensor& gx = n.inputs[0]->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) gx[argmax[static_cast<size_t>(i)]] += n.grad[i];
  });
}

namespace {

struct BilinearTap {
  int64_t lo, hi;
  double w_hi;  // weight of hi; lo gets 1 - w_hi
};

std::vector<BilinearTap> bilinear_taps(int64_t in, int64_t out) {
  std::vector<BilinearTap> taps(static_cast<size_t>(out));
  double s = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * s - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t lo = static_cast<int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    double frac = src - static_cast<double>(lo);
    int64_t hi = std::min(lo + 1, in - 1);
    taps[static_cast<size_t>(o)] = {lo, hi, frac};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear_tensor(const Tensor& x, int64_t out_h, int64_t out_w) {
  if (x.ndim() != 4) throw ContractError("resize_bilinear expects NCHW input");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == out_h && W == out_w) return x;
  auto ty = bilinear_taps(H, out_h);
  auto tx = bilinear_taps(W, out_w);
  Tensor out({N, C, out_h, out_w});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* src = x.data() + (n * C + c) * H * W;
      double* dst = out.data() + (n * C + c) * out_h * out_w;
      for (int64_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[static_cast<size_t>(oy)];
        for (int64_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[static_cast<size_t>(ox)];
          double top = src[a.lo * W + b.lo] * (1 - b.w_hi) + src[a.lo * W + b.hi] * b.w_hi;
          double bot = src[a.hi * W + b.lo] * (1 - b.w_hi) + src[a.hi * W + b.hi] * b.w_hi;
          dst[oy * out_w + ox] = top * (1 - a.w_hi) + bot * a.w_hi;
        }
      }
    }
  return out;
}

Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ContractError("resize_bilinear expects NCHW input");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H == out_h && W == out_w) {
    return make_op(xv, {x}, [](Node& n) {
      if (n.inputs[0]->requires_grad) {
        Tensor& g = n.inputs[0]->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
      }
    });
  }
  Tensor out = resize_bilinear_tensor(xv, out_h, out_w);
  auto ty = bilinear_taps(H, out_h);
  auto tx = bilinear_taps(W, out_w);
  return make_op(std::move(out), {x}, [ty, tx, N, C, H, W, out_h, out_w](Node& n) {
    Tensor& gx = n.inputs[0]->ensure_grad();
    for (int64_t b = 0; b < N; ++b)
      for (int64_t c = 0; c < C; ++c) {
        double* dst = gx.data() + (b * C + c) * H * W;
        const double* g = n.grad.data() + (b * C + c) * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[static_cast<size_t>(oy)];
          for (int64_t ox = 0; ox < out_w; ++ox) {
            const auto& t = tx[static_cast<size_t>(ox)];
            double gv = g[oy * out_w + ox];
            dst[a.lo * W + t.lo] += gv * (1 - a.w_hi) * (1 - t.w_hi);
            dst[a.lo * W + t.hi] += gv * (1 - a.w_hi) * t.w_hi;
            dst[a.hi * W + t.lo] += gv * a.w_hi * (1 - t.w_hi);
            dst[a.hi * W + t.hi] += gv * a.w_hi * t.w_hi;
          }
        }
      }
  });
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool training, double momentum, double eps) {
  const Tensor& xv = x.value();
  if (xv.ndim() != 4) throw ContractError("batchnorm2d expects NCHW input");
  int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.numel() != C ||
      state.running_var.numel() != C)
    throw ContractError("batchnorm2d: per-channel parameter size mismatch");
  int64_t m = N * H * W;
  int64_t plane = H * W;

  Tensor mean({C}), var({C});
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = xv.data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* p = xv.data() + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      mean[c] = mu;
      var[c] = v / static_cast<double>(m);
    }
    // Running stats use the unbiased variance.
    double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    for (int64_t c = 0; c < C; ++c) {
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * mean[c];
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor inv_std({C});
  for (int64_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  Tensor xhat({N, C, H, W});
  Tensor out({N, C, H, W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* p = xv.data() + (n * C + c) * plane;
      double* ph = xhat.data() + (n * C + c) * plane;
      double* po = out.data() + (n * C + c) * plane;
      double mu = mean[c], is = inv_std[c], g = gamma.value()[c], b = beta.value()[c];
      for (int64_t i = 0; i < plane; ++i) {
        ph[i] = (p[i] - mu) * is;
        po[i] = g * ph[i] + b;
      }
    }

  return make_op(std::move(out), {x, gamma, beta},
                 [xhat, inv_std, training, N, C, plane, m](Node& n) {
                   const Tensor& gout = n.grad;
                   Tensor sum_g({C}), sum_gx({C});
                   for (int64_t c = 0; c < C; ++c) {
                     double sg = 0.0, sgx = 0.0;
                     for (int64_t b = 0; b < N; ++b) {
                       const double* g = gout.data() + (b * C + c) * plane;
                       const double* h = xhat.data() + (b * C + c) * plane;
                       for (int64_t i = 0; i < plane; ++i) {
                         sg += g[i];
                         sgx += g[i] * h[i];
                       }
                     }
                     sum_g[c] = sg;
                     sum_gx[c] = sgx;
                   }
                   if (n.inputs[1]->requires_grad) {
                     Tensor& gg = n.inputs[1]->ensure_grad();
                     for (int64_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
                   }
                   if (n.inputs[2]->requires_grad) {
                     Tensor& gb = n.inputs[2]->ensure_grad();
                     for (int64_t c = 0; c < C; ++c) gb[c] += sum_g[c];
                   }
                   if (n.inputs[0]->requires_grad) {
                     Tensor& gx = n.inputs[0]->ensure_grad();
                     const Tensor& gamma_v = n.inputs[1]->value;
                     for (int64_t b = 0; b < N; ++b)
                       for (int64_t c = 0; c < C; ++c) {
                         const double* g = gout.data() + (b * C + c) * plane;
                         const double* h = xhat.data() + (b * C + c) * plane;
                         double* dst = gx.data() + (b * C + c) * plane;
                         double gs = gamma_v[c] * inv_std[c];
                         if (training) {
                           double inv_m = 1.0 / static_cast<double>(m);
                           for (int64_t i = 0; i < plane; ++i)
                             dst[i] += gs * (g[i] - inv_m * sum_g[c] - h[i] * inv_m * sum_gx[c]);
                         } else {
                           for (int64_t i = 0; i < plane; ++i) dst[i] += gs * g[i];
                         }
                       }
                   }
                 });
}

}  // namespace usod::ad
