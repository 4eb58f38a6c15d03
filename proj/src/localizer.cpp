#include "usod/localizer.hpp"

#include <algorithm>
#include <numeric>

namespace usod {

ActivationHead::ActivationHead(int64_t in_channels, Rng& rng) {
  proj = nn::Conv2d(in_channels, 1, 1, 1, 0, /*with_bias=*/false, rng);
  bn = nn::BatchNorm2d(1);
}

ad::Var ActivationHead::forward(const ad::Var& fcat, bool training) {
  return ad::sigmoid(bn.forward(proj.forward(fcat), training));
}

void ActivationHead::collect(const std::string& prefix, nn::ParamMap& pm) {
  proj.collect(prefix + ".proj", pm);
  bn.collect(prefix + ".bn", pm);
}

ad::Var fused_features(const FeaturePyramid& pyramid) {
  const ad::Var& f4 = pyramid.f(4);
  const ad::Var& f5 = pyramid.f(5);
  ad::Var f5_up = ad::resize_bilinear(f5, f4.shape()[2], f4.shape()[3]);
  return ad::concat_channels(f4, f5_up);
}

ad::Var activation_map(const FeaturePyramid& pyramid, ActivationHead& head, bool training) {
  ad::Var fcat = fused_features(pyramid);
  if (fcat.shape()[1] != head.proj.weight.shape()[1])
    throw ContractError("activation head expects " + std::to_string(head.proj.weight.shape()[1]) +
                        " channels, got " + std::to_string(fcat.shape()[1]));
  return head.forward(fcat, training);
}

ad::Var multiscale_fuse(const std::vector<ad::Var>& maps) {
  if (maps.size() < 2) throw ContractError("multiscale_fuse expects at least two scales");
  int64_t h = maps[0].shape()[2], w = maps[0].shape()[3];
  std::vector<ad::Var> aligned;
  aligned.reserve(maps.size());
  for (const auto& m : maps) aligned.push_back(ad::resize_bilinear(m, h, w));
  return ad::maxn(aligned);
}

SampleDescriptors split_samples(const ad::Var& activation, const ad::Var& features) {
  const auto& gs = activation.shape();
  const auto& fs = features.shape();
  if (gs[0] != fs[0] || gs[2] != fs[2] || gs[3] != fs[3])
    throw ContractError("split_samples: activation grid " + activation.value().shape_str() +
                        " does not match features " + features.value().shape_str());
  SampleDescriptors out;
  out.fg = ad::weighted_spatial_pool(activation, features);
  out.bg = ad::weighted_spatial_pool(ad::one_minus(activation), features);
  return out;
}

namespace {

std::vector<int64_t> off_diagonal_indices(int64_t n) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(n * (n - 1)));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      if (i != j) idx.push_back(i * n + j);
  return idx;
}

}  // namespace

SimilaritySets similarity_sets(const SampleDescriptors& samples, bool quiet) {
  int64_t n = samples.fg.shape()[0];
  ad::Var sim_ff = ad::cosine_cross(samples.fg, samples.fg, quiet);
  ad::Var sim_bb = ad::cosine_cross(samples.bg, samples.bg, quiet);
  ad::Var sim_fb = ad::cosine_cross(samples.fg, samples.bg, quiet);

  SimilaritySets sets;
  if (n >= 2) {
    auto off_diag = off_diagonal_indices(n);
    sets.fg_fg = ad::gather(sim_ff, off_diag);
    sets.bg_bg = ad::gather(sim_bb, off_diag);
  }
  std::vector<int64_t> all(static_cast<size_t>(n * n));
  std::iota(all.begin(), all.end(), 0);
  sets.fg_bg = ad::gather(sim_fb, all);
  return sets;
}

ad::Var negative_loss(const ad::Var& similarity_set, double epsilon) {
  if (!similarity_set.defined() || similarity_set.numel() == 0)
    throw ContractError("negative_loss: empty similarity set");
  ad::Var args = ad::clamp(ad::one_minus(similarity_set), epsilon, 1.0);
  return ad::scale(ad::mean_all(ad::vlog(args)), -1.0);
}

ad::Var positive_loss(const ad::Var& similarity_set, double alpha_rank, double epsilon) {
  if (!similarity_set.defined() || similarity_set.numel() == 0)
    throw ContractError("positive_loss: empty similarity set");
  int64_t k = similarity_set.numel();

  // Rank by descending similarity; ties keep the lower original index first.
  std::vector<int64_t> order(static_cast<size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  const Tensor& values = similarity_set.value();
  std::stable_sort(order.begin(), order.end(),
                   [&values](int64_t a, int64_t b) { return values[a] > values[b]; });
  Tensor weights(similarity_set.shape());
  for (int64_t rank = 0; rank < k; ++rank)
    weights[order[static_cast<size_t>(rank)]] = std::exp(-alpha_rank * static_cast<double>(rank));

  ad::Var logs = ad::vlog(ad::clamp(similarity_set, epsilon, 1.0));
  ad::Var weighted = ad::mul_const(logs, weights);
  return ad::scale(ad::sum_all(weighted), -1.0 / static_cast<double>(k));
}

SoslTerms sosl_loss(const SimilaritySets& sets, double alpha_rank, double epsilon) {
  SoslTerms terms;
  std::vector<ad::Var> parts;
  std::vector<double> weights;
  if (sets.fg_fg.defined() && sets.fg_fg.numel() > 0) {
    ad::Var pos_f = positive_loss(sets.fg_fg, alpha_rank, epsilon);
    ad::Var pos_b = positive_loss(sets.bg_bg, alpha_rank, epsilon);
    terms.pos_fg = pos_f.scalar();
    terms.pos_bg = pos_b.scalar();
    parts.push_back(pos_f);
    parts.push_back(pos_b);
    weights.insert(weights.end(), {1.0, 1.0});
  } else {
    log_warn("sosl_loss: batch size 1, skipping positive terms (contrast needs N >= 2)");
  }
  ad::Var neg = negative_loss(sets.fg_bg, epsilon);
  terms.neg = neg.scalar();
  parts.push_back(neg);
  weights.push_back(1.0);
  terms.total = ad::affine_sum(parts, weights);
  return terms;
}

ad::Var orient_foreground(const ad::Var& activation, std::vector<bool>* flipped) {
  const Tensor& g = activation.value();
  if (g.ndim() != 4 || g.dim(1) != 1)
    throw ContractError("orient_foreground expects Nx1xHxW activation");
  int64_t n_images = g.dim(0), h = g.dim(2), w = g.dim(3);
  std::vector<bool> flags(static_cast<size_t>(n_images), false);
  for (int64_t n = 0; n < n_images; ++n) {
    double border_sum = 0.0;
    int64_t border_count = 0;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        if (y != 0 && y != h - 1 && x != 0 && x != w - 1) continue;
        border_sum += g.at4(n, 0, y, x);
        ++border_count;
      }
    // Central half-crop: the middle h/2 x w/2 window.
    int64_t y0 = h / 4, x0 = w / 4;
    int64_t y1 = y0 + h / 2, x1 = x0 + w / 2;
    double center_sum = 0.0;
    int64_t center_count = 0;
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x) {
        center_sum += g.at4(n, 0, y, x);
        ++center_count;
      }
    double border_mean = border_count > 0 ? border_sum / static_cast<double>(border_count) : 0.0;
    double center_mean = center_count > 0 ? center_sum / static_cast<double>(center_count) : 0.0;
    flags[static_cast<size_t>(n)] = border_mean > center_mean;
  }
  if (flipped) *flipped = flags;
  return ad::conditional_invert(activation, flags);
}

}  // namespace usod
