#pragma once

#include <vector>

#include "usod/encoder.hpp"
#include "usod/nn.hpp"

namespace usod {

// Bias-free 1x1 projection + batch norm + sigmoid producing the single-channel
// class-agnostic activation map from the F4 (+) up(F5) concatenation.
struct ActivationHead {
  nn::Conv2d proj;
  nn::BatchNorm2d bn;

  ActivationHead() = default;
  ActivationHead(int64_t in_channels, Rng& rng);

  ad::Var forward(const ad::Var& fcat, bool training);
  void collect(const std::string& prefix, nn::ParamMap& pm);
};

// Per-image pooled foreground/background feature vectors (N x d each).
struct SampleDescriptors {
  ad::Var fg;
  ad::Var bg;
};

// Flattened cross-image similarity sets. fg_fg and bg_bg exclude the i = j
// diagonal (N(N-1) entries); fg_bg keeps all N*N pairs.
struct SimilaritySets {
  ad::Var fg_fg;
  ad::Var bg_bg;
  ad::Var fg_bg;
};

struct SoslTerms {
  ad::Var total;
  double pos_fg = 0.0;
  double pos_bg = 0.0;
  double neg = 0.0;
};

// F4 concatenated with F5 upsampled onto F4's grid: the head's input tensor.
ad::Var fused_features(const FeaturePyramid& pyramid);

// Initial activation map at F4 resolution.
ad::Var activation_map(const FeaturePyramid& pyramid, ActivationHead& head, bool training);

// Per-pixel maximum of per-scale maps, each resized to the first map's grid.
ad::Var multiscale_fuse(const std::vector<ad::Var>& maps);

// Eq.-style unnormalized weighted pooling: fg = G (x) F^T, bg = (1-G) (x) F^T.
SampleDescriptors split_samples(const ad::Var& activation, const ad::Var& features);

// Cosine similarities across the batch; zero-norm descriptors yield 0.
SimilaritySets similarity_sets(const SampleDescriptors& samples, bool quiet = false);

// L_NEG = -mean log(1 - s) over the fg/bg set; log arguments clamp to
// [epsilon, 1].
ad::Var negative_loss(const ad::Var& similarity_set, double epsilon = 1e-7);

// L_POS = -mean H(s_k) log(s_k), H(s_k) = exp(-alpha_rank * rank(s_k)) with
// 0-based ranks in descending similarity order; log arguments clamp to
// [epsilon, 1].
ad::Var positive_loss(const ad::Var& similarity_set, double alpha_rank = 0.25,
                      double epsilon = 1e-7);

// L_sosl = L_POS(fg set) + L_POS(bg set) + L_NEG(fg/bg set). With batch size
// 1 the positive terms are skipped (warning).
SoslTerms sosl_loss(const SimilaritySets& sets, double alpha_rank = 0.25, double epsilon = 1e-7);

// Flips G per image to 1-G when the 1-pixel border's mean activation exceeds
// the central half-crop's mean (foreground polarity deduction, applied only
// after the warm-up epoch). The returned flags mark which images flipped.
ad::Var orient_foreground(const ad::Var& activation, std::vector<bool>* flipped = nullptr);

}  // namespace usod
