#pragma once

#include <string>
#include <vector>

#include "usod/common.hpp"
#include "usod/tensor.hpp"

namespace usod {

// Flat directory of images, loaded resized to a square training size.
// An optional sibling gt/ subdirectory holds binary masks for evaluation
// only; training never reads it.
class Dataset {
 public:
  Dataset(std::string dir, int64_t image_size);

  int64_t size() const { return static_cast<int64_t>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& dir() const { return dir_; }

  // N x 3 x S x S batch in [0, 1] for the given sample indices.
  Tensor load_batch(const std::vector<int64_t>& indices) const;

  // Original-size single image (1 x 3 x H x W).
  Tensor load_original(int64_t index) const;

 private:
  std::string dir_;
  std::vector<std::string> names_;
  int64_t image_size_;
};

// Horizontal flip (p = 0.5) then random crop (area scale 0.8..1.0, square)
// resized back to the input size; one flip + crop decision per image, drawn
// from rng in a fixed order so runs are reproducible.
Tensor augment_batch(const Tensor& batch, Rng& rng);

// Writes `count` synthetic images (and gt/ masks) of side `size`: textured
// dark backgrounds, one bright warm-toned salient blob per image with a
// center-biased position, plus a few small bright distractor specks that are
// excluded from the ground truth.
void generate_synthetic_dataset(const std::string& dir, int count, int size, uint64_t seed);

}  // namespace usod
