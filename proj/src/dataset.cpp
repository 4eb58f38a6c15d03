#include "usod/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "usod/autodiff.hpp"
#include "usod/image_io.hpp"

namespace fs = std::filesystem;

namespace usod {

Dataset::Dataset(std::string dir, int64_t image_size)
    : dir_(std::move(dir)), image_size_(image_size) {
  names_ = list_images(dir_);
  if (names_.empty()) throw IoError("dataset directory holds no images: " + dir_);
}

Tensor Dataset::load_batch(const std::vector<int64_t>& indices) const {
  if (indices.empty()) throw ContractError("load_batch: empty index list");
  Tensor batch({static_cast<int64_t>(indices.size()), 3, image_size_, image_size_});
  int64_t n = 0;
  for (int64_t idx : indices) {
    Tensor img = load_original(idx);
    img = ad::resize_bilinear_tensor(img, image_size_, image_size_);
    std::copy_n(img.data(), img.numel(), batch.data() + n * img.numel());
    ++n;
  }
  return batch;
}

Tensor Dataset::load_original(int64_t index) const {
  if (index < 0 || index >= size()) throw ContractError("dataset index out of range");
  return load_image_rgb((fs::path(dir_) / names_[static_cast<size_t>(index)]).string());
}

Tensor augment_batch(const Tensor& batch, Rng& rng) {
  if (batch.ndim() != 4) throw ContractError("augment_batch expects NCHW");
  int64_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor out(batch.shape());
  for (int64_t n = 0; n < N; ++n) {
    bool flip = rng.bernoulli(0.5);
    double area = rng.uniform(0.8, 1.0);
    int64_t ch = std::max<int64_t>(1, static_cast<int64_t>(std::lround(H * std::sqrt(area))));
    int64_t cw = std::max<int64_t>(1, static_cast<int64_t>(std::lround(W * std::sqrt(area))));
    ch = std::min(ch, H);
    cw = std::min(cw, W);
    int64_t y0 = rng.uniform_int(H - ch + 1);
    int64_t x0 = rng.uniform_int(W - cw + 1);

    Tensor crop({1, C, ch, cw});
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x)
          crop.at4(0, c, y, x) = batch.at4(n, c, y0 + y, x0 + x);
    Tensor resized = ad::resize_bilinear_tensor(crop, H, W);
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          double v = resized.at4(0, c, y, x);
          out.at4(n, c, y, flip ? W - 1 - x : x) = v;
        }
  }
  return out;
}

void generate_synthetic_dataset(const std::string& dir, int count, int size, uint64_t seed) {
  if (count < 1 || size < 32) throw ConfigError("synthetic dataset needs count >= 1, size >= 32");
  fs::create_directories(dir);
  fs::create_directories(fs::path(dir) / "gt");
  Rng rng(seed);
  double s = static_cast<double>(size);

  for (int i = 0; i < count; ++i) {
    Tensor img({3, size, size});
    Tensor gt({static_cast<int64_t>(size), static_cast<int64_t>(size)}, 0.0);

    // Cool, dark, lightly textured background.
    double base_r = rng.uniform(0.06, 0.16);
    double base_g = rng.uniform(0.08, 0.18);
    double base_b = rng.uniform(0.16, 0.30);
    double tex_fx = rng.uniform(1.0, 3.0) * 2.0 * M_PI / s;
    double tex_fy = rng.uniform(1.0, 3.0) * 2.0 * M_PI / s;
    double tex_phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        double tex = 0.04 * std::sin(tex_fx * x + tex_fy * y + tex_phase);
        double noise = rng.uniform(-0.03, 0.03);
        img[(0 * size + y) * size + x] = std::clamp(base_r + tex + noise, 0.0, 1.0);
        img[(1 * size + y) * size + x] = std::clamp(base_g + tex + noise, 0.0, 1.0);
        img[(2 * size + y) * size + x] = std::clamp(base_b + tex + noise, 0.0, 1.0);
      }

    // One bright warm elliptical blob, biased toward the center.
    double cx = s * (0.5 + rng.uniform(-0.12, 0.12));
    double cy = s * (0.5 + rng.uniform(-0.12, 0.12));
    double rx = s * rng.uniform(0.16, 0.26);
    double ry = s * rng.uniform(0.16, 0.26);
    double blob_r = rng.uniform(0.78, 0.95);
    double blob_g = rng.uniform(0.45, 0.65);
    double blob_b = rng.uniform(0.08, 0.25);
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        double dx = (x - cx) / rx, dy = (y - cy) / ry;
        if (dx * dx + dy * dy > 1.0) continue;
        double noise = rng.uniform(-0.03, 0.03);
        img[(0 * size + y) * size + x] = std::clamp(blob_r + noise, 0.0, 1.0);
        img[(1 * size + y) * size + x] = std::clamp(blob_g + noise, 0.0, 1.0);
        img[(2 * size + y) * size + x] = std::clamp(blob_b + noise, 0.0, 1.0);
        gt[y * size + x] = 1.0;
      }

    // Small bright distractor specks outside the blob, absent from gt.
    int specks = static_cast<int>(rng.uniform_int(4));  // 0..3
    for (int sp = 0; sp < specks; ++sp) {
      double px = 0.0, py = 0.0;
      bool placed = false;
      for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
        px = rng.uniform(0.08, 0.92) * s;
        py = rng.uniform(0.08, 0.92) * s;
        double dx = (px - cx) / (rx + 4.0), dy = (py - cy) / (ry + 4.0);
        placed = dx * dx + dy * dy > 1.2;
      }
      if (!placed) continue;
      double pr = rng.uniform(1.0, 2.5);
      for (int64_t y = std::max<int64_t>(0, static_cast<int64_t>(py - pr - 1));
           y <= std::min<int64_t>(size - 1, static_cast<int64_t>(py + pr + 1)); ++y)
        for (int64_t x = std::max<int64_t>(0, static_cast<int64_t>(px - pr - 1));
             x <= std::min<int64_t>(size - 1, static_cast<int64_t>(px + pr + 1)); ++x) {
          double dx = x - px, dy = y - py;
          if (dx * dx + dy * dy > pr * pr) continue;
          img[(0 * size + y) * size + x] = std::clamp(blob_r + 0.02, 0.0, 1.0);
          img[(1 * size + y) * size + x] = std::clamp(blob_g + 0.02, 0.0, 1.0);
          img[(2 * size + y) * size + x] = std::clamp(blob_b - 0.02, 0.0, 1.0);
        }
    }

    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d.png", i);
    save_image_png((fs::path(dir) / name).string(), img);
    save_mask_png((fs::path(dir) / "gt" / name).string(), gt);
  }
}

}  // namespace usod
