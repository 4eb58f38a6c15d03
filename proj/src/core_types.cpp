#include "usod/core_types.hpp"

#include <algorithm>
#include <numeric>

namespace usod {

void ImageBatch::validate() const {
  if (data.ndim() != 4 || data.dim(1) != 3)
    throw ContractError("ImageBatch expects Nx3xHxW, got " + data.shape_str());
  if (data.dim(0) < 1) throw ContractError("ImageBatch: empty batch");
  if (data.dim(2) < 32 || data.dim(3) < 32)
    throw ContractError("ImageBatch: spatial size below 32, got " + data.shape_str());
  if (!data.all_finite()) throw ContractError("ImageBatch: non-finite values");
  if (data.min() < 0.0 || data.max() > 1.0)
    throw ContractError("ImageBatch: values outside [0,1]");
}

void SaliencyLabel::validate() const {
  if (data.ndim() != 4 || data.dim(1) != 1)
    throw ContractError("SaliencyLabel expects Nx1xHxW, got " + data.shape_str());
  if (!data.all_finite()) throw ContractError("SaliencyLabel: non-finite values");
  if (data.min() < 0.0 || data.max() > 1.0)
    throw ContractError("SaliencyLabel: values outside [0,1]");
}

int64_t CertaintyMask::certain_count() const {
  int64_t n = 0;
  for (int64_t i = 0; i < data.numel(); ++i)
    if (data[i] != kIgnore) ++n;
  return n;
}

CertaintyMask binarize_certain(const SaliencyLabel& label, double theta_f, double theta_g) {
  if (!(0.0 <= theta_g && theta_g < theta_f && theta_f <= 1.0))
    throw ConfigError("binarize_certain requires 0 <= theta_g < theta_f <= 1");
  CertaintyMask mask;
  mask.data = Tensor(label.data.shape());
  for (int64_t i = 0; i < label.data.numel(); ++i) {
    double v = label.data[i];
    mask.data[i] = v >= theta_f ? kForeground : (v <= theta_g ? kBackground : kIgnore);
  }
  return mask;
}

Tensor threshold_binary(const Tensor& plane, double threshold) {
  Tensor out(plane.shape());
  for (int64_t i = 0; i < plane.numel(); ++i) out[i] = plane[i] >= threshold ? 1.0 : 0.0;
  return out;
}

namespace {

int64_t find_root(std::vector<int64_t>& parent, int64_t i) {
  while (parent[static_cast<size_t>(i)] != i) {
    parent[static_cast<size_t>(i)] = parent[static_cast<size_t>(parent[static_cast<size_t>(i)])];
    i = parent[static_cast<size_t>(i)];
  }
  return i;
}

void union_roots(std::vector<int64_t>& parent, int64_t a, int64_t b) {
  a = find_root(parent, a);
  b = find_root(parent, b);
  if (a != b) parent[static_cast<size_t>(std::max(a, b))] = std::min(a, b);
}

}  // namespace

ComponentSet connected_components(const Tensor& binary_map) {
  if (binary_map.ndim() != 2)
    throw ContractError("connected_components expects an HxW plane, got " + binary_map.shape_str());
  int64_t H = binary_map.dim(0), W = binary_map.dim(1);
  for (int64_t i = 0; i < binary_map.numel(); ++i)
    if (binary_map[i] != 0.0 && binary_map[i] != 1.0)
      throw ContractError("connected_components: input is not strictly binary");

  // Two-pass union-find over the 4 already-scanned 8-neighbors.
  std::vector<int64_t> labels(static_cast<size_t>(H * W), -1);
  std::vector<int64_t> parent;
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      int64_t idx = y * W + x;
      if (binary_map[idx] == 0.0) continue;
      constexpr int64_t dy[4] = {0, -1, -1, -1};
      constexpr int64_t dx[4] = {-1, -1, 0, 1};
      int64_t assigned = -1;
      for (int k = 0; k < 4; ++k) {
        int64_t ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || nx < 0 || nx >= W) continue;
        int64_t nl = labels[static_cast<size_t>(ny * W + nx)];
        if (nl < 0) continue;
        if (assigned < 0)
          assigned = nl;
        else
          union_roots(parent, assigned, nl);
      }
      if (assigned < 0) {
        assigned = static_cast<int64_t>(parent.size());
        parent.push_back(assigned);
      }
      labels[static_cast<size_t>(idx)] = assigned;
    }

  // Second pass: resolve roots in scan order so component order matches the
  // first pixel encountered.
  std::vector<int64_t> root_to_comp(parent.size(), -1);
  ComponentSet comps;
  for (int64_t idx = 0; idx < H * W; ++idx) {
    int64_t l = labels[static_cast<size_t>(idx)];
    if (l < 0) continue;
    int64_t root = find_root(parent, l);
    int64_t& comp = root_to_comp[static_cast<size_t>(root)];
    if (comp < 0) {
      comp = static_cast<int64_t>(comps.size());
      comps.push_back({});
    }
    comps[static_cast<size_t>(comp)].pixels.push_back(idx);
  }
  for (auto& c : comps) c.area = static_cast<int64_t>(c.pixels.size());

  std::stable_sort(comps.begin(), comps.end(),
                   [](const Component& a, const Component& b) { return a.area > b.area; });
  return comps;
}

}  // namespace usod
