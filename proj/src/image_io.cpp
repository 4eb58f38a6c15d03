#include "usod/image_io.hpp"

#include <algorithm>
#include <filesystem>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "usod/common.hpp"

namespace fs = std::filesystem;

namespace usod {

Tensor load_image_rgb(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("failed to read image: " + path);
  Tensor out({1, 3, img.rows, img.cols});
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) {
      cv::Vec3b bgr = img.at<cv::Vec3b>(y, x);
      out.at4(0, 0, y, x) = bgr[2] / 255.0;
      out.at4(0, 1, y, x) = bgr[1] / 255.0;
      out.at4(0, 2, y, x) = bgr[0] / 255.0;
    }
  return out;
}

Tensor load_mask(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw IoError("failed to read mask: " + path);
  Tensor out({1, 1, img.rows, img.cols});
  for (int y = 0; y < img.rows; ++y)
    for (int x = 0; x < img.cols; ++x) out.at4(0, 0, y, x) = img.at<uint8_t>(y, x) / 255.0;
  return out;
}

namespace {

std::pair<int64_t, int64_t> plane_dims(const Tensor& map) {
  if (map.ndim() == 2) return {map.dim(0), map.dim(1)};
  if (map.ndim() == 3 && map.dim(0) == 1) return {map.dim(1), map.dim(2)};
  if (map.ndim() == 4 && map.dim(0) == 1 && map.dim(1) == 1) return {map.dim(2), map.dim(3)};
  throw ContractError("expected a single-channel map, got " + map.shape_str());
}

uint8_t to_byte(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return static_cast<uint8_t>(std::lround(v * 255.0));
}

void ensure_parent_dir(const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

void save_mask_png(const std::string& path, const Tensor& map) {
  auto [H, W] = plane_dims(map);
  cv::Mat img(static_cast<int>(H), static_cast<int>(W), CV_8UC1);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      img.at<uint8_t>(static_cast<int>(y), static_cast<int>(x)) = to_byte(map[y * W + x]);
  ensure_parent_dir(path);
  if (!cv::imwrite(path, img)) throw IoError("failed to write PNG: " + path);
}

void save_image_png(const std::string& path, const Tensor& image) {
  const Tensor* img = &image;
  Tensor squeezed;
  if (image.ndim() == 4 && image.dim(0) == 1) {
    squeezed = image.reshaped({image.dim(1), image.dim(2), image.dim(3)});
    img = &squeezed;
  }
  if (img->ndim() != 3 || img->dim(0) != 3)
    throw ContractError("save_image_png expects 3xHxW, got " + image.shape_str());
  int64_t H = img->dim(1), W = img->dim(2);
  cv::Mat out(static_cast<int>(H), static_cast<int>(W), CV_8UC3);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      cv::Vec3b& bgr = out.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
      bgr[2] = to_byte((*img)[(0 * H + y) * W + x]);
      bgr[1] = to_byte((*img)[(1 * H + y) * W + x]);
      bgr[0] = to_byte((*img)[(2 * H + y) * W + x]);
    }
  ensure_parent_dir(path);
  if (!cv::imwrite(path, out)) throw IoError("failed to write PNG: " + path);
}

std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<std::string> list_subdirs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace usod
