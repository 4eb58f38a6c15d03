#pragma once

#include <string>
#include <utility>
#include <vector>

#include "usod/tensor.hpp"

namespace usod {

// Loads a color image as a 1x3xHxW tensor with RGB values in [0, 1].
Tensor load_image_rgb(const std::string& path);

// Loads a grayscale mask as a 1x1xHxW tensor in [0, 1].
Tensor load_mask(const std::string& path);

// Writes a single-channel map as an 8-bit PNG; values are clamped to [0, 1]
// and scaled linearly to 0-255. Accepts HxW, 1xHxW or 1x1xHxW.
void save_mask_png(const std::string& path, const Tensor& map);

// Writes a 3xHxW or 1x3xHxW RGB tensor in [0, 1] as an 8-bit color PNG.
void save_image_png(const std::string& path, const Tensor& image);

// Sorted basenames (with extension) of image files directly inside dir.
std::vector<std::string> list_images(const std::string& dir);

// Sorted names of immediate subdirectories.
std::vector<std::string> list_subdirs(const std::string& dir);

}  // namespace usod
