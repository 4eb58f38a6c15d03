#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "usod/tensor.hpp"

namespace usod {

// Named-tensor binary archive (see docs/checkpoint_format.md). Holds ordered
// (name, tensor) entries plus (key, value) string metadata. Saves are atomic:
// write to a temporary file, then rename.
struct Archive {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, std::string>> strings;

  void add(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
  void add_string(const std::string& key, const std::string& value) {
    strings.emplace_back(key, value);
  }

  const Tensor* find(const std::string& name) const;
  const std::string* find_string(const std::string& key) const;

  void save(const std::string& path) const;
  static Archive load(const std::string& path);
};

}  // namespace usod
