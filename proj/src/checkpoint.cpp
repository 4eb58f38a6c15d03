#include "usod/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "usod/common.hpp"

namespace fs = std::filesystem;

namespace usod {

namespace {

constexpr char kMagic[8] = {'U', 'S', 'O', 'D', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint: " + path);
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is, const std::string& path) {
  uint32_t len = read_pod<uint32_t>(is, path);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw IoError("truncated checkpoint: " + path);
  return s;
}

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const std::string* Archive::find_string(const std::string& key) const {
  for (const auto& [k, v] : strings)
    if (k == key) return &v;
  return nullptr;
}

void Archive::save(const std::string& path) const {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    write_pod<uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
      write_str(os, name);
      write_pod<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
      for (int64_t d = 0; d < t.ndim(); ++d) write_pod<int64_t>(os, t.dim(d));
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    write_pod<uint64_t>(os, strings.size());
    for (const auto& [key, value] : strings) {
      write_str(os, key);
      write_pod<uint64_t>(os, value.size());
      os.write(value.data(), static_cast<std::streamsize>(value.size()));
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

Archive Archive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint archive (bad magic): " + path);

  Archive a;
  uint64_t n_tensors = read_pod<uint64_t>(is, path);
  for (uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = read_str(is, path);
    uint32_t ndim = read_pod<uint32_t>(is, path);
    std::vector<int64_t> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_pod<int64_t>(is, path);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint: " + path);
    a.tensors.emplace_back(std::move(name), std::move(t));
  }
  uint64_t n_strings = read_pod<uint64_t>(is, path);
  for (uint64_t i = 0; i < n_strings; ++i) {
    std::string key = read_str(is, path);
    uint64_t len = read_pod<uint64_t>(is, path);
    std::string value(len, '\0');
    is.read(value.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("truncated checkpoint: " + path);
    a.strings.emplace_back(std::move(key), std::move(value));
  }
  return a;
}

}  // namespace usod
