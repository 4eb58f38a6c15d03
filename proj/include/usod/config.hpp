#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace usod {

// Flat key = value configuration. Lines starting with '#' or ';' are
// comments; blank lines are ignored; values keep internal whitespace.
class Config {
 public:
  Config() = default;

  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::string require_str(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;

  // Canonical serialization: keys sorted, one "key = value" per line.
  std::string serialize() const;

  // FNV-1a hash of the canonical serialization, as 16 hex digits.
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// Parses "inf"/"+inf" as infinity; otherwise strtod with full-token check.
double parse_double(const std::string& text, const std::string& context);

}  // namespace usod
