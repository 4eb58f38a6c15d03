#pragma once

#include <cstdint>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace usod {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Bad thresholds, malformed config files, inconsistent hyperparameters.
struct ConfigError : Error {
  using Error::Error;
};
// Caller violated a documented precondition (non-binary input, grid mismatch, ...).
struct ContractError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct TrainError : Error {
  using Error::Error;
};

void log_warn(const std::string& msg);
void log_info(const std::string& msg);

// Deterministic RNG. Wraps mt19937_64 but derives doubles from raw draws so
// sequences do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) { return n <= 1 ? 0 : static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

  bool bernoulli(double p) { return uniform() < p; }

  double normal();  // standard normal via Box-Muller

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace usod
