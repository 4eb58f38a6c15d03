#include "usod/common.hpp"

#include <cmath>

namespace usod {

void log_warn(const std::string& msg) { std::cerr << "[usod warn] " << msg << "\n"; }
void log_info(const std::string& msg) { std::cerr << "[usod] " << msg << "\n"; }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller on raw uniforms keeps the sequence libstdc++-independent.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << " " << (have_spare_ ? 1 : 0) << " ";
  os.precision(17);
  os << spare_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  int spare_flag = 0;
  is >> engine_ >> spare_flag >> spare_;
  if (is.fail()) throw IoError("invalid RNG state string");
  have_spare_ = spare_flag != 0;
}

}  // namespace usod
