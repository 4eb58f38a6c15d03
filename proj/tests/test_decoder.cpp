#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "usod/decoder.hpp"

using namespace usod;

namespace {

const std::vector<int64_t> kToyChannels = {16, 24, 32, 48, 64};

// Deterministic five-level pyramid matching the toy backbone's layout at a
// 32x32 input: strides {1,2,4,8,16}.
FeaturePyramid toy_like_pyramid(int64_t n, double phase = 0.0) {
  FeaturePyramid p;
  int64_t sizes[5] = {32, 16, 8, 4, 2};
  for (int k = 0; k < 5; ++k)
    p.levels[static_cast<size_t>(k)] = ad::Var(
        testutil::ramp({n, kToyChannels[static_cast<size_t>(k)], sizes[k], sizes[k]},
                       0.137 + 0.05 * k, 0.8, phase));
  return p;
}

bool has_param(const nn::ParamMap& pm, const std::string& name) {
  for (const auto& [k, v] : pm.params)
    if (k == name) return true;
  return false;
}

bool has_buffer(const nn::ParamMap& pm, const std::string& name) {
  for (const auto& [k, v] : pm.buffers)
    if (k == name) return true;
  return false;
}

const Tensor* find_buffer(const nn::ParamMap& pm, const std::string& name) {
  for (const auto& [k, v] : pm.buffers)
    if (k == name) return v;
  return nullptr;
}

ad::Var* find_param(nn::ParamMap& pm, const std::string& name) {
  for (auto& [k, v] : pm.params)
    if (k == name) return &v;
  return nullptr;
}

}  // namespace

TEST_CASE("decoder output has the requested grid and sigmoid range") {
  Rng rng(7);
  Decoder dec(kToyChannels, DecoderConfig{}, rng);
  FeaturePyramid p = toy_like_pyramid(2);

  ad::Var out = dec.forward(p, 32, 32, false);
  REQUIRE(out.shape() == std::vector<int64_t>{2, 1, 32, 32});
  for (int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.value()[i] > 0.0);
    CHECK(out.value()[i] < 1.0);
  }

  // The output grid follows the request, not the pyramid.
  ad::Var odd = dec.forward(p, 17, 23, false);
  CHECK(odd.shape() == std::vector<int64_t>{2, 1, 17, 23});
}

TEST_CASE("zeroed head collapses the output to one half") {
  Rng rng(11);
  Decoder dec(kToyChannels, DecoderConfig{}, rng);
  dec.zero_head();
  ad::Var out = dec.forward(toy_like_pyramid(1), 32, 32, false);
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.value()[i] - 0.5) < 1e-12);
  // Resizing a constant plane must stay constant even on a non-native grid.
  ad::Var out2 = dec.forward(toy_like_pyramid(1), 21, 13, false);
  for (int64_t i = 0; i < out2.numel(); ++i) CHECK(std::abs(out2.value()[i] - 0.5) < 1e-12);
}

TEST_CASE("same seed builds the same decoder; eval forwards are pure") {
  Rng a(123), b(123);
  Decoder da(kToyChannels, DecoderConfig{}, a);
  Decoder db(kToyChannels, DecoderConfig{}, b);
  FeaturePyramid p = toy_like_pyramid(1, 0.4);
  Tensor ya = da.forward(p, 16, 16, false).value();
  Tensor yb = db.forward(p, 16, 16, false).value();
  CHECK(testutil::max_abs_diff(ya, yb) == 0.0);

  // A second eval-mode forward of the same decoder is bitwise identical.
  Tensor ya2 = da.forward(p, 16, 16, false).value();
  CHECK(testutil::max_abs_diff(ya, ya2) == 0.0);

  // A different seed gives a different function.
  Rng c(124);
  Decoder dc(kToyChannels, DecoderConfig{}, c);
  Tensor yc = dc.forward(p, 16, 16, false).value();
  CHECK(testutil::max_abs_diff(ya, yc) > 0.0);
}

TEST_CASE("collect exposes the documented parameter and buffer names") {
  Rng rng(5);
  Decoder dec(kToyChannels, DecoderConfig{}, rng);
  nn::ParamMap pm;
  dec.collect("decoder", pm);

  for (int k = 1; k <= 5; ++k) {
    CHECK(has_param(pm, "decoder.lateral" + std::to_string(k) + ".weight"));
    CHECK(has_param(pm, "decoder.lateral" + std::to_string(k) + ".bias"));
  }
  for (int k = 1; k <= 4; ++k) {
    CHECK(has_param(pm, "decoder.fuse" + std::to_string(k) + ".weight"));
    // Fusion convolutions are biasless; normalization provides the shift.
    CHECK_FALSE(has_param(pm, "decoder.fuse" + std::to_string(k) + ".bias"));
    CHECK(has_param(pm, "decoder.fuse_bn" + std::to_string(k) + ".weight"));
    CHECK(has_param(pm, "decoder.fuse_bn" + std::to_string(k) + ".bias"));
    CHECK(has_buffer(pm, "decoder.fuse_bn" + std::to_string(k) + ".running_mean"));
    CHECK(has_buffer(pm, "decoder.fuse_bn" + std::to_string(k) + ".running_var"));
  }
  CHECK(has_param(pm, "decoder.head.weight"));
  CHECK(has_param(pm, "decoder.head.bias"));
  // 5 laterals (w+b) + 4 fuse convs (w) + 4 norms (w+b) + head (w+b).
  CHECK(pm.params.size() == 24);
  CHECK(pm.buffers.size() == 8);

  // Lateral input channels track the pyramid; everything meets at `width`.
  ad::Var* l1 = find_param(pm, "decoder.lateral1.weight");
  REQUIRE(l1 != nullptr);
  CHECK(l1->shape() == std::vector<int64_t>{64, 16, 1, 1});
  ad::Var* head = find_param(pm, "decoder.head.weight");
  REQUIRE(head != nullptr);
  CHECK(head->shape() == std::vector<int64_t>{1, 64, 1, 1});
}

TEST_CASE("training mode updates normalization statistics, eval does not") {
  Rng rng(31);
  Decoder dec(kToyChannels, DecoderConfig{}, rng);
  nn::ParamMap pm;
  dec.collect("decoder", pm);
  const Tensor* rm = find_buffer(pm, "decoder.fuse_bn1.running_mean");
  REQUIRE(rm != nullptr);
  Tensor before = *rm;

  FeaturePyramid p = toy_like_pyramid(2, 0.9);
  (void)dec.forward(p, 8, 8, false);
  CHECK(testutil::max_abs_diff(before, *rm) == 0.0);

  (void)dec.forward(p, 8, 8, true);
  CHECK(testutil::max_abs_diff(before, *rm) > 0.0);
}

TEST_CASE("gradients reach every decoder parameter") {
  Rng rng(47);
  Decoder dec(kToyChannels, DecoderConfig{}, rng);
  nn::ParamMap pm;
  dec.collect("decoder", pm);

  ad::Var out = dec.forward(toy_like_pyramid(1, 0.2), 16, 16, true);
  ad::Var loss = ad::mean_all(out);
  ad::backward(loss);
  for (auto& [name, v] : pm.params) {
    CAPTURE(name);
    CHECK(v.has_grad());
    if (v.has_grad()) {
      double mag = 0.0;
      for (int64_t i = 0; i < v.grad().numel(); ++i) mag += std::abs(v.grad()[i]);
      CHECK(mag > 0.0);
    }
  }
}

TEST_CASE("configuration and pyramid contract violations are rejected") {
  Rng rng(3);
  DecoderConfig narrow;
  narrow.width = 0;
  CHECK_THROWS_AS(narrow.validate(), ConfigError);
  DecoderConfig shallow;
  shallow.levels = 1;
  CHECK_THROWS_AS(shallow.validate(), ConfigError);
  CHECK_NOTHROW(DecoderConfig{}.validate());

  // Channel list must match the configured level count.
  CHECK_THROWS_AS(Decoder({16, 24}, DecoderConfig{}, rng), ConfigError);

  // A decoder configured for fewer levels rejects the five-level pyramid.
  DecoderConfig two;
  two.levels = 2;
  Decoder d2({16, 24}, two, rng);
  CHECK_THROWS_AS(d2.forward(toy_like_pyramid(1), 8, 8, false), ContractError);
}

TEST_CASE("frozen forward checksum pins the composition end to end") {
  Rng rng(2024);
  DecoderConfig cfg;
  cfg.width = 8;
  Decoder dec(kToyChannels, cfg, rng);
  ad::Var out = dec.forward(toy_like_pyramid(1, 0.65), 16, 16, false);
  double cs = testutil::checksum(out.value());
  CHECK(cs == doctest::Approx(26.46230503219018).epsilon(1e-12));
}
