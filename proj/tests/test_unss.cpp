#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "test_util.hpp"
#include "usod/common.hpp"
#include "usod/unss.hpp"

using namespace usod;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Independent reference: keep the largest object unconditionally, then extend
// the kept prefix while consecutive areas stay within the ratio bound.
std::vector<size_t> prefix_oracle(const std::vector<int64_t>& areas, double theta_r) {
  std::vector<size_t> kept;
  if (areas.empty()) return kept;
  kept.push_back(0);
  for (size_t i = 1; i < areas.size(); ++i) {
    if (static_cast<double>(areas[i - 1]) <= static_cast<double>(areas[i]) * theta_r)
      kept.push_back(i);
    else
      break;
  }
  return kept;
}

void paint(Tensor& t, int64_t y0, int64_t x0, int64_t h, int64_t w, double v) {
  for (int64_t y = y0; y < y0 + h; ++y)
    for (int64_t x = x0; x < x0 + w; ++x) t.at4(0, 0, y, x) = v;
}

}  // namespace

TEST_CASE("kept components: frozen hand cases, both variants") {
  UnssParams def;  // theta_r = 2.5, always keeps the largest
  UnssParams lit = def;
  lit.literal_algorithm = true;

  CHECK(kept_components({1000, 500, 10}, def) == std::vector<size_t>{0, 1});
  CHECK(kept_components({100, 10}, def) == std::vector<size_t>{0});
  // The published rule tests the ratio on the object itself, so a large gap
  // right below the biggest object removes everything.
  CHECK(kept_components({100, 10}, lit) == std::vector<size_t>{});
  CHECK(kept_components({100, 90, 10}, def) == std::vector<size_t>{0, 1});
  CHECK(kept_components({100, 90, 10}, lit) == std::vector<size_t>{0});
  CHECK(kept_components({42}, def) == std::vector<size_t>{0});
  CHECK(kept_components({42}, lit) == std::vector<size_t>{0});
  CHECK(kept_components({5, 5, 5}, def) == std::vector<size_t>{0, 1, 2});
  CHECK(kept_components({5, 5, 5}, lit) == std::vector<size_t>{0, 1, 2});
  CHECK(kept_components({}, def).empty());
  CHECK(kept_components({}, lit).empty());
}

TEST_CASE("kept components match the longest-valid-prefix oracle on random inputs") {
  Rng rng(404);
  UnssParams params;
  for (int rep = 0; rep < 1000; ++rep) {
    int64_t n = 1 + rng.uniform_int(8);
    std::vector<int64_t> areas(static_cast<size_t>(n));
    for (auto& a : areas) a = 1 + rng.uniform_int(5000);
    std::sort(areas.begin(), areas.end(), std::greater<>());
    params.theta_r = 1.0 + 4.0 * rng.uniform();
    CHECK(kept_components(areas, params) == prefix_oracle(areas, params.theta_r));
  }
}

TEST_CASE("kept set grows monotonically with theta_r") {
  Rng rng(505);
  for (int rep = 0; rep < 200; ++rep) {
    int64_t n = 1 + rng.uniform_int(8);
    std::vector<int64_t> areas(static_cast<size_t>(n));
    for (auto& a : areas) a = 1 + rng.uniform_int(2000);
    std::sort(areas.begin(), areas.end(), std::greater<>());
    UnssParams p2, p25, p3;
    p2.theta_r = 2.0;
    p25.theta_r = 2.5;
    p3.theta_r = 3.0;
    auto k2 = kept_components(areas, p2);
    auto k25 = kept_components(areas, p25);
    auto k3 = kept_components(areas, p3);
    CHECK(std::includes(k25.begin(), k25.end(), k2.begin(), k2.end()));
    CHECK(std::includes(k3.begin(), k3.end(), k25.begin(), k25.end()));
  }
}

TEST_CASE("suppression zeroes only the dropped objects and keeps real values") {
  // Rectangles of areas 40, 20, 2 with values above the binarization
  // threshold; background 0.3 stays untouched. 20 > 2 * 2.5, so only the
  // 2-pixel speck goes.
  Tensor label({1, 1, 12, 12}, 0.3);
  paint(label, 0, 0, 8, 5, 0.9);    // area 40
  paint(label, 0, 7, 4, 5, 0.8);    // area 20
  paint(label, 10, 10, 1, 2, 0.7);  // area 2
  UnssParams params;                // theta_r 2.5, theta_f 0.6
  Tensor out = unss(label, params);
  REQUIRE(out.shape() == label.shape());
  for (int64_t y = 0; y < 12; ++y)
    for (int64_t x = 0; x < 12; ++x) {
      double in = label.at4(0, 0, y, x);
      double got = out.at4(0, 0, y, x);
      if (in == 0.7)
        CHECK(got == 0.0);  // suppressed speck
      else
        CHECK(got == in);  // kept objects and sub-threshold pixels unchanged
    }
}

TEST_CASE("the literal published rule can suppress every object") {
  Tensor label({1, 1, 16, 16}, 0.1);
  paint(label, 2, 2, 10, 10, 0.95);  // area 100
  paint(label, 14, 3, 2, 5, 0.9);    // area 10
  UnssParams lit;
  lit.literal_algorithm = true;
  Tensor out = unss(label, lit);
  for (int64_t i = 0; i < out.numel(); ++i) {
    if (label[i] >= 0.6)
      CHECK(out[i] == 0.0);  // both objects gone
    else
      CHECK(out[i] == label[i]);
  }

  UnssParams def;
  Tensor out2 = unss(label, def);
  CHECK(out2.at4(0, 0, 5, 5) == 0.95);  // default variant keeps the largest
  for (int64_t y = 14; y < 16; ++y)
    for (int64_t x = 3; x < 8; ++x) CHECK(out2.at4(0, 0, y, x) == 0.0);
}

TEST_CASE("theta_r = inf is the bitwise identity") {
  Rng rng(606);
  Tensor label({1, 1, 9, 9});
  for (int64_t i = 0; i < label.numel(); ++i) label[i] = rng.uniform();
  UnssParams params;
  params.theta_r = kInf;
  CHECK_NOTHROW(params.validate());
  Tensor out = unss(label, params);
  CHECK(testutil::max_abs_diff(out, label) == 0.0);

  Tensor batch({3, 1, 9, 9});
  for (int64_t i = 0; i < batch.numel(); ++i) batch[i] = rng.uniform();
  Tensor bout = unss_batch(batch, params);
  CHECK(testutil::max_abs_diff(bout, batch) == 0.0);
}

TEST_CASE("batch application treats images independently") {
  Tensor batch({2, 1, 12, 12}, 0.2);
  // Image 0: big object + speck (speck suppressed).
  for (int64_t y = 1; y < 7; ++y)
    for (int64_t x = 1; x < 7; ++x) batch.at4(0, 0, y, x) = 0.9;
  batch.at4(0, 0, 10, 10) = 0.8;
  // Image 1: one object only (nothing suppressed).
  for (int64_t y = 4; y < 8; ++y)
    for (int64_t x = 4; x < 8; ++x) batch.at4(1, 0, y, x) = 0.7;

  UnssParams params;
  Tensor out = unss_batch(batch, params);
  CHECK(out.at4(0, 0, 10, 10) == 0.0);
  CHECK(out.at4(0, 0, 3, 3) == 0.9);

  // Image 1 must be untouched, bit for bit.
  for (int64_t y = 0; y < 12; ++y)
    for (int64_t x = 0; x < 12; ++x) CHECK(out.at4(1, 0, y, x) == batch.at4(1, 0, y, x));

  // And each plane equals the single-image result.
  Tensor single({1, 1, 12, 12});
  for (int64_t y = 0; y < 12; ++y)
    for (int64_t x = 0; x < 12; ++x) single.at4(0, 0, y, x) = batch.at4(0, 0, y, x);
  Tensor sout = unss(single, params);
  for (int64_t y = 0; y < 12; ++y)
    for (int64_t x = 0; x < 12; ++x) CHECK(out.at4(0, 0, y, x) == sout.at4(0, 0, y, x));
}

TEST_CASE("labels with no confident foreground pass through unchanged") {
  Tensor label({1, 1, 6, 6});
  Rng rng(707);
  for (int64_t i = 0; i < label.numel(); ++i) label[i] = 0.55 * rng.uniform();
  UnssParams params;
  Tensor out = unss(label, params);
  CHECK(testutil::max_abs_diff(out, label) == 0.0);
}

TEST_CASE("accepted label shapes and contract errors") {
  UnssParams params;
  Tensor hw({4, 4}, 0.0);
  hw.at2(1, 1) = 0.9;
  CHECK_NOTHROW(unss(hw, params));
  CHECK_NOTHROW(unss(Tensor({1, 4, 4}, 0.7), params));
  CHECK_NOTHROW(unss(Tensor({1, 1, 4, 4}, 0.7), params));
  CHECK_THROWS_AS(unss(Tensor({2, 1, 4, 4}, 0.7), params), ContractError);
  CHECK_THROWS_AS(unss(Tensor({1, 2, 4, 4}, 0.7), params), ContractError);
  CHECK_THROWS_AS(unss_batch(Tensor({1, 4, 4}, 0.7), params), ContractError);
  CHECK_THROWS_AS(unss_batch(Tensor({1, 3, 4, 4}, 0.7), params), ContractError);

  UnssParams bad;
  bad.theta_r = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.theta_r = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  UnssParams badf;
  badf.theta_f = 0.0;
  CHECK_THROWS_AS(badf.validate(), ConfigError);
  badf.theta_f = 1.5;
  CHECK_THROWS_AS(badf.validate(), ConfigError);
}
