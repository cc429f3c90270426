#include <doctest.h>

#include <cmath>

#include "mdn/supervision.hpp"
#include "mdn/synthdata.hpp"

using namespace mdn;
using namespace mdn::synth;

TEST_CASE("scenes are deterministic in the seed") {
  CHECK(gen_within(42).image == gen_within(42).image);
  CHECK(gen_within(42).image != gen_within(43).image);
  CHECK(gen_cross(7, true).image == gen_cross(7, true).image);
  const auto s = gen_within(3);
  CHECK(s.image.shape() == Shape{kSceneSize, kSceneSize, 1});
  CHECK(s.image.min() >= 0.0);
  CHECK(s.image.max() <= 1.0);
  CHECK(s.seed == 3);
}

TEST_CASE("keypoints respect the margin") {
  auto inside = [](double v) { return v >= kMargin && v <= kSceneSize - 1 - kMargin; };
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto w = gen_within(seed, false);
    REQUIRE(w.keypoints.size() == 1);
    CHECK(inside(w.keypoints[0].x));
    CHECK(inside(w.keypoints[0].y));
    for (const auto& b : cross_blobs(seed)) {
      CHECK(inside(b.x));
      CHECK(inside(b.y));
    }
  }
}

TEST_CASE("bone lengths stay within the jitter bounds") {
  double lo = 1e9, hi = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto b = cross_blobs(seed);
    REQUIRE(b.size() == 3);
    for (int j = 1; j < 3; ++j) {
      const double len = std::hypot(b[j].x - b[j - 1].x, b[j].y - b[j - 1].y);
      lo = std::min(lo, len);
      hi = std::max(hi, len);
      const double angle = std::atan2(b[j].y - b[j - 1].y, b[j].x - b[j - 1].x) * 180.0 / M_PI;
      CHECK(std::abs(angle) <= kAngleJitterDeg + 1e-9);
    }
  }
  CHECK(lo >= kBoneLength / 1.5);
  CHECK(hi <= kBoneLength * 1.5);
}

TEST_CASE("argmax of a noiseless blob is the rounded keypoint") {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto s = gen_within(seed, false);
    const auto p = supervision::argmax_pixel(s.image, 0);
    CHECK(p.x == window_center(s.keypoints[0].x));
    CHECK(p.y == window_center(s.keypoints[0].y));
  }
}

TEST_CASE("occlusion only removes the middle blob") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto open = gen_cross(seed, false);
    const auto hidden = gen_cross(seed, true);
    REQUIRE(open.keypoints.size() == 3);
    for (int j = 0; j < 3; ++j) {
      CHECK(open.keypoints[j].x == hidden.keypoints[j].x);
      CHECK(open.keypoints[j].y == hidden.keypoints[j].y);
      CHECK(hidden.keypoints[j].visible);
    }
    const auto blobs = cross_blobs(seed);
    const auto& mid = blobs[1];
    int changed = 0;
    for (int y = 0; y < kSceneSize; ++y) {
      for (int x = 0; x < kSceneSize; ++x) {
        if (open.image.at(0, y, x) == hidden.image.at(0, y, x)) continue;
        ++changed;
        CHECK(std::hypot(x - mid.x, y - mid.y) <= 3 * mid.sigma * std::sqrt(2.0) + 1);
        CHECK(hidden.image.at(0, y, x) <= open.image.at(0, y, x));
      }
    }
    CHECK(changed > 0);
  }
}

TEST_CASE("render clamps and places blobs") {
  const auto img = render({{10, 12, 2.0, 1.0}, {10.5, 12, 2.0, 1.0}}, 0, false);
  CHECK(img.max() == 1.0);
  CHECK(img.at(0, 40, 40) == 0.0);
  const auto noisy = render({{10, 12, 2.0, 0.5}}, 9, true);
  CHECK(noisy.min() >= 0.0);
  CHECK(noisy != render({{10, 12, 2.0, 0.5}}, 10, true));
}
