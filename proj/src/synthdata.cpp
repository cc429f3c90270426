#include "mdn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mdn/rng.hpp"

namespace mdn::synth {

namespace {

// Geometry and pixel noise use separate streams so that occluding a blob
// leaves the rest of the image untouched.
Rng geometry_rng(std::uint64_t seed) { return Rng(seed, 1); }
Rng noise_rng(std::uint64_t seed) { return Rng(seed, 2); }

bool inside(double v) { return v >= kMargin && v <= kSceneSize - 1 - kMargin; }

}  // namespace

ScalarField render(const std::vector<Blob>& blobs, std::uint64_t noise_seed, bool noise) {
  const int n = kSceneSize;
  std::vector<double> img(static_cast<std::size_t>(n) * n, 0.0);
  for (const auto& b : blobs) {
    const double r2 = 9.0 * b.sigma * b.sigma;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double dx = x - b.x, dy = y - b.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 > r2) continue;
        img[static_cast<std::size_t>(y) * n + x] +=
            b.amplitude * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
      }
    }
  }
  if (noise) {
    auto rng = noise_rng(noise_seed);
    for (auto& v : img) v += kNoiseSigma * rng.normal();
  }
  for (auto& v : img) v = std::clamp(v, 0.0, 1.0);
  return ScalarField({n, n, 1}, std::move(img));
}

Scene gen_within(std::uint64_t seed, bool noise) {
  auto rng = geometry_rng(seed);
  Blob b;
  b.x = rng.uniform(kMargin, kSceneSize - 1 - kMargin);
  b.y = rng.uniform(kMargin, kSceneSize - 1 - kMargin);
  b.sigma = rng.uniform(2.0, 4.0);
  b.amplitude = rng.uniform(0.6, 1.0);
  return {render({b}, seed, noise), {{b.x, b.y, true}}, seed};
}

std::vector<Blob> cross_blobs(std::uint64_t seed) {
  auto rng = geometry_rng(seed);
  constexpr double kSigma[3] = {2.0, 2.75, 3.5};
  constexpr double kAmplitude[3] = {1.0, 0.85, 0.7};
  const double jitter = kAngleJitterDeg * std::numbers::pi / 180.0;
  for (;;) {
    std::vector<Blob> blobs(3);
    blobs[0].x = rng.uniform(kMargin, kSceneSize - 1 - kMargin);
    blobs[0].y = rng.uniform(kMargin, kSceneSize - 1 - kMargin);
    const double angle = rng.uniform(-jitter, jitter);
    bool ok = true;
    for (int j = 1; j < 3; ++j) {
      const double length = kBoneLength * rng.uniform(0.8, 1.2);
      blobs[j].x = blobs[j - 1].x + length * std::cos(angle);
      blobs[j].y = blobs[j - 1].y + length * std::sin(angle);
      ok = ok && inside(blobs[j].x) && inside(blobs[j].y);
    }
    if (!ok) continue;
    for (int j = 0; j < 3; ++j) {
      blobs[j].sigma = kSigma[j];
      blobs[j].amplitude = kAmplitude[j];
    }
    return blobs;
  }
}

Scene gen_cross(std::uint64_t seed, bool occlude) {
  auto blobs = cross_blobs(seed);
  supervision::KeypointSet kps;
  for (const auto& b : blobs) kps.push_back({b.x, b.y, true});
  if (occlude) blobs.erase(blobs.begin() + 1);
  return {render(blobs, seed, true), std::move(kps), seed};
}

}  // namespace mdn::synth
