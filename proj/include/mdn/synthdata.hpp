#pragma once

#include <cstdint>

#include "mdn/field.hpp"
#include "mdn/supervision.hpp"

namespace mdn::synth {

inline constexpr int kSceneSize = 64;
inline constexpr double kMargin = 4.0;
inline constexpr double kBoneLength = 12.0;
inline constexpr double kAngleJitterDeg = 30.0;
inline constexpr double kNoiseSigma = 0.05;

// Seed ranges of the training and held-out splits.
inline constexpr std::uint64_t kTrainSeedBegin = 0;
inline constexpr std::uint64_t kTrainSeedEnd = 5000;
inline constexpr std::uint64_t kEvalSeedBegin = 10000;
inline constexpr std::uint64_t kEvalSeedEnd = 10200;

struct Blob {
  double x = 0.0;
  double y = 0.0;
  double sigma = 2.0;
  double amplitude = 1.0;
};

struct Scene {
  ScalarField image;  // 1 channel, kSceneSize^2, values in [0, 1]
  supervision::KeypointSet keypoints;
  std::uint64_t seed = 0;
};

// Single blob whose centre is the only keypoint.
Scene gen_within(std::uint64_t seed, bool noise = true);

/*!
 * Straight three-joint chain running left to right; the chain direction is
 * jittered by up to kAngleJitterDeg and each bone is ~kBoneLength pixels.
 * Joints are blobs of decreasing sharpness (0 sharpest) so their identity is visible locally.
 * With `occlude`, the middle blob is not drawn but stays in the keypoints.
 */
Scene gen_cross(std::uint64_t seed, bool occlude);

// The blobs gen_cross renders for `seed`, before noise.
std::vector<Blob> cross_blobs(std::uint64_t seed);

// Truncated (3 sigma) gaussian splats plus optional noise, clamped to [0, 1].
ScalarField render(const std::vector<Blob>& blobs, std::uint64_t noise_seed, bool noise);

}  // namespace mdn::synth
