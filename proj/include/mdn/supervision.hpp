#pragma once

#include <span>
#include <vector>

#include "mdn/field.hpp"
#include "mdn/kernels.hpp"
#include "mdn/vote.hpp"

namespace mdn::supervision {

struct Keypoint {
  double x = 0.0;  // output-grid pixels
  double y = 0.0;
  bool visible = true;
};

using KeypointSet = std::vector<Keypoint>;

struct LossParams {
  double eps_c = 4.0;   // half-width of the confidence disk and offset vicinity
  double eps_m = 1.0;   // half-width of the final-stage disk
  double huber_delta = 1.0;
  double gaussian_target_sigma = 1.0;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  GradSignal grad;
};

struct OffsetTarget {
  ScalarField ox;    // one channel per graph edge, normalized by d
  ScalarField oy;
  ScalarField mask;  // 1 where the offset loss applies
};

// Channel j is 1 inside the square |x - x_j| <= eps, |y - y_j| <= eps.
ScalarField make_disk_target(const KeypointSet& kps, double eps, int height, int width);

// Channel j is exp(-|x - x_j|^2 / 2 sigma^2).
ScalarField make_gaussian_target(const KeypointSet& kps, double sigma, int height, int width);

/*!
 * Offset regression targets for every edge (j, k) of `graph`.
 *
 * Inside the eps_c box around source joint j the target is
 * (x_k - x_i) / d, i.e. pixel-to-joint, so that x_i + d * target lands on
 * joint k. Either joint being invisible leaves the channel masked out.
 */
OffsetTarget make_offset_target(const KeypointSet& kps, const VoteGraph& graph, double eps_c,
                                double d, int height, int width);
OffsetTarget make_offset_target(const KeypointSet& kps, const VoteGraph& graph, double eps_c,
                                std::span<const double> d_per_edge, int height, int width);

// Mean pixelwise binary cross-entropy; predictions are clamped to
// [1e-7, 1 - 1e-7].
LossResult bce_loss(const ScalarField& pred, const ScalarField& target);

// Mean Huber loss over pixels where mask is nonzero.
LossResult huber_loss_masked(const ScalarField& pred, const ScalarField& target,
                             const ScalarField& mask, double delta);

LossResult mse_loss(const ScalarField& pred, const ScalarField& target);

// Per-channel argmax, ties resolved to the lowest row-major index.
Pixel argmax_pixel(const ScalarField& f, int channel);

// Fraction of visible joints whose argmax lies within `tol` pixels
// (Euclidean). NaN when no joint is visible.
double pck_metric(const ScalarField& pred_m, const KeypointSet& kps, double tol);

}  // namespace mdn::supervision
