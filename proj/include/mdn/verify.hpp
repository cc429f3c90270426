#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdn/field.hpp"
#include "mdn/kernels.hpp"
#include "mdn/vote.hpp"

namespace mdn::verify {

struct FiniteDiffOptions {
  double h = 1e-6;
  double tol = 1e-5;
  double denominator_floor = 1e-8;
};

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::ptrdiff_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::vector<std::size_t> skipped;
  bool passed = true;
  std::string diagnostic;  // set when an evaluation was non-finite
};

using ScalarFn = std::function<double(std::span<const double>)>;
// True for coordinates whose derivative is not defined at x (kinks).
using SkipFn = std::function<bool(std::size_t index, std::span<const double> x)>;

/*!
 * Compares `analytic` against central differences (f(x+h) - f(x-h)) / 2h
 * coordinate by coordinate. The relative error uses the denominator
 * max(|a|, |n|, denominator_floor).
 */
FiniteDiffReport finite_diff_check(const ScalarFn& fn, std::span<const double> x,
                                   std::span<const double> analytic, const FiniteDiffOptions& opt = {},
                                   const SkipFn& skip = {});

// Same check restricted to the listed coordinates.
FiniteDiffReport finite_diff_check_subset(const ScalarFn& fn, std::span<const double> x,
                                          std::span<const double> analytic,
                                          std::span<const std::size_t> coords,
                                          const FiniteDiffOptions& opt = {}, const SkipFn& skip = {});

std::string to_json(const FiniteDiffReport& r);

/*!
 * Noisy-OR output computed pair by pair: for every output pixel, the
 * product of (1 - w c) over all (input pixel, edge) pairs whose truncated
 * kernel covers it. Grids larger than 16 x 16 are rejected.
 */
ScalarField exhaustive_noisyor_oracle(const ScalarField& c, const DisplacementField& o,
                                      const KernelSpec& spec, const VoteGraph& graph);

// Direct 2-D convolution of every channel with the truncated kernel image.
ScalarField brute_conv_oracle(const ScalarField& c, const KernelSpec& spec);

// ------------------------------------------------------- vote gradient suite

struct VoteInstance {
  ScalarField c;
  DisplacementField o;
  ScalarField probe;  // random dL/dm used to reduce m to a scalar
  VoteGraph graph;
};

// Random instance on a size x size grid with `joints` channels; the graph is
// the within-part graph for one joint and a chain tree otherwise.
VoteInstance random_vote_instance(std::uint64_t seed, int size, int joints, double max_offset);

// True if a vote target lies within `margin` of a kernel discontinuity: a
// bilinear kink, or for gaussian kernels a half-integer where the truncated
// window re-centres.
bool near_discontinuity(const KernelSpec& spec, double target, double margin);

struct VoteGradReport {
  VoteMode mode;
  KernelSpec kernel;
  FiniteDiffReport c;
  FiniteDiffReport ox;
  FiniteDiffReport oy;
  bool passed() const { return c.passed && ox.passed && oy.passed; }
};

// Checks vote_backward against finite differences of L = <probe, m>.
// `grad_scale` multiplies the analytic gradient (mutation testing).
VoteGradReport check_vote_gradients(const VoteInstance& inst, const KernelSpec& spec, VoteMode mode,
                                    const FiniteDiffOptions& opt = {}, double grad_scale = 1.0);

std::string to_json(const VoteGradReport& r);

// Checks every (mode, kernel) pair on two random 8 x 8 instances derived from
// `seed`: one joint with the within-part graph, and three joints on a chain.
std::vector<VoteGradReport> vote_gradient_suite(std::uint64_t seed, const std::vector<VoteMode>& modes,
                                                const std::vector<KernelSpec>& kernels,
                                                const FiniteDiffOptions& opt = {});

}  // namespace mdn::verify
