#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdn/supervision.hpp"
#include "mdn/synthdata.hpp"
#include "mdn/tape.hpp"
#include "mdn/vote.hpp"

namespace mdn::toynet {

enum class Task { within, cross };

// Which supervision signals a run uses.
//  no_voting:  (a) confidence only; evaluated on c.
//  posthoc:    (a) + (b); voting applied only at evaluation.
//  mdn:        (a) + (b) + (c) with gradients through the voting layer.
//  final_only: (c) alone.
enum class Variant { no_voting, posthoc, mdn, final_only };

std::string to_string(Task t);
Task parse_task(const std::string& s);
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct LossWeights {
  double confidence = 1.0;
  double offset = 1.0;
  double final = 1.0;
};

struct NetSpec {
  Task task = Task::within;
  int trunk_layers = 3;
  int trunk_channels = 16;
  int trunk_kernel = 5;
  // The trunk runs on an average-pooled copy of the image and its features
  // are bilinearly upsampled back before the heads.
  int trunk_stride = 4;
  KernelSpec kernel = KernelSpec::bilinear();
  VoteMode mode = VoteMode::noisy_or;
  int threads = 1;
  double eps_c = 4.0;  // sets the within-part offset normalizer d = eps_c - 1

  int joints() const { return task == Task::within ? 1 : 3; }
  VoteGraph graph() const;
  // d per edge: eps_c - 1 for self edges (local offsets), the output
  // resolution for edges between different joints.
  std::vector<double> offset_normalizers(int resolution) const;
};

struct Targets {
  ScalarField confidence;  // disk of half-width eps_c
  supervision::OffsetTarget offsets;
  ScalarField final;       // disk of half-width eps_m, or gaussian for additive
};

Targets make_targets(const NetSpec& net, const supervision::LossParams& params,
                     const supervision::KeypointSet& kps, int height, int width);

struct Outputs {
  ScalarField confidence;
  ScalarField offset_x_hat;  // normalized offsets, as supervised
  ScalarField offset_y_hat;
  DisplacementField offsets;  // in pixels
  std::optional<ScalarField> mass;
};

struct LossBreakdown {
  double total = 0.0;
  double confidence = 0.0;
  double offset = 0.0;
  double final = 0.0;
};

struct LossSpec {
  supervision::LossParams params;
  LossWeights weights;
  Variant variant = Variant::mdn;
};

/*!
 * Pool, conv trunk, upsample, then three 1x1 heads: sigmoid confidence, and two
 * linear offset heads with a learnable scale. The offsets feed the voting
 * layer after multiplication by the per-edge normalizer.
 */
class ToyNet {
 public:
  ToyNet(NetSpec spec, std::uint64_t seed);

  const NetSpec& spec() const { return spec_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t parameter_count() const;

  // Inference; `vote` selects whether the mass is computed, optionally with
  // a different kernel or mode than the one the net was built with.
  Outputs predict(const ScalarField& image, bool vote) const;
  Outputs predict(const ScalarField& image, const KernelSpec& kernel, VoteMode mode) const;

  // Zeroes every parameter gradient, then accumulates dL/dparam.
  LossBreakdown forward_backward(const ScalarField& image, const Targets& targets, const LossSpec& loss);
  LossBreakdown loss_only(const ScalarField& image, const Targets& targets, const LossSpec& loss) const;

  // Flat views used by the gradient checks.
  std::vector<double> flat_values() const;
  std::vector<double> flat_grads() const;
  void set_flat_values(std::span<const double> v);

 private:
  struct Graph;
  Graph build(Tape& tape, const ScalarField& image, const KernelSpec& kernel, VoteMode mode,
              bool vote) const;
  LossBreakdown run(const ScalarField& image, const Targets& targets, const LossSpec& loss,
                    bool backward) const;

  NetSpec spec_;
  // Mutable so the const inference path can share the tape code; only the
  // grad members are touched there.
  mutable std::vector<Parameter> params_;
};

struct RmsPropConfig {
  double learning_rate = 0.0025;
  double decay = 0.99;
  double epsilon = 1e-8;
};

struct RmsPropState {
  RmsPropConfig config;
  std::vector<std::vector<double>> mean_square;
};

// acc <- decay acc + (1 - decay) g^2;  p <- p - lr g / (sqrt(acc) + eps)
void rmsprop_step(std::span<double> params, std::span<const double> grads,
                  std::span<double> mean_square, const RmsPropConfig& config);
void rmsprop_step(std::vector<Parameter>& params, RmsPropState& state);

struct TrainConfig {
  Task task = Task::within;
  Variant variant = Variant::mdn;
  VoteMode mode = VoteMode::noisy_or;
  KernelSpec kernel = KernelSpec::bilinear();
  supervision::LossParams loss;
  LossWeights weights;
  RmsPropConfig optimizer;
  int steps = 1500;
  std::uint64_t seed = 0;
  int train_pool = 5000;  // distinct training scenes, cycled in shuffled epochs
  int eval_every = 250;   // steps between held-out evaluations
  int eval_count = 100;   // held-out scenes, taken from the eval seed range
  double pck_tolerance = 2.0;
  bool occlude = true;    // cross task only
  int threads = 1;
  int trunk_channels = 16;
  int trunk_stride = 4;

  void validate() const;
  NetSpec net_spec() const;
};

struct EvalReport {
  double pck = 0.0;
  std::vector<double> joint_error;  // mean argmax distance per joint, pixels
  double offset_residual = 0.0;     // mean |o| at ground-truth keypoints (self edges)
};

struct MetricRow {
  int step = 0;
  LossBreakdown loss;  // mean over the steps since the previous row
  double pck = 0.0;
};

struct TrainResult {
  ToyNet net;
  std::vector<MetricRow> log;
  EvalReport final_eval;
};

synth::Scene make_scene(Task task, std::uint64_t seed, bool occlude);

// Evaluates on `count` held-out scenes. Without `kernel`, uses c directly
// (no voting); otherwise the argmax of the voted mass.
EvalReport evaluate(const ToyNet& net, const TrainConfig& config, int count,
                    std::optional<std::pair<KernelSpec, VoteMode>> voting);

// Voting setting implied by the run's variant (nullopt for no_voting).
std::optional<std::pair<KernelSpec, VoteMode>> eval_voting(const TrainConfig& config);

TrainResult train(const TrainConfig& config);

std::string metrics_csv(const std::vector<MetricRow>& log);

}  // namespace mdn::toynet
