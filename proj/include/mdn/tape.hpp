#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdn/field.hpp"
#include "mdn/supervision.hpp"
#include "mdn/vote.hpp"

namespace mdn::toynet {

/*!
 * Trainable tensor. Convolution weights are laid out [out][in][k][k],
 * biases [channels], scales [1].
 */
struct Parameter {
  std::string name;
  std::vector<int> dims;
  std::vector<double> value;
  std::vector<double> grad;

  std::size_t size() const { return value.size(); }
};

// Same-padding, stride-1 cross-correlation of a multi-channel field with
// `weights` of layout [out][in][k][k]; k must be odd.
ScalarField conv2d(const ScalarField& input, std::span<const double> weights, int out_channels,
                   int k);

struct Conv2dGrads {
  GradSignal input;
  std::vector<double> weights;
};

Conv2dGrads conv2d_backward(const ScalarField& input, std::span<const double> weights,
                            int out_channels, int k, const GradSignal& grad_out);

// Mean over non-overlapping factor x factor blocks; H and W must be
// divisible by factor.
ScalarField avg_pool(const ScalarField& input, int factor);
GradSignal avg_pool_backward(const Shape& input_shape, int factor, const GradSignal& grad_out);

// Bilinear upsampling by an integer factor with half-pixel centres:
// output pixel x samples input coordinate (x + 0.5) / factor - 0.5,
// clamped to the grid.
ScalarField upsample_bilinear(const ScalarField& input, int factor);
GradSignal upsample_bilinear_backward(const Shape& input_shape, int factor, const GradSignal& grad_out);

enum class OpKind { input, conv2d, bias, relu, sigmoid, scale, pool, upsample, mdn_vote, loss, sum };

struct VoteOp {
  KernelSpec kernel;
  VoteMode mode = VoteMode::noisy_or;
  VoteGraph graph = VoteGraph::within_part(1);
  int threads = 1;
};

using NodeId = int;

struct TapeNode {
  OpKind kind = OpKind::input;
  std::vector<NodeId> inputs;
  ScalarField value;
  std::vector<double> grad;  // dL/d(value), filled during backward
  // Pushes `grad` into the inputs' grads and any parameters it touches.
  std::function<void(std::vector<TapeNode>&, const TapeNode&)> backward;
};

/*!
 * Minimal reverse-mode tape. Nodes are appended in evaluation order, so
 * walking them backwards is a valid topological order.
 */
class Tape {
 public:
  NodeId input(ScalarField value);
  NodeId conv2d(NodeId x, Parameter& weights);
  NodeId bias(NodeId x, Parameter& b);
  NodeId relu(NodeId x);
  NodeId avg_pool(NodeId x, int factor);
  NodeId upsample(NodeId x, int factor);
  NodeId sigmoid(NodeId x);
  // Multiplies by a learnable scalar.
  NodeId scale(NodeId x, Parameter& s);
  // Multiplies channel i by the constant factors[i].
  NodeId scale_channels(NodeId x, std::vector<double> factors);
  // Returns the mass node; inputs are confidence and the two offset planes.
  NodeId mdn_vote(NodeId c, NodeId ox, NodeId oy, const VoteOp& op);
  // Scalar node holding fn(value(pred)).loss.
  NodeId loss(NodeId pred, std::function<supervision::LossResult(const ScalarField&)> fn);
  NodeId weighted_sum(const std::vector<std::pair<NodeId, double>>& terms);

  const ScalarField& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  double scalar(NodeId id) const { return value(id)[0]; }
  const std::vector<double>& grad(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).kind; }

  // Seeds dL/droot = 1 on a 1x1x1 node and propagates to every parameter.
  void backward(NodeId root);

 private:
  NodeId push(TapeNode node);
  std::vector<TapeNode> nodes_;
};

}  // namespace mdn::toynet
