#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdn/field.hpp"
#include "mdn/kernels.hpp"

namespace mdn {

struct Edge {
  int source = 0;  // channel of the confidence map that casts the votes
  int target = 0;  // channel of the output mass that receives them
  bool operator==(const Edge&) const = default;
};

/*!
 * Directed channel graph of the voting layer. Edge e of the graph owns
 * channel e of the displacement field.
 */
class VoteGraph {
 public:
  VoteGraph(int joints, std::vector<Edge> edges);

  // Every joint votes for itself only.
  static VoteGraph within_part(int joints);

  // Self edges plus both directions of every bone. Bones must form a
  // spanning tree over the joints.
  static VoteGraph kinematic_tree(int joints, const std::vector<std::pair<int, int>>& bones);

  int joints() const { return joints_; }
  int size() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& operator[](int e) const { return edges_[static_cast<std::size_t>(e)]; }

 private:
  int joints_;
  std::vector<Edge> edges_;
};

enum class VoteMode { additive, noisy_or, max };

std::string to_string(VoteMode m);
VoteMode parse_vote_mode(const std::string& s);

// Upper clamp applied to every noisy-OR contribution before log1p.
inline constexpr double kMaxContribution = 1.0 - 1e-12;

/*!
 * State kept by vote_forward for the matching backward call.
 *
 * noisy_or: log_survival(x_o) = sum log1p(-w c), with m = 1 - exp(S).
 * max: argmax(x_o) = edge * H * W + source pixel of the winning vote, or -1
 * when no vote reached x_o.
 */
struct VoteContext {
  VoteMode mode = VoteMode::additive;
  Shape input_shape{};
  Shape output_shape{};
  int edges = 0;
  std::vector<double> log_survival;
  std::vector<std::int64_t> argmax;
};

struct VoteResult {
  ScalarField mass;
  VoteContext ctx;
};

struct VoteGrads {
  GradSignal c;
  GradSignal ox;
  GradSignal oy;
};

/*!
 * Mass displacement forward pass.
 *
 * Each pixel x of source channel j casts, for every edge (j, k), a vote at
 * x + o_e(x) that is spread over the kernel support; each output pixel x_o
 * receives w = K(x_o - x - o_e(x)) * c_j(x). Votes are combined by sum,
 * noisy-OR or max. Votes with an empty support window are dropped.
 *
 * `threads` > 1 partitions the input rows across workers and reduces the
 * per-worker buffers in a fixed order.
 */
VoteResult vote_forward(const ScalarField& c, const DisplacementField& o, const KernelSpec& spec,
                        VoteMode mode, const VoteGraph& graph, int threads = 1);

VoteGrads vote_backward(const GradSignal& grad_m, const ScalarField& c, const DisplacementField& o,
                        const KernelSpec& spec, VoteMode mode, const VoteGraph& graph,
                        const VoteContext& ctx, int threads = 1);

}  // namespace mdn
