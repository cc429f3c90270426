#include "mdn/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "mdn/errors.hpp"

namespace mdn::toynet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

void check_conv(const ScalarField& input, std::span<const double> weights, int out_channels, int k) {
  if (k < 1 || k % 2 == 0) throw ShapeError("conv2d kernel size must be odd");
  if (out_channels < 1) throw ShapeError("conv2d needs at least one output channel");
  const std::size_t expect = static_cast<std::size_t>(out_channels) * input.channels() * k * k;
  if (weights.size() != expect) {
    throw ShapeError("conv2d weights hold " + std::to_string(weights.size()) + " values, expected " +
                     std::to_string(expect));
  }
}

// Rows are (channel, dy, dx), columns output pixels.
RowMatrix im2col(const ScalarField& input, int k) {
  const int H = input.height(), W = input.width(), C = input.channels(), r = k / 2;
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(H) * W);
  for (int c = 0; c < C; ++c) {
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        double* row = col.row((static_cast<Eigen::Index>(c) * k + dy) * k + dx).data();
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy - r;
          if (sy < 0 || sy >= H) continue;
          for (int x = 0; x < W; ++x) {
            const int sx = x + dx - r;
            if (sx >= 0 && sx < W) row[y * W + x] = input.at(c, sy, sx);
          }
        }
      }
    }
  }
  return col;
}

std::vector<double> col2im(const RowMatrix& col, const Shape& shape, int k) {
  const int H = shape.height, W = shape.width, r = k / 2;
  std::vector<double> out(shape.size(), 0.0);
  for (int c = 0; c < shape.channels; ++c) {
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const double* row = col.row((static_cast<Eigen::Index>(c) * k + dy) * k + dx).data();
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy - r;
          if (sy < 0 || sy >= H) continue;
          for (int x = 0; x < W; ++x) {
            const int sx = x + dx - r;
            if (sx >= 0 && sx < W) out[(static_cast<std::size_t>(c) * H + sy) * W + sx] += row[y * W + x];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

ScalarField conv2d(const ScalarField& input, std::span<const double> weights, int out_channels, int k) {
  check_conv(input, weights, out_channels, k);
  const RowMatrix col = im2col(input, k);
  ConstMapMatrix w(weights.data(), out_channels, col.rows());
  std::vector<double> out(static_cast<std::size_t>(out_channels) * input.shape().plane());
  MapMatrix(out.data(), out_channels, col.cols()).noalias() = w * col;
  return ScalarField({input.height(), input.width(), out_channels}, std::move(out));
}

Conv2dGrads conv2d_backward(const ScalarField& input, std::span<const double> weights,
                            int out_channels, int k, const GradSignal& grad_out) {
  check_conv(input, weights, out_channels, k);
  if (grad_out.shape() != Shape{input.height(), input.width(), out_channels}) {
    throw ShapeError("conv2d grad_out shape mismatch");
  }
  const RowMatrix col = im2col(input, k);
  ConstMapMatrix w(weights.data(), out_channels, col.rows());
  ConstMapMatrix g(grad_out.data().data(), out_channels, col.cols());
  std::vector<double> gw(weights.size());
  MapMatrix(gw.data(), out_channels, col.rows()).noalias() = g * col.transpose();
  const RowMatrix gcol = w.transpose() * g;
  return {GradSignal(input.shape(), col2im(gcol, input.shape(), k)), std::move(gw)};
}

// ------------------------------------------------------------- resample --

namespace {

void check_factor(int factor) {
  if (factor < 1) throw ShapeError("resampling factor must be >= 1");
}

struct Tap {
  int i0, i1;
  double t;
};

// Source taps of every output coordinate along one axis.
std::vector<Tap> upsample_taps(int n, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(n) * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) / factor - 0.5, 0.0, n - 1.0);
    const int i0 = static_cast<int>(std::floor(src));
    taps[o] = {i0, std::min(i0 + 1, n - 1), src - i0};
  }
  return taps;
}

}  // namespace

ScalarField avg_pool(const ScalarField& input, int factor) {
  check_factor(factor);
  if (input.height() % factor != 0 || input.width() % factor != 0) {
    throw ShapeError("avg_pool: " + to_string(input.shape()) + " is not divisible by " +
                     std::to_string(factor));
  }
  const Shape out{input.height() / factor, input.width() / factor, input.channels()};
  std::vector<double> v(out.size(), 0.0);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < input.channels(); ++c) {
    for (int y = 0; y < input.height(); ++y) {
      for (int x = 0; x < input.width(); ++x) {
        v[(static_cast<std::size_t>(c) * out.height + y / factor) * out.width + x / factor] +=
            input.at(c, y, x) * inv;
      }
    }
  }
  return ScalarField(out, std::move(v));
}

GradSignal avg_pool_backward(const Shape& input_shape, int factor, const GradSignal& grad_out) {
  check_factor(factor);
  const Shape out{input_shape.height / factor, input_shape.width / factor, input_shape.channels};
  if (grad_out.shape() != out) throw ShapeError("avg_pool grad_out shape mismatch");
  std::vector<double> g(input_shape.size());
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < input_shape.channels; ++c) {
    for (int y = 0; y < input_shape.height; ++y) {
      for (int x = 0; x < input_shape.width; ++x) {
        g[(static_cast<std::size_t>(c) * input_shape.height + y) * input_shape.width + x] =
            grad_out.at(c, y / factor, x / factor) * inv;
      }
    }
  }
  return GradSignal(input_shape, std::move(g));
}

ScalarField upsample_bilinear(const ScalarField& input, int factor) {
  check_factor(factor);
  const Shape out{input.height() * factor, input.width() * factor, input.channels()};
  const auto ty = upsample_taps(input.height(), factor);
  const auto tx = upsample_taps(input.width(), factor);
  std::vector<double> v(out.size());
  for (int c = 0; c < out.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      const Tap a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out.width; ++x) {
        const Tap b = tx[static_cast<std::size_t>(x)];
        const double top = (1.0 - b.t) * input.at(c, a.i0, b.i0) + b.t * input.at(c, a.i0, b.i1);
        const double bot = (1.0 - b.t) * input.at(c, a.i1, b.i0) + b.t * input.at(c, a.i1, b.i1);
        v[(static_cast<std::size_t>(c) * out.height + y) * out.width + x] = (1.0 - a.t) * top + a.t * bot;
      }
    }
  }
  return ScalarField(out, std::move(v));
}

GradSignal upsample_bilinear_backward(const Shape& input_shape, int factor, const GradSignal& grad_out) {
  check_factor(factor);
  const Shape out{input_shape.height * factor, input_shape.width * factor, input_shape.channels};
  if (grad_out.shape() != out) throw ShapeError("upsample grad_out shape mismatch");
  const auto ty = upsample_taps(input_shape.height, factor);
  const auto tx = upsample_taps(input_shape.width, factor);
  std::vector<double> g(input_shape.size(), 0.0);
  auto at = [&](int c, int y, int x) -> double& {
    return g[(static_cast<std::size_t>(c) * input_shape.height + y) * input_shape.width + x];
  };
  for (int c = 0; c < out.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      const Tap a = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < out.width; ++x) {
        const Tap b = tx[static_cast<std::size_t>(x)];
        const double go = grad_out.at(c, y, x);
        at(c, a.i0, b.i0) += go * (1.0 - a.t) * (1.0 - b.t);
        at(c, a.i0, b.i1) += go * (1.0 - a.t) * b.t;
        at(c, a.i1, b.i0) += go * a.t * (1.0 - b.t);
        at(c, a.i1, b.i1) += go * a.t * b.t;
      }
    }
  }
  return GradSignal(input_shape, std::move(g));
}

// ------------------------------------------------------------------ tape --

NodeId Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::input(ScalarField value) {
  TapeNode n;
  n.kind = OpKind::input;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::conv2d(NodeId x, Parameter& weights) {
  if (weights.dims.size() != 4 || weights.dims[2] != weights.dims[3]) {
    throw ShapeError("conv2d parameter '" + weights.name + "' must be [out][in][k][k]");
  }
  const int out = weights.dims[0], k = weights.dims[2];
  if (weights.dims[1] != value(x).channels()) {
    throw ShapeError("conv2d parameter '" + weights.name + "' expects " +
                     std::to_string(weights.dims[1]) + " input channels");
  }
  TapeNode n;
  n.kind = OpKind::conv2d;
  n.inputs = {x};
  n.value = toynet::conv2d(value(x), weights.value, out, k);
  Parameter* p = &weights;
  n.backward = [p, out, k](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    auto g = conv2d_backward(in.value, p->value, out, k, GradSignal(self.value.shape(), self.grad));
    for (std::size_t i = 0; i < g.weights.size(); ++i) p->grad[i] += g.weights[i];
    const auto gi = g.input.data();
    for (std::size_t i = 0; i < gi.size(); ++i) in.grad[i] += gi[i];
  };
  return push(std::move(n));
}

NodeId Tape::bias(NodeId x, Parameter& b) {
  const ScalarField& v = value(x);
  if (static_cast<int>(b.size()) != v.channels()) {
    throw ShapeError("bias '" + b.name + "' size does not match channels");
  }
  std::vector<double> out(v.data().begin(), v.data().end());
  const std::size_t plane = v.shape().plane();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value[i / plane];
  TapeNode n;
  n.kind = OpKind::bias;
  n.inputs = {x};
  n.value = ScalarField(v.shape(), std::move(out));
  Parameter* p = &b;
  n.backward = [p, plane](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      in.grad[i] += self.grad[i];
      p->grad[i / plane] += self.grad[i];
    }
  };
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  const ScalarField& v = value(x);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  TapeNode n;
  n.kind = OpKind::relu;
  n.inputs = {x};
  n.value = ScalarField(v.shape(), std::move(out));
  n.backward = [](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (in.value[i] > 0.0) in.grad[i] += self.grad[i];
    }
  };
  return push(std::move(n));
}

NodeId Tape::avg_pool(NodeId x, int factor) {
  TapeNode n;
  n.kind = OpKind::pool;
  n.inputs = {x};
  n.value = toynet::avg_pool(value(x), factor);
  n.backward = [factor](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    const auto g = avg_pool_backward(in.value.shape(), factor, GradSignal(self.value.shape(), self.grad));
    for (std::size_t i = 0; i < g.size(); ++i) in.grad[i] += g[i];
  };
  return push(std::move(n));
}

NodeId Tape::upsample(NodeId x, int factor) {
  TapeNode n;
  n.kind = OpKind::upsample;
  n.inputs = {x};
  n.value = upsample_bilinear(value(x), factor);
  n.backward = [factor](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    const auto g =
        upsample_bilinear_backward(in.value.shape(), factor, GradSignal(self.value.shape(), self.grad));
    for (std::size_t i = 0; i < g.size(); ++i) in.grad[i] += g[i];
  };
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId x) {
  const ScalarField& v = value(x);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-v[i]));
  TapeNode n;
  n.kind = OpKind::sigmoid;
  n.inputs = {x};
  n.value = ScalarField(v.shape(), std::move(out));
  n.backward = [](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      in.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  };
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, Parameter& s) {
  if (s.size() != 1) throw ShapeError("scale parameter '" + s.name + "' must be a scalar");
  const ScalarField& v = value(x);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * s.value[0];
  TapeNode n;
  n.kind = OpKind::scale;
  n.inputs = {x};
  n.value = ScalarField(v.shape(), std::move(out));
  Parameter* p = &s;
  n.backward = [p](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    double gs = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      in.grad[i] += self.grad[i] * p->value[0];
      gs += self.grad[i] * in.value[i];
    }
    p->grad[0] += gs;
  };
  return push(std::move(n));
}

NodeId Tape::scale_channels(NodeId x, std::vector<double> factors) {
  const ScalarField& v = value(x);
  if (static_cast<int>(factors.size()) != v.channels()) {
    throw ShapeError("scale_channels needs one factor per channel");
  }
  const std::size_t plane = v.shape().plane();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * factors[i / plane];
  TapeNode n;
  n.kind = OpKind::scale;
  n.inputs = {x};
  n.value = ScalarField(v.shape(), std::move(out));
  n.backward = [factors = std::move(factors), plane](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * factors[i / plane];
  };
  return push(std::move(n));
}

NodeId Tape::mdn_vote(NodeId c, NodeId ox, NodeId oy, const VoteOp& op) {
  DisplacementField o(value(ox), value(oy));
  auto result = vote_forward(value(c), o, op.kernel, op.mode, op.graph, op.threads);
  TapeNode n;
  n.kind = OpKind::mdn_vote;
  n.inputs = {c, ox, oy};
  n.value = std::move(result.mass);
  auto ctx = std::make_shared<VoteContext>(std::move(result.ctx));
  n.backward = [op, ctx](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& cn = nodes[static_cast<std::size_t>(self.inputs[0])];
    TapeNode& xn = nodes[static_cast<std::size_t>(self.inputs[1])];
    TapeNode& yn = nodes[static_cast<std::size_t>(self.inputs[2])];
    const DisplacementField o(xn.value, yn.value);
    const auto g = vote_backward(GradSignal(self.value.shape(), self.grad), cn.value, o, op.kernel,
                                 op.mode, op.graph, *ctx, op.threads);
    for (std::size_t i = 0; i < g.c.size(); ++i) cn.grad[i] += g.c[i];
    for (std::size_t i = 0; i < g.ox.size(); ++i) xn.grad[i] += g.ox[i];
    for (std::size_t i = 0; i < g.oy.size(); ++i) yn.grad[i] += g.oy[i];
  };
  return push(std::move(n));
}

NodeId Tape::loss(NodeId pred, std::function<supervision::LossResult(const ScalarField&)> fn) {
  auto result = fn(value(pred));
  TapeNode n;
  n.kind = OpKind::loss;
  n.inputs = {pred};
  n.value = ScalarField({1, 1, 1}, result.loss);
  auto grad = std::make_shared<GradSignal>(std::move(result.grad));
  n.backward = [grad](std::vector<TapeNode>& nodes, const TapeNode& self) {
    TapeNode& in = nodes[static_cast<std::size_t>(self.inputs[0])];
    const double seed = self.grad[0];
    for (std::size_t i = 0; i < grad->size(); ++i) in.grad[i] += seed * (*grad)[i];
  };
  return push(std::move(n));
}

NodeId Tape::weighted_sum(const std::vector<std::pair<NodeId, double>>& terms) {
  double total = 0.0;
  std::vector<double> weights;
  TapeNode n;
  n.kind = OpKind::sum;
  for (auto [id, w] : terms) {
    if (value(id).size() != 1) throw ShapeError("weighted_sum terms must be scalars");
    total += w * scalar(id);
    n.inputs.push_back(id);
    weights.push_back(w);
  }
  n.value = ScalarField({1, 1, 1}, total);
  n.backward = [weights](std::vector<TapeNode>& nodes, const TapeNode& self) {
    for (std::size_t t = 0; t < weights.size(); ++t) {
      nodes[static_cast<std::size_t>(self.inputs[t])].grad[0] += weights[t] * self.grad[0];
    }
  };
  return push(std::move(n));
}

void Tape::backward(NodeId root) {
  if (root < 0 || static_cast<std::size_t>(root) >= nodes_.size() || value(root).size() != 1) {
    throw ShapeError("backward root must be a scalar node of this tape");
  }
  for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
  nodes_[static_cast<std::size_t>(root)].grad[0] = 1.0;
  for (auto i = static_cast<std::ptrdiff_t>(root); i >= 0; --i) {
    const TapeNode& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward) n.backward(nodes_, n);
  }
}

}  // namespace mdn::toynet
