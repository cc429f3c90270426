#include "mdn/vote.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <thread>

#include "mdn/errors.hpp"

namespace mdn {

// ---------------------------------------------------------------- graph --

VoteGraph::VoteGraph(int joints, std::vector<Edge> edges) : joints_(joints), edges_(std::move(edges)) {
  if (joints_ < 1) throw ConfigError("vote graph needs at least one joint");
  if (edges_.empty()) throw ConfigError("vote graph needs at least one edge");
  for (const auto& e : edges_) {
    if (e.source < 0 || e.source >= joints_ || e.target < 0 || e.target >= joints_) {
      throw ConfigError("edge (" + std::to_string(e.source) + "," + std::to_string(e.target) +
                        ") references a joint outside [0," + std::to_string(joints_) + ")");
    }
  }
}

VoteGraph VoteGraph::within_part(int joints) {
  std::vector<Edge> edges;
  for (int j = 0; j < joints; ++j) edges.push_back({j, j});
  return VoteGraph(joints, std::move(edges));
}

VoteGraph VoteGraph::kinematic_tree(int joints, const std::vector<std::pair<int, int>>& bones) {
  if (static_cast<int>(bones.size()) != joints - 1) {
    throw ConfigError("a tree over " + std::to_string(joints) + " joints has " +
                      std::to_string(joints - 1) + " bones");
  }
  // Union-find to reject cycles; with joints-1 bones that also implies
  // connectivity.
  std::vector<int> parent(static_cast<std::size_t>(std::max(joints, 0)));
  for (int j = 0; j < joints; ++j) parent[j] = j;
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  std::vector<Edge> edges;
  for (int j = 0; j < joints; ++j) edges.push_back({j, j});
  for (auto [a, b] : bones) {
    if (a < 0 || b < 0 || a >= joints || b >= joints || a == b) {
      throw ConfigError("invalid bone (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
    const int ra = find(a), rb = find(b);
    if (ra == rb) throw ConfigError("bones contain a cycle");
    parent[ra] = rb;
    edges.push_back({a, b});
    edges.push_back({b, a});
  }
  return VoteGraph(joints, std::move(edges));
}

std::string to_string(VoteMode m) {
  switch (m) {
    case VoteMode::additive: return "additive";
    case VoteMode::noisy_or: return "noisyor";
    case VoteMode::max: return "max";
  }
  return "?";
}

VoteMode parse_vote_mode(const std::string& s) {
  if (s == "additive") return VoteMode::additive;
  if (s == "noisyor" || s == "noisy_or") return VoteMode::noisy_or;
  if (s == "max") return VoteMode::max;
  throw ConfigError("unknown vote mode '" + s + "'");
}

// --------------------------------------------------------------- helpers --

namespace {

constexpr int kMaxKf = 13;

// Calls fn(pixel, w, dK/dd_x, dK/dd_y) for every output pixel supported by a
// vote landing at `target`. The gaussian is evaluated separably.
template <typename Fn>
void visit_vote(const KernelSpec& spec, Vec2 target, int height, int width, Fn&& fn) {
  if (spec.family == KernelFamily::bilinear) {
    for_each_support_pixel(spec, target, height, width, [&](Pixel p) {
      const Vec2 d{p.x - target.x, p.y - target.y};
      const Vec2 g = kernel_grad(spec, d);
      fn(p, kernel_weight(spec, d), g.x, g.y);
    });
    return;
  }
  if (!(std::abs(target.x) < 1e8) || !(std::abs(target.y) < 1e8)) return;
  const int r = spec.radius();
  const int cx = window_center(target.x), cy = window_center(target.y);
  const int x0 = std::max(cx - r, 0), x1 = std::min(cx + r, width - 1);
  const int y0 = std::max(cy - r, 0), y1 = std::min(cy + r, height - 1);
  if (x0 > x1 || y0 > y1) return;
  const double s2 = spec.sigma * spec.sigma;
  const double inv2s2 = 1.0 / (2.0 * s2);
  const double norm = spec.normalized ? 1.0 / (2.0 * std::numbers::pi * s2) : 1.0;
  std::array<double, kMaxKf> ex{}, dxs{};
  for (int x = x0; x <= x1; ++x) {
    const double d = x - target.x;
    dxs[x - x0] = d;
    ex[x - x0] = std::exp(-d * d * inv2s2);
  }
  for (int y = y0; y <= y1; ++y) {
    const double dy = y - target.y;
    const double ey = std::exp(-dy * dy * inv2s2) * norm;
    for (int x = x0; x <= x1; ++x) {
      const double dx = dxs[x - x0];
      const double w = ex[x - x0] * ey;
      fn(Pixel{x, y}, w, -(dx / s2) * w, -(dy / s2) * w);
    }
  }
}

void check_inputs(const ScalarField& c, const DisplacementField& o, const KernelSpec& spec,
                  VoteMode mode, const VoteGraph& graph) {
  spec.validate();
  if (c.channels() != graph.joints()) {
    throw ShapeError("confidence has " + std::to_string(c.channels()) + " channels, graph has " +
                     std::to_string(graph.joints()) + " joints");
  }
  if (o.ox.shape() != o.oy.shape()) throw ShapeError("ox and oy shapes differ");
  if (o.ox.height() != c.height() || o.ox.width() != c.width()) {
    throw ShapeError("offset grid " + to_string(o.ox.shape()) + " does not match confidence " +
                     to_string(c.shape()));
  }
  if (o.edges() != graph.size()) {
    throw ShapeError("offsets have " + std::to_string(o.edges()) + " channels, graph has " +
                     std::to_string(graph.size()) + " edges");
  }
  if (mode != VoteMode::additive) require_unit_interval(c, "confidence");
}

// Row ranges [begin, end) for each worker.
std::vector<std::pair<int, int>> partition_rows(int height, int threads) {
  const int n = std::clamp(threads, 1, height);
  std::vector<std::pair<int, int>> parts;
  for (int t = 0; t < n; ++t) {
    parts.emplace_back(height * t / n, height * (t + 1) / n);
  }
  return parts;
}

template <typename Fn>
void run_workers(const std::vector<std::pair<int, int>>& parts, Fn&& fn) {
  if (parts.size() == 1) {
    fn(0, parts[0].first, parts[0].second);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(parts.size());
  for (std::size_t t = 0; t < parts.size(); ++t) {
    pool.emplace_back([&, t] { fn(t, parts[t].first, parts[t].second); });
  }
  for (auto& th : pool) th.join();
}

struct Accumulator {
  std::vector<double> value;        // sum (additive), log-survival (noisy_or), best (max)
  std::vector<std::int64_t> index;  // max mode only
};

}  // namespace

// --------------------------------------------------------------- forward --

VoteResult vote_forward(const ScalarField& c, const DisplacementField& o, const KernelSpec& spec,
                        VoteMode mode, const VoteGraph& graph, int threads) {
  check_inputs(c, o, spec, mode, graph);
  const int H = c.height(), W = c.width();
  const std::size_t plane = c.shape().plane();
  const Shape out_shape{H, W, graph.joints()};
  const std::size_t out_size = out_shape.size();
  const auto parts = partition_rows(H, threads);

  const double init = mode == VoteMode::max ? -1.0 : 0.0;
  std::vector<Accumulator> acc(parts.size());
  for (auto& a : acc) {
    a.value.assign(out_size, init);
    if (mode == VoteMode::max) a.index.assign(out_size, -1);
  }

  run_workers(parts, [&](std::size_t t, int row0, int row1) {
    auto& a = acc[t];
    for (int e = 0; e < graph.size(); ++e) {
      const Edge edge = graph[e];
      const std::size_t out_base = static_cast<std::size_t>(edge.target) * plane;
      for (int y = row0; y < row1; ++y) {
        for (int x = 0; x < W; ++x) {
          const double cv = c.at(edge.source, y, x);
          const Vec2 tgt{x + o.ox.at(e, y, x), y + o.oy.at(e, y, x)};
          const auto src = static_cast<std::int64_t>(e) * static_cast<std::int64_t>(plane) +
                           static_cast<std::int64_t>(y) * W + x;
          visit_vote(spec, tgt, H, W, [&](Pixel p, double w, double, double) {
            const std::size_t i = out_base + static_cast<std::size_t>(p.y) * W + p.x;
            const double contrib = w * cv;
            switch (mode) {
              case VoteMode::additive:
                a.value[i] += contrib;
                break;
              case VoteMode::noisy_or:
                a.value[i] += std::log1p(-std::min(contrib, kMaxContribution));
                break;
              case VoteMode::max:
                if (contrib > a.value[i]) {
                  a.value[i] = contrib;
                  a.index[i] = src;
                }
                break;
            }
          });
        }
      }
    }
  });

  // Ordered reduction over workers.
  Accumulator& total = acc[0];
  for (std::size_t t = 1; t < acc.size(); ++t) {
    for (std::size_t i = 0; i < out_size; ++i) {
      if (mode != VoteMode::max) {
        total.value[i] += acc[t].value[i];
      } else if (acc[t].index[i] >= 0 &&
                 (acc[t].value[i] > total.value[i] ||
                  (acc[t].value[i] == total.value[i] &&
                   (total.index[i] < 0 || acc[t].index[i] < total.index[i])))) {
        total.value[i] = acc[t].value[i];
        total.index[i] = acc[t].index[i];
      }
    }
  }

  VoteContext ctx;
  ctx.mode = mode;
  ctx.input_shape = c.shape();
  ctx.output_shape = out_shape;
  ctx.edges = graph.size();
  std::vector<double> m(out_size);
  switch (mode) {
    case VoteMode::additive:
      m = total.value;
      break;
    case VoteMode::noisy_or:
      for (std::size_t i = 0; i < out_size; ++i) m[i] = -std::expm1(total.value[i]);
      ctx.log_survival = std::move(total.value);
      break;
    case VoteMode::max:
      for (std::size_t i = 0; i < out_size; ++i) m[i] = total.index[i] >= 0 ? total.value[i] : 0.0;
      ctx.argmax = std::move(total.index);
      break;
  }
  return {ScalarField(out_shape, std::move(m)), std::move(ctx)};
}

// -------------------------------------------------------------- backward --

VoteGrads vote_backward(const GradSignal& grad_m, const ScalarField& c, const DisplacementField& o,
                        const KernelSpec& spec, VoteMode mode, const VoteGraph& graph,
                        const VoteContext& ctx, int threads) {
  check_inputs(c, o, spec, mode, graph);
  const int H = c.height(), W = c.width();
  const std::size_t plane = c.shape().plane();
  const Shape out_shape{H, W, graph.joints()};
  if (ctx.mode != mode || ctx.input_shape != c.shape() || ctx.output_shape != out_shape ||
      ctx.edges != graph.size()) {
    throw ShapeError("vote context does not match this call");
  }
  if ((mode == VoteMode::noisy_or && ctx.log_survival.size() != out_shape.size()) ||
      (mode == VoteMode::max && ctx.argmax.size() != out_shape.size())) {
    throw ShapeError("vote context is missing its cache");
  }
  if (grad_m.shape() != out_shape) {
    throw ShapeError("grad_m " + to_string(grad_m.shape()) + " does not match output " +
                     to_string(out_shape));
  }

  std::vector<double> gc(c.size(), 0.0);
  std::vector<double> gox(o.ox.size(), 0.0);
  std::vector<double> goy(o.oy.size(), 0.0);

  // Workers own disjoint input rows, so every gradient entry has one writer
  // and sees its contributions in the same order as the serial path.
  run_workers(partition_rows(H, threads), [&](std::size_t, int row0, int row1) {
    for (int e = 0; e < graph.size(); ++e) {
      const Edge edge = graph[e];
      const std::size_t out_base = static_cast<std::size_t>(edge.target) * plane;
      for (int y = row0; y < row1; ++y) {
        for (int x = 0; x < W; ++x) {
          const std::size_t ci = c.index(edge.source, y, x);
          const std::size_t oi = o.ox.index(e, y, x);
          const double cv = c[ci];
          const Vec2 tgt{x + o.ox[oi], y + o.oy[oi]};
          const auto src = static_cast<std::int64_t>(e) * static_cast<std::int64_t>(plane) +
                           static_cast<std::int64_t>(y) * W + x;
          double acc_c = 0.0, acc_x = 0.0, acc_y = 0.0;
          visit_vote(spec, tgt, H, W, [&](Pixel p, double w, double kx, double ky) {
            const std::size_t i = out_base + static_cast<std::size_t>(p.y) * W + p.x;
            const double g = grad_m[i];
            if (g == 0.0) return;
            // dm(x_o)/dp for the contribution p = w c.
            double dm_dp = 1.0;
            if (mode == VoteMode::noisy_or) {
              const double contrib = std::min(w * cv, kMaxContribution);
              dm_dp = std::exp(ctx.log_survival[i] - std::log1p(-contrib));
            } else if (mode == VoteMode::max) {
              if (ctx.argmax[i] != src) return;
            }
            acc_c += g * dm_dp * w;
            // dd/do = -1, so dw/do = -dK/dd.
            acc_x -= g * dm_dp * cv * kx;
            acc_y -= g * dm_dp * cv * ky;
          });
          gc[ci] += acc_c;
          gox[oi] += acc_x;
          goy[oi] += acc_y;
        }
      }
    }
  });

  return {GradSignal(c.shape(), std::move(gc)), GradSignal(o.ox.shape(), std::move(gox)),
          GradSignal(o.oy.shape(), std::move(goy))};
}

}  // namespace mdn
