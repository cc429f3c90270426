#include "mdn/supervision.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdn/errors.hpp"

namespace mdn::supervision {

void LossParams::validate() const {
  if (!(eps_c > 0.0) || !(eps_m > 0.0) || !(huber_delta > 0.0) || !(gaussian_target_sigma > 0.0)) {
    throw ConfigError("loss parameters must be positive");
  }
  if (eps_m > eps_c) throw ConfigError("eps_m must not exceed eps_c");
}

namespace {

bool in_box(double x, double y, const Keypoint& k, double eps) {
  return std::abs(x - k.x) <= eps && std::abs(y - k.y) <= eps;
}

void check_same_shape(const ScalarField& a, const ScalarField& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace

ScalarField make_disk_target(const KeypointSet& kps, double eps, int height, int width) {
  const Shape shape{height, width, static_cast<int>(kps.size())};
  std::vector<double> v(shape.size(), 0.0);
  for (int j = 0; j < shape.channels; ++j) {
    const auto& k = kps[static_cast<std::size_t>(j)];
    if (!k.visible) continue;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (in_box(x, y, k, eps)) v[(static_cast<std::size_t>(j) * height + y) * width + x] = 1.0;
      }
    }
  }
  return ScalarField(shape, std::move(v));
}

ScalarField make_gaussian_target(const KeypointSet& kps, double sigma, int height, int width) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian target sigma must be > 0");
  const Shape shape{height, width, static_cast<int>(kps.size())};
  std::vector<double> v(shape.size(), 0.0);
  for (int j = 0; j < shape.channels; ++j) {
    const auto& k = kps[static_cast<std::size_t>(j)];
    if (!k.visible) continue;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dx = x - k.x, dy = y - k.y;
        v[(static_cast<std::size_t>(j) * height + y) * width + x] =
            std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
    }
  }
  return ScalarField(shape, std::move(v));
}

OffsetTarget make_offset_target(const KeypointSet& kps, const VoteGraph& graph, double eps_c,
                                double d, int height, int width) {
  std::vector<double> ds(static_cast<std::size_t>(graph.size()), d);
  return make_offset_target(kps, graph, eps_c, ds, height, width);
}

OffsetTarget make_offset_target(const KeypointSet& kps, const VoteGraph& graph, double eps_c,
                                std::span<const double> d_per_edge, int height, int width) {
  if (static_cast<int>(kps.size()) != graph.joints()) {
    throw ShapeError("keypoint count does not match graph joints");
  }
  if (static_cast<int>(d_per_edge.size()) != graph.size()) {
    throw ShapeError("need one normalizer per edge");
  }
  const Shape shape{height, width, graph.size()};
  std::vector<double> ox(shape.size(), 0.0), oy(shape.size(), 0.0), mask(shape.size(), 0.0);
  for (int e = 0; e < graph.size(); ++e) {
    const double d = d_per_edge[static_cast<std::size_t>(e)];
    if (!(d > 0.0)) throw ConfigError("offset normalizer must be > 0");
    const auto& src = kps[static_cast<std::size_t>(graph[e].source)];
    const auto& dst = kps[static_cast<std::size_t>(graph[e].target)];
    if (!src.visible || !dst.visible) continue;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (!in_box(x, y, src, eps_c)) continue;
        const std::size_t i = (static_cast<std::size_t>(e) * height + y) * width + x;
        ox[i] = (dst.x - x) / d;
        oy[i] = (dst.y - y) / d;
        mask[i] = 1.0;
      }
    }
  }
  return {ScalarField(shape, std::move(ox)), ScalarField(shape, std::move(oy)),
          ScalarField(shape, std::move(mask))};
}

LossResult bce_loss(const ScalarField& pred, const ScalarField& target) {
  check_same_shape(pred, target, "bce_loss");
  constexpr double kLo = 1e-7, kHi = 1.0 - 1e-7;
  const double n = static_cast<double>(pred.size());
  std::vector<double> g(pred.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kLo, kHi);
    const double t = target[i];
    loss -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
    g[i] = (p - t) / (p * (1.0 - p)) / n;
  }
  return {loss / n, GradSignal(pred.shape(), std::move(g))};
}

LossResult huber_loss_masked(const ScalarField& pred, const ScalarField& target,
                             const ScalarField& mask, double delta) {
  check_same_shape(pred, target, "huber_loss_masked");
  check_same_shape(pred, mask, "huber_loss_masked mask");
  std::size_t count = 0;
  for (double m : mask.data()) count += m != 0.0;
  std::vector<double> g(pred.size(), 0.0);
  if (count == 0) return {0.0, GradSignal(pred.shape(), std::move(g))};
  const double n = static_cast<double>(count);
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double r = pred[i] - target[i];
    if (std::abs(r) <= delta) {
      loss += 0.5 * r * r;
      g[i] = r / n;
    } else {
      loss += delta * (std::abs(r) - 0.5 * delta);
      g[i] = (r > 0 ? delta : -delta) / n;
    }
  }
  return {loss / n, GradSignal(pred.shape(), std::move(g))};
}

LossResult mse_loss(const ScalarField& pred, const ScalarField& target) {
  check_same_shape(pred, target, "mse_loss");
  const double n = static_cast<double>(pred.size());
  std::vector<double> g(pred.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    loss += r * r;
    g[i] = 2.0 * r / n;
  }
  return {loss / n, GradSignal(pred.shape(), std::move(g))};
}

Pixel argmax_pixel(const ScalarField& f, int channel) {
  const auto plane = f.channel(channel);
  std::size_t best = 0;
  for (std::size_t i = 1; i < plane.size(); ++i) {
    if (plane[i] > plane[best]) best = i;
  }
  return {static_cast<int>(best % static_cast<std::size_t>(f.width())),
          static_cast<int>(best / static_cast<std::size_t>(f.width()))};
}

double pck_metric(const ScalarField& pred_m, const KeypointSet& kps, double tol) {
  if (static_cast<int>(kps.size()) != pred_m.channels()) {
    throw ShapeError("keypoint count does not match prediction channels");
  }
  int visible = 0, hits = 0;
  for (int j = 0; j < pred_m.channels(); ++j) {
    const auto& k = kps[static_cast<std::size_t>(j)];
    if (!k.visible) continue;
    ++visible;
    const Pixel p = argmax_pixel(pred_m, j);
    if (std::hypot(p.x - k.x, p.y - k.y) <= tol) ++hits;
  }
  if (visible == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(hits) / visible;
}

}  // namespace mdn::supervision
