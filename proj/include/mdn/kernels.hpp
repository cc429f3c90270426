#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mdn {

enum class KernelFamily { gaussian, bilinear };

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
};

/*!
 * Dilation kernel used to spread each displaced vote.
 *
 * Gaussian kernels are truncated to a kf x kf window and, unless
 * `normalized` is set, satisfy K(0) = 1. Bilinear kernels always cover the
 * 2 x 2 integer neighbours of the vote target.
 */
struct KernelSpec {
  KernelFamily family = KernelFamily::bilinear;
  int kf = 2;
  double sigma = 0.0;
  bool normalized = false;

  static KernelSpec gaussian(int kf, double sigma = 0.0, bool normalized = false);
  static KernelSpec bilinear();

  // Half-width of the truncated window; 1 for bilinear.
  int radius() const { return family == KernelFamily::gaussian ? kf / 2 : 1; }

  // Throws ConfigError if the spec is not one of the supported settings.
  void validate() const;
};

std::string to_string(KernelFamily f);
KernelFamily parse_kernel_family(const std::string& s);
std::string describe(const KernelSpec& spec);

double kernel_weight(const KernelSpec& spec, Vec2 d);
Vec2 kernel_grad(const KernelSpec& spec, Vec2 d);

// Integer pixels of a height x width grid that receive support from a vote
// landing at `target`, in row-major order.
std::vector<Pixel> support_window(const KernelSpec& spec, Vec2 target, int height, int width);

// Visits the same pixels as support_window without allocating.
template <typename Fn>
void for_each_support_pixel(const KernelSpec& spec, Vec2 target, int height, int width, Fn&& fn);

// Centre pixel of the truncated gaussian window (round half up).
inline int window_center(double t) { return static_cast<int>(std::floor(t + 0.5)); }

template <typename Fn>
void for_each_support_pixel(const KernelSpec& spec, Vec2 target, int height, int width, Fn&& fn) {
  // Anything this far out cannot reach the grid and would overflow int.
  if (!(std::abs(target.x) < 1e8) || !(std::abs(target.y) < 1e8)) return;
  if (spec.family == KernelFamily::gaussian) {
    const int r = spec.radius();
    const int cx = window_center(target.x);
    const int cy = window_center(target.y);
    const int y0 = std::max(cy - r, 0), y1 = std::min(cy + r, height - 1);
    const int x0 = std::max(cx - r, 0), x1 = std::min(cx + r, width - 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) fn(Pixel{x, y});
    }
    return;
  }
  // Bilinear: floor/ceil combinations, deduplicated when the target sits on
  // an integer coordinate.
  const double fx = std::floor(target.x), fy = std::floor(target.y);
  if (fx < -1.0 || fy < -1.0 || fx > width || fy > height) return;
  const int xs[2] = {static_cast<int>(fx), static_cast<int>(std::ceil(target.x))};
  const int ys[2] = {static_cast<int>(fy), static_cast<int>(std::ceil(target.y))};
  const int nx = xs[0] == xs[1] ? 1 : 2;
  const int ny = ys[0] == ys[1] ? 1 : 2;
  for (int j = 0; j < ny; ++j) {
    if (ys[j] < 0 || ys[j] >= height) continue;
    for (int i = 0; i < nx; ++i) {
      if (xs[i] < 0 || xs[i] >= width) continue;
      fn(Pixel{xs[i], ys[j]});
    }
  }
}

}  // namespace mdn
