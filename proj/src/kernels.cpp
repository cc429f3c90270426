#include "mdn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mdn/errors.hpp"

namespace mdn {

KernelSpec KernelSpec::gaussian(int kf, double sigma, bool normalized) {
  KernelSpec s;
  s.family = KernelFamily::gaussian;
  s.kf = kf;
  // Unspecified bandwidth defaults to a quarter of the window.
  s.sigma = sigma > 0.0 ? sigma : kf / 4.0;
  s.normalized = normalized;
  s.validate();
  return s;
}

KernelSpec KernelSpec::bilinear() { return KernelSpec{}; }

void KernelSpec::validate() const {
  if (family == KernelFamily::bilinear) {
    if (kf != 2) throw ConfigError("bilinear kernel support is fixed at 2");
    return;
  }
  if (kf < 3 || kf > 13 || kf % 2 == 0) {
    throw ConfigError("gaussian kf must be one of 3,5,7,9,11,13, got " + std::to_string(kf));
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("gaussian sigma must be > 0");
}

std::string to_string(KernelFamily f) {
  return f == KernelFamily::gaussian ? "gaussian" : "bilinear";
}

KernelFamily parse_kernel_family(const std::string& s) {
  if (s == "gaussian") return KernelFamily::gaussian;
  if (s == "bilinear") return KernelFamily::bilinear;
  throw ConfigError("unknown kernel family '" + s + "'");
}

std::string describe(const KernelSpec& spec) {
  if (spec.family == KernelFamily::bilinear) return "bilinear";
  std::ostringstream os;
  os << "gaussian_k" << spec.kf;
  return os.str();
}

double kernel_weight(const KernelSpec& spec, Vec2 d) {
  if (spec.family == KernelFamily::bilinear) {
    return std::max(0.0, 1.0 - std::abs(d.x)) * std::max(0.0, 1.0 - std::abs(d.y));
  }
  const double s2 = spec.sigma * spec.sigma;
  double k = std::exp(-(d.x * d.x + d.y * d.y) / (2.0 * s2));
  if (spec.normalized) k /= 2.0 * std::numbers::pi * s2;
  return k;
}

namespace {

// d/dt max(0, 1 - |t|) with subgradient 0 at t in {0, +-1}.
double tent_slope(double t) {
  const double a = std::abs(t);
  if (a == 0.0 || a >= 1.0) return 0.0;
  return t > 0.0 ? -1.0 : 1.0;
}

}  // namespace

Vec2 kernel_grad(const KernelSpec& spec, Vec2 d) {
  if (spec.family == KernelFamily::bilinear) {
    const double wx = std::max(0.0, 1.0 - std::abs(d.x));
    const double wy = std::max(0.0, 1.0 - std::abs(d.y));
    return {tent_slope(d.x) * wy, tent_slope(d.y) * wx};
  }
  const double k = kernel_weight(spec, d);
  const double s2 = spec.sigma * spec.sigma;
  // -0.0 would be a legal result but reads badly in reports.
  const double gx = d.x == 0.0 ? 0.0 : -(d.x / s2) * k;
  const double gy = d.y == 0.0 ? 0.0 : -(d.y / s2) * k;
  return {gx, gy};
}

std::vector<Pixel> support_window(const KernelSpec& spec, Vec2 target, int height, int width) {
  std::vector<Pixel> out;
  for_each_support_pixel(spec, target, height, width, [&](Pixel p) { out.push_back(p); });
  return out;
}

}  // namespace mdn
