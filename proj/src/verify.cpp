#include "mdn/verify.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>
#include <set>

#include "mdn/errors.hpp"
#include "mdn/rng.hpp"

namespace mdn::verify {

namespace {

double rel_err(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

void check_coord(const ScalarFn& fn, std::vector<double>& x, std::span<const double> analytic,
                 std::size_t i, const FiniteDiffOptions& opt, FiniteDiffReport& r) {
  const double saved = x[i];
  x[i] = saved + opt.h;
  const double fp = fn(x);
  x[i] = saved - opt.h;
  const double fm = fn(x);
  x[i] = saved;
  const double numeric = (fp - fm) / (2.0 * opt.h);
  if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
    r.passed = false;
    if (r.diagnostic.empty()) {
      r.diagnostic = "non-finite evaluation at coordinate " + std::to_string(i);
    }
    return;
  }
  ++r.checked;
  const double e = rel_err(analytic[i], numeric, opt.denominator_floor);
  if (r.worst_index < 0 || e > r.max_rel_err) {
    r.max_rel_err = e;
    r.worst_index = static_cast<std::ptrdiff_t>(i);
    r.worst_analytic = analytic[i];
    r.worst_numeric = numeric;
  }
}

}  // namespace

FiniteDiffReport finite_diff_check_subset(const ScalarFn& fn, std::span<const double> x0,
                                          std::span<const double> analytic,
                                          std::span<const std::size_t> coords,
                                          const FiniteDiffOptions& opt, const SkipFn& skip) {
  if (x0.size() != analytic.size()) throw ShapeError("finite_diff_check: gradient length mismatch");
  FiniteDiffReport r;
  std::vector<double> x(x0.begin(), x0.end());
  if (!std::isfinite(fn(x))) {
    r.passed = false;
    r.diagnostic = "non-finite evaluation at the base point";
    return r;
  }
  for (std::size_t i : coords) {
    if (i >= x.size()) throw RangeError("finite_diff_check: coordinate out of range");
    if (skip && skip(i, x)) {
      r.skipped.push_back(i);
      continue;
    }
    check_coord(fn, x, analytic, i, opt, r);
  }
  r.passed = r.passed && r.max_rel_err < opt.tol;
  return r;
}

FiniteDiffReport finite_diff_check(const ScalarFn& fn, std::span<const double> x,
                                   std::span<const double> analytic, const FiniteDiffOptions& opt,
                                   const SkipFn& skip) {
  std::vector<std::size_t> all(x.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return finite_diff_check_subset(fn, x, analytic, all, opt, skip);
}

std::string to_json(const FiniteDiffReport& r) {
  nlohmann::json j{{"max_rel_err", r.max_rel_err},
                   {"worst_index", r.worst_index},
                   {"worst_analytic", r.worst_analytic},
                   {"worst_numeric", r.worst_numeric},
                   {"checked", r.checked},
                   {"skipped", r.skipped},
                   {"passed", r.passed}};
  if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
  return j.dump();
}

// ---------------------------------------------------------------- oracles --

ScalarField exhaustive_noisyor_oracle(const ScalarField& c, const DisplacementField& o,
                                      const KernelSpec& spec, const VoteGraph& graph) {
  if (c.height() > 16 || c.width() > 16) {
    throw ShapeError("exhaustive oracle is limited to 16x16 grids, got " + to_string(c.shape()));
  }
  if (c.channels() != graph.joints() || o.edges() != graph.size() || o.ox.height() != c.height() ||
      o.ox.width() != c.width()) {
    throw ShapeError("oracle inputs do not match the graph");
  }
  const int H = c.height(), W = c.width(), r = spec.radius();
  auto covers = [&](int xo, int yo, double tx, double ty) {
    if (spec.family == KernelFamily::gaussian) {
      return std::abs(xo - std::floor(tx + 0.5)) <= r && std::abs(yo - std::floor(ty + 0.5)) <= r;
    }
    const bool cx = xo == std::floor(tx) || xo == std::ceil(tx);
    const bool cy = yo == std::floor(ty) || yo == std::ceil(ty);
    return cx && cy;
  };
  std::vector<double> m(static_cast<std::size_t>(graph.joints()) * H * W, 0.0);
  for (int k = 0; k < graph.joints(); ++k) {
    for (int yo = 0; yo < H; ++yo) {
      for (int xo = 0; xo < W; ++xo) {
        double survival = 1.0;
        for (int e = 0; e < graph.size(); ++e) {
          if (graph[e].target != k) continue;
          for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
              const double tx = x + o.ox.at(e, y, x), ty = y + o.oy.at(e, y, x);
              if (!covers(xo, yo, tx, ty)) continue;
              const double w = kernel_weight(spec, {xo - tx, yo - ty});
              survival *= 1.0 - std::min(w * c.at(graph[e].source, y, x), kMaxContribution);
            }
          }
        }
        m[(static_cast<std::size_t>(k) * H + yo) * W + xo] = 1.0 - survival;
      }
    }
  }
  return ScalarField({H, W, graph.joints()}, std::move(m));
}

ScalarField brute_conv_oracle(const ScalarField& c, const KernelSpec& spec) {
  const int H = c.height(), W = c.width(), r = spec.radius();
  std::vector<double> out(c.size(), 0.0);
  for (int ch = 0; ch < c.channels(); ++ch) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int v = -r; v <= r; ++v) {
          for (int u = -r; u <= r; ++u) {
            const int sy = y - v, sx = x - u;
            if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
            acc += c.at(ch, sy, sx) * kernel_weight(spec, {static_cast<double>(u), static_cast<double>(v)});
          }
        }
        out[c.index(ch, y, x)] = acc;
      }
    }
  }
  return ScalarField(c.shape(), std::move(out));
}

// -------------------------------------------------------- gradient suite --

VoteInstance random_vote_instance(std::uint64_t seed, int size, int joints, double max_offset) {
  Rng rng(seed, 11);
  std::vector<std::pair<int, int>> bones;
  for (int j = 1; j < joints; ++j) bones.emplace_back(j - 1, j);
  VoteGraph graph = joints == 1 ? VoteGraph::within_part(1) : VoteGraph::kinematic_tree(joints, bones);
  const Shape cs{size, size, joints};
  const Shape os{size, size, graph.size()};
  std::vector<double> c(cs.size()), ox(os.size()), oy(os.size()), probe(cs.size());
  for (auto& v : c) v = rng.uniform(0.05, 0.95);
  for (auto& v : ox) v = rng.uniform(-max_offset, max_offset);
  for (auto& v : oy) v = rng.uniform(-max_offset, max_offset);
  for (auto& v : probe) v = rng.uniform(-1.0, 1.0);
  return {ScalarField(cs, std::move(c)),
          DisplacementField(ScalarField(os, std::move(ox)), ScalarField(os, std::move(oy))),
          ScalarField(cs, std::move(probe)), std::move(graph)};
}

bool near_discontinuity(const KernelSpec& spec, double target, double margin) {
  const double shifted = spec.family == KernelFamily::gaussian ? target + 0.5 : target;
  return std::abs(shifted - std::round(shifted)) < margin;
}

namespace {

constexpr double kKinkMargin = 1e-4;

// f(x) - f(x0) for f = <probe, m>, evaluated locally in long double.
// Perturbing one coordinate only moves the votes cast by that pixel, so the
// difference is rebuilt from those votes and the untouched rest of each
// affected output. Evaluating the full <probe, m> in double instead leaves
// ~1e-9 of round-off after dividing by 2h, far above 1e-5 of a small
// gradient component.
class LocalObjective {
 public:
  enum class Field { c, ox, oy };

  LocalObjective(const VoteInstance& inst, const KernelSpec& spec, VoteMode mode, Field field)
      : inst_(inst), spec_(spec), mode_(mode), field_(field) {
    const Shape cs = inst.c.shape();
    H_ = cs.height;
    W_ = cs.width;
    const std::size_t outputs = cs.size();
    total_add_.assign(outputs, 0.0L);
    total_log_.assign(outputs, 0.0L);
    lists_.assign(outputs, {});
    for (int e = 0; e < inst.graph.size(); ++e) {
      for (int y = 0; y < H_; ++y) {
        for (int x = 0; x < W_; ++x) {
          const int id = vote_id(e, y, x);
          for (const auto& [out, u] : contributions(e, y, x, inst.c.at(inst.graph[e].source, y, x),
                                                    inst.o.ox.at(e, y, x), inst.o.oy.at(e, y, x))) {
            total_add_[out] += u;
            total_log_[out] += log_survival(u);
            if (mode == VoteMode::max) lists_[out].emplace_back(id, u);
          }
        }
      }
    }
  }

  double operator()(std::span<const double> x) const {
    const auto base = base_values();
    std::ptrdiff_t changed = -1;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] == base[i]) continue;
      if (changed >= 0) throw Error("LocalObjective: more than one coordinate changed");
      changed = static_cast<std::ptrdiff_t>(i);
    }
    if (changed < 0) return 0.0;
    const auto i = static_cast<std::size_t>(changed);
    const std::size_t plane = static_cast<std::size_t>(H_) * W_;
    const int ch = static_cast<int>(i / plane);
    const int y = static_cast<int>((i % plane) / W_);
    const int px = static_cast<int>(i % W_);

    // Votes cast from (ch, y, px): for c, every edge leaving joint ch.
    std::vector<int> edges;
    if (field_ == Field::c) {
      for (int e = 0; e < inst_.graph.size(); ++e) {
        if (inst_.graph[e].source == ch) edges.push_back(e);
      }
    } else {
      edges.push_back(ch);
    }
    std::map<std::size_t, std::pair<long double, long double>> before_after;  // per output: removed, added
    std::map<std::size_t, std::vector<long double>> old_u, new_u;
    std::set<int> ids;
    for (int e : edges) {
      const int src = inst_.graph[e].source;
      ids.insert(vote_id(e, y, px));
      const double c0 = inst_.c.at(src, y, px);
      const double ox0 = inst_.o.ox.at(e, y, px), oy0 = inst_.o.oy.at(e, y, px);
      const double c1 = field_ == Field::c ? x[i] : c0;
      const double ox1 = field_ == Field::ox ? x[i] : ox0;
      const double oy1 = field_ == Field::oy ? x[i] : oy0;
      for (const auto& [out, u] : contributions(e, y, px, c0, ox0, oy0)) old_u[out].push_back(u);
      for (const auto& [out, u] : contributions(e, y, px, c1, ox1, oy1)) new_u[out].push_back(u);
    }
    std::set<std::size_t> outs;
    for (const auto& kv : old_u) outs.insert(kv.first);
    for (const auto& kv : new_u) outs.insert(kv.first);

    long double diff = 0.0L;
    for (std::size_t out : outs) {
      const auto& ou = old_u[out];
      const auto& nu = new_u[out];
      long double m_old = 0.0L, m_new = 0.0L;
      switch (mode_) {
        case VoteMode::additive: {
          long double rest = total_add_[out];
          for (auto u : ou) rest -= u;
          m_old = rest;
          m_new = rest;
          for (auto u : ou) m_old += u;
          for (auto u : nu) m_new += u;
          break;
        }
        case VoteMode::noisy_or: {
          long double rest = total_log_[out];
          for (auto u : ou) rest -= log_survival(u);
          long double s_old = rest, s_new = rest;
          for (auto u : ou) s_old += log_survival(u);
          for (auto u : nu) s_new += log_survival(u);
          // 1 - exp(s): only the exp term differs between the two
          m_old = -std::exp(s_old);
          m_new = -std::exp(s_new);
          break;
        }
        case VoteMode::max: {
          long double rest = 0.0L;
          for (const auto& [id, u] : lists_[out]) {
            if (!ids.count(id)) rest = std::max(rest, u);
          }
          m_old = rest;
          m_new = rest;
          for (auto u : ou) m_old = std::max(m_old, u);
          for (auto u : nu) m_new = std::max(m_new, u);
          break;
        }
      }
      diff += static_cast<long double>(inst_.probe[out]) * (m_new - m_old);
    }
    return static_cast<double>(diff);
  }

 private:
  static long double log_survival(long double u) {
    return std::log1p(-std::min(u, static_cast<long double>(kMaxContribution)));
  }

  int vote_id(int e, int y, int x) const { return (e * H_ + y) * W_ + x; }

  std::span<const double> base_values() const {
    switch (field_) {
      case Field::c: return inst_.c.data();
      case Field::ox: return inst_.o.ox.data();
      case Field::oy: break;
    }
    return inst_.o.oy.data();
  }

  long double weight(long double dx, long double dy) const {
    if (spec_.family == KernelFamily::bilinear) {
      return std::max(0.0L, 1.0L - std::abs(dx)) * std::max(0.0L, 1.0L - std::abs(dy));
    }
    const long double s2 = static_cast<long double>(spec_.sigma) * spec_.sigma;
    long double k = std::exp(-(dx * dx + dy * dy) / (2.0L * s2));
    if (spec_.normalized) k /= 2.0L * 3.141592653589793238462643383279502884L * s2;
    return k;
  }

  // (output index, w * c) for the vote of edge e cast from pixel (y, x).
  std::vector<std::pair<std::size_t, long double>> contributions(int e, int y, int x, double c, double ox,
                                                                  double oy) const {
    std::vector<std::pair<std::size_t, long double>> r;
    const long double tx = static_cast<long double>(x) + ox, ty = static_cast<long double>(y) + oy;
    std::vector<int> xs, ys;
    if (spec_.family == KernelFamily::gaussian) {
      const int rad = spec_.kf / 2;
      const int cx = static_cast<int>(std::floor(tx + 0.5L)), cy = static_cast<int>(std::floor(ty + 0.5L));
      for (int d = -rad; d <= rad; ++d) {
        xs.push_back(cx + d);
        ys.push_back(cy + d);
      }
    } else {
      xs = {static_cast<int>(std::floor(tx))};
      if (std::ceil(tx) != std::floor(tx)) xs.push_back(static_cast<int>(std::ceil(tx)));
      ys = {static_cast<int>(std::floor(ty))};
      if (std::ceil(ty) != std::floor(ty)) ys.push_back(static_cast<int>(std::ceil(ty)));
    }
    const int k = inst_.graph[e].target;
    for (int yo : ys) {
      if (yo < 0 || yo >= H_) continue;
      for (int xo : xs) {
        if (xo < 0 || xo >= W_) continue;
        r.emplace_back((static_cast<std::size_t>(k) * H_ + yo) * W_ + xo, weight(xo - tx, yo - ty) * c);
      }
    }
    return r;
  }

  const VoteInstance& inst_;
  KernelSpec spec_;
  VoteMode mode_;
  Field field_;
  int H_ = 0, W_ = 0;
  std::vector<long double> total_add_;
  std::vector<long double> total_log_;
  std::vector<std::vector<std::pair<int, long double>>> lists_;
};

std::vector<double> scaled(std::span<const double> g, double s) {
  std::vector<double> v(g.begin(), g.end());
  for (auto& x : v) x *= s;
  return v;
}

}  // namespace

VoteGradReport check_vote_gradients(const VoteInstance& inst, const KernelSpec& spec, VoteMode mode,
                                    const FiniteDiffOptions& opt, double grad_scale) {
  const auto fwd = vote_forward(inst.c, inst.o, spec, mode, inst.graph);
  const auto g = vote_backward(inst.probe, inst.c, inst.o, spec, mode, inst.graph, fwd.ctx);
  const Shape cs = inst.c.shape();
  const int W = cs.width;
  const auto plane = static_cast<std::size_t>(cs.plane());

  VoteGradReport rep{mode, spec, {}, {}, {}};
  const LocalObjective f_c(inst, spec, mode, LocalObjective::Field::c);
  rep.c = finite_diff_check(f_c, inst.c.data(), scaled(g.c.data(), grad_scale), opt);

  const LocalObjective f_ox(inst, spec, mode, LocalObjective::Field::ox);
  auto skip_x = [&](std::size_t i, std::span<const double> x) {
    const double col = static_cast<double>((i % plane) % static_cast<std::size_t>(W));
    return near_discontinuity(spec, col + x[i], kKinkMargin);
  };
  rep.ox = finite_diff_check(f_ox, inst.o.ox.data(), scaled(g.ox.data(), grad_scale), opt, skip_x);

  const LocalObjective f_oy(inst, spec, mode, LocalObjective::Field::oy);
  auto skip_y = [&](std::size_t i, std::span<const double> x) {
    const double row = static_cast<double>((i % plane) / static_cast<std::size_t>(W));
    return near_discontinuity(spec, row + x[i], kKinkMargin);
  };
  rep.oy = finite_diff_check(f_oy, inst.o.oy.data(), scaled(g.oy.data(), grad_scale), opt, skip_y);
  return rep;
}

std::string to_json(const VoteGradReport& r) {
  nlohmann::json j{{"mode", to_string(r.mode)},
                   {"kernel", describe(r.kernel)},
                   {"sigma", r.kernel.sigma},
                   {"c", nlohmann::json::parse(to_json(r.c))},
                   {"ox", nlohmann::json::parse(to_json(r.ox))},
                   {"oy", nlohmann::json::parse(to_json(r.oy))},
                   {"passed", r.passed()}};
  return j.dump(2);
}

std::vector<VoteGradReport> vote_gradient_suite(std::uint64_t seed, const std::vector<VoteMode>& modes,
                                                const std::vector<KernelSpec>& kernels,
                                                const FiniteDiffOptions& opt) {
  const VoteInstance instances[] = {random_vote_instance(seed, 8, 1, 3.0),
                                    random_vote_instance(seed + 1, 8, 3, 3.0)};
  std::vector<VoteGradReport> out;
  for (const auto& kernel : kernels) {
    for (auto mode : modes) {
      for (const auto& inst : instances) out.push_back(check_vote_gradients(inst, kernel, mode, opt));
    }
  }
  return out;
}

}  // namespace mdn::verify
