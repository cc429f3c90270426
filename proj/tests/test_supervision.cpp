#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mdn/errors.hpp"
#include "mdn/rng.hpp"
#include "mdn/supervision.hpp"
#include "mdn/verify.hpp"

using namespace mdn;
using namespace mdn::supervision;

namespace {

double sum(const ScalarField& f) { return std::accumulate(f.data().begin(), f.data().end(), 0.0); }

ScalarField random_field(Rng& rng, Shape s, double lo, double hi) {
  std::vector<double> v(s.size());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ScalarField(s, std::move(v));
}

// Central differences of a loss against its analytic gradient.
void check_loss_gradient(const std::function<LossResult(const ScalarField&)>& loss, const ScalarField& pred) {
  const auto analytic = loss(pred).grad;
  const auto rep = verify::finite_diff_check(
      [&](std::span<const double> x) {
        return loss(ScalarField(pred.shape(), std::vector<double>(x.begin(), x.end()))).loss;
      },
      pred.data(), analytic.data(), verify::FiniteDiffOptions{1e-6, 1e-6, 1e-8});
  INFO(verify::to_json(rep));
  CHECK(rep.passed);
}

}  // namespace

TEST_CASE("disk targets") {
  CHECK(sum(make_disk_target({{10, 10, true}}, 0, 32, 32)) == 1.0);
  CHECK(make_disk_target({{10, 10, true}}, 0, 32, 32).at(0, 10, 10) == 1.0);
  const auto d = make_disk_target({{10, 10, true}}, 4, 32, 32);
  CHECK(sum(d) == 81.0);
  CHECK(d.at(0, 6, 14) == 1.0);
  CHECK(d.at(0, 5, 10) == 0.0);
  CHECK(sum(make_disk_target({{10, 10, false}}, 4, 32, 32)) == 0.0);
  // clipped at the border, sub-pixel centre
  CHECK(sum(make_disk_target({{1.5, 0.0, true}}, 1, 8, 8)) == 4.0);
  CHECK(make_disk_target({{1, 1, true}, {5, 5, true}}, 1, 8, 8).channels() == 2);
}

TEST_CASE("gaussian targets") {
  const auto g = make_gaussian_target({{10, 10, true}}, 1.0, 32, 32);
  CHECK(g.at(0, 10, 10) == 1.0);
  CHECK(g.at(0, 10, 11) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(sum(make_gaussian_target({{10, 10, false}}, 1.0, 32, 32)) == 0.0);
  CHECK_THROWS_AS(make_gaussian_target({{10, 10, true}}, 0.0, 32, 32), ConfigError);
}

TEST_CASE("targets translate with the keypoints") {
  const auto a = make_disk_target({{8, 9, true}}, 2, 24, 24);
  const auto b = make_disk_target({{11, 7, true}}, 2, 24, 24);
  const auto ga = make_gaussian_target({{8, 9, true}}, 1.5, 24, 24);
  const auto gb = make_gaussian_target({{11, 7, true}}, 1.5, 24, 24);
  for (int y = 4; y < 16; ++y) {
    for (int x = 4; x < 16; ++x) {
      CHECK(a.at(0, y, x) == b.at(0, y - 2, x + 3));
      CHECK(ga.at(0, y, x) == gb.at(0, y - 2, x + 3));
    }
  }
}

TEST_CASE("offset target examples") {
  const auto w = make_offset_target({{10, 10, true}}, VoteGraph::within_part(1), 4, 3, 32, 32);
  CHECK(w.ox.at(0, 10, 10) == 0.0);
  CHECK(w.oy.at(0, 10, 10) == 0.0);
  CHECK(w.ox.at(0, 10, 13) == -1.0);
  CHECK(w.mask.at(0, 10, 13) == 1.0);
  CHECK(w.mask.at(0, 10, 15) == 0.0);
  CHECK(sum(w.mask) == 81.0);

  const VoteGraph g(2, {{0, 1}});
  const auto x = make_offset_target({{10, 10, true}, {20, 10, true}}, g, 4, 64, 64, 64);
  CHECK(x.ox.at(0, 10, 10) == 10.0 / 64.0);
  CHECK(x.oy.at(0, 10, 10) == 0.0);

  const auto hidden = make_offset_target({{10, 10, true}, {20, 10, false}}, g, 4, 64, 64, 64);
  CHECK(sum(hidden.mask) == 0.0);
  CHECK_THROWS_AS(make_offset_target({{10, 10, true}}, VoteGraph::within_part(1), 4, 0.0, 32, 32), ConfigError);
}

TEST_CASE("offset targets point at the target joint") {
  Rng rng(21);
  const auto graph = VoteGraph::kinematic_tree(3, {{1, 0}, {1, 2}});
  for (int t = 0; t < 100; ++t) {
    KeypointSet kps;
    for (int j = 0; j < 3; ++j) kps.push_back({rng.uniform(0, 47), rng.uniform(0, 47), true});
    const std::vector<double> d = {3, 3, 3, 48, 48, 48, 48};
    const auto o = make_offset_target(kps, graph, 4, d, 48, 48);
    int masked = 0;
    for (int e = 0; e < graph.size(); ++e) {
      const auto& k = kps[static_cast<std::size_t>(graph[e].target)];
      const double de = d[static_cast<std::size_t>(e)];
      for (int y = 0; y < 48; ++y) {
        for (int x = 0; x < 48; ++x) {
          if (o.mask.at(e, y, x) == 0.0) continue;
          ++masked;
          CHECK(x + de * o.ox.at(e, y, x) == doctest::Approx(k.x).epsilon(1e-12));
          CHECK(y + de * o.oy.at(e, y, x) == doctest::Approx(k.y).epsilon(1e-12));
        }
      }
    }
    CHECK(masked > 0);
  }
}

TEST_CASE("bce loss") {
  const auto t = make_disk_target({{5, 5, true}}, 1, 12, 12);
  std::vector<double> p(t.data().begin(), t.data().end());
  CHECK(bce_loss(ScalarField(t.shape(), p), t).loss < 1e-6);
  CHECK(bce_loss(new_field(4, 4, 1, 0.5), new_field(4, 4, 1, 0.0)).loss ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  Rng rng(2);
  const auto target = make_disk_target({{3, 4, true}}, 2, 8, 8);
  check_loss_gradient([&](const ScalarField& q) { return bce_loss(q, target); },
                      random_field(rng, target.shape(), 0.05, 0.95));
  CHECK_THROWS_AS(bce_loss(new_field(4, 4, 1, 0.5), new_field(4, 5, 1, 0.0)), ShapeError);
}

TEST_CASE("huber loss") {
  const auto mask = make_disk_target({{2, 2, true}}, 1, 6, 6);
  const auto zero = new_field(6, 6, 1, 0.0);
  CHECK(huber_loss_masked(zero, zero, mask, 1.0).loss == 0.0);

  const double delta = 0.7;
  std::vector<double> p(36, 0.0);
  p[2 * 6 + 2] = 2 * delta;
  const auto one = make_disk_target({{2, 2, true}}, 0, 6, 6);
  CHECK(huber_loss_masked(ScalarField(Shape{6, 6, 1}, p), zero, one, delta).loss ==
        doctest::Approx(1.5 * delta * delta).epsilon(1e-15));

  const auto empty = huber_loss_masked(ScalarField(Shape{6, 6, 1}, p), zero, zero, delta);
  CHECK(empty.loss == 0.0);
  CHECK(empty.grad.max() == 0.0);
  CHECK(empty.grad.min() == 0.0);

  Rng rng(5);
  const auto target = random_field(rng, mask.shape(), -1, 1);
  // keep residuals away from the kink at |r| = delta
  std::vector<double> q(target.data().begin(), target.data().end());
  for (auto& v : q) {
    double r = rng.uniform(-2, 2);
    while (std::abs(std::abs(r) - delta) < 1e-3) r = rng.uniform(-2, 2);
    v += r;
  }
  check_loss_gradient([&](const ScalarField& x) { return huber_loss_masked(x, target, mask, delta); },
                      ScalarField(target.shape(), q));
  const auto g = huber_loss_masked(ScalarField(target.shape(), q), target, mask, delta).grad;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (mask[i] == 0.0) CHECK(g[i] == 0.0);
  }
}

TEST_CASE("mse loss") {
  const auto z = new_field(3, 3, 1, 0.25);
  CHECK(mse_loss(z, z).loss == 0.0);
  const auto r = mse_loss(new_field(1, 1, 1, 1.0), new_field(1, 1, 1, 0.0));
  CHECK(r.loss == 1.0);
  CHECK(r.grad[0] == 2.0);
  Rng rng(6);
  const auto t = random_field(rng, Shape{5, 5, 2}, -1, 1);
  check_loss_gradient([&](const ScalarField& x) { return mse_loss(x, t); }, random_field(rng, t.shape(), -1, 1));
}

TEST_CASE("loss params") {
  CHECK_NOTHROW(LossParams{}.validate());
  CHECK_THROWS_AS((LossParams{1.0, 2.0, 1.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((LossParams{4.0, 1.0, 0.0, 1.0}.validate()), ConfigError);
}

TEST_CASE("argmax and pck") {
  const auto delta = make_disk_target({{7, 3, true}, {2, 9, true}}, 0, 12, 12);
  CHECK(argmax_pixel(delta, 0) == Pixel{7, 3});
  CHECK(pck_metric(delta, {{7, 3, true}, {2, 9, true}}, 0.5) == 1.0);

  const auto flat = new_field(12, 12, 2, 0.3);
  CHECK(argmax_pixel(flat, 1) == Pixel{0, 0});
  CHECK(pck_metric(flat, {{1, 1, true}, {5, 5, true}}, 2.0) == 0.5);
  CHECK(pck_metric(flat, {{1, 1, true}, {5, 5, false}}, 2.0) == 1.0);
  CHECK(std::isnan(pck_metric(flat, {{1, 1, false}, {5, 5, false}}, 2.0)));
}

TEST_CASE("pck matches a brute-force recount") {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    const int J = 1 + static_cast<int>(rng.below(4));
    const auto m = random_field(rng, Shape{10, 10, J}, 0, 1);
    KeypointSet kps;
    for (int j = 0; j < J; ++j) kps.push_back({rng.uniform(0, 9), rng.uniform(0, 9), rng.uniform() < 0.8});
    const double tol = rng.uniform(0.5, 6);
    int hits = 0, vis = 0;
    for (int j = 0; j < J; ++j) {
      if (!kps[j].visible) continue;
      ++vis;
      double best = -1;
      int bx = 0, by = 0;
      for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) {
          if (m.at(j, y, x) > best) {
            best = m.at(j, y, x);
            bx = x;
            by = y;
          }
        }
      }
      const double dx = bx - kps[j].x, dy = by - kps[j].y;
      if (dx * dx + dy * dy <= tol * tol) ++hits;
    }
    const double got = pck_metric(m, kps, tol);
    if (vis == 0) {
      CHECK(std::isnan(got));
    } else {
      CHECK(got == doctest::Approx(static_cast<double>(hits) / vis).epsilon(1e-15));
    }
  }
}
