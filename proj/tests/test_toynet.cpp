#include <doctest.h>

#include <cmath>

#include "mdn/errors.hpp"
#include "mdn/rng.hpp"
#include "mdn/toynet.hpp"
#include "mdn/verify.hpp"

using namespace mdn;
using namespace mdn::toynet;

namespace {

ScalarField random_field(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  std::vector<double> v(s.size());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return ScalarField(s, std::move(v));
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

// FD check of a linear-in-input op through a random probe.
template <typename Fwd, typename Bwd>
void check_resample_gradient(const ScalarField& x, Fwd fwd, Bwd bwd) {
  Rng rng(99);
  const auto y = fwd(x);
  const auto probe = random_field(rng, y.shape());
  const auto g = bwd(probe);
  const auto rep = verify::finite_diff_check(
      [&](std::span<const double> v) {
        return dot(fwd(ScalarField(x.shape(), std::vector<double>(v.begin(), v.end()))).data(), probe.data());
      },
      x.data(), g.data());
  INFO(verify::to_json(rep));
  CHECK(rep.passed);
}

}  // namespace

TEST_CASE("conv2d identity and impulse response") {
  Rng rng(1);
  const auto x = random_field(rng, Shape{5, 6, 1});
  std::vector<double> id(9, 0.0);
  id[4] = 1.0;
  CHECK(conv2d(x, id, 1, 3) == x);

  std::vector<double> delta(49, 0.0);
  delta[3 * 7 + 3] = 1.0;
  const std::vector<double> w = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const auto y = conv2d(ScalarField(Shape{7, 7, 1}, delta), w, 1, 3);
  // cross-correlation: output at (3+dy, 3+dx) reads weight (1-dy, 1-dx)
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) CHECK(y.at(0, 3 + dy, 3 + dx) == w[(1 - dy) * 3 + (1 - dx)]);
  }
  CHECK(y.at(0, 0, 0) == 0.0);
  CHECK_THROWS_AS(conv2d(x, id, 1, 2), ShapeError);
  CHECK_THROWS_AS(conv2d(x, std::vector<double>(8), 1, 3), ShapeError);
}

TEST_CASE("conv2d backward matches finite differences") {
  Rng rng(2);
  const auto x = random_field(rng, Shape{6, 5, 2});
  const auto w = random_vector(rng, 3 * 2 * 9);
  const auto probe = random_field(rng, Shape{6, 5, 3});
  const auto g = conv2d_backward(x, w, 3, 3, probe);
  const auto in_rep = verify::finite_diff_check(
      [&](std::span<const double> v) {
        return dot(conv2d(ScalarField(x.shape(), std::vector<double>(v.begin(), v.end())), w, 3, 3).data(),
                   probe.data());
      },
      x.data(), g.input.data());
  CHECK(in_rep.passed);
  const auto w_rep = verify::finite_diff_check(
      [&](std::span<const double> v) { return dot(conv2d(x, v, 3, 3).data(), probe.data()); }, w, g.weights);
  CHECK(w_rep.passed);
}

TEST_CASE("pooling and upsampling") {
  ScalarField x(Shape{2, 2, 1}, {1, 2, 3, 4});
  CHECK(avg_pool(x, 2)[0] == 2.5);
  CHECK(avg_pool(x, 1) == x);
  CHECK(upsample_bilinear(x, 1) == x);
  CHECK_THROWS_AS(avg_pool(new_field(3, 4, 1, 0), 2), ShapeError);

  const auto up = upsample_bilinear(new_field(3, 4, 2, 0.7), 4);
  CHECK(up.shape() == Shape{12, 16, 2});
  CHECK(up.min() == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(up.max() == doctest::Approx(0.7).epsilon(1e-15));

  // half-pixel centres: output 1 of a x2 upsample samples input 0.25
  ScalarField ramp(Shape{1, 3, 1}, {0, 1, 2});
  const auto r = upsample_bilinear(ramp, 2);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.25);
  CHECK(r[2] == 0.75);
  CHECK(r[5] == 2.0);

  Rng rng(3);
  const auto a = random_field(rng, Shape{8, 4, 2});
  check_resample_gradient(a, [](const ScalarField& v) { return avg_pool(v, 4); },
                          [&](const ScalarField& g) { return avg_pool_backward(a.shape(), 4, g); });
  const auto b = random_field(rng, Shape{3, 4, 2});
  check_resample_gradient(b, [](const ScalarField& v) { return upsample_bilinear(v, 4); },
                          [&](const ScalarField& g) { return upsample_bilinear_backward(b.shape(), 4, g); });
}

TEST_CASE("rmsprop update") {
  std::vector<double> p = {1.0}, g = {0.0}, ms = {0.0};
  rmsprop_step(p, g, ms, {});
  CHECK(p[0] == 1.0);

  p = {0.0};
  g = {1.0};
  rmsprop_step(p, g, ms, {});
  CHECK(p[0] == doctest::Approx(-0.0025 / (std::sqrt(0.01) + 1e-8)).epsilon(1e-14));
  CHECK(p[0] == doctest::Approx(-0.025).epsilon(1e-6));

  double last = 0.0;
  for (int i = 0; i < 3000; ++i) {
    const double before = p[0];
    rmsprop_step(p, g, ms, {});
    last = before - p[0];
  }
  CHECK(last == doctest::Approx(0.0025).epsilon(1e-6));
}

namespace {

struct SmallProblem {
  ToyNet net;
  ScalarField image;
  Targets targets;
};

SmallProblem small_problem(Task task, VoteMode mode, KernelSpec kernel, std::uint64_t seed) {
  NetSpec spec;
  spec.task = task;
  spec.mode = mode;
  spec.kernel = kernel;
  spec.trunk_channels = 4;
  spec.trunk_kernel = 3;
  spec.trunk_stride = 2;
  ToyNet net(spec, seed);
  Rng rng(seed, 5);
  const auto image = random_field(rng, Shape{16, 16, 1}, 0, 1);
  supervision::KeypointSet kps;
  for (int j = 0; j < spec.joints(); ++j) kps.push_back({rng.uniform(3, 12), rng.uniform(3, 12), true});
  supervision::LossParams params;
  auto targets = make_targets(net.spec(), params, kps, 16, 16);
  return {std::move(net), image, std::move(targets)};
}

}  // namespace

TEST_CASE("whole-graph gradient matches finite differences") {
  const std::pair<VoteMode, KernelSpec> cases[] = {
      {VoteMode::additive, KernelSpec::gaussian(5)},
      {VoteMode::noisy_or, KernelSpec::bilinear()},
      {VoteMode::noisy_or, KernelSpec::gaussian(3)},
      {VoteMode::max, KernelSpec::gaussian(3)},
  };
  for (auto task : {Task::within, Task::cross}) {
    for (const auto& [mode, kernel] : cases) {
      auto prob = small_problem(task, mode, kernel, 11);
      const LossSpec loss{{}, {}, Variant::mdn};
      // lift the offsets off zero so votes land between pixels
      for (auto& p : prob.net.params()) {
        if (p.name == "ox.b" || p.name == "oy.b") {
          for (auto& v : p.value) v = 0.37;
        }
      }
      prob.net.forward_backward(prob.image, prob.targets, loss);
      const auto x0 = prob.net.flat_values();
      const auto analytic = prob.net.flat_grads();
      Rng rng(13);
      std::vector<std::size_t> coords;
      for (int i = 0; i < 20; ++i) coords.push_back(rng.below(x0.size()));
      auto fn = [&](std::span<const double> x) {
        prob.net.set_flat_values(x);
        return prob.net.loss_only(prob.image, prob.targets, loss).total;
      };
      const auto rep = verify::finite_diff_check_subset(fn, x0, analytic, coords,
                                                        verify::FiniteDiffOptions{1e-5, 1e-4, 1e-8});
      INFO(to_string(task), " ", to_string(mode), " ", describe(kernel), " ", verify::to_json(rep));
      CHECK(rep.passed);
      CHECK(rep.checked == 20);
    }
  }
}

TEST_CASE("matching targets are a stationary point") {
  for (auto mode : {VoteMode::additive, VoteMode::noisy_or}) {
    auto prob = small_problem(Task::cross, mode, KernelSpec::bilinear(), 4);
    const auto out = prob.net.predict(prob.image, true);
    Targets t = prob.targets;
    t.confidence = out.confidence;
    t.offsets.ox = out.offset_x_hat;
    t.offsets.oy = out.offset_y_hat;
    t.offsets.mask = new_field(16, 16, t.offsets.mask.channels(), 1.0);
    t.final = *out.mass;
    prob.net.forward_backward(prob.image, t, LossSpec{{}, {}, Variant::mdn});
    double worst = 0.0;
    for (double g : prob.net.flat_grads()) worst = std::max(worst, std::abs(g));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("loss decreases when fitting one image") {
  for (auto mode : {VoteMode::additive, VoteMode::noisy_or, VoteMode::max}) {
    NetSpec spec;
    spec.mode = mode;
    ToyNet net(spec, 3);
    const auto scene = synth::gen_within(5);
    const auto targets = make_targets(spec, {}, scene.keypoints, 64, 64);
    const LossSpec loss{{}, {}, Variant::mdn};
    const double before = net.loss_only(scene.image, targets, loss).total;
    RmsPropState opt;
    for (int i = 0; i < 50; ++i) {
      net.forward_backward(scene.image, targets, loss);
      rmsprop_step(net.params(), opt);
    }
    CHECK(net.loss_only(scene.image, targets, loss).total < 0.5 * before);
  }
}

TEST_CASE("tape records each op") {
  Tape tape;
  const auto x = tape.input(new_field(4, 4, 1, 0.5));
  Parameter s{"s", {1}, {2.0}, {0.0}};
  const auto y = tape.sigmoid(tape.scale(x, s));
  const auto l = tape.loss(y, [](const ScalarField& v) { return supervision::mse_loss(v, new_field(4, 4, 1, 0.0)); });
  tape.backward(l);
  CHECK(tape.kind(y) == OpKind::sigmoid);
  const double sy = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(tape.scalar(l) == doctest::Approx(sy * sy).epsilon(1e-14));
  // dL/ds = mean over 16 pixels of 2 sy * sy (1 - sy) * 0.5
  CHECK(s.grad[0] == doctest::Approx(2 * sy * sy * (1 - sy) * 0.5).epsilon(1e-14));
}

TEST_CASE("training config") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.steps = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.trunk_stride = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.train_pool = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_task("cross") == Task::cross);
  CHECK(parse_variant("posthoc") == Variant::posthoc);
  CHECK_THROWS_AS(parse_variant("stn"), ConfigError);
  NetSpec cross;
  cross.task = Task::cross;
  CHECK(cross.offset_normalizers(64) == std::vector<double>{3, 3, 3, 64, 64, 64, 64});
}

TEST_CASE("zero steps returns the initial network") {
  TrainConfig cfg;
  cfg.steps = 0;
  cfg.train_pool = 4;
  cfg.eval_count = 4;
  const auto r = train(cfg);
  REQUIRE(r.log.size() == 1);
  CHECK(r.log[0].step == 0);
  CHECK(r.net.flat_values() == ToyNet(cfg.net_spec(), cfg.seed).flat_values());
}

TEST_CASE("training is deterministic") {
  TrainConfig cfg;
  cfg.task = Task::cross;
  cfg.steps = 12;
  cfg.eval_every = 5;
  cfg.train_pool = 6;
  cfg.eval_count = 4;
  cfg.seed = 17;
  const auto a = train(cfg);
  const auto b = train(cfg);
  CHECK(metrics_csv(a.log) == metrics_csv(b.log));
  CHECK(a.net.flat_values() == b.net.flat_values());
  CHECK(a.log.size() == 4);
  cfg.seed = 18;
  CHECK(metrics_csv(train(cfg).log) != metrics_csv(a.log));
  CHECK(metrics_csv(a.log).rfind("step,loss_total,loss_confidence,loss_offset,loss_final,pck\n", 0) == 0);
}
