#include "mdn/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mdn/errors.hpp"
#include "mdn/rng.hpp"

namespace mdn::toynet {

using supervision::KeypointSet;
using supervision::LossParams;

std::string to_string(Task t) { return t == Task::within ? "within" : "cross"; }

Task parse_task(const std::string& s) {
  if (s == "within") return Task::within;
  if (s == "cross") return Task::cross;
  throw ConfigError("unknown task '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::no_voting: return "no_voting";
    case Variant::posthoc: return "posthoc";
    case Variant::mdn: return "mdn";
    case Variant::final_only: return "final_only";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "no_voting") return Variant::no_voting;
  if (s == "posthoc") return Variant::posthoc;
  if (s == "mdn") return Variant::mdn;
  if (s == "final_only") return Variant::final_only;
  throw ConfigError("unknown variant '" + s + "'");
}

// --------------------------------------------------------------- NetSpec --

VoteGraph NetSpec::graph() const {
  if (task == Task::within) return VoteGraph::within_part(1);
  // Chain 0 - 1 - 2, rooted at the middle joint.
  return VoteGraph::kinematic_tree(3, {{1, 0}, {1, 2}});
}

std::vector<double> NetSpec::offset_normalizers(int resolution) const {
  const auto g = graph();
  std::vector<double> d;
  for (int e = 0; e < g.size(); ++e) {
    d.push_back(g[e].source == g[e].target ? eps_c - 1.0 : static_cast<double>(resolution));
  }
  return d;
}

Targets make_targets(const NetSpec& net, const LossParams& params, const KeypointSet& kps,
                     int height, int width) {
  const auto graph = net.graph();
  const auto d = net.offset_normalizers(width);
  Targets t{supervision::make_disk_target(kps, params.eps_c, height, width),
            supervision::make_offset_target(kps, graph, params.eps_c, d, height, width),
            net.mode == VoteMode::additive
                ? supervision::make_gaussian_target(kps, params.gaussian_target_sigma, height, width)
                : supervision::make_disk_target(kps, params.eps_m, height, width)};
  return t;
}

// ---------------------------------------------------------------- ToyNet --

namespace {

Parameter make_param(std::string name, std::vector<int> dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return {std::move(name), std::move(dims), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

void fill_normal(Parameter& p, Rng& rng, double stddev) {
  for (auto& v : p.value) v = stddev * rng.normal();
}

}  // namespace

ToyNet::ToyNet(NetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.kernel.validate();
  if (spec_.trunk_layers < 1 || spec_.trunk_channels < 1 || spec_.trunk_kernel % 2 == 0 ||
      spec_.trunk_stride < 1) {
    throw ConfigError("invalid trunk configuration");
  }
  Rng rng(seed, 7);
  const int ch = spec_.trunk_channels, k = spec_.trunk_kernel;
  int in = 1;
  for (int l = 0; l < spec_.trunk_layers; ++l) {
    auto w = make_param("trunk" + std::to_string(l) + ".w", {ch, in, k, k});
    fill_normal(w, rng, std::sqrt(2.0 / (in * k * k)));
    params_.push_back(std::move(w));
    params_.push_back(make_param("trunk" + std::to_string(l) + ".b", {ch}));
    in = ch;
  }
  const int joints = spec_.joints();
  const int edges = spec_.graph().size();
  auto wc = make_param("conf.w", {joints, ch, 1, 1});
  fill_normal(wc, rng, 0.1 / std::sqrt(ch));
  params_.push_back(std::move(wc));
  auto bc = make_param("conf.b", {joints});
  std::fill(bc.value.begin(), bc.value.end(), -2.0);
  params_.push_back(std::move(bc));
  for (const char* axis : {"ox", "oy"}) {
    auto w = make_param(std::string(axis) + ".w", {edges, ch, 1, 1});
    fill_normal(w, rng, 0.01 / std::sqrt(ch));
    params_.push_back(std::move(w));
    params_.push_back(make_param(std::string(axis) + ".b", {edges}));
    auto s = make_param(std::string(axis) + ".s", {1});
    s.value[0] = 1.0;
    params_.push_back(std::move(s));
  }
}

std::size_t ToyNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

struct ToyNet::Graph {
  NodeId confidence = -1;
  NodeId ox_hat = -1;
  NodeId oy_hat = -1;
  NodeId ox = -1;
  NodeId oy = -1;
  NodeId mass = -1;
};

ToyNet::Graph ToyNet::build(Tape& tape, const ScalarField& image, const KernelSpec& kernel,
                            VoteMode mode, bool vote) const {
  if (image.channels() != 1) throw ShapeError("ToyNet expects a single-channel image");
  std::size_t p = 0;
  NodeId x = tape.input(image);
  if (spec_.trunk_stride > 1) x = tape.avg_pool(x, spec_.trunk_stride);
  for (int l = 0; l < spec_.trunk_layers; ++l) {
    x = tape.conv2d(x, params_[p]);
    x = tape.bias(x, params_[p + 1]);
    x = tape.relu(x);
    p += 2;
  }
  if (spec_.trunk_stride > 1) x = tape.upsample(x, spec_.trunk_stride);
  Graph g;
  g.confidence = tape.sigmoid(tape.bias(tape.conv2d(x, params_[p]), params_[p + 1]));
  p += 2;
  const auto d = spec_.offset_normalizers(image.width());
  g.ox_hat = tape.scale(tape.bias(tape.conv2d(x, params_[p]), params_[p + 1]), params_[p + 2]);
  p += 3;
  g.oy_hat = tape.scale(tape.bias(tape.conv2d(x, params_[p]), params_[p + 1]), params_[p + 2]);
  g.ox = tape.scale_channels(g.ox_hat, d);
  g.oy = tape.scale_channels(g.oy_hat, d);
  if (vote) {
    g.mass = tape.mdn_vote(g.confidence, g.ox, g.oy, VoteOp{kernel, mode, spec_.graph(), spec_.threads});
  }
  return g;
}

Outputs ToyNet::predict(const ScalarField& image, bool vote) const {
  Tape tape;
  const auto g = build(tape, image, spec_.kernel, spec_.mode, vote);
  Outputs out{tape.value(g.confidence), tape.value(g.ox_hat), tape.value(g.oy_hat),
              DisplacementField(tape.value(g.ox), tape.value(g.oy)), std::nullopt};
  if (vote) out.mass = tape.value(g.mass);
  return out;
}

Outputs ToyNet::predict(const ScalarField& image, const KernelSpec& kernel, VoteMode mode) const {
  Tape tape;
  const auto g = build(tape, image, kernel, mode, true);
  return {tape.value(g.confidence), tape.value(g.ox_hat), tape.value(g.oy_hat),
          DisplacementField(tape.value(g.ox), tape.value(g.oy)), tape.value(g.mass)};
}

LossBreakdown ToyNet::run(const ScalarField& image, const Targets& targets, const LossSpec& loss,
                          bool backward) const {
  const bool use_conf = loss.variant != Variant::final_only;
  const bool use_offset = loss.variant == Variant::posthoc || loss.variant == Variant::mdn;
  const bool use_final = loss.variant == Variant::mdn || loss.variant == Variant::final_only;

  Tape tape;
  const auto g = build(tape, image, spec_.kernel, spec_.mode, use_final);
  std::vector<std::pair<NodeId, double>> terms;
  NodeId conf = -1, offx = -1, offy = -1, fin = -1;
  if (use_conf) {
    conf = tape.loss(g.confidence, [&](const ScalarField& c) {
      return supervision::bce_loss(c, targets.confidence);
    });
    terms.emplace_back(conf, loss.weights.confidence);
  }
  if (use_offset) {
    const double delta = loss.params.huber_delta;
    offx = tape.loss(g.ox_hat, [&](const ScalarField& o) {
      return supervision::huber_loss_masked(o, targets.offsets.ox, targets.offsets.mask, delta);
    });
    offy = tape.loss(g.oy_hat, [&](const ScalarField& o) {
      return supervision::huber_loss_masked(o, targets.offsets.oy, targets.offsets.mask, delta);
    });
    terms.emplace_back(offx, loss.weights.offset);
    terms.emplace_back(offy, loss.weights.offset);
  }
  if (use_final) {
    fin = tape.loss(g.mass, [&](const ScalarField& m) {
      return spec_.mode == VoteMode::additive ? supervision::mse_loss(m, targets.final)
                                              : supervision::bce_loss(m, targets.final);
    });
    terms.emplace_back(fin, loss.weights.final);
  }
  const NodeId total = tape.weighted_sum(terms);

  if (backward) {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
    tape.backward(total);
  }
  LossBreakdown out;
  out.total = tape.scalar(total);
  if (conf >= 0) out.confidence = tape.scalar(conf);
  if (offx >= 0) out.offset = tape.scalar(offx) + tape.scalar(offy);
  if (fin >= 0) out.final = tape.scalar(fin);
  return out;
}

LossBreakdown ToyNet::forward_backward(const ScalarField& image, const Targets& targets,
                                       const LossSpec& loss) {
  return run(image, targets, loss, true);
}

LossBreakdown ToyNet::loss_only(const ScalarField& image, const Targets& targets,
                                const LossSpec& loss) const {
  return run(image, targets, loss, false);
}

std::vector<double> ToyNet::flat_values() const {
  std::vector<double> v;
  for (const auto& p : params_) v.insert(v.end(), p.value.begin(), p.value.end());
  return v;
}

std::vector<double> ToyNet::flat_grads() const {
  std::vector<double> v;
  for (const auto& p : params_) v.insert(v.end(), p.grad.begin(), p.grad.end());
  return v;
}

void ToyNet::set_flat_values(std::span<const double> v) {
  if (v.size() != parameter_count()) throw ShapeError("flat parameter vector has wrong length");
  std::size_t off = 0;
  for (auto& p : params_) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), p.size(), p.value.begin());
    off += p.size();
  }
}

// --------------------------------------------------------------- RMSProp --

void rmsprop_step(std::span<double> params, std::span<const double> grads,
                  std::span<double> mean_square, const RmsPropConfig& config) {
  if (params.size() != grads.size() || params.size() != mean_square.size()) {
    throw ShapeError("rmsprop_step: parameter, gradient and state sizes differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    mean_square[i] = config.decay * mean_square[i] + (1.0 - config.decay) * g * g;
    params[i] -= config.learning_rate * g / (std::sqrt(mean_square[i]) + config.epsilon);
  }
}

void rmsprop_step(std::vector<Parameter>& params, RmsPropState& state) {
  if (state.mean_square.empty()) {
    for (const auto& p : params) state.mean_square.emplace_back(p.size(), 0.0);
  }
  if (state.mean_square.size() != params.size()) throw ShapeError("rmsprop state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    rmsprop_step(params[i].value, params[i].grad, state.mean_square[i], state.config);
  }
}

// ---------------------------------------------------------------- train --

void TrainConfig::validate() const {
  kernel.validate();
  loss.validate();
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (train_pool < 1 || train_pool > static_cast<int>(synth::kTrainSeedEnd - synth::kTrainSeedBegin)) {
    throw ConfigError("train_pool must lie in [1, 5000]");
  }
  if (eval_count < 1 || eval_count > static_cast<int>(synth::kEvalSeedEnd - synth::kEvalSeedBegin)) {
    throw ConfigError("eval_count must lie in [1, 200]");
  }
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (!(optimizer.learning_rate > 0.0) || !(optimizer.decay > 0.0 && optimizer.decay < 1.0)) {
    throw ConfigError("invalid optimizer settings");
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (trunk_channels < 1) throw ConfigError("trunk_channels must be >= 1");
  if (trunk_stride < 1 || synth::kSceneSize % trunk_stride != 0) {
    throw ConfigError("trunk_stride must divide the scene size");
  }
}

NetSpec TrainConfig::net_spec() const {
  NetSpec s;
  s.task = task;
  s.kernel = kernel;
  s.mode = mode;
  s.threads = threads;
  s.eps_c = loss.eps_c;
  s.trunk_channels = trunk_channels;
  s.trunk_stride = trunk_stride;
  return s;
}

synth::Scene make_scene(Task task, std::uint64_t seed, bool occlude) {
  return task == Task::within ? synth::gen_within(seed) : synth::gen_cross(seed, occlude);
}

std::optional<std::pair<KernelSpec, VoteMode>> eval_voting(const TrainConfig& config) {
  if (config.variant == Variant::no_voting) return std::nullopt;
  return std::make_pair(config.kernel, config.mode);
}

EvalReport evaluate(const ToyNet& net, const TrainConfig& config, int count,
                    std::optional<std::pair<KernelSpec, VoteMode>> voting) {
  const int joints = net.spec().joints();
  const auto graph = net.spec().graph();
  EvalReport r;
  r.joint_error.assign(static_cast<std::size_t>(joints), 0.0);
  double hits = 0.0, visible = 0.0, residual = 0.0;
  int residual_count = 0;
  for (int i = 0; i < count; ++i) {
    const auto scene = make_scene(config.task, synth::kEvalSeedBegin + static_cast<std::uint64_t>(i),
                                  config.occlude);
    const Outputs out = voting ? net.predict(scene.image, voting->first, voting->second)
                               : net.predict(scene.image, false);
    const ScalarField& decoded = voting ? *out.mass : out.confidence;
    for (int j = 0; j < joints; ++j) {
      const auto& k = scene.keypoints[static_cast<std::size_t>(j)];
      if (!k.visible) continue;
      const Pixel p = supervision::argmax_pixel(decoded, j);
      const double err = std::hypot(p.x - k.x, p.y - k.y);
      r.joint_error[static_cast<std::size_t>(j)] += err / count;
      visible += 1.0;
      hits += err <= config.pck_tolerance ? 1.0 : 0.0;
    }
    for (int e = 0; e < graph.size(); ++e) {
      if (graph[e].source != graph[e].target) continue;
      const auto& k = scene.keypoints[static_cast<std::size_t>(graph[e].source)];
      const int x = window_center(k.x), y = window_center(k.y);
      residual += std::hypot(out.offsets.ox.at(e, y, x), out.offsets.oy.at(e, y, x));
      ++residual_count;
    }
  }
  r.pck = visible > 0 ? hits / visible : std::nan("");
  r.offset_residual = residual_count > 0 ? residual / residual_count : 0.0;
  return r;
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  ToyNet net(config.net_spec(), config.seed);
  const LossSpec loss{config.loss, config.weights, config.variant};

  // Training pool: a seeded subset of the training seed range.
  Rng rng(config.seed, 3);
  std::vector<std::uint64_t> seeds(synth::kTrainSeedEnd - synth::kTrainSeedBegin);
  std::iota(seeds.begin(), seeds.end(), synth::kTrainSeedBegin);
  for (std::size_t i = 0; i < static_cast<std::size_t>(config.train_pool); ++i) {
    std::swap(seeds[i], seeds[i + rng.below(seeds.size() - i)]);
  }
  seeds.resize(static_cast<std::size_t>(config.train_pool));

  // Scenes are kept; targets are rebuilt per step (a cross-task target set
  // is ~1 MB, the image 32 KB).
  std::vector<synth::Scene> pool;
  pool.reserve(seeds.size());
  for (auto s : seeds) pool.push_back(make_scene(config.task, s, config.occlude));
  auto targets_for = [&](const synth::Scene& s) {
    return make_targets(net.spec(), config.loss, s.keypoints, s.image.height(), s.image.width());
  };

  const auto voting = eval_voting(config);
  std::vector<MetricRow> log;
  log.push_back({0, net.loss_only(pool[0].image, targets_for(pool[0]), loss),
                 evaluate(net, config, config.eval_count, voting).pck});

  RmsPropState opt{config.optimizer, {}};
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  LossBreakdown running;
  int since = 0;
  for (int step = 1; step <= config.steps; ++step) {
    if (cursor == order.size()) {
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
      cursor = 0;
    }
    const synth::Scene& s = pool[order[cursor++]];
    const auto lb = net.forward_backward(s.image, targets_for(s), loss);
    rmsprop_step(net.params(), opt);
    running.total += lb.total;
    running.confidence += lb.confidence;
    running.offset += lb.offset;
    running.final += lb.final;
    ++since;
    if (step % config.eval_every == 0 || step == config.steps) {
      MetricRow row{step, running, evaluate(net, config, config.eval_count, voting).pck};
      row.loss.total /= since;
      row.loss.confidence /= since;
      row.loss.offset /= since;
      row.loss.final /= since;
      log.push_back(row);
      running = {};
      since = 0;
    }
  }
  auto final_eval = evaluate(net, config, config.eval_count, voting);
  return {std::move(net), std::move(log), std::move(final_eval)};
}

std::string metrics_csv(const std::vector<MetricRow>& log) {
  std::ostringstream os;
  os << "step,loss_total,loss_confidence,loss_offset,loss_final,pck\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.loss.total,
                  r.loss.confidence, r.loss.offset, r.loss.final, r.pck);
    os << buf;
  }
  return os.str();
}

}  // namespace mdn::toynet
