#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mdn/errors.hpp"
#include "mdn/experiment.hpp"
#include "mdn/field_io.hpp"
#include "mdn/synthdata.hpp"
#include "mdn/toynet.hpp"
#include "mdn/verify.hpp"

namespace mdn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kDemoSize = 32;

struct KernelFlags {
  std::string family = "bilinear";
  int kf = 5;
  double sigma = 0.0;

  KernelSpec spec() const {
    KernelSpec k = parse_kernel_family(family) == KernelFamily::bilinear ? KernelSpec::bilinear()
                                                                          : KernelSpec::gaussian(kf, sigma);
    k.validate();
    return k;
  }
};

void add_kernel_flags(CLI::App* cmd, KernelFlags& k) {
  cmd->add_option("--kernel", k.family, "gaussian | bilinear")->capture_default_str();
  cmd->add_option("--kf", k.kf, "gaussian window size (odd, 3..13)")->capture_default_str();
  cmd->add_option("--sigma", k.sigma, "gaussian sigma; <= 0 means kf/4")->capture_default_str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << s;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot read config " + p.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("bad JSON in " + p.string() + ": " + e.what());
  }
}

ScalarField one_channel(const ScalarField& f, int c) {
  const auto ch = f.channel(c);
  return ScalarField({f.height(), f.width(), 1}, std::vector<double>(ch.begin(), ch.end()));
}

// Writes channel c of f as NAME.pgm and NAME.mdnf.
void dump(const ScalarField& f, int c, const fs::path& dir, const std::string& name) {
  export_pgm(f, c, dir / (name + ".pgm"));
  save_mdnf(one_channel(f, c), dir / (name + ".mdnf"));
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(const std::string& mode, const KernelFlags& kf, std::uint64_t seed, std::ostream& out) {
  const auto reports = verify::vote_gradient_suite(seed, {parse_vote_mode(mode)}, {kf.spec()});
  json j = json::array();
  bool ok = true;
  for (const auto& r : reports) {
    j.push_back(json::parse(verify::to_json(r)));
    ok = ok && r.passed();
  }
  out << json{{"seed", seed}, {"passed", ok}, {"reports", j}}.dump(2) << '\n';
  return ok ? 0 : 1;
}

// --------------------------------------------------------------------- demo

int cmd_demo(const std::string& shape, const std::string& mode, const KernelFlags& kf, const fs::path& dir,
             std::ostream& out) {
  const auto fields = demo_fields(shape);
  const auto m = vote_forward(fields.c, fields.o, kf.spec(), parse_vote_mode(mode), VoteGraph::within_part(1)).mass;
  fs::create_directories(dir);
  dump(fields.c, 0, dir, "input");
  dump(fields.o.ox, 0, dir, "offset_x");
  dump(fields.o.oy, 0, dir, "offset_y");
  dump(m, 0, dir, "output");
  const json s{{"shape", shape},
               {"input_support", support_size(fields.c)},
               {"output_support", support_size(m)},
               {"output_max", m.max()}};
  write_text(dir / "summary.json", s.dump(2) + "\n");
  out << s.dump(2) << '\n';
  return 0;
}

// -------------------------------------------------------------------- train

int cmd_train(toynet::TrainConfig cfg, const fs::path& dir, std::ostream& out) {
  cfg.validate();
  const auto r = toynet::train(cfg);
  fs::create_directories(dir);
  write_text(dir / "config.json", experiment::to_json(cfg).dump(2) + "\n");
  write_text(dir / "metrics.csv", toynet::metrics_csv(r.log));

  const auto scene = toynet::make_scene(cfg.task, synth::kEvalSeedBegin, cfg.occlude);
  const auto pred = r.net.predict(scene.image, cfg.kernel, cfg.mode);
  dump(scene.image, 0, dir, "image");
  for (int j = 0; j < pred.confidence.channels(); ++j) {
    dump(pred.confidence, j, dir, "confidence_" + std::to_string(j));
    dump(*pred.mass, j, dir, "mass_" + std::to_string(j));
  }
  for (int e = 0; e < pred.offsets.edges(); ++e) {
    dump(pred.offsets.ox, e, dir, "offset_x_" + std::to_string(e));
    dump(pred.offsets.oy, e, dir, "offset_y_" + std::to_string(e));
  }
  const json s{{"pck", r.final_eval.pck},
               {"joint_error", r.final_eval.joint_error},
               {"offset_residual", r.final_eval.offset_residual}};
  write_text(dir / "summary.json", s.dump(2) + "\n");
  out << s.dump(2) << '\n';
  return 0;
}

// ------------------------------------------------------------------- ablate

int cmd_ablate(const fs::path& config, const fs::path& dir, int threads, std::ostream& out) {
  auto spec = experiment::ablation_from_json(read_json(config));
  if (threads > 0) spec.base.threads = threads;
  const auto csv = experiment::ablation_csv(experiment::run_ablation(spec));
  fs::create_directories(dir);
  write_text(dir / "ablation.csv", csv);
  out << csv;
  return 0;
}

// -------------------------------------------------------------------- bench

std::vector<int> parse_sizes(const std::string& list) {
  std::vector<int> sizes;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad size '" + item + "' in --sizes");
    }
    if (v < 2 || v > 1024) throw ConfigError("sizes must lie in [2, 1024]");
    sizes.push_back(v);
  }
  if (sizes.empty()) throw ConfigError("--sizes is empty");
  return sizes;
}

// Seconds per call, repeating until at least `budget` seconds have passed.
template <typename Fn>
double time_per_call(Fn&& fn, double budget) {
  using clock = std::chrono::steady_clock;
  int calls = 0;
  const auto t0 = clock::now();
  double elapsed = 0.0;
  do {
    fn();
    ++calls;
    elapsed = std::chrono::duration<double>(clock::now() - t0).count();
  } while (elapsed < budget);
  return elapsed / calls;
}

int cmd_bench(const std::string& sizes, int threads, double budget, std::uint64_t seed, std::ostream& out) {
  const auto grid_sizes = parse_sizes(sizes);
  out << "size,mode,kernel,threads,forward_ms,backward_ms,votes_per_s\n";
  for (int n : grid_sizes) {
    const auto inst = verify::random_vote_instance(seed, n, 3, 3.0);
    const double votes = static_cast<double>(inst.graph.size()) * n * n;
    for (const auto& kernel : {KernelSpec::bilinear(), KernelSpec::gaussian(5)}) {
      for (auto mode : {VoteMode::additive, VoteMode::noisy_or, VoteMode::max}) {
        VoteResult fwd;
        const double tf = time_per_call(
            [&] { fwd = vote_forward(inst.c, inst.o, kernel, mode, inst.graph, threads); }, budget);
        const double tb = time_per_call(
            [&] { vote_backward(inst.probe, inst.c, inst.o, kernel, mode, inst.graph, fwd.ctx, threads); },
            budget);
        out << n << ',' << to_string(mode) << ',' << describe(kernel) << ',' << threads << ',' << std::fixed
            << std::setprecision(4) << tf * 1e3 << ',' << tb * 1e3 << ',' << std::setprecision(0)
            << votes / tf << '\n'
            << std::defaultfloat << std::setprecision(6);
      }
    }
  }
  return 0;
}

}  // namespace

DemoFields demo_fields(const std::string& shape) {
  const int n = kDemoSize;
  const double mid = (n - 1) / 2.0;
  std::vector<double> c(static_cast<std::size_t>(n) * n, 0.0), ox(c.size(), 0.0), oy(c.size(), 0.0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * n + x;
      const int cx = n / 2, cy = n / 2;
      if (shape == "point") {
        // disk that collapses onto its centre pixel
        if (std::hypot(x - cx, y - cy) <= 6.0) {
          c[i] = 0.9;
          ox[i] = cx - x;
          oy[i] = cy - y;
        }
      } else if (shape == "line") {
        // horizontal band squeezed onto its middle row
        if (std::abs(y - cy) <= 4 && x >= 6 && x <= n - 7) {
          c[i] = 0.9;
          oy[i] = cy - y;
        }
      } else if (shape == "curve") {
        // annulus pulled radially onto the circle of radius 10
        const double dx = x - mid, dy = y - mid, r = std::hypot(dx, dy);
        if (std::abs(r - 10.0) <= 4.0) {
          c[i] = 0.9;
          ox[i] = dx * (10.0 / r - 1.0);
          oy[i] = dy * (10.0 / r - 1.0);
        }
      } else if (shape == "transfer") {
        // mass moved as a whole to the opposite corner
        if (std::hypot(x - 9, y - 9) <= 4.0) {
          c[i] = 0.9;
          ox[i] = 14.0;
          oy[i] = 14.0;
        }
      } else {
        throw ConfigError("unknown demo shape '" + shape + "'");
      }
    }
  }
  const Shape s{n, n, 1};
  return {ScalarField(s, std::move(c)), DisplacementField(ScalarField(s, std::move(ox)), ScalarField(s, std::move(oy)))};
}

int support_size(const ScalarField& f, double threshold) {
  const auto ch = f.channel(0);
  return static_cast<int>(std::count_if(ch.begin(), ch.end(), [&](double v) { return v > threshold; }));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Mass displacement voting: gradient checks, demos and toy experiments", "mdn");
  app.require_subcommand(1);
  app.fallthrough(false);

  std::uint64_t seed = 0;
  int threads = 1;

  auto* grad = app.add_subcommand("gradcheck", "check vote_backward against finite differences");
  std::string grad_mode = "additive";
  KernelFlags grad_kernel;
  grad->add_option("--mode", grad_mode, "additive | noisyor | max")->capture_default_str();
  add_kernel_flags(grad, grad_kernel);
  grad->add_option("--seed", seed)->capture_default_str();

  auto* demo = app.add_subcommand("demo", "render a hand-built displacement field and its vote");
  std::string demo_shape = "point", demo_mode = "noisyor", demo_out = "demo";
  KernelFlags demo_kernel;
  demo->add_option("--shape", demo_shape, "point | line | curve | transfer")->capture_default_str();
  demo->add_option("--mode", demo_mode)->capture_default_str();
  add_kernel_flags(demo, demo_kernel);
  demo->add_option("--out", demo_out, "output directory")->capture_default_str();

  auto* train = app.add_subcommand("train", "train the toy network and write metrics and fields");
  std::string task = "within", train_mode = "noisyor", variant = "mdn", train_out = "train_out", config;
  KernelFlags train_kernel;
  int steps = 1500;
  train->add_option("--config", config, "experiment JSON; flags given on the command line override it");
  train->add_option("--task", task, "within | cross")->capture_default_str();
  train->add_option("--mode", train_mode)->capture_default_str();
  add_kernel_flags(train, train_kernel);
  train->add_option("--variant", variant, "no_voting | posthoc | mdn | final_only")->capture_default_str();
  train->add_option("--steps", steps)->capture_default_str();
  train->add_option("--seed", seed)->capture_default_str();
  train->add_option("--threads", threads)->capture_default_str();
  train->add_option("--out", train_out)->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "sweep variants x kernels over seeds, write ablation.csv");
  std::string ablate_config, ablate_out = ".";
  int ablate_threads = 0;
  ablate->add_option("--config", ablate_config, "ablation JSON")->required();
  ablate->add_option("--out", ablate_out)->capture_default_str();
  ablate->add_option("--threads", ablate_threads, "override train.threads");

  auto* bench = app.add_subcommand("bench", "vote_forward / vote_backward throughput as CSV");
  std::string sizes = "32,64,128";
  double budget = 0.2;
  bench->add_option("--sizes", sizes, "comma separated grid sizes")->capture_default_str();
  bench->add_option("--threads", threads)->capture_default_str();
  bench->add_option("--budget", budget, "seconds spent timing each cell")->capture_default_str();
  bench->add_option("--seed", seed)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help("", CLI::AppFormatMode::All);
    return 2;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck(grad_mode, grad_kernel, seed, out);
    if (demo->parsed()) return cmd_demo(demo_shape, demo_mode, demo_kernel, demo_out, out);
    if (train->parsed()) {
      toynet::TrainConfig cfg = config.empty() ? toynet::TrainConfig{}
                                               : experiment::train_config_from_json(read_json(config));
      auto given = [&](const char* flag) { return train->count(flag) > 0 || config.empty(); };
      if (given("--task")) cfg.task = toynet::parse_task(task);
      if (given("--mode")) cfg.mode = parse_vote_mode(train_mode);
      if (given("--kernel") || train->count("--kf") || train->count("--sigma")) cfg.kernel = train_kernel.spec();
      if (given("--variant")) cfg.variant = toynet::parse_variant(variant);
      if (given("--steps")) cfg.steps = steps;
      if (given("--seed")) cfg.seed = seed;
      if (given("--threads")) cfg.threads = threads;
      return cmd_train(cfg, train_out, out);
    }
    if (ablate->parsed()) return cmd_ablate(ablate_config, ablate_out, ablate_threads, out);
    if (bench->parsed()) return cmd_bench(sizes, threads, budget, seed, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace mdn::cli
