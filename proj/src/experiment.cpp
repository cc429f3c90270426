#include "mdn/experiment.hpp"

#include <iomanip>
#include <sstream>

#include "mdn/errors.hpp"

namespace mdn::experiment {

using nlohmann::json;
using toynet::TrainConfig;

namespace {

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
}

}  // namespace

KernelSpec kernel_from_json(const json& j) {
  require_object(j, "kernel");
  std::string family = "bilinear";
  int kf = 5;
  double sigma = 0.0;
  bool normalized = false;
  read(j, "family", family);
  read(j, "kf", kf);
  read(j, "sigma", sigma);
  read(j, "normalized", normalized);
  KernelSpec k = parse_kernel_family(family) == KernelFamily::bilinear ? KernelSpec::bilinear()
                                                                        : KernelSpec::gaussian(kf, sigma, normalized);
  k.validate();
  return k;
}

TrainConfig train_config_from_json(const json& j) {
  require_object(j, "config");
  TrainConfig c;
  std::string s;
  if (j.contains("task")) {
    read(j, "task", s);
    c.task = toynet::parse_task(s);
  }
  if (j.contains("variant")) {
    read(j, "variant", s);
    c.variant = toynet::parse_variant(s);
  }
  if (j.contains("mode")) {
    read(j, "mode", s);
    c.mode = parse_vote_mode(s);
  }
  if (j.contains("kernel")) c.kernel = kernel_from_json(j.at("kernel"));
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    require_object(l, "loss");
    read(l, "eps_c", c.loss.eps_c);
    read(l, "eps_m", c.loss.eps_m);
    read(l, "huber_delta", c.loss.huber_delta);
    read(l, "gaussian_target_sigma", c.loss.gaussian_target_sigma);
    if (l.contains("weights")) {
      std::vector<double> w;
      read(l, "weights", w);
      if (w.size() != 3) throw ConfigError("loss.weights must have 3 entries");
      c.weights = {w[0], w[1], w[2]};
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    require_object(t, "train");
    read(t, "steps", c.steps);
    read(t, "lr", c.optimizer.learning_rate);
    read(t, "decay", c.optimizer.decay);
    read(t, "seed", c.seed);
    read(t, "pool", c.train_pool);
    read(t, "eval_every", c.eval_every);
    read(t, "eval_count", c.eval_count);
    read(t, "threads", c.threads);
    read(t, "occlude", c.occlude);
  }
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  json k{{"family", to_string(c.kernel.family)}, {"kf", c.kernel.kf}, {"sigma", c.kernel.sigma}};
  if (c.kernel.normalized) k["normalized"] = true;
  return json{
      {"task", toynet::to_string(c.task)},
      {"variant", toynet::to_string(c.variant)},
      {"mode", to_string(c.mode)},
      {"kernel", k},
      {"loss",
       {{"eps_c", c.loss.eps_c},
        {"eps_m", c.loss.eps_m},
        {"huber_delta", c.loss.huber_delta},
        {"gaussian_target_sigma", c.loss.gaussian_target_sigma},
        {"weights", {c.weights.confidence, c.weights.offset, c.weights.final}}}},
      {"train",
       {{"steps", c.steps},
        {"lr", c.optimizer.learning_rate},
        {"decay", c.optimizer.decay},
        {"seed", c.seed},
        {"pool", c.train_pool},
        {"eval_every", c.eval_every},
        {"eval_count", c.eval_count},
        {"threads", c.threads},
        {"occlude", c.occlude}}},
  };
}

AblationSpec ablation_from_json(const json& j) {
  AblationSpec a;
  a.base = train_config_from_json(j);
  if (j.contains("variants")) {
    std::vector<std::string> names;
    read(j, "variants", names);
    a.variants.clear();
    for (const auto& n : names) a.variants.push_back(toynet::parse_variant(n));
  }
  if (j.contains("kernels")) {
    if (!j.at("kernels").is_array()) throw ConfigError("kernels must be a list");
    a.kernels.clear();
    for (const auto& k : j.at("kernels")) a.kernels.push_back(kernel_from_json(k));
  }
  if (j.contains("seeds")) read(j, "seeds", a.seeds);
  if (a.variants.empty() || a.kernels.empty() || a.seeds.empty()) {
    throw ConfigError("variants, kernels and seeds must be non-empty");
  }
  return a;
}

double AblationRow::mean_pck() const {
  double s = 0.0;
  for (const auto& r : runs) s += r.eval.pck;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

double AblationRow::mean_joint_error(int joint) const {
  double s = 0.0;
  for (const auto& r : runs) s += r.eval.joint_error.at(static_cast<std::size_t>(joint));
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

std::vector<AblationRow> run_ablation(const AblationSpec& spec) {
  std::vector<AblationRow> rows;
  for (const auto& kernel : spec.kernels) {
    for (auto variant : spec.variants) {
      AblationRow row{variant, kernel, {}};
      for (auto seed : spec.seeds) {
        TrainConfig c = spec.base;
        c.kernel = kernel;
        c.variant = variant;
        c.seed = seed;
        c.eval_every = std::max(c.steps, 1);
        row.runs.push_back({seed, toynet::train(c).final_eval});
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(6);
  const std::size_t seeds = rows.empty() ? 0 : rows.front().runs.size();
  const std::size_t joints = seeds == 0 ? 0 : rows.front().runs.front().eval.joint_error.size();
  os << "variant,kernel,seeds,pck_mean";
  for (std::size_t s = 0; s < seeds; ++s) os << ",pck_seed" << rows.front().runs[s].seed;
  for (std::size_t j = 0; j < joints; ++j) os << ",err_joint" << j;
  os << '\n';
  for (const auto& r : rows) {
    os << toynet::to_string(r.variant) << ',' << describe(r.kernel) << ',' << r.runs.size() << ','
       << r.mean_pck();
    for (const auto& s : r.runs) os << ',' << s.eval.pck;
    for (std::size_t j = 0; j < joints; ++j) os << ',' << r.mean_joint_error(static_cast<int>(j));
    os << '\n';
  }
  return os.str();
}

}  // namespace mdn::experiment
