#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdn/toynet.hpp"

namespace mdn::experiment {

/*!
 * Experiment JSON:
 *
 *   {"task": "within", "mode": "noisyor",
 *    "kernel": {"family": "bilinear", "kf": 2, "sigma": 0},
 *    "loss": {"eps_c": 4, "eps_m": 1, "huber_delta": 1, "gaussian_target_sigma": 1,
 *             "weights": [1, 1, 1]},
 *    "train": {"steps": 1000, "lr": 0.0025, "decay": 0.99, "seed": 0,
 *              "pool": 5000, "eval_every": 250, "eval_count": 200, "threads": 1}}
 *
 * Every key is optional and falls back to the TrainConfig default.
 */
toynet::TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const toynet::TrainConfig& c);

KernelSpec kernel_from_json(const nlohmann::json& j);

// A sweep of variants x kernel settings, each trained over every seed.
struct AblationSpec {
  toynet::TrainConfig base;
  std::vector<toynet::Variant> variants{toynet::Variant::no_voting, toynet::Variant::posthoc,
                                        toynet::Variant::mdn};
  std::vector<KernelSpec> kernels{KernelSpec::bilinear()};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

// The base config plus "variants", "kernels" (list of kernel objects) and
// "seeds" at the top level.
AblationSpec ablation_from_json(const nlohmann::json& j);

struct SeedResult {
  std::uint64_t seed = 0;
  toynet::EvalReport eval;
};

struct AblationRow {
  toynet::Variant variant = toynet::Variant::mdn;
  KernelSpec kernel;
  std::vector<SeedResult> runs;

  double mean_pck() const;
  double mean_joint_error(int joint) const;
};

// One training run per (kernel, variant, seed), in that nesting order.
std::vector<AblationRow> run_ablation(const AblationSpec& spec);

// Header: variant,kernel,seeds,pck_mean,pck_seed0..,err_joint0..
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace mdn::experiment
