#pragma once

#include <string>
#include <vector>

#include "korr/base_policy.hpp"
#include "korr/dynamics.hpp"
#include "korr/env.hpp"
#include "korr/eval.hpp"
#include "korr/extrapolation.hpp"
#include "korr/ppo.hpp"
#include "korr/residual.hpp"

namespace korr {

// Everything a run needs, with documented defaults. Resolution order:
// defaults, then config file, then command-line overrides.
struct ExperimentConfig {
  EnvConfig env;
  BasePolicyConfig base;
  KoopmanConfig koopman;
  NonlinearDynConfig nonlin;
  ResidualConfig residual;
  PpoConfig ppo;
  EvalSpec eval;
  StudyConfig study;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  std::string run_name = "run";

  void validate() const;
};

// JSON text -> config, rejecting unknown keys with their full dotted path.
ExperimentConfig parse_config_text(const std::string& json_text);
ExperimentConfig parse_config_file(const std::string& path);

// "ppo.gamma=0.9"-style override applied in place.
void apply_override(ExperimentConfig& config, const std::string& assignment);

// Fully resolved config as stable, pretty-printed JSON (the run-directory
// echo and the bit-exact reproduction record).
std::string resolved_config_json(const ExperimentConfig& config);

// All recognized dotted keys, for error messages and docs.
std::vector<std::string> config_keys();

}  // namespace korr
