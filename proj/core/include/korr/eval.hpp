#pragma once

#include <optional>

#include "korr/base_policy.hpp"
#include "korr/dynamics.hpp"
#include "korr/residual.hpp"

namespace korr {

struct EvalSpec {
  Level level = Level::kLow;
  bool disturb = false;
  int episodes = 512;
  std::uint64_t base_seed = 0;  // episode e runs with seed base_seed + e
  bool deterministic_actions = true;
  int workers = 1;
};

struct EvalResult {
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
  double mean_episode_length = 0.0;
  std::vector<bool> outcomes;  // per-episode, pairable across methods
};

// Runs the base+residual stack (or the base alone when `residual` is null)
// under the matched-seed schedule. Episodes are embarrassingly parallel;
// results are identical for any worker count.
EvalResult evaluate_stack(const BasePolicy& base, const ResidualPolicy* residual,
                          const EnvConfig& env_template, const EvalSpec& spec);

// Scripted-expert reference evaluation (oracle for the env suite).
EvalResult evaluate_expert(const EnvConfig& env_template, const EvalSpec& spec);

struct GeneralizationDrop {
  double rate_low = 0.0;
  double rate_med = 0.0;
  double drop_percent = 0.0;
};

// drop% = (rate_low - rate_med) / rate_low * 100 for a Low-trained policy.
GeneralizationDrop generalization_drop(double rate_low, double rate_med);

struct DriftCurve {
  std::vector<double> mean;  // per-step open-loop MSE, mean over rollouts
  std::vector<double> std_dev;
  std::vector<std::vector<double>> per_rollout;  // [rollout][step]
};

struct DriftStudyResult {
  DriftCurve koopman;
  DriftCurve nonlinear;
  int final_step_koopman_below = 0;  // rollouts where koopman < nonlinear
};

// Held-out trajectory: states (state_dim x T+1), actions (action_dim x T).
struct Trajectory {
  Matrix states;
  Matrix actions;
};

// Held-out base-policy rollouts of at least `min_steps` transitions, with a
// little Gaussian action noise so failures (and therefore long trajectories)
// appear. Short episodes are skipped.
std::vector<Trajectory> collect_trajectories(const BasePolicy& base,
                                             const EnvConfig& env_template,
                                             int count, int min_steps,
                                             std::uint64_t seed0,
                                             double action_noise = 0.02);

DriftStudyResult drift_study(const KoopmanModel& koopman,
                             const NonlinearDynModel& nonlinear,
                             const std::vector<Trajectory>& trajectories,
                             int horizon);

// One grid cell of a results table.
struct EvalCell {
  std::string method;
  Level level;
  bool disturb;
  EvalResult result;
  std::uint64_t seed = 0;
};

// Text table plus machine-readable JSON export (exact counts, so rates
// re-parse to the source fractions).
std::string results_table(const std::vector<EvalCell>& cells);
std::string results_json(const std::vector<EvalCell>& cells);

// One-sided paired sign test: P(successes_a >= observed | p = 1/2) over
// discordant pairs, testing whether `a` beats `b`.
double paired_sign_test(const std::vector<bool>& a, const std::vector<bool>& b);

}  // namespace korr
