#include "korr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace korr {

namespace {

struct EpisodeOutcome {
  bool success = false;
  int length = 0;
};

// One seeded episode of the base(+residual) stack. The residual acts through
// its deterministic mean unless the spec asks for sampling.
EpisodeOutcome run_episode(const BasePolicy& base, const ResidualPolicy* residual,
                           const EnvConfig& env_config, std::uint64_t seed,
                           bool deterministic) {
  Env env(env_config, seed);
  ChunkExecutor exec(&base);
  env.reset();
  // Decorrelated from the env's own stream but still a pure function of the
  // episode seed.
  Rng action_rng(seed ^ 0x5851f42d4c957f2dULL);
  EpisodeOutcome out;
  bool success = false;
  while (!env.done()) {
    const StateVector s = env.state();
    const ActionVector a_base = exec.base_action(s);
    ActionVector a_exe = a_base;
    if (residual != nullptr) {
      const Vector cond = assemble_cond(*residual, s, a_base);
      const Vector mean = mlp_forward(residual->actor, cond).col(0);
      Vector a_res = mean;
      if (!deterministic) {
        a_res = sample_residual(mean, residual->logstd, action_rng).action;
      }
      a_exe = compose(a_base, a_res, residual->config.action_scale);
    }
    const StepResult r = env.step(a_exe);
    success = success || r.success;
    ++out.length;
  }
  out.success = success;
  return out;
}

EvalResult run_schedule(
    const EvalSpec& spec,
    const std::function<EpisodeOutcome(std::uint64_t seed)>& episode_fn) {
  if (spec.episodes < 1) throw ConfigError("eval: episodes must be >= 1");
  std::vector<EpisodeOutcome> outcomes(spec.episodes);
  const int workers =
      std::max(1, std::min(spec.workers, spec.episodes));
  // Slot writes keyed by episode index: identical results for any worker
  // count.
  auto run_range = [&](int begin, int end) {
    for (int e = begin; e < end; ++e) {
      outcomes[e] = episode_fn(spec.base_seed + static_cast<std::uint64_t>(e));
    }
  };
  if (workers == 1) {
    run_range(0, spec.episodes);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (spec.episodes + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(spec.episodes, begin + chunk);
      if (begin < end) pool.emplace_back(run_range, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }
  EvalResult result;
  result.episodes = spec.episodes;
  result.outcomes.resize(spec.episodes);
  double total_len = 0;
  for (int e = 0; e < spec.episodes; ++e) {
    result.outcomes[e] = outcomes[e].success;
    result.successes += outcomes[e].success ? 1 : 0;
    total_len += outcomes[e].length;
  }
  result.success_rate = double(result.successes) / spec.episodes;
  result.mean_episode_length = total_len / spec.episodes;
  return result;
}

EnvConfig env_for_spec(const EnvConfig& env_template, const EvalSpec& spec) {
  EnvConfig cfg = env_template;
  cfg.randomness_level = spec.level;
  cfg.disturb_enabled = spec.disturb;
  cfg.validate();
  return cfg;
}

}  // namespace

EvalResult evaluate_stack(const BasePolicy& base, const ResidualPolicy* residual,
                          const EnvConfig& env_template, const EvalSpec& spec) {
  const EnvConfig cfg = env_for_spec(env_template, spec);
  return run_schedule(spec, [&](std::uint64_t seed) {
    return run_episode(base, residual, cfg, seed, spec.deterministic_actions);
  });
}

EvalResult evaluate_expert(const EnvConfig& env_template, const EvalSpec& spec) {
  const EnvConfig cfg = env_for_spec(env_template, spec);
  return run_schedule(spec, [&](std::uint64_t seed) {
    Env env(cfg, seed);
    env.reset();
    EpisodeOutcome out;
    bool success = false;
    while (!env.done()) {
      const StepResult r = env.step(scripted_expert(env.state(), cfg));
      success = success || r.success;
      ++out.length;
    }
    out.success = success;
    return out;
  });
}

GeneralizationDrop generalization_drop(double rate_low, double rate_med) {
  if (rate_low < 0 || rate_med < 0) {
    throw ConfigError("generalization_drop: rates must be non-negative");
  }
  if (rate_low == 0) {
    throw ConfigError("generalization_drop: undefined for rate_low = 0");
  }
  GeneralizationDrop d;
  d.rate_low = rate_low;
  d.rate_med = rate_med;
  d.drop_percent = (rate_low - rate_med) / rate_low * 100.0;
  return d;
}

namespace {

DriftCurve summarize_drift(const std::vector<std::vector<double>>& per_rollout,
                           int horizon) {
  DriftCurve curve;
  curve.per_rollout = per_rollout;
  curve.mean.assign(horizon, 0.0);
  curve.std_dev.assign(horizon, 0.0);
  const double n = double(per_rollout.size());
  for (const auto& r : per_rollout) {
    for (int k = 0; k < horizon; ++k) curve.mean[k] += r[k] / n;
  }
  for (const auto& r : per_rollout) {
    for (int k = 0; k < horizon; ++k) {
      const double d = r[k] - curve.mean[k];
      curve.std_dev[k] += d * d / n;
    }
  }
  for (int k = 0; k < horizon; ++k) {
    curve.std_dev[k] = std::sqrt(curve.std_dev[k]);
  }
  return curve;
}

}  // namespace

std::vector<Trajectory> collect_trajectories(const BasePolicy& base,
                                             const EnvConfig& env_template,
                                             int count, int min_steps,
                                             std::uint64_t seed0,
                                             double action_noise) {
  std::vector<Trajectory> out;
  std::uint64_t seed = seed0;
  Rng noise_rng(seed0 ^ 0xd1342543de82ef95ULL);
  const int max_attempts = 50 * count + 50;
  int attempts = 0;
  while (int(out.size()) < count) {
    if (++attempts > max_attempts) {
      throw ContractError(
          "collect_trajectories: could not gather enough rollouts of length " +
          std::to_string(min_steps));
    }
    Env env(env_template, seed++);
    ChunkExecutor exec(&base);
    env.reset();
    std::vector<Vector> xs, as;
    xs.push_back(env.state().to_vector());
    while (!env.done()) {
      ActionVector a = exec.base_action(env.state());
      if (action_noise > 0) {
        a.d_pos_x += action_noise * noise_rng.normal();
        a.d_pos_y += action_noise * noise_rng.normal();
        a.d_theta += action_noise * noise_rng.normal();
        a = clamp_action(a);
      }
      const StepResult r = env.step(a);
      as.push_back(a.to_vector());
      xs.push_back(r.next_state.to_vector());
    }
    if (int(as.size()) < min_steps) continue;
    Trajectory traj;
    traj.states.resize(kStateDim, Eigen::Index(xs.size()));
    traj.actions.resize(kActionDim, Eigen::Index(as.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) traj.states.col(i) = xs[i];
    for (std::size_t i = 0; i < as.size(); ++i) traj.actions.col(i) = as[i];
    out.push_back(std::move(traj));
  }
  return out;
}

DriftStudyResult drift_study(const KoopmanModel& koopman,
                             const NonlinearDynModel& nonlinear,
                             const std::vector<Trajectory>& trajectories,
                             int horizon) {
  if (trajectories.empty()) {
    throw ConfigError("drift_study: need at least one trajectory");
  }
  std::vector<std::vector<double>> ko, nl;
  for (const Trajectory& traj : trajectories) {
    ko.push_back(open_loop_rollout(koopman, traj.states, traj.actions, horizon));
    nl.push_back(
        open_loop_rollout(nonlinear, traj.states, traj.actions, horizon));
  }
  DriftStudyResult result;
  result.koopman = summarize_drift(ko, horizon);
  result.nonlinear = summarize_drift(nl, horizon);
  for (std::size_t i = 0; i < ko.size(); ++i) {
    if (ko[i].back() < nl[i].back()) ++result.final_step_koopman_below;
  }
  return result;
}

std::string results_table(const std::vector<EvalCell>& cells) {
  std::ostringstream os;
  os << "method              level  disturb  success  episodes  mean_len\n";
  for (const EvalCell& c : cells) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-18s  %-5s  %-7s  %7.3f  %8d  %8.1f\n",
                  c.method.c_str(), level_name(c.level).c_str(),
                  c.disturb ? "yes" : "no", c.result.success_rate,
                  c.result.episodes, c.result.mean_episode_length);
    os << line;
  }
  return os.str();
}

std::string results_json(const std::vector<EvalCell>& cells) {
  nlohmann::json out = nlohmann::json::array();
  for (const EvalCell& c : cells) {
    out.push_back({{"method", c.method},
                   {"level", level_name(c.level)},
                   {"disturb", c.disturb},
                   {"successes", c.result.successes},
                   {"episodes", c.result.episodes},
                   {"success_rate", c.result.success_rate},
                   {"mean_episode_length", c.result.mean_episode_length},
                   {"seed", c.seed}});
  }
  return out.dump(2);
}

double paired_sign_test(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("paired_sign_test: outcome vectors differ in length");
  }
  int m = 0;  // discordant pairs
  int k = 0;  // pairs where a wins
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      ++m;
      if (a[i]) ++k;
    }
  }
  if (m == 0) return 1.0;
  // One-sided binomial tail P(X >= k), X ~ Bin(m, 1/2), summed in log space
  // so large m stays stable.
  double p = 0.0;
  for (int j = k; j <= m; ++j) {
    double log_c = std::lgamma(m + 1.0) - std::lgamma(j + 1.0) -
                   std::lgamma(m - j + 1.0);
    p += std::exp(log_c - m * std::log(2.0));
  }
  return std::min(1.0, p);
}

}  // namespace korr
