#pragma once

#include <functional>
#include <optional>

#include "korr/base_policy.hpp"
#include "korr/dynamics.hpp"
#include "korr/residual.hpp"

namespace korr {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  double c1 = 0.5;   // value-loss weight
  double c2 = 0.01;  // entropy weight
  int epochs_per_iter = 4;
  int minibatch_size = 512;
  int num_envs = 64;
  int steps_per_env = 400;
  int iterations = 50;
  bool bkp_rl_to_koopman = true;
  double koopman_loss_weight = 1.0;
  double actor_lr = 1e-4;
  // Kept small so joint Koopman training cannot collapse the lift's
  // variance faster than the RL gradient re-inflates it.
  double dyn_lr = 1e-4;
  double max_grad_norm = 0.5;
  // Alg-order default: dynamics step before PPO step per minibatch; the
  // combined single step is the config alternative.
  bool combined_loss_single_step = false;
  int eval_every = 10;
  int eval_episodes = 100;
  // Periodic-eval sampling mode; best-checkpoint selection follows it.
  bool eval_deterministic = true;
  // Dynamics warm-up on base-policy rollouts before PPO starts. Gradient
  // epochs on the Koopman loss are off by default: from the A=I, B=0 init
  // they drive the lift toward a near-constant map (the loss's trivial
  // minimizer), flattening the residual's conditioning. The default instead
  // fits A, B by EDMD on the randomly initialized lift, which keeps the
  // latent variance intact.
  int dyn_pretrain_episodes = 100;
  int dyn_pretrain_epochs = 0;
  bool edmd_warm_start = true;

  void validate() const;
};

// Rectangular rollout storage; column index = step * num_envs + env.
struct RolloutBuffer {
  int num_envs = 0;
  int steps = 0;
  Matrix x;       // (state_dim x n)
  Matrix cond;    // (cond_dim x n), as assembled at collection time
  Matrix a_base;  // (action_dim x n)
  Matrix a_res;   // (action_dim x n), pre-scale samples
  Matrix a_exe;   // (action_dim x n), executed (clamped) actions
  Vector log_prob_old;
  Vector value_old;
  Vector reward;
  Vector done;
  Matrix x_next;  // true successor states; never spans an episode boundary
  Vector last_value;  // bootstrap V for each env's final step
  Vector advantage;
  Vector returns;
  bool finalized = false;

  int size() const { return num_envs * steps; }
  int col(int t, int env) const { return t * num_envs + env; }
  // Computes advantages/returns; must be called exactly once.
  void finalize(double gamma, double lambda);
};

struct GaeResult {
  Vector advantages;
  Vector returns;
};

// Recursive GAE over one env's sequence. `bootstrap_value` is V(x_{T}) for a
// truncated (not done) tail; terminal steps always bootstrap 0.
GaeResult compute_gae(const Vector& rewards, const Vector& values,
                      const Vector& dones, double gamma, double lambda,
                      double bootstrap_value = 0.0);

// Stepped set of parallel environments, each with its own chunk cadence.
// One residual sample per step; environments reset on done.
RolloutBuffer collect_rollouts(std::vector<Env>& envs, const BasePolicy& base,
                               const ResidualPolicy& policy,
                               std::vector<ChunkExecutor>& executors,
                               const PpoConfig& config,
                               std::vector<Rng>& env_rngs);

struct PpoLossTerms {
  double l_clip = 0.0;
  double l_vf = 0.0;
  double l_s = 0.0;
  double l_ppo = 0.0;
  double kl_estimate = 0.0;
};

struct ResidualGrads {
  MlpGrads actor;
  MlpGrads critic;
  double d_logstd = 0.0;  // only applied when learn_std is set
  KoopmanGrads dyn;       // korr mode
  MlpGrads nonlin;        // resip-nonlin-dyn mode
};

ResidualGrads zero_residual_grads(const ResidualPolicy& policy);

// Minibatch of frozen rollout snapshots.
struct PpoMinibatch {
  Matrix x;
  Matrix a_base;
  Matrix a_res;
  Vector log_prob_old;
  Vector advantage;  // already normalized by the caller
  Vector returns;
};

// The composite objective: L_clip - c1 L_vf + c2 L_S (ascended). When
// `grads` is given, accumulates the gradients of -L_ppo. In korr mode the
// conditioning is recomputed from the current dynamics parameters;
// `backprop_to_dynamics` gates whether those gradients are kept.
PpoLossTerms ppo_losses(const ResidualPolicy& policy, const PpoMinibatch& batch,
                        const PpoConfig& config, ResidualGrads* grads,
                        bool backprop_to_dynamics);

struct UpdateMetrics {
  double koopman_loss = 0.0;  // or nonlinear aux loss, per mode
  PpoLossTerms ppo;
  double latent_norm_mean = 0.0;
};

// One PPO update phase over a finalized buffer (all epochs/minibatches).
UpdateMetrics update(const RolloutBuffer& buffer, ResidualPolicy& policy,
                     const PpoConfig& config, Adam& policy_opt, Adam& dyn_opt,
                     Rng& rng);

// Dynamics warm-up on base-only rollouts; also used standalone by the drift
// study. A no-op for the plain resip mode or a zero episode budget.
void pretrain_dynamics(ResidualPolicy& policy, const BasePolicy& base,
                       const EnvConfig& env_config, const PpoConfig& config,
                       Adam& dyn_opt, Rng& rng);

struct IterationMetrics {
  int iteration = 0;
  double mean_episode_reward = 0.0;
  double eval_success_rate = -1.0;  // -1 when not evaluated this iteration
  UpdateMetrics update;
  double wall_time_s = 0.0;
};

struct TrainResult {
  ResidualPolicy policy;       // best checkpoint by eval success
  ResidualPolicy final_policy;
  double best_eval_success = -1.0;
  std::vector<IterationMetrics> history;
};

using MetricsSink = std::function<void(const IterationMetrics&)>;

// Full training loop: dynamics warm-up, N x (collect + update), periodic
// deterministic evaluation, best-checkpoint retention. The base policy must
// carry a recorded evaluation (refuses to run otherwise) and is frozen.
TrainResult train(const PpoConfig& config, const ResidualConfig& residual_cfg,
                  const KoopmanConfig& koopman_cfg,
                  const NonlinearDynConfig& nonlin_cfg, const BasePolicy& base,
                  const EnvConfig& env_config, std::uint64_t seed,
                  const MetricsSink& sink = nullptr);

// Residual checkpoint bundle.
struct ResidualCheckpointInfo {
  Level trained_level = Level::kLow;
  double eval_success_rate = -1.0;
  std::uint64_t train_seed = 0;
  std::uint64_t base_checksum = 0;
};

void save_residual(const std::string& path, const ResidualPolicy& policy,
                   const ResidualCheckpointInfo& info);
std::pair<ResidualPolicy, ResidualCheckpointInfo> load_residual(
    const std::string& path);

}  // namespace korr
