#pragma once

#include "korr/base_policy.hpp"
#include "korr/dynamics.hpp"
#include "korr/env.hpp"
#include "korr/numeric.hpp"

namespace korr {

enum class ResidualMode { kKorr, kResip, kResipNonlinDyn };

std::string residual_mode_name(ResidualMode mode);
ResidualMode residual_mode_from_name(const std::string& name);

struct ResidualConfig {
  ResidualMode mode = ResidualMode::kKorr;
  double action_scale = 0.1;
  double init_logstd = -1.0;
  bool learn_std = false;  // logstd stays constant throughout training
  std::vector<int> hidden = {256, 256};
  bool goal_conditioned = false;
  double critic_last_layer_std = 0.25;
  double critic_last_layer_bias = 0.25;

  void validate() const;
};

// Residual actor-critic. The conditioning vector depends on the mode:
//   korr            -> imagined next latent state A g(x) + B a_base
//   resip           -> normalized state ++ base action
//   resip_nonlin_dyn-> nonlinear model's predicted next (normalized) state
// Goal conditioning appends the normalized analytic success state.
struct ResidualPolicy {
  ResidualConfig config;
  Mlp actor;
  Mlp critic;
  double logstd = -1.0;
  KoopmanModel koopman;        // korr mode
  NonlinearDynModel nonlinear; // resip_nonlin_dyn mode
  Normalizer stats;            // state normalization (resip cond, goal)
  Vector goal;                 // normalized goal state, when conditioned

  int cond_dim() const;
};

ResidualPolicy make_residual_policy(const ResidualConfig& config,
                                    const KoopmanConfig& koopman_config,
                                    const NonlinearDynConfig& nonlin_config,
                                    const Normalizer& stats, Rng& rng);

// Analytic success state: peg at the socket, matched angle, zero velocity.
StateVector analytic_goal_state();

// Conditioning vectors for a batch of (state, base action) columns.
// The korr path is recomputed from the current dynamics parameters so PPO
// gradients can flow through it.
Matrix assemble_cond(const ResidualPolicy& policy, const Matrix& states,
                     const Matrix& base_actions);
Vector assemble_cond(const ResidualPolicy& policy, const StateVector& state,
                     const ActionVector& a_base);

// Diagonal-Gaussian head.
struct GaussianSample {
  Vector action;
  double log_prob;
};

GaussianSample sample_residual(const Vector& mean, double logstd, Rng& rng);
double log_prob(const Vector& mean, double logstd, const Vector& action);
// Closed-form entropy of the diagonal Gaussian.
double gaussian_entropy(double logstd, int action_dim);

// a_exe = clamp_env(a_base + action_scale * a_res).
ActionVector compose(const ActionVector& a_base, const Vector& a_res,
                     double action_scale);

}  // namespace korr
