#include "korr/residual.hpp"

#include <cmath>
#include <numbers>

namespace korr {

std::string residual_mode_name(ResidualMode mode) {
  switch (mode) {
    case ResidualMode::kKorr: return "korr";
    case ResidualMode::kResip: return "resip";
    case ResidualMode::kResipNonlinDyn: return "resip-nonlin-dyn";
  }
  return "korr";
}

ResidualMode residual_mode_from_name(const std::string& name) {
  if (name == "korr") return ResidualMode::kKorr;
  if (name == "resip") return ResidualMode::kResip;
  if (name == "resip-nonlin-dyn" || name == "resip_nonlin_dyn") {
    return ResidualMode::kResipNonlinDyn;
  }
  throw ConfigError("unknown residual mode '" + name +
                    "' (expected korr|resip|resip-nonlin-dyn)");
}

void ResidualConfig::validate() const {
  if (action_scale <= 0) throw ConfigError("residual.action_scale must be > 0");
  if (hidden.empty()) throw ConfigError("residual.hidden must be non-empty");
}

int ResidualPolicy::cond_dim() const {
  int d = 0;
  switch (config.mode) {
    case ResidualMode::kKorr:
      d = koopman.latent_dim();
      break;
    case ResidualMode::kResip:
      d = kStateDim + kActionDim;
      break;
    case ResidualMode::kResipNonlinDyn:
      d = kStateDim;
      break;
  }
  if (config.goal_conditioned) d += kStateDim;
  return d;
}

ResidualPolicy make_residual_policy(const ResidualConfig& config,
                                    const KoopmanConfig& koopman_config,
                                    const NonlinearDynConfig& nonlin_config,
                                    const Normalizer& stats, Rng& rng) {
  config.validate();
  ResidualPolicy policy;
  policy.config = config;
  policy.logstd = config.init_logstd;
  policy.stats = stats;
  if (config.mode == ResidualMode::kKorr) {
    policy.koopman = make_koopman(koopman_config, stats, rng);
  } else if (config.mode == ResidualMode::kResipNonlinDyn) {
    policy.nonlinear = make_nonlinear_dyn(nonlin_config, stats, rng);
  }
  if (config.goal_conditioned) {
    const Vector g = analytic_goal_state().to_vector();
    policy.goal = stats.empty() ? g : stats.apply(g);
  }

  std::vector<int> actor_sizes;
  actor_sizes.push_back(policy.cond_dim());
  for (int h : config.hidden) actor_sizes.push_back(h);
  actor_sizes.push_back(kActionDim);
  policy.actor = make_mlp(actor_sizes, rng);
  // Zero-initialized action head: the residual starts as a no-op.
  init_last_layer(policy.actor, 0.0, 0.0, rng);

  std::vector<int> critic_sizes;
  critic_sizes.push_back(policy.cond_dim());
  for (int h : config.hidden) critic_sizes.push_back(h);
  critic_sizes.push_back(1);
  policy.critic = make_mlp(critic_sizes, rng);
  init_last_layer(policy.critic, config.critic_last_layer_std,
                  config.critic_last_layer_bias, rng);
  return policy;
}

StateVector analytic_goal_state() {
  StateVector s;
  s.socket_pose << kSocketNominal[0], kSocketNominal[1], kSocketNominal[2];
  s.peg_pose = s.socket_pose;
  s.ee_pos = s.peg_pose.head<2>();
  s.ee_vel.setZero();
  s.grip_engaged = 1.0;
  return s;
}

Matrix assemble_cond(const ResidualPolicy& policy, const Matrix& states,
                     const Matrix& base_actions) {
  if (states.rows() != kStateDim || base_actions.rows() != kActionDim ||
      states.cols() != base_actions.cols()) {
    throw DimensionError("assemble_cond: input shape mismatch");
  }
  const Eigen::Index n = states.cols();
  Matrix cond(policy.cond_dim(), n);
  Eigen::Index base_rows = 0;
  switch (policy.config.mode) {
    case ResidualMode::kKorr: {
      const Matrix z = lift_batch(policy.koopman, states);
      base_rows = z.rows();
      cond.topRows(base_rows) =
          policy.koopman.A * z + policy.koopman.B * base_actions;
      break;
    }
    case ResidualMode::kResip: {
      base_rows = kStateDim + kActionDim;
      cond.topRows(kStateDim) =
          policy.stats.empty() ? states : policy.stats.apply(states);
      cond.middleRows(kStateDim, kActionDim) = base_actions;
      break;
    }
    case ResidualMode::kResipNonlinDyn: {
      base_rows = kStateDim;
      cond.topRows(kStateDim) =
          nonlinear_predict_batch(policy.nonlinear, states, base_actions);
      break;
    }
  }
  if (policy.config.goal_conditioned) {
    cond.bottomRows(kStateDim).colwise() = policy.goal;
  }
  (void)base_rows;
  return cond;
}

Vector assemble_cond(const ResidualPolicy& policy, const StateVector& state,
                     const ActionVector& a_base) {
  return assemble_cond(policy, Matrix(state.to_vector()),
                       Matrix(a_base.to_vector()))
      .col(0);
}

GaussianSample sample_residual(const Vector& mean, double logstd, Rng& rng) {
  if (!mean.allFinite()) {
    throw NumericError("sample_residual: non-finite mean");
  }
  const double std = std::exp(logstd);
  Vector a(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    a(i) = mean(i) + std * rng.normal();
  }
  return {a, log_prob(mean, logstd, a)};
}

double log_prob(const Vector& mean, double logstd, const Vector& action) {
  const double std = std::exp(logstd);
  const double d = static_cast<double>(mean.size());
  const double quad = ((action - mean) / std).squaredNorm();
  return -0.5 * quad - d * logstd -
         0.5 * d * std::log(2.0 * std::numbers::pi);
}

double gaussian_entropy(double logstd, int action_dim) {
  return action_dim *
         (logstd + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e));
}

ActionVector compose(const ActionVector& a_base, const Vector& a_res,
                     double action_scale) {
  if (a_res.size() != kActionDim) {
    throw DimensionError("compose: residual action dimension mismatch");
  }
  return clamp_action({a_base.d_pos_x + action_scale * a_res(0),
                       a_base.d_pos_y + action_scale * a_res(1),
                       a_base.d_theta + action_scale * a_res(2)});
}

}  // namespace korr
