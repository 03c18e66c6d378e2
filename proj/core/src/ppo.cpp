#include "korr/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "korr/checkpoint.hpp"
#include "korr/eval.hpp"

namespace korr {

void PpoConfig::validate() const {
  if (gamma <= 0 || gamma > 1) throw ConfigError("ppo.gamma must be in (0, 1]");
  if (lambda < 0 || lambda > 1) {
    throw ConfigError("ppo.lambda must be in [0, 1]");
  }
  if (clip_eps <= 0) throw ConfigError("ppo.clip_eps must be > 0");
  if (epochs_per_iter < 1) throw ConfigError("ppo.epochs_per_iter must be >= 1");
  if (minibatch_size < 1) throw ConfigError("ppo.minibatch_size must be >= 1");
  if (num_envs < 1) throw ConfigError("ppo.num_envs must be >= 1");
  if (steps_per_env < 1) throw ConfigError("ppo.steps_per_env must be >= 1");
  if (iterations < 1) throw ConfigError("ppo.iterations must be >= 1");
  if (koopman_loss_weight < 0) {
    throw ConfigError("ppo.koopman_loss_weight must be >= 0");
  }
  if (actor_lr <= 0 || dyn_lr <= 0) throw ConfigError("ppo lrs must be > 0");
}

namespace {

// Parameter/gradient views for the actor-critic (the policy optimizer's
// parameter group). The dynamics parameters form their own group.
std::vector<ParamView> policy_param_views(ResidualPolicy& policy) {
  std::vector<ParamView> v = param_views(policy.actor);
  for (const ParamView& p : param_views(policy.critic)) v.push_back(p);
  if (policy.config.learn_std) v.push_back({&policy.logstd, 1});
  return v;
}

std::vector<ParamView> policy_grad_views(const ResidualPolicy& policy,
                                         ResidualGrads& g) {
  std::vector<ParamView> v = grad_views(g.actor);
  for (const ParamView& p : grad_views(g.critic)) v.push_back(p);
  if (policy.config.learn_std) v.push_back({&g.d_logstd, 1});
  return v;
}

std::vector<ParamView> dyn_param_views(ResidualPolicy& policy) {
  if (policy.config.mode == ResidualMode::kKorr) {
    return koopman_param_views(policy.koopman);
  }
  if (policy.config.mode == ResidualMode::kResipNonlinDyn) {
    return param_views(policy.nonlinear.net);
  }
  return {};
}

std::vector<ParamView> dyn_grad_views(const ResidualPolicy& policy,
                                      ResidualGrads& g) {
  if (policy.config.mode == ResidualMode::kKorr) {
    return koopman_grad_views(g.dyn);
  }
  if (policy.config.mode == ResidualMode::kResipNonlinDyn) {
    return grad_views(g.nonlin);
  }
  return {};
}

double global_grad_norm(const std::vector<ParamView>& grads) {
  double sq = 0.0;
  for (const ParamView& g : grads) {
    for (Eigen::Index i = 0; i < g.size; ++i) sq += g.data[i] * g.data[i];
  }
  return std::sqrt(sq);
}

void clip_grads(const std::vector<ParamView>& grads, double max_norm) {
  if (max_norm <= 0) return;
  const double norm = global_grad_norm(grads);
  if (norm <= max_norm) return;
  const double scale = max_norm / (norm + 1e-12);
  for (const ParamView& g : grads) {
    for (Eigen::Index i = 0; i < g.size; ++i) g.data[i] *= scale;
  }
}

bool views_finite(const std::vector<ParamView>& views) {
  for (const ParamView& v : views) {
    for (Eigen::Index i = 0; i < v.size; ++i) {
      if (!std::isfinite(v.data[i])) return false;
    }
  }
  return true;
}

void copy_views(const std::vector<ParamView>& from, std::vector<double>& to) {
  to.clear();
  for (const ParamView& v : from) {
    to.insert(to.end(), v.data, v.data + v.size);
  }
}

void restore_views(const std::vector<double>& from,
                   const std::vector<ParamView>& to) {
  std::size_t k = 0;
  for (const ParamView& v : to) {
    std::copy(from.begin() + k, from.begin() + k + v.size, v.data);
    k += v.size;
  }
}

}  // namespace

void RolloutBuffer::finalize(double gamma, double lambda) {
  if (finalized) throw ContractError("RolloutBuffer: finalize called twice");
  const int n = size();
  advantage.resize(n);
  returns.resize(n);
  Vector r(steps), v(steps), d(steps);
  for (int e = 0; e < num_envs; ++e) {
    for (int t = 0; t < steps; ++t) {
      const int c = col(t, e);
      r(t) = reward(c);
      v(t) = value_old(c);
      d(t) = done(c);
    }
    const GaeResult gae = compute_gae(r, v, d, gamma, lambda, last_value(e));
    for (int t = 0; t < steps; ++t) {
      const int c = col(t, e);
      advantage(c) = gae.advantages(t);
      returns(c) = gae.returns(t);
    }
  }
  finalized = true;
}

GaeResult compute_gae(const Vector& rewards, const Vector& values,
                      const Vector& dones, double gamma, double lambda,
                      double bootstrap_value) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw DimensionError("compute_gae: sequence length mismatch");
  }
  GaeResult out;
  out.advantages.resize(n);
  out.returns.resize(n);
  double gae = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double not_done = 1.0 - dones(t);
    const double v_next = (t == n - 1) ? bootstrap_value : values(t + 1);
    const double delta = rewards(t) + gamma * v_next * not_done - values(t);
    gae = delta + gamma * lambda * not_done * gae;
    out.advantages(t) = gae;
    out.returns(t) = gae + values(t);
  }
  return out;
}

RolloutBuffer collect_rollouts(std::vector<Env>& envs, const BasePolicy& base,
                               const ResidualPolicy& policy,
                               std::vector<ChunkExecutor>& executors,
                               const PpoConfig& config,
                               std::vector<Rng>& env_rngs) {
  const int ne = static_cast<int>(envs.size());
  if (ne != config.num_envs ||
      executors.size() != static_cast<std::size_t>(ne) ||
      env_rngs.size() != static_cast<std::size_t>(ne)) {
    throw ContractError("collect_rollouts: env/executor/rng count mismatch");
  }
  const int steps = config.steps_per_env;
  RolloutBuffer buf;
  buf.num_envs = ne;
  buf.steps = steps;
  const int n = buf.size();
  buf.x.resize(kStateDim, n);
  buf.cond.resize(policy.cond_dim(), n);
  buf.a_base.resize(kActionDim, n);
  buf.a_res.resize(kActionDim, n);
  buf.a_exe.resize(kActionDim, n);
  buf.log_prob_old.resize(n);
  buf.value_old.resize(n);
  buf.reward.resize(n);
  buf.done.resize(n);
  buf.x_next.resize(kStateDim, n);
  buf.last_value.resize(ne);

  Matrix states(kStateDim, ne), bases(kActionDim, ne);
  std::vector<StateVector> state_structs(ne);
  std::vector<ActionVector> base_structs(ne);
  for (int t = 0; t < steps; ++t) {
    for (int e = 0; e < ne; ++e) {
      state_structs[e] = envs[e].state();
      base_structs[e] = executors[e].base_action(state_structs[e]);
      states.col(e) = state_structs[e].to_vector();
      bases.col(e) = base_structs[e].to_vector();
    }
    const Matrix cond = assemble_cond(policy, states, bases);
    const Matrix means = mlp_forward(policy.actor, cond);
    const Matrix values = mlp_forward(policy.critic, cond);
    if (!means.allFinite() || !values.allFinite()) {
      // Dump what was collected so far for post-mortem inspection.
      Checkpoint dump;
      dump.put("kind", std::string("rollout_dump"));
      dump.put("failed_step", double(t));
      dump.put("x", Matrix(buf.x.leftCols(buf.col(t, 0))));
      dump.put("cond", Matrix(buf.cond.leftCols(buf.col(t, 0))));
      dump.put("means", means);
      dump.save("rollout_dump.ckpt");
      throw NumericError("collect_rollouts: non-finite policy output at step " +
                         std::to_string(t) + " (buffer in rollout_dump.ckpt)");
    }
    for (int e = 0; e < ne; ++e) {
      const int c = buf.col(t, e);
      const GaussianSample s =
          sample_residual(means.col(e), policy.logstd, env_rngs[e]);
      const ActionVector a_exe =
          compose(base_structs[e], s.action, policy.config.action_scale);
      const StepResult r = envs[e].step(a_exe);
      buf.x.col(c) = states.col(e);
      buf.cond.col(c) = cond.col(e);
      buf.a_base.col(c) = bases.col(e);
      buf.a_res.col(c) = s.action;
      buf.a_exe.col(c) = a_exe.to_vector();
      buf.log_prob_old(c) = s.log_prob;
      buf.value_old(c) = values(0, e);
      buf.reward(c) = r.reward;
      buf.done(c) = r.done ? 1.0 : 0.0;
      buf.x_next.col(c) = r.next_state.to_vector();
      if (r.done) {
        envs[e].reset();
        executors[e].reset();
      }
    }
  }
  // Bootstrap values for truncated tails. The executor cadence is left
  // untouched; a freshly re-planned first action stands in for a_base.
  Matrix tail_bases(kActionDim, ne);
  for (int e = 0; e < ne; ++e) {
    state_structs[e] = envs[e].state();
    states.col(e) = state_structs[e].to_vector();
    tail_bases.col(e) = base.chunk(state_structs[e]).row(0).transpose();
  }
  const Matrix tail_cond = assemble_cond(policy, states, tail_bases);
  const Matrix tail_values = mlp_forward(policy.critic, tail_cond);
  for (int e = 0; e < ne; ++e) buf.last_value(e) = tail_values(0, e);
  return buf;
}

ResidualGrads zero_residual_grads(const ResidualPolicy& policy) {
  ResidualGrads g;
  g.actor = zero_grads(policy.actor);
  g.critic = zero_grads(policy.critic);
  if (policy.config.mode == ResidualMode::kKorr) {
    g.dyn = zero_koopman_grads(policy.koopman);
  } else if (policy.config.mode == ResidualMode::kResipNonlinDyn) {
    g.nonlin = zero_grads(policy.nonlinear.net);
  }
  return g;
}

PpoLossTerms ppo_losses(const ResidualPolicy& policy, const PpoMinibatch& batch,
                        const PpoConfig& config, ResidualGrads* grads,
                        bool backprop_to_dynamics) {
  const Eigen::Index n = batch.x.cols();
  if (batch.a_base.cols() != n || batch.a_res.cols() != n ||
      batch.log_prob_old.size() != n || batch.advantage.size() != n ||
      batch.returns.size() != n) {
    throw DimensionError("ppo_losses: minibatch shape mismatch");
  }

  // Conditioning is recomputed from the live dynamics parameters so its
  // gradients are available when backprop is requested.
  Matrix cond(policy.cond_dim(), n);
  MlpCache dyn_cache;
  Matrix z;
  switch (policy.config.mode) {
    case ResidualMode::kKorr: {
      z = lift_batch(policy.koopman, batch.x, grads ? &dyn_cache : nullptr);
      cond.topRows(z.rows()) =
          policy.koopman.A * z + policy.koopman.B * batch.a_base;
      break;
    }
    case ResidualMode::kResip: {
      cond.topRows(kStateDim) = policy.stats.empty()
                                    ? batch.x
                                    : policy.stats.apply(batch.x);
      cond.middleRows(kStateDim, kActionDim) = batch.a_base;
      break;
    }
    case ResidualMode::kResipNonlinDyn: {
      cond.topRows(kStateDim) = nonlinear_predict_batch(
          policy.nonlinear, batch.x, batch.a_base,
          grads ? &dyn_cache : nullptr);
      break;
    }
  }
  if (policy.config.goal_conditioned) {
    cond.bottomRows(kStateDim).colwise() = policy.goal;
  }

  MlpCache actor_cache, critic_cache;
  const Matrix mean =
      mlp_forward(policy.actor, cond, grads ? &actor_cache : nullptr);
  const Matrix value =
      mlp_forward(policy.critic, cond, grads ? &critic_cache : nullptr);
  if (!mean.allFinite() || !value.allFinite()) {
    throw NumericError("ppo_losses: non-finite network output");
  }

  const double std = std::exp(policy.logstd);
  const double var = std * std;
  const double d = static_cast<double>(kActionDim);
  const double log_norm =
      d * policy.logstd + 0.5 * d * std::log(2.0 * std::numbers::pi);
  const double inv_n = 1.0 / static_cast<double>(n);

  PpoLossTerms terms;
  Matrix d_mean = Matrix::Zero(kActionDim, n);
  Matrix d_value = Matrix::Zero(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector diff = batch.a_res.col(i) - mean.col(i);
    const double quad = diff.squaredNorm() / var;
    const double logp = -0.5 * quad - log_norm;
    const double ratio = std::exp(logp - batch.log_prob_old(i));
    const double adv = batch.advantage(i);
    const double clipped =
        std::clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps);
    const double surr1 = ratio * adv;
    const double surr2 = clipped * adv;
    terms.l_clip += std::min(surr1, surr2) * inv_n;
    terms.kl_estimate += (batch.log_prob_old(i) - logp) * inv_n;

    const double verr = value(0, i) - batch.returns(i);
    terms.l_vf += verr * verr * inv_n;

    if (grads) {
      // min(surr1, surr2): the gradient follows the active branch; the
      // clipped branch is flat outside the trust region.
      double g_ratio = 0.0;
      if (surr1 <= surr2) {
        g_ratio = adv;
      } else if (ratio > 1.0 - config.clip_eps &&
                 ratio < 1.0 + config.clip_eps) {
        g_ratio = adv;
      }
      // d(-L_clip)/dmean; dlogp/dmean = diff / var.
      const double coeff = -inv_n * g_ratio * ratio;
      d_mean.col(i) = coeff * diff / var;
      if (policy.config.learn_std) {
        grads->d_logstd += coeff * (quad - d);
      }
      d_value(0, i) = config.c1 * 2.0 * verr * inv_n;
    }
  }
  terms.l_s = gaussian_entropy(policy.logstd, kActionDim);
  terms.l_ppo = terms.l_clip - config.c1 * terms.l_vf + config.c2 * terms.l_s;

  if (grads) {
    if (policy.config.learn_std) {
      // Entropy ascent: d(-c2 L_S)/dlogstd = -c2 * action_dim.
      grads->d_logstd -= config.c2 * d;
    }
    const Matrix d_cond_actor =
        mlp_backward(policy.actor, actor_cache, d_mean, grads->actor);
    const Matrix d_cond_critic =
        mlp_backward(policy.critic, critic_cache, d_value, grads->critic);
    if (backprop_to_dynamics &&
        policy.config.mode != ResidualMode::kResip) {
      const Matrix d_cond = d_cond_actor + d_cond_critic;
      if (policy.config.mode == ResidualMode::kKorr) {
        const Matrix d_top = d_cond.topRows(z.rows());
        grads->dyn.dA.noalias() += d_top * z.transpose();
        grads->dyn.dB.noalias() += d_top * batch.a_base.transpose();
        if (!policy.koopman.identity_lift) {
          const Matrix dz = policy.koopman.A.transpose() * d_top;
          mlp_backward(policy.koopman.lift, dyn_cache, dz, grads->dyn.lift);
        }
      } else {
        mlp_backward(policy.nonlinear.net, dyn_cache,
                     d_cond.topRows(kStateDim), grads->nonlin);
      }
    }
  }
  return terms;
}

UpdateMetrics update(const RolloutBuffer& buffer, ResidualPolicy& policy,
                     const PpoConfig& config, Adam& policy_opt, Adam& dyn_opt,
                     Rng& rng) {
  if (!buffer.finalized) {
    throw ContractError("update: buffer must be finalized first");
  }
  const int n = buffer.size();
  const bool has_dyn = policy.config.mode != ResidualMode::kResip;
  const bool backprop = config.bkp_rl_to_koopman && has_dyn;
  UpdateMetrics metrics;
  int minibatches = 0;

  std::vector<ParamView> pol_params = policy_param_views(policy);
  std::vector<ParamView> dyn_params = dyn_param_views(policy);
  std::vector<double> pol_snapshot, dyn_snapshot;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs_per_iter; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < n; start += config.minibatch_size) {
      const int mb = std::min(config.minibatch_size, n - start);
      PpoMinibatch batch;
      batch.x.resize(kStateDim, mb);
      batch.a_base.resize(kActionDim, mb);
      batch.a_res.resize(kActionDim, mb);
      batch.log_prob_old.resize(mb);
      batch.advantage.resize(mb);
      batch.returns.resize(mb);
      TransitionBatch dyn_batch;
      dyn_batch.x.resize(kStateDim, mb);
      dyn_batch.a.resize(kActionDim, mb);
      dyn_batch.xn.resize(kStateDim, mb);
      for (int i = 0; i < mb; ++i) {
        const int c = order[start + i];
        batch.x.col(i) = buffer.x.col(c);
        batch.a_base.col(i) = buffer.a_base.col(c);
        batch.a_res.col(i) = buffer.a_res.col(c);
        batch.log_prob_old(i) = buffer.log_prob_old(c);
        batch.advantage(i) = buffer.advantage(c);
        batch.returns(i) = buffer.returns(c);
        dyn_batch.x.col(i) = buffer.x.col(c);
        dyn_batch.a.col(i) = buffer.a_exe.col(c);
        dyn_batch.xn.col(i) = buffer.x_next.col(c);
      }
      // Minibatch advantage normalization, guarded against degenerate
      // batches (sparse reward can make every advantage identical).
      const double adv_mean = batch.advantage.mean();
      const double adv_std = std::sqrt(
          (batch.advantage.array() - adv_mean).square().sum() / double(mb));
      if (adv_std > 1e-6) {
        batch.advantage =
            (batch.advantage.array() - adv_mean) / (adv_std + 1e-8);
      }

      copy_views(pol_params, pol_snapshot);
      if (has_dyn) copy_views(dyn_params, dyn_snapshot);

      ResidualGrads grads = zero_residual_grads(policy);
      std::vector<ParamView> pol_grads = policy_grad_views(policy, grads);
      std::vector<ParamView> dyn_grads = dyn_grad_views(policy, grads);

      double dyn_loss = 0.0;
      if (has_dyn && !config.combined_loss_single_step) {
        // Dynamics step first, per the algorithm ordering.
        if (policy.config.mode == ResidualMode::kKorr) {
          dyn_loss = koopman_loss(policy.koopman, dyn_batch, &grads.dyn);
        } else {
          dyn_loss = nonlinear_loss(policy.nonlinear, dyn_batch, &grads.nonlin);
        }
        if (config.koopman_loss_weight != 1.0) {
          for (const ParamView& g : dyn_grads) {
            for (Eigen::Index i = 0; i < g.size; ++i) {
              g.data[i] *= config.koopman_loss_weight;
            }
          }
        }
        clip_grads(dyn_grads, config.max_grad_norm);
        dyn_opt.step(dyn_params, dyn_grads);
        grads = zero_residual_grads(policy);
        pol_grads = policy_grad_views(policy, grads);
        dyn_grads = dyn_grad_views(policy, grads);
      }

      PpoLossTerms terms = ppo_losses(policy, batch, config, &grads, backprop);
      if (has_dyn && config.combined_loss_single_step) {
        KoopmanGrads* kg =
            policy.config.mode == ResidualMode::kKorr ? &grads.dyn : nullptr;
        MlpGrads* ng =
            policy.config.mode == ResidualMode::kKorr ? nullptr : &grads.nonlin;
        MlpGrads scaled = ng ? zero_grads(policy.nonlinear.net) : MlpGrads{};
        KoopmanGrads kscaled =
            kg ? zero_koopman_grads(policy.koopman) : KoopmanGrads{};
        if (kg) {
          dyn_loss = koopman_loss(policy.koopman, dyn_batch, &kscaled);
          std::vector<ParamView> src = koopman_grad_views(kscaled);
          std::vector<ParamView> dst = koopman_grad_views(grads.dyn);
          for (std::size_t v = 0; v < src.size(); ++v) {
            for (Eigen::Index i = 0; i < src[v].size; ++i) {
              dst[v].data[i] += config.koopman_loss_weight * src[v].data[i];
            }
          }
        } else {
          dyn_loss = nonlinear_loss(policy.nonlinear, dyn_batch, &scaled);
          std::vector<ParamView> src = grad_views(scaled);
          std::vector<ParamView> dst = grad_views(grads.nonlin);
          for (std::size_t v = 0; v < src.size(); ++v) {
            for (Eigen::Index i = 0; i < src[v].size; ++i) {
              dst[v].data[i] += config.koopman_loss_weight * src[v].data[i];
            }
          }
        }
      }

      clip_grads(pol_grads, config.max_grad_norm);
      policy_opt.step(pol_params, pol_grads);
      if (has_dyn && (backprop || config.combined_loss_single_step)) {
        clip_grads(dyn_grads, config.max_grad_norm);
        dyn_opt.step(dyn_params, dyn_grads);
      }

      if (!views_finite(pol_params) ||
          (has_dyn && !views_finite(dyn_params))) {
        // Roll the minibatch back rather than poisoning the run.
        restore_views(pol_snapshot, pol_params);
        if (has_dyn) restore_views(dyn_snapshot, dyn_params);
        continue;
      }

      metrics.koopman_loss += dyn_loss;
      metrics.ppo.l_clip += terms.l_clip;
      metrics.ppo.l_vf += terms.l_vf;
      metrics.ppo.l_s += terms.l_s;
      metrics.ppo.l_ppo += terms.l_ppo;
      metrics.ppo.kl_estimate += terms.kl_estimate;
      ++minibatches;
    }
  }
  if (minibatches > 0) {
    const double inv = 1.0 / minibatches;
    metrics.koopman_loss *= inv;
    metrics.ppo.l_clip *= inv;
    metrics.ppo.l_vf *= inv;
    metrics.ppo.l_s *= inv;
    metrics.ppo.l_ppo *= inv;
    metrics.ppo.kl_estimate *= inv;
  }
  if (policy.config.mode == ResidualMode::kKorr) {
    const Matrix z = lift_batch(policy.koopman, buffer.x);
    metrics.latent_norm_mean = z.colwise().norm().mean();
  }
  return metrics;
}

namespace {

// Base-policy-only rollouts for the dynamics warm-up phase.
TransitionBatch collect_base_transitions(const BasePolicy& base,
                                         const EnvConfig& env_config,
                                         int episodes, std::uint64_t seed0) {
  std::vector<Vector> xs, as, xns;
  for (int e = 0; e < episodes; ++e) {
    Env env(env_config, seed0 + static_cast<std::uint64_t>(e));
    ChunkExecutor exec(&base);
    env.reset();
    while (!env.done()) {
      const StateVector s = env.state();
      const ActionVector a = exec.base_action(s);
      const StepResult r = env.step(a);
      xs.push_back(s.to_vector());
      as.push_back(a.to_vector());
      xns.push_back(r.next_state.to_vector());
    }
  }
  TransitionBatch batch;
  const Eigen::Index n = static_cast<Eigen::Index>(xs.size());
  batch.x.resize(kStateDim, n);
  batch.a.resize(kActionDim, n);
  batch.xn.resize(kStateDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    batch.x.col(i) = xs[i];
    batch.a.col(i) = as[i];
    batch.xn.col(i) = xns[i];
  }
  return batch;
}

}  // namespace

void pretrain_dynamics(ResidualPolicy& policy, const BasePolicy& base,
                       const EnvConfig& env_config, const PpoConfig& config,
                       Adam& dyn_opt, Rng& rng) {
  if (config.dyn_pretrain_episodes <= 0 ||
      policy.config.mode == ResidualMode::kResip) {
    return;
  }
  const TransitionBatch data = collect_base_transitions(
      base, env_config, config.dyn_pretrain_episodes, rng.raw());
  const int n = data.size();
  const int mb_size = 512;
  std::vector<ParamView> params = dyn_param_views(policy);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.dyn_pretrain_epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < n; start += mb_size) {
      const int mb = std::min(mb_size, n - start);
      TransitionBatch batch;
      batch.x.resize(kStateDim, mb);
      batch.a.resize(kActionDim, mb);
      batch.xn.resize(kStateDim, mb);
      for (int i = 0; i < mb; ++i) {
        const int c = order[start + i];
        batch.x.col(i) = data.x.col(c);
        batch.a.col(i) = data.a.col(c);
        batch.xn.col(i) = data.xn.col(c);
      }
      ResidualGrads grads = zero_residual_grads(policy);
      std::vector<ParamView> gv = dyn_grad_views(policy, grads);
      if (policy.config.mode == ResidualMode::kKorr) {
        koopman_loss(policy.koopman, batch, &grads.dyn);
      } else {
        nonlinear_loss(policy.nonlinear, batch, &grads.nonlin);
      }
      clip_grads(gv, config.max_grad_norm);
      dyn_opt.step(params, gv);
    }
  }
  if (config.edmd_warm_start && policy.config.mode == ResidualMode::kKorr) {
    const EdmdResult fit = edmd_fit(policy.koopman, data);
    policy.koopman.A = fit.A;
    policy.koopman.B = fit.B;
  }
}

TrainResult train(const PpoConfig& config, const ResidualConfig& residual_cfg,
                  const KoopmanConfig& koopman_cfg,
                  const NonlinearDynConfig& nonlin_cfg, const BasePolicy& base,
                  const EnvConfig& env_config, std::uint64_t seed,
                  const MetricsSink& sink) {
  config.validate();
  residual_cfg.validate();
  env_config.validate();
  if (base.eval_success_rate < 0) {
    throw ConfigError(
        "train: base policy has no recorded evaluation; evaluate it first");
  }

  Rng master(seed);
  Rng init_rng(master.raw());
  Rng pretrain_rng(master.raw());
  Rng update_rng(master.raw());
  const std::uint64_t env_seed0 = master.raw();
  const std::uint64_t noise_seed0 = master.raw();
  const std::uint64_t eval_seed = master.raw();

  ResidualPolicy policy = make_residual_policy(residual_cfg, koopman_cfg,
                                               nonlin_cfg, base.stats,
                                               init_rng);
  Adam policy_opt(AdamConfig{.lr = config.actor_lr});
  Adam dyn_opt(AdamConfig{.lr = config.dyn_lr});

  pretrain_dynamics(policy, base, env_config, config, dyn_opt, pretrain_rng);

  std::vector<Env> envs;
  std::vector<ChunkExecutor> executors;
  std::vector<Rng> env_rngs;
  envs.reserve(config.num_envs);
  for (int e = 0; e < config.num_envs; ++e) {
    envs.emplace_back(env_config, env_seed0 + static_cast<std::uint64_t>(e));
    envs.back().reset();
    executors.emplace_back(&base);
    env_rngs.emplace_back(noise_seed0 + static_cast<std::uint64_t>(e));
  }

  TrainResult result;
  result.policy = policy;
  EvalSpec eval_spec;
  eval_spec.level = env_config.randomness_level;
  eval_spec.disturb = env_config.disturb_enabled;
  eval_spec.episodes = config.eval_episodes;
  eval_spec.base_seed = eval_seed;
  eval_spec.deterministic_actions = config.eval_deterministic;

  const auto t0 = std::chrono::steady_clock::now();
  for (int it = 0; it < config.iterations; ++it) {
    RolloutBuffer buf =
        collect_rollouts(envs, base, policy, executors, config, env_rngs);
    buf.finalize(config.gamma, config.lambda);

    IterationMetrics m;
    m.iteration = it;
    const int episodes_done = static_cast<int>(buf.done.sum());
    m.mean_episode_reward = episodes_done > 0
                                ? buf.reward.sum() / episodes_done
                                : buf.reward.sum();
    m.update = update(buf, policy, config, policy_opt, dyn_opt, update_rng);

    if ((it + 1) % config.eval_every == 0 || it + 1 == config.iterations) {
      const EvalResult er = evaluate_stack(base, &policy, env_config,
                                           eval_spec);
      m.eval_success_rate = er.success_rate;
      if (er.success_rate > result.best_eval_success) {
        result.best_eval_success = er.success_rate;
        result.policy = policy;
      }
    }
    m.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back(m);
    if (sink) sink(m);
  }
  result.final_policy = policy;
  if (result.best_eval_success < 0) result.policy = policy;
  return result;
}

void save_residual(const std::string& path, const ResidualPolicy& policy,
                   const ResidualCheckpointInfo& info) {
  Checkpoint ckp;
  ckp.put("kind", std::string("residual"));
  ckp.put("mode", residual_mode_name(policy.config.mode));
  ckp.put("action_scale", policy.config.action_scale);
  ckp.put("init_logstd", policy.config.init_logstd);
  ckp.put("learn_std", policy.config.learn_std ? 1.0 : 0.0);
  ckp.put("goal_conditioned", policy.config.goal_conditioned ? 1.0 : 0.0);
  ckp.put("logstd", policy.logstd);
  ckp.put_mlp("actor", policy.actor);
  ckp.put_mlp("critic", policy.critic);
  if (!policy.stats.empty()) ckp.put_normalizer("stats", policy.stats);
  if (policy.config.goal_conditioned) ckp.put("goal", Matrix(policy.goal));
  if (policy.config.mode == ResidualMode::kKorr) {
    ckp.put("koopman.lift_dim", double(policy.koopman.lift_dim));
    ckp.put("koopman.identity_lift", policy.koopman.identity_lift ? 1.0 : 0.0);
    ckp.put("koopman.A", policy.koopman.A);
    ckp.put("koopman.B", policy.koopman.B);
    if (!policy.koopman.identity_lift) {
      ckp.put_mlp("koopman.lift", policy.koopman.lift);
    }
  } else if (policy.config.mode == ResidualMode::kResipNonlinDyn) {
    ckp.put("nonlinear.depth", double(policy.nonlinear.depth));
    ckp.put_mlp("nonlinear.net", policy.nonlinear.net);
  }
  ckp.put("info.trained_level", level_name(info.trained_level));
  ckp.put("info.eval_success_rate", info.eval_success_rate);
  ckp.put("info.train_seed", double(info.train_seed));
  ckp.put("info.base_checksum", double(info.base_checksum));
  ckp.save(path);
}

std::pair<ResidualPolicy, ResidualCheckpointInfo> load_residual(
    const std::string& path) {
  const Checkpoint ckp = Checkpoint::load(path);
  if (!ckp.has_string("kind") || ckp.str("kind") != "residual") {
    throw ConfigError("load_residual: not a residual checkpoint: " + path);
  }
  ResidualPolicy policy;
  policy.config.mode = residual_mode_from_name(ckp.str("mode"));
  policy.config.action_scale = ckp.scalar("action_scale");
  policy.config.init_logstd = ckp.scalar("init_logstd");
  policy.config.learn_std = ckp.scalar("learn_std") != 0.0;
  policy.config.goal_conditioned = ckp.scalar("goal_conditioned") != 0.0;
  policy.logstd = ckp.scalar("logstd");
  policy.actor = ckp.get_mlp("actor");
  policy.critic = ckp.get_mlp("critic");
  if (ckp.has_matrix("stats.mean")) {
    policy.stats = ckp.get_normalizer("stats");
  }
  if (policy.config.goal_conditioned) {
    policy.goal = ckp.matrix("goal").col(0);
  }
  if (policy.config.mode == ResidualMode::kKorr) {
    policy.koopman.lift_dim = int(ckp.scalar("koopman.lift_dim"));
    policy.koopman.identity_lift = ckp.scalar("koopman.identity_lift") != 0.0;
    policy.koopman.A = ckp.matrix("koopman.A");
    policy.koopman.B = ckp.matrix("koopman.B");
    policy.koopman.stats = policy.stats;
    if (!policy.koopman.identity_lift) {
      policy.koopman.lift = ckp.get_mlp("koopman.lift");
    }
  } else if (policy.config.mode == ResidualMode::kResipNonlinDyn) {
    policy.nonlinear.depth = int(ckp.scalar("nonlinear.depth"));
    policy.nonlinear.net = ckp.get_mlp("nonlinear.net");
    policy.nonlinear.stats = policy.stats;
  }
  ResidualCheckpointInfo info;
  info.trained_level = level_from_name(ckp.str("info.trained_level"));
  info.eval_success_rate = ckp.scalar("info.eval_success_rate");
  info.train_seed = std::uint64_t(ckp.scalar("info.train_seed"));
  info.base_checksum = std::uint64_t(ckp.scalar("info.base_checksum"));
  return {std::move(policy), info};
}

}  // namespace korr
