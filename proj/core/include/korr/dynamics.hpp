#pragma once

#include "korr/env.hpp"
#include "korr/numeric.hpp"

namespace korr {

// Lifted linear latent dynamics: z' = A z + B a with a learned lift g.
// identity_lift bypasses both the network and normalization (debug and
// closed-form identification paths).
struct KoopmanModel {
  Mlp lift;  // state_dim -> lift_dim
  Matrix A;  // (m x m)
  Matrix B;  // (m x action_dim)
  int lift_dim = 64;
  bool identity_lift = false;
  Normalizer stats;

  int latent_dim() const { return identity_lift ? kStateDim : lift_dim; }
};

struct KoopmanConfig {
  int lift_dim = 64;
  std::vector<int> lift_hidden = {256, 256};
  double lr = 1e-3;
};

// A starts at identity ("latent persistence"), B at zero.
KoopmanModel make_koopman(const KoopmanConfig& config, const Normalizer& stats,
                          Rng& rng);
KoopmanModel make_identity_koopman();

Vector lift(const KoopmanModel& model, const Vector& x);
Matrix lift_batch(const KoopmanModel& model, const Matrix& x,
                  MlpCache* cache = nullptr);

Vector koopman_predict(const KoopmanModel& model, const Vector& z,
                       const Vector& a);

// z_base' = A g(x) + B a_base; the KORR conditioning input.
Vector imagine_next(const KoopmanModel& model, const StateVector& x,
                    const ActionVector& a_base);

// Batch of consecutive same-trajectory transitions, columns = samples.
struct TransitionBatch {
  Matrix x;   // (state_dim x n)
  Matrix a;   // (action_dim x n)
  Matrix xn;  // (state_dim x n)

  int size() const { return static_cast<int>(x.cols()); }
  void validate() const;
};

struct KoopmanGrads {
  MlpGrads lift;
  Matrix dA;
  Matrix dB;
};

KoopmanGrads zero_koopman_grads(const KoopmanModel& model);
std::vector<ParamView> koopman_param_views(KoopmanModel& model);
std::vector<ParamView> koopman_grad_views(KoopmanGrads& grads);

// Mean over the batch of ||g(x') - (A g(x) + B a)||^2 with gradients into
// the lift parameters (through both g(x) and g(x')), A, and B.
double koopman_loss(const KoopmanModel& model, const TransitionBatch& batch,
                    KoopmanGrads* grads = nullptr);

// Closed-form ridge least squares for (A, B) given lifted data:
// [A B] = Z' G^T (G G^T + ridge I)^{-1}, G = [Z; U].
struct EdmdResult {
  Matrix A;
  Matrix B;
};
EdmdResult edmd_fit(const Matrix& z, const Matrix& u, const Matrix& z_next,
                    double ridge = 1e-8);
// Convenience: lifts a transition batch with the model's lift first.
EdmdResult edmd_fit(const KoopmanModel& model, const TransitionBatch& batch,
                    double ridge = 1e-8);

// Unconstrained baseline: next state predicted by an MLP on (x ++ a).
struct NonlinearDynModel {
  Mlp net;  // (state_dim + action_dim) -> state_dim
  Normalizer stats;
  int depth = 2;
};

struct NonlinearDynConfig {
  int depth = 2;  // hidden layers
  int hidden = 256;
  double lr = 1e-3;
};

NonlinearDynModel make_nonlinear_dyn(const NonlinearDynConfig& config,
                                     const Normalizer& stats, Rng& rng);

Vector nonlinear_predict(const NonlinearDynModel& model, const StateVector& x,
                         const ActionVector& a);
Matrix nonlinear_predict_batch(const NonlinearDynModel& model, const Matrix& x,
                               const Matrix& a, MlpCache* cache = nullptr);

// MSE to the true next state (in normalized coordinates), with gradients.
double nonlinear_loss(const NonlinearDynModel& model,
                      const TransitionBatch& batch, MlpGrads* grads = nullptr);

// Per-step open-loop prediction error along one ground-truth trajectory.
// Koopman rolls purely in latent space and compares against the lifted truth;
// the nonlinear model rolls in (normalized) state space.
std::vector<double> open_loop_rollout(const KoopmanModel& model,
                                      const Matrix& states,
                                      const Matrix& actions, int horizon);
std::vector<double> open_loop_rollout(const NonlinearDynModel& model,
                                      const Matrix& states,
                                      const Matrix& actions, int horizon);

}  // namespace korr
