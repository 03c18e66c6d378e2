#include "korr/dynamics.hpp"

#include <Eigen/Cholesky>

namespace korr {

KoopmanModel make_koopman(const KoopmanConfig& config, const Normalizer& stats,
                          Rng& rng) {
  KoopmanModel model;
  model.lift_dim = config.lift_dim;
  model.stats = stats;
  std::vector<int> sizes;
  sizes.push_back(kStateDim);
  for (int h : config.lift_hidden) sizes.push_back(h);
  sizes.push_back(config.lift_dim);
  model.lift = make_mlp(sizes, rng);
  model.A = Matrix::Identity(config.lift_dim, config.lift_dim);
  model.B = Matrix::Zero(config.lift_dim, kActionDim);
  return model;
}

KoopmanModel make_identity_koopman() {
  KoopmanModel model;
  model.identity_lift = true;
  model.lift_dim = kStateDim;
  model.A = Matrix::Identity(kStateDim, kStateDim);
  model.B = Matrix::Zero(kStateDim, kActionDim);
  return model;
}

Vector lift(const KoopmanModel& model, const Vector& x) {
  if (model.identity_lift) return x;
  const Vector xin = model.stats.empty() ? x : model.stats.apply(x);
  return mlp_forward(model.lift, xin);
}

Matrix lift_batch(const KoopmanModel& model, const Matrix& x, MlpCache* cache) {
  if (model.identity_lift) return x;
  const Matrix xin = model.stats.empty() ? x : model.stats.apply(x);
  return mlp_forward(model.lift, xin, cache);
}

Vector koopman_predict(const KoopmanModel& model, const Vector& z,
                       const Vector& a) {
  if (z.size() != model.A.cols() || a.size() != model.B.cols()) {
    throw DimensionError("koopman_predict: operand shape mismatch");
  }
  return model.A * z + model.B * a;
}

Vector imagine_next(const KoopmanModel& model, const StateVector& x,
                    const ActionVector& a_base) {
  return koopman_predict(model, lift(model, x.to_vector()),
                         a_base.to_vector());
}

void TransitionBatch::validate() const {
  if (x.rows() != kStateDim || xn.rows() != kStateDim ||
      a.rows() != kActionDim || x.cols() != a.cols() ||
      x.cols() != xn.cols()) {
    throw DimensionError("TransitionBatch: inconsistent shapes");
  }
  if (!x.allFinite() || !a.allFinite() || !xn.allFinite()) {
    throw ContractError("TransitionBatch: non-finite entries");
  }
}

KoopmanGrads zero_koopman_grads(const KoopmanModel& model) {
  KoopmanGrads g;
  if (!model.identity_lift) g.lift = zero_grads(model.lift);
  g.dA = Matrix::Zero(model.A.rows(), model.A.cols());
  g.dB = Matrix::Zero(model.B.rows(), model.B.cols());
  return g;
}

std::vector<ParamView> koopman_param_views(KoopmanModel& model) {
  std::vector<ParamView> v;
  if (!model.identity_lift) v = param_views(model.lift);
  v.push_back({model.A.data(), model.A.size()});
  v.push_back({model.B.data(), model.B.size()});
  return v;
}

std::vector<ParamView> koopman_grad_views(KoopmanGrads& grads) {
  std::vector<ParamView> v;
  if (!grads.lift.d_weights.empty()) v = grad_views(grads.lift);
  v.push_back({grads.dA.data(), grads.dA.size()});
  v.push_back({grads.dB.data(), grads.dB.size()});
  return v;
}

double koopman_loss(const KoopmanModel& model, const TransitionBatch& batch,
                    KoopmanGrads* grads) {
  batch.validate();
  const int n = batch.size();
  MlpCache cache_t, cache_tn;
  const Matrix z = lift_batch(model, batch.x, grads ? &cache_t : nullptr);
  const Matrix zn = lift_batch(model, batch.xn, grads ? &cache_tn : nullptr);
  const Matrix pred = model.A * z + model.B * batch.a;
  const Matrix err = zn - pred;
  const double loss = err.array().square().sum() / double(n);
  if (grads) {
    const Matrix d_err = err * (2.0 / double(n));
    grads->dA.noalias() += -d_err * z.transpose();
    grads->dB.noalias() += -d_err * batch.a.transpose();
    if (!model.identity_lift) {
      const Matrix dz = -model.A.transpose() * d_err;
      mlp_backward(model.lift, cache_t, dz, grads->lift);
      mlp_backward(model.lift, cache_tn, d_err, grads->lift);
    }
  }
  return loss;
}

EdmdResult edmd_fit(const Matrix& z, const Matrix& u, const Matrix& z_next,
                    double ridge) {
  const Eigen::Index m = z.rows();
  const Eigen::Index na = u.rows();
  const Eigen::Index n = z.cols();
  if (u.cols() != n || z_next.cols() != n || z_next.rows() != m) {
    throw DimensionError("edmd_fit: inconsistent data shapes");
  }
  Matrix g(m + na, n);
  g.topRows(m) = z;
  g.bottomRows(na) = u;
  Matrix gram = g * g.transpose();
  gram.diagonal().array() += ridge;
  const Eigen::LDLT<Matrix> solver(gram);
  if (solver.info() != Eigen::Success) {
    throw NumericError("edmd_fit: normal-equation factorization failed");
  }
  // Solves (G G^T + ridge I) X = G Z'^T; K = X^T.
  const Matrix k = solver.solve(g * z_next.transpose()).transpose();
  if (!k.allFinite()) {
    throw NumericError("edmd_fit: non-finite solution");
  }
  EdmdResult result;
  result.A = k.leftCols(m);
  result.B = k.rightCols(na);
  return result;
}

EdmdResult edmd_fit(const KoopmanModel& model, const TransitionBatch& batch,
                    double ridge) {
  batch.validate();
  const int min_samples = model.latent_dim() + kActionDim;
  if (batch.size() < min_samples) {
    throw ContractError("edmd_fit: need at least " +
                        std::to_string(min_samples) + " transitions");
  }
  return edmd_fit(lift_batch(model, batch.x), batch.a,
                  lift_batch(model, batch.xn), ridge);
}

NonlinearDynModel make_nonlinear_dyn(const NonlinearDynConfig& config,
                                     const Normalizer& stats, Rng& rng) {
  NonlinearDynModel model;
  model.stats = stats;
  model.depth = config.depth;
  std::vector<int> sizes;
  sizes.push_back(kStateDim + kActionDim);
  for (int i = 0; i < config.depth; ++i) sizes.push_back(config.hidden);
  sizes.push_back(kStateDim);
  model.net = make_mlp(sizes, rng);
  return model;
}

namespace {

Matrix stack_state_action(const NonlinearDynModel& model, const Matrix& x,
                          const Matrix& a) {
  Matrix xa(kStateDim + kActionDim, x.cols());
  xa.topRows(kStateDim) = model.stats.empty() ? x : model.stats.apply(x);
  xa.bottomRows(kActionDim) = a;
  return xa;
}

}  // namespace

Vector nonlinear_predict(const NonlinearDynModel& model, const StateVector& x,
                         const ActionVector& a) {
  return nonlinear_predict_batch(model, Matrix(x.to_vector()),
                                 Matrix(a.to_vector()))
      .col(0);
}

Matrix nonlinear_predict_batch(const NonlinearDynModel& model, const Matrix& x,
                               const Matrix& a, MlpCache* cache) {
  return mlp_forward(model.net, stack_state_action(model, x, a), cache);
}

double nonlinear_loss(const NonlinearDynModel& model,
                      const TransitionBatch& batch, MlpGrads* grads) {
  batch.validate();
  const int n = batch.size();
  MlpCache cache;
  const Matrix pred = nonlinear_predict_batch(model, batch.x, batch.a,
                                              grads ? &cache : nullptr);
  const Matrix target =
      model.stats.empty() ? batch.xn : model.stats.apply(batch.xn);
  const Matrix err = pred - target;
  const double loss = err.array().square().sum() / double(n);
  if (grads) {
    mlp_backward(model.net, cache, err * (2.0 / double(n)), *grads);
  }
  return loss;
}

std::vector<double> open_loop_rollout(const KoopmanModel& model,
                                      const Matrix& states,
                                      const Matrix& actions, int horizon) {
  if (horizon > actions.cols() || horizon + 1 > states.cols()) {
    throw ContractError("open_loop_rollout: horizon exceeds trajectory");
  }
  const Matrix z_truth = lift_batch(model, states);
  Vector z = z_truth.col(0);
  std::vector<double> mse;
  mse.reserve(horizon);
  for (int k = 0; k < horizon; ++k) {
    z = model.A * z + model.B * actions.col(k);
    mse.push_back((z - z_truth.col(k + 1)).squaredNorm() /
                  double(model.latent_dim()));
  }
  return mse;
}

std::vector<double> open_loop_rollout(const NonlinearDynModel& model,
                                      const Matrix& states,
                                      const Matrix& actions, int horizon) {
  if (horizon > actions.cols() || horizon + 1 > states.cols()) {
    throw ContractError("open_loop_rollout: horizon exceeds trajectory");
  }
  const Matrix truth =
      model.stats.empty() ? states : model.stats.apply(states);
  Matrix x_hat = truth.col(0);
  std::vector<double> mse;
  mse.reserve(horizon);
  for (int k = 0; k < horizon; ++k) {
    Matrix xa(kStateDim + kActionDim, 1);
    xa.topRows(kStateDim) = x_hat;
    xa.bottomRows(kActionDim) = actions.col(k);
    x_hat = mlp_forward(model.net, xa);
    mse.push_back((x_hat.col(0) - truth.col(k + 1)).squaredNorm() /
                  double(kStateDim));
  }
  return mse;
}

}  // namespace korr
