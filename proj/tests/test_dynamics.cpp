#include <doctest.h>

#include <cmath>

#include "korr/dynamics.hpp"
#include "test_util.hpp"

using namespace korr;
using korr_test::bit_equal;

namespace {

// Random stable LTI system in the state dimension, for identification
// oracles: x' = A x + B u with spectral radius < 0.95.
struct ToySystem {
  Matrix A;
  Matrix B;
};

ToySystem make_stable_system(Rng& rng, double target_radius = 0.9) {
  ToySystem sys;
  sys.A.resize(kStateDim, kStateDim);
  sys.B.resize(kStateDim, kActionDim);
  for (int i = 0; i < sys.A.size(); ++i) sys.A.data()[i] = rng.normal();
  for (int i = 0; i < sys.B.size(); ++i) sys.B.data()[i] = rng.normal();
  const double radius = sys.A.eigenvalues().cwiseAbs().maxCoeff();
  sys.A *= target_radius / radius;
  return sys;
}

TransitionBatch simulate(const ToySystem& sys, int n, Rng& rng) {
  TransitionBatch batch;
  batch.x.resize(kStateDim, n);
  batch.a.resize(kActionDim, n);
  batch.xn.resize(kStateDim, n);
  Vector x = Vector::Zero(kStateDim);
  for (int i = 0; i < kStateDim; ++i) x(i) = rng.normal();
  for (int t = 0; t < n; ++t) {
    Vector u(kActionDim);
    for (int i = 0; i < kActionDim; ++i) u(i) = rng.normal();
    batch.x.col(t) = x;
    batch.a.col(t) = u;
    x = sys.A * x + sys.B * u;
    batch.xn.col(t) = x;
  }
  return batch;
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("identity lift passes states through") {
  const KoopmanModel model = make_identity_koopman();
  Vector x(kStateDim);
  for (int i = 0; i < kStateDim; ++i) x(i) = 0.1 * i;
  CHECK(bit_equal(lift(model, x), x));
}

TEST_CASE("lift is deterministic and finite") {
  Rng rng(1);
  const KoopmanModel model =
      make_koopman(KoopmanConfig{}, Normalizer::identity(kStateDim), rng);
  Vector x(kStateDim);
  for (int i = 0; i < kStateDim; ++i) x(i) = rng.normal();
  const Vector z1 = lift(model, x);
  const Vector z2 = lift(model, x);
  CHECK(z1.size() == model.lift_dim);
  CHECK(z1.allFinite());
  CHECK(bit_equal(z1, z2));
}

TEST_CASE("koopman_predict identity dynamics and linearity") {
  const KoopmanModel model = make_identity_koopman();
  Rng rng(2);
  Vector z1(kStateDim), z2(kStateDim), a1(kActionDim), a2(kActionDim);
  for (int i = 0; i < kStateDim; ++i) {
    z1(i) = rng.normal();
    z2(i) = rng.normal();
  }
  for (int i = 0; i < kActionDim; ++i) {
    a1(i) = rng.normal();
    a2(i) = rng.normal();
  }
  CHECK(bit_equal(koopman_predict(model, z1, a1), z1));  // A = I, B = 0
  KoopmanModel m2 = model;
  for (int i = 0; i < m2.A.size(); ++i) m2.A.data()[i] = rng.normal();
  for (int i = 0; i < m2.B.size(); ++i) m2.B.data()[i] = rng.normal();
  const Vector lhs = koopman_predict(m2, z1 + z2, a1 + a2);
  const Vector rhs = koopman_predict(m2, z1, a1) + koopman_predict(m2, z2, a2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("imagine_next equals lift then predict bit-exactly") {
  Rng rng(3);
  const KoopmanModel model =
      make_koopman(KoopmanConfig{}, Normalizer::identity(kStateDim), rng);
  StateVector s;
  s.peg_pose << 0.1, 0.2, 0.3;
  s.socket_pose << 1.0, 1.0, 0.0;
  const ActionVector a{0.01, -0.02, 0.05};
  const Vector direct = imagine_next(model, s, a);
  const Vector composed =
      koopman_predict(model, lift(model, s.to_vector()), a.to_vector());
  CHECK(bit_equal(direct, composed));
}

TEST_CASE("edmd recovers a stable system from noise-free data") {
  Rng rng(4);
  const ToySystem sys = make_stable_system(rng);
  const TransitionBatch data = simulate(sys, 1000, rng);
  const EdmdResult fit = edmd_fit(data.x, data.a, data.xn);
  CHECK((fit.A - sys.A).norm() < 1e-6);
  CHECK((fit.B - sys.B).norm() < 1e-6);
}

TEST_CASE("edmd recovers B = 0 when the data has no control response") {
  Rng rng(5);
  ToySystem sys = make_stable_system(rng);
  sys.B.setZero();
  const TransitionBatch data = simulate(sys, 1000, rng);
  const EdmdResult fit = edmd_fit(data.x, data.a, data.xn);
  CHECK(fit.B.norm() < 1e-6);
}

TEST_CASE("edmd survives a degenerate repeated transition") {
  Matrix z(2, 5), u(1, 5), zn(2, 5);
  z.colwise() = Eigen::Vector2d(1.0, 2.0);
  u.setConstant(0.5);
  zn.colwise() = Eigen::Vector2d(1.1, 1.9);
  const EdmdResult fit = edmd_fit(z, u, zn);
  CHECK(fit.A.allFinite());
  CHECK(fit.B.allFinite());
}

TEST_CASE("edmd solution beats random perturbations of itself") {
  Rng rng(6);
  const ToySystem sys = make_stable_system(rng);
  TransitionBatch data = simulate(sys, 300, rng);
  // Mild output noise so the fit is not exact and the optimum is interior.
  for (int i = 0; i < data.xn.size(); ++i) {
    data.xn.data()[i] += 0.01 * rng.normal();
  }
  const EdmdResult fit = edmd_fit(data.x, data.a, data.xn);
  auto loss = [&](const Matrix& A, const Matrix& B) {
    return (data.xn - A * data.x - B * data.a).squaredNorm();
  };
  const double best = loss(fit.A, fit.B);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix dA(fit.A.rows(), fit.A.cols()), dB(fit.B.rows(), fit.B.cols());
    for (int i = 0; i < dA.size(); ++i) dA.data()[i] = rng.normal();
    for (int i = 0; i < dB.size(); ++i) dB.data()[i] = rng.normal();
    const double scale = 1e-3 / std::sqrt(dA.squaredNorm() + dB.squaredNorm());
    CHECK(loss(fit.A + scale * dA, fit.B + scale * dB) >= best);
  }
}

TEST_CASE("koopman loss vanishes on a perfectly fitted linear system") {
  Rng rng(7);
  const ToySystem sys = make_stable_system(rng);
  const TransitionBatch data = simulate(sys, 500, rng);
  KoopmanModel model = make_identity_koopman();
  const EdmdResult fit = edmd_fit(model, data);
  model.A = fit.A;
  model.B = fit.B;
  CHECK(koopman_loss(model, data) < 1e-12);
}

TEST_CASE("zero lift with zero operators gives zero loss (collapse mode)") {
  Rng rng(8);
  KoopmanModel model =
      make_koopman(KoopmanConfig{}, Normalizer::identity(kStateDim), rng);
  for (auto& w : model.lift.weights) w.setZero();
  for (auto& b : model.lift.biases) b.setZero();
  model.A.setZero();
  model.B.setZero();
  const ToySystem sys = make_stable_system(rng);
  const TransitionBatch data = simulate(sys, 50, rng);
  CHECK(koopman_loss(model, data) == 0.0);
}

TEST_CASE("koopman loss gradients match finite differences") {
  Rng rng(9);
  KoopmanConfig cfg;
  cfg.lift_dim = 6;
  cfg.lift_hidden = {16};
  KoopmanModel model =
      make_koopman(cfg, Normalizer::identity(kStateDim), rng);
  // Break the A = I, B = 0 symmetry so all paths carry gradient.
  for (int i = 0; i < model.A.size(); ++i) model.A.data()[i] += 0.1 * rng.normal();
  for (int i = 0; i < model.B.size(); ++i) model.B.data()[i] = 0.1 * rng.normal();
  const ToySystem sys = make_stable_system(rng);
  const TransitionBatch data = simulate(sys, 16, rng);

  KoopmanGrads grads = zero_koopman_grads(model);
  koopman_loss(model, data, &grads);
  auto loss_fn = [&]() { return koopman_loss(model, data); };
  auto params = koopman_param_views(model);
  auto gv = koopman_grad_views(grads);
  const GradCheckReport report = grad_check(loss_fn, params, gv, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("nonlinear model zero net predicts zero") {
  Rng rng(10);
  NonlinearDynModel model = make_nonlinear_dyn(
      NonlinearDynConfig{}, Normalizer::identity(kStateDim), rng);
  for (auto& w : model.net.weights) w.setZero();
  for (auto& b : model.net.biases) b.setZero();
  StateVector s;
  s.peg_pose << 0.5, 0.5, 0.1;
  const Vector pred = nonlinear_predict(model, s, ActionVector{0.01, 0.0, 0.0});
  CHECK(pred.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("nonlinear loss gradients match finite differences") {
  Rng rng(11);
  NonlinearDynConfig cfg;
  cfg.depth = 2;
  cfg.hidden = 16;
  NonlinearDynModel model =
      make_nonlinear_dyn(cfg, Normalizer::identity(kStateDim), rng);
  const ToySystem sys = make_stable_system(rng);
  const TransitionBatch data = simulate(sys, 16, rng);
  MlpGrads grads = zero_grads(model.net);
  nonlinear_loss(model, data, &grads);
  auto loss_fn = [&]() { return nonlinear_loss(model, data); };
  auto params = param_views(model.net);
  auto gv = grad_views(grads);
  const GradCheckReport report = grad_check(loss_fn, params, gv, 1e-4);
  CHECK(report.passed);
}

TEST_CASE("open-loop rollout on a perfect linear system stays at zero error") {
  Rng rng(12);
  const ToySystem sys = make_stable_system(rng);
  const TransitionBatch data = simulate(sys, 60, rng);
  KoopmanModel model = make_identity_koopman();
  const EdmdResult fit = edmd_fit(model, data);
  model.A = fit.A;
  model.B = fit.B;
  // Rebuild the trajectory matrices (states 0..50, actions 0..49).
  Matrix states(kStateDim, 51), actions(kActionDim, 50);
  states.col(0) = data.x.col(0);
  for (int t = 0; t < 50; ++t) {
    states.col(t + 1) = data.xn.col(t);
    actions.col(t) = data.a.col(t);
  }
  const std::vector<double> mse = open_loop_rollout(model, states, actions, 50);
  REQUIRE(mse.size() == 50);
  for (const double e : mse) CHECK(e < 1e-12);
}

TEST_CASE("open-loop horizon 1 equals the one-step loss shape") {
  Rng rng(13);
  const ToySystem sys = make_stable_system(rng);
  const TransitionBatch data = simulate(sys, 5, rng);
  KoopmanModel model = make_identity_koopman();
  Matrix states(kStateDim, 2), actions(kActionDim, 1);
  states.col(0) = data.x.col(0);
  states.col(1) = data.xn.col(0);
  actions.col(0) = data.a.col(0);
  const std::vector<double> mse = open_loop_rollout(model, states, actions, 1);
  REQUIRE(mse.size() == 1);
  // A = I, B = 0: prediction is x_0, so the error is the true step delta.
  const double expected =
      (states.col(1) - states.col(0)).squaredNorm() / kStateDim;
  CHECK(mse[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("open-loop rollout rejects horizons beyond the trajectory") {
  const KoopmanModel model = make_identity_koopman();
  CHECK_THROWS_AS(open_loop_rollout(model, Matrix::Zero(kStateDim, 3),
                                    Matrix::Zero(kActionDim, 2), 5),
                  ContractError);
}

TEST_CASE("transition batch validation") {
  TransitionBatch batch;
  batch.x = Matrix::Zero(kStateDim, 4);
  batch.a = Matrix::Zero(kActionDim, 3);
  batch.xn = Matrix::Zero(kStateDim, 4);
  CHECK_THROWS_AS(batch.validate(), DimensionError);
  batch.a = Matrix::Zero(kActionDim, 4);
  batch.validate();
  batch.x(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(batch.validate(), ContractError);
}

}  // TEST_SUITE
