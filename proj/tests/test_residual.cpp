#include <doctest.h>

#include <cmath>

#include "korr/residual.hpp"
#include "test_util.hpp"

using namespace korr;
using korr_test::bit_equal;

namespace {

ResidualPolicy make_policy(ResidualMode mode, bool goal, Rng& rng) {
  ResidualConfig cfg;
  cfg.mode = mode;
  cfg.goal_conditioned = goal;
  KoopmanConfig kc;
  kc.lift_dim = 16;
  kc.lift_hidden = {32};
  NonlinearDynConfig nc;
  nc.hidden = 32;
  return make_residual_policy(cfg, kc, nc, Normalizer::identity(kStateDim),
                              rng);
}

StateVector probe_state() {
  StateVector s;
  s.ee_pos << -1.0, -1.0;
  s.ee_vel << 0.01, -0.02;
  s.peg_pose << -0.9, -1.1, 0.55;
  s.socket_pose << 1.0, 1.0, 0.0;
  s.grip_engaged = 1.0;
  return s;
}

}  // namespace

TEST_SUITE("residual") {

TEST_CASE("mode names round trip") {
  for (const ResidualMode m : {ResidualMode::kKorr, ResidualMode::kResip,
                               ResidualMode::kResipNonlinDyn}) {
    CHECK(residual_mode_from_name(residual_mode_name(m)) == m);
  }
  CHECK_THROWS_AS(residual_mode_from_name("banana"), ConfigError);
}

TEST_CASE("cond_dim per mode, with and without goal conditioning") {
  Rng rng(1);
  CHECK(make_policy(ResidualMode::kKorr, false, rng).cond_dim() == 16);
  CHECK(make_policy(ResidualMode::kKorr, true, rng).cond_dim() ==
        16 + kStateDim);
  CHECK(make_policy(ResidualMode::kResip, false, rng).cond_dim() ==
        kStateDim + kActionDim);
  CHECK(make_policy(ResidualMode::kResip, true, rng).cond_dim() ==
        2 * kStateDim + kActionDim);
  CHECK(make_policy(ResidualMode::kResipNonlinDyn, false, rng).cond_dim() ==
        kStateDim);
  CHECK(make_policy(ResidualMode::kResipNonlinDyn, true, rng).cond_dim() ==
        2 * kStateDim);
}

TEST_CASE("fresh actor head is zero so the executed action is the base") {
  Rng rng(2);
  for (const ResidualMode m : {ResidualMode::kKorr, ResidualMode::kResip,
                               ResidualMode::kResipNonlinDyn}) {
    const ResidualPolicy p = make_policy(m, false, rng);
    const ActionVector a_base{0.02, -0.03, 0.05};
    const Vector cond = assemble_cond(p, probe_state(), a_base);
    REQUIRE(cond.size() == p.cond_dim());
    const Vector mean = mlp_forward(p.actor, cond);
    CHECK(mean.cwiseAbs().maxCoeff() == 0.0);
    const ActionVector exe = compose(a_base, mean, p.config.action_scale);
    CHECK(exe.d_pos_x == a_base.d_pos_x);
    CHECK(exe.d_pos_y == a_base.d_pos_y);
    CHECK(exe.d_theta == a_base.d_theta);
  }
}

TEST_CASE("logstd is fixed at -1") {
  Rng rng(3);
  const ResidualPolicy p = make_policy(ResidualMode::kKorr, false, rng);
  CHECK(p.logstd == -1.0);
  CHECK_FALSE(p.config.learn_std);
}

TEST_CASE("korr conditioning equals the imagined next latent") {
  Rng rng(4);
  const ResidualPolicy p = make_policy(ResidualMode::kKorr, false, rng);
  const StateVector s = probe_state();
  const ActionVector a{0.01, 0.02, -0.03};
  const Vector cond = assemble_cond(p, s, a);
  CHECK(bit_equal(cond, imagine_next(p.koopman, s, a)));
}

TEST_CASE("resip conditioning is normalized state ++ base action") {
  Rng rng(5);
  ResidualPolicy p = make_policy(ResidualMode::kResip, false, rng);
  p.stats.mean.setConstant(0.5);
  p.stats.inv_std.setConstant(2.0);
  const StateVector s = probe_state();
  const ActionVector a{0.01, 0.02, -0.03};
  const Vector cond = assemble_cond(p, s, a);
  CHECK(bit_equal(cond.head(kStateDim), p.stats.apply(s.to_vector())));
  CHECK(bit_equal(cond.tail(kActionDim), a.to_vector()));
}

TEST_CASE("goal conditioning appends the normalized analytic goal") {
  Rng rng(6);
  ResidualPolicy p = make_policy(ResidualMode::kResip, true, rng);
  const Vector cond = assemble_cond(p, probe_state(), ActionVector{0, 0, 0});
  CHECK(bit_equal(cond.tail(kStateDim), p.goal));
  CHECK(bit_equal(p.goal, p.stats.apply(analytic_goal_state().to_vector())));
}

TEST_CASE("batched conditioning matches the single-sample path") {
  Rng rng(7);
  for (const ResidualMode m : {ResidualMode::kKorr, ResidualMode::kResip,
                               ResidualMode::kResipNonlinDyn}) {
    const ResidualPolicy p = make_policy(m, true, rng);
    Matrix states(kStateDim, 3), bases(kActionDim, 3);
    for (int c = 0; c < 3; ++c) {
      StateVector s = probe_state();
      s.peg_pose(0) += 0.05 * c;
      states.col(c) = s.to_vector();
      bases.col(c) = Eigen::Vector3d(0.01 * c, -0.01, 0.02);
    }
    const Matrix batched = assemble_cond(p, states, bases);
    for (int c = 0; c < 3; ++c) {
      const Vector single = assemble_cond(
          p, StateVector::from_vector(states.col(c)),
          clamp_action({bases(0, c), bases(1, c), bases(2, c)}));
      CHECK(bit_equal(batched.col(c), single));
    }
  }
}

TEST_CASE("log_prob matches the analytic diagonal-Gaussian density") {
  Vector mean(3), action(3);
  mean << 0.1, -0.2, 0.3;
  action << 0.15, -0.25, 0.0;
  const double logstd = -1.0;
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double z = (action(i) - mean(i)) / std::exp(logstd);
    expected += -0.5 * std::log(2.0 * M_PI) - logstd - 0.5 * z * z;
  }
  CHECK(log_prob(mean, logstd, action) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sample_residual reports the density of its own sample") {
  Rng rng(8);
  Vector mean(3);
  mean << 0.0, 0.5, -0.5;
  for (int i = 0; i < 100; ++i) {
    const GaussianSample s = sample_residual(mean, -1.0, rng);
    CHECK(s.log_prob ==
          doctest::Approx(log_prob(mean, -1.0, s.action)).epsilon(1e-12));
  }
}

TEST_CASE("sample statistics match logstd = -1") {
  Rng rng(9);
  const Vector mean = Vector::Zero(1);
  const int n = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = sample_residual(mean, -1.0, rng).action(0);
    sum += a;
    sum_sq += a * a;
  }
  const double emp_mean = sum / n;
  const double emp_std = std::sqrt(sum_sq / n - emp_mean * emp_mean);
  CHECK(std::abs(emp_mean) < 0.01);
  CHECK(emp_std == doctest::Approx(std::exp(-1.0)).epsilon(0.02));
}

TEST_CASE("entropy matches the closed form") {
  for (const double s : {-2.0, -1.0, 0.0, 0.7}) {
    for (const int d : {1, 3, 6}) {
      const double expected = 0.5 * d * (1.0 + std::log(2.0 * M_PI)) + d * s;
      CHECK(gaussian_entropy(s, d) ==
            doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("compose scales, adds, and clamps") {
  Vector res(3);
  res << 0.1, -0.2, 0.3;
  const ActionVector out = compose({0.01, 0.02, 0.03}, res, 0.1);
  CHECK(out.d_pos_x == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(out.d_pos_y == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(out.d_theta == doctest::Approx(0.06).epsilon(1e-15));
  // Large residual runs into the env clamp.
  Vector big(3);
  big << 10.0, -10.0, 10.0;
  const ActionVector clamped = compose({0.0, 0.0, 0.0}, big, 0.1);
  CHECK(clamped.d_pos_x == kActionPosMax);
  CHECK(clamped.d_pos_y == -kActionPosMax);
  CHECK(clamped.d_theta == kActionAngMax);
}

TEST_CASE("critic head init: bias constant, weights dispersed") {
  Rng rng(10);
  const ResidualPolicy p = make_policy(ResidualMode::kResip, false, rng);
  const Vector& bias = p.critic.biases.back();
  for (int i = 0; i < bias.size(); ++i) {
    CHECK(bias(i) == p.config.critic_last_layer_bias);
  }
  const Matrix& w = p.critic.weights.back();
  CHECK(w.cwiseAbs().maxCoeff() > 0.0);  // not the zero init of the actor
  const double std_hat = std::sqrt(w.squaredNorm() / w.size());
  CHECK(std_hat > 0.05);
  CHECK(std_hat < 1.0);
}

TEST_CASE("config validation rejects bad scales") {
  ResidualConfig cfg;
  cfg.action_scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ResidualConfig{};
  cfg.hidden.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

}  // TEST_SUITE
