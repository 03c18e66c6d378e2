#include "korr/env.hpp"

#include <cmath>
#include <numbers>

namespace korr {

std::string level_name(Level level) {
  switch (level) {
    case Level::kLow: return "low";
    case Level::kMed: return "med";
    case Level::kHigh: return "high";
  }
  return "low";
}

Level level_from_name(const std::string& name) {
  if (name == "low") return Level::kLow;
  if (name == "med") return Level::kMed;
  if (name == "high") return Level::kHigh;
  throw ConfigError("unknown randomness level '" + name +
                    "' (expected low|med|high)");
}

const LevelParams& EnvConfig::params() const {
  switch (randomness_level) {
    case Level::kLow: return low;
    case Level::kMed: return med;
    case Level::kHigh: return high;
  }
  return low;
}

void EnvConfig::validate() const {
  if (max_steps < 1) throw ConfigError("env.max_steps must be >= 1");
  auto ordered = [](double a, double b, double c) { return a < b && b < c; };
  if (!ordered(low.init_radius, med.init_radius, high.init_radius) ||
      !ordered(low.max_shift_magnitude, med.max_shift_magnitude,
               high.max_shift_magnitude) ||
      !ordered(low.max_rot_magnitude, med.max_rot_magnitude,
               high.max_rot_magnitude)) {
    throw ConfigError("env level magnitudes must be strictly Low < Med < High");
  }
  if (pos_tolerance <= 0 || ang_tolerance <= 0) {
    throw ConfigError("env tolerances must be positive");
  }
}

double wrap_angle(double theta) {
  const double two_pi = 2.0 * std::numbers::pi;
  double t = std::fmod(theta + std::numbers::pi, two_pi);
  if (t <= 0.0) t += two_pi;
  return t - std::numbers::pi;
}

Vector StateVector::to_vector() const {
  Vector v(kStateDim);
  v << ee_pos, ee_vel, peg_pose, socket_pose, grip_engaged;
  return v;
}

StateVector StateVector::from_vector(const Vector& v) {
  if (v.size() != kStateDim) {
    throw DimensionError("StateVector::from_vector: expected 11 entries");
  }
  StateVector s;
  s.ee_pos = v.segment<2>(0);
  s.ee_vel = v.segment<2>(2);
  s.peg_pose = v.segment<3>(4);
  s.socket_pose = v.segment<3>(7);
  s.grip_engaged = v(10);
  return s;
}

Vector ActionVector::to_vector() const {
  Vector v(kActionDim);
  v << d_pos_x, d_pos_y, d_theta;
  return v;
}

ActionVector ActionVector::from_vector(const Vector& v) {
  if (v.size() != kActionDim) {
    throw DimensionError("ActionVector::from_vector: expected 3 entries");
  }
  return {v(0), v(1), v(2)};
}

bool ActionVector::finite() const {
  return std::isfinite(d_pos_x) && std::isfinite(d_pos_y) &&
         std::isfinite(d_theta);
}

ActionVector clamp_action(const ActionVector& a) {
  auto clamp = [](double v, double lim) {
    return std::min(std::max(v, -lim), lim);
  };
  return {clamp(a.d_pos_x, kActionPosMax), clamp(a.d_pos_y, kActionPosMax),
          clamp(a.d_theta, kActionAngMax)};
}

namespace {

// Uniform point in a disk of radius r.
Eigen::Vector2d disk_sample(Rng& rng, double r) {
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double mag = r * std::sqrt(rng.uniform());
  return {mag * std::cos(ang), mag * std::sin(ang)};
}

}  // namespace

StateVector sample_initial_state(const EnvConfig& config, Rng& rng) {
  const double r = config.params().init_radius;
  StateVector s;
  s.peg_pose << kPegNominal[0], kPegNominal[1], kPegNominal[2];
  s.peg_pose.head<2>() += disk_sample(rng, r);
  s.peg_pose(2) = wrap_angle(s.peg_pose(2) + rng.uniform(-r, r));
  s.socket_pose << kSocketNominal[0], kSocketNominal[1], kSocketNominal[2];
  s.socket_pose.head<2>() += disk_sample(rng, r);
  s.socket_pose(2) = wrap_angle(s.socket_pose(2) + rng.uniform(-r, r));
  s.ee_pos = s.peg_pose.head<2>() + disk_sample(rng, r);
  s.ee_vel.setZero();
  s.grip_engaged = 1.0;
  return s;
}

StateVector apply_disturbance(const StateVector& state, const EnvConfig& config,
                              Rng& rng) {
  const LevelParams& p = config.params();
  StateVector s = state;
  s.peg_pose.head<2>() += disk_sample(rng, p.max_shift_magnitude);
  s.peg_pose(2) = wrap_angle(
      s.peg_pose(2) + rng.uniform(-p.max_rot_magnitude, p.max_rot_magnitude));
  return s;
}

bool is_success(const StateVector& state, const EnvConfig& config) {
  const double pos_err =
      (state.peg_pose.head<2>() - state.socket_pose.head<2>()).norm();
  const double ang_err =
      std::abs(wrap_angle(state.peg_pose(2) - state.socket_pose(2)));
  return pos_err < config.pos_tolerance && ang_err < config.ang_tolerance;
}

ActionVector scripted_expert(const StateVector& state, const EnvConfig&) {
  constexpr double kp = 0.5;
  constexpr double kth = 0.5;
  const Eigen::Vector2d err =
      state.socket_pose.head<2>() - state.peg_pose.head<2>();
  const double ang_err = wrap_angle(state.socket_pose(2) - state.peg_pose(2));
  return clamp_action({kp * err.x(), kp * err.y(), kth * ang_err});
}

Env::Env(EnvConfig config, std::uint64_t seed)
    : config_(std::move(config)), rng_(seed) {
  config_.validate();
  reset();
}

StateVector Env::reset() {
  state_ = sample_initial_state(config_, rng_);
  observed_ = state_;
  step_count_ = 0;
  done_ = false;
  succeeded_ = false;
  return state_;
}

StepResult Env::step(const ActionVector& action) {
  if (!action.finite()) {
    throw ContractError("Env::step: non-finite action");
  }
  if (done_) {
    throw ContractError("Env::step: episode is done; call reset()");
  }
  const ActionVector a = clamp_action(action);
  const Eigen::Vector2d d(a.d_pos_x, a.d_pos_y);
  state_.ee_pos += d;
  state_.ee_vel = d;
  // Peg is rigidly attached to the ee.
  state_.peg_pose.head<2>() += d;
  state_.peg_pose(2) = wrap_angle(state_.peg_pose(2) + a.d_theta);
  StateVector pre_disturbance = state_;
  if (config_.disturb_enabled) {
    state_ = apply_disturbance(state_, config_, rng_);
  }
  ++step_count_;
  StepResult result;
  result.success = !succeeded_ && is_success(state_, config_);
  if (result.success) succeeded_ = true;
  result.reward = result.success ? 1.0 : 0.0;
  result.done = succeeded_ || step_count_ >= config_.max_steps;
  done_ = result.done;
  if (config_.observe_pre_disturbance) {
    observed_ = pre_disturbance;
  } else {
    observed_ = state_;
  }
  result.next_state = observed_;
  return result;
}

}  // namespace korr
