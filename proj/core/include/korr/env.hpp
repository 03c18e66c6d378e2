#pragma once

#include <array>

#include "korr/numeric.hpp"
#include "korr/rng.hpp"

namespace korr {

enum class Level { kLow, kMed, kHigh };

std::string level_name(Level level);
Level level_from_name(const std::string& name);

struct LevelParams {
  double init_radius;
  double max_shift_magnitude;
  double max_rot_magnitude;
};

// 2-D peg alignment: the end effector carries a rigidly attached peg toward
// a socket pose under leveled initial randomness and optional per-step pose
// disturbances. Reward is sparse: 1 on first success, else 0.
struct EnvConfig {
  Level randomness_level = Level::kLow;
  bool disturb_enabled = false;
  int max_steps = 200;
  double pos_tolerance = 0.02;
  double ang_tolerance = 0.1;
  // Shift magnitudes keep the 0.2 : 0.5 : 0.75 level ratios; rotation the
  // 0.007 : 0.01 : 0.015 ratios, rescaled to world units.
  LevelParams low{0.02, 0.004, 0.007};
  LevelParams med{0.04, 0.010, 0.010};
  LevelParams high{0.06, 0.015, 0.015};
  // If true the policy observes the pre-disturbance state at the next step;
  // default exposes the post-disturbance state.
  bool observe_pre_disturbance = false;

  const LevelParams& params() const;
  void validate() const;
};

// Commanded displacement clamp per step.
inline constexpr double kActionPosMax = 0.05;
inline constexpr double kActionAngMax = 0.1;
inline constexpr int kStateDim = 11;
inline constexpr int kActionDim = 3;

// Nominal poses; the initial peg-to-socket gap sets the episode length scale.
inline constexpr std::array<double, 3> kPegNominal{-1.0, -1.0, 0.6};
inline constexpr std::array<double, 3> kSocketNominal{1.0, 1.0, 0.0};

double wrap_angle(double theta);

// ee pose/velocity, peg and socket poses, gripper flag: 11 floats.
struct StateVector {
  Eigen::Vector2d ee_pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d ee_vel = Eigen::Vector2d::Zero();
  Eigen::Vector3d peg_pose = Eigen::Vector3d::Zero();     // x, y, theta
  Eigen::Vector3d socket_pose = Eigen::Vector3d::Zero();  // x, y, theta
  double grip_engaged = 1.0;

  Vector to_vector() const;
  static StateVector from_vector(const Vector& v);
};

struct ActionVector {
  double d_pos_x = 0.0;
  double d_pos_y = 0.0;
  double d_theta = 0.0;

  Vector to_vector() const;
  static ActionVector from_vector(const Vector& v);
  bool finite() const;
};

// Component-wise clamp to the environment action bounds.
ActionVector clamp_action(const ActionVector& a);

struct StepResult {
  StateVector next_state;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

// Leveled initial placement: peg/socket uniform in a disk of init_radius
// around their nominals with matching angular jitter; ee starts at the peg
// with its own positional jitter.
StateVector sample_initial_state(const EnvConfig& config, Rng& rng);

// Uniform pose perturbation of the peg, magnitude bounded by the level.
StateVector apply_disturbance(const StateVector& state, const EnvConfig& config,
                              Rng& rng);

bool is_success(const StateVector& state, const EnvConfig& config);

// Proportional controller toward the socket (k_p = k_theta = 0.5).
ActionVector scripted_expert(const StateVector& state, const EnvConfig& config);

// Owns state, step counter, and generator; (seed, config, actions) fully
// determines the trajectory.
class Env {
 public:
  Env(EnvConfig config, std::uint64_t seed);

  StateVector reset();
  StepResult step(const ActionVector& action);

  // Observed state: equals the physical state unless observe_pre_disturbance
  // is set, in which case disturbances surface one step late.
  const StateVector& state() const { return observed_; }
  const EnvConfig& config() const { return config_; }
  int step_count() const { return step_count_; }
  bool done() const { return done_; }

 private:
  EnvConfig config_;
  Rng rng_;
  StateVector state_;
  StateVector observed_;
  int step_count_ = 0;
  bool done_ = false;
  bool succeeded_ = false;
};

}  // namespace korr
