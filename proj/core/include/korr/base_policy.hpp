#pragma once

#include <optional>

#include "korr/checkpoint.hpp"
#include "korr/env.hpp"
#include "korr/numeric.hpp"

namespace korr {

struct BasePolicyConfig {
  int pred_horizon = 16;
  int action_horizon = 8;
  int obs_horizon = 1;  // fixed
  std::vector<int> hidden = {256, 256};
  int demo_count = 100;
  Level demo_level = Level::kLow;
  // Behavior cloning schedule. Training runs in rounds of eval_every epochs;
  // after each round the policy is rolled out and the snapshot whose success
  // rate lands inside [band_lo, band_hi] is kept, so the base stays
  // deliberately imperfect and the residual has headroom.
  int max_epochs = 120;
  int eval_every = 5;
  int eval_episodes = 100;
  double band_lo = 0.30;
  double band_hi = 0.90;
  double band_target = 0.60;  // prefer the snapshot closest to this rate
  double lr = 1e-3;
  int batch_size = 256;
  // Gaussian execution noise during demo collection. The expert corrects for
  // it, so the dataset covers a tube around the nominal trajectory and the
  // cloned policy learns the corrections (labels stay noise-free).
  double demo_action_noise = 0.03;

  void validate() const;
};

// (state, next pred_horizon expert actions) pairs from successful expert
// episodes only. Chunks past the episode end are padded with zero actions
// (the expert at the goal commands ~0).
struct DemoDataset {
  Matrix states;  // (state_dim x n)
  Matrix chunks;  // (pred_horizon*action_dim x n)
  Normalizer stats;
  int episodes = 0;
};

DemoDataset collect_demos(const EnvConfig& env_config,
                          const BasePolicyConfig& config, std::uint64_t seed);

// Frozen chunked base policy with its normalization statistics and the
// metadata required before residual training may run against it.
struct BasePolicy {
  Mlp net;
  Normalizer stats;
  BasePolicyConfig config;
  double eval_success_rate = -1.0;  // < 0: unevaluated
  Level eval_level = Level::kLow;
  std::uint64_t train_seed = 0;

  // Deterministic chunk: (pred_horizon x action_dim).
  Matrix chunk(const StateVector& state) const;

  std::uint64_t checksum() const;
  void save(const std::string& path) const;
  static BasePolicy load(const std::string& path);
};

struct BcMetrics {
  double first_epoch_loss = 0.0;
  double final_loss = 0.0;
  int epochs_run = 0;
  double eval_success_rate = -1.0;
};

// MSE regression of expert chunks with the band-targeted epoch cap above.
BasePolicy train_bc(const DemoDataset& dataset, const BasePolicyConfig& config,
                    const EnvConfig& env_config, std::uint64_t seed,
                    BcMetrics* metrics = nullptr);

// Per-environment chunk cadence: re-plans every action_horizon steps and
// consumes one action per step.
class ChunkExecutor {
 public:
  explicit ChunkExecutor(const BasePolicy* base) : base_(base) {}

  // Base action for the current step; re-plans if the cursor has reached
  // action_horizon (or nothing is planned yet).
  ActionVector base_action(const StateVector& state);
  void reset();
  int cursor() const { return cursor_; }

 private:
  const BasePolicy* base_;
  Matrix chunk_;
  int cursor_ = -1;
};

// Success rate of the frozen base alone over `episodes` seeded episodes.
double evaluate_base(const BasePolicy& base, const EnvConfig& env_config,
                     int episodes, std::uint64_t seed0);

}  // namespace korr
