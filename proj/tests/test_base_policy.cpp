#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "korr/base_policy.hpp"
#include "test_util.hpp"

using namespace korr;
using korr_test::bit_equal;

namespace {

BasePolicyConfig small_config() {
  BasePolicyConfig cfg;
  cfg.demo_count = 5;
  cfg.max_epochs = 3;
  cfg.eval_every = 3;
  cfg.eval_episodes = 10;
  return cfg;
}

}  // namespace

TEST_SUITE("base_policy") {

TEST_CASE("config invariants") {
  BasePolicyConfig cfg;
  cfg.action_horizon = cfg.pred_horizon + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = BasePolicyConfig{};
  cfg.obs_horizon = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("one deterministic demo at radius zero") {
  EnvConfig env;
  env.low = {0.0, 0.001, 0.001};
  env.med = {0.001, 0.002, 0.002};
  env.high = {0.002, 0.003, 0.003};
  BasePolicyConfig cfg = small_config();
  cfg.demo_count = 1;
  cfg.demo_action_noise = 0.0;
  const DemoDataset a = collect_demos(env, cfg, 1);
  const DemoDataset b = collect_demos(env, cfg, 2);  // different seed
  CHECK(a.episodes == 1);
  CHECK(bit_equal(a.states, b.states));  // radius 0: seed-independent
  CHECK(bit_equal(a.chunks, b.chunks));
}

TEST_CASE("noise-free demos replay the expert actions bit-exactly") {
  EnvConfig env;
  BasePolicyConfig cfg = small_config();
  cfg.demo_action_noise = 0.0;
  const DemoDataset ds = collect_demos(env, cfg, 7);
  EnvConfig demo_env = env;
  demo_env.randomness_level = cfg.demo_level;
  demo_env.disturb_enabled = false;
  for (int col = 0; col < int(ds.states.cols()); ++col) {
    const StateVector s = StateVector::from_vector(ds.states.col(col));
    const Vector expected = scripted_expert(s, demo_env).to_vector();
    CHECK(bit_equal(ds.chunks.col(col).head(kActionDim), expected));
  }
}

TEST_CASE("50 Low demos give at least 2000 pairs") {
  EnvConfig env;
  BasePolicyConfig cfg;
  cfg.demo_count = 50;
  const DemoDataset ds = collect_demos(env, cfg, 3);
  CHECK(ds.episodes == 50);
  CHECK(ds.states.cols() >= 2000);
}

TEST_CASE("chunk tails past the episode end are zero-padded") {
  EnvConfig env;
  BasePolicyConfig cfg = small_config();
  cfg.demo_action_noise = 0.0;
  const DemoDataset ds = collect_demos(env, cfg, 11);
  // The final state of some episode has only one remaining expert action.
  const int last = int(ds.states.cols()) - 1;
  const Vector tail =
      ds.chunks.col(last).tail((cfg.pred_horizon - 1) * kActionDim);
  CHECK(tail.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bc training on a tiny dataset converges and bands are honored") {
  EnvConfig env;
  BasePolicyConfig cfg = small_config();
  const DemoDataset ds = collect_demos(env, cfg, 5);
  BcMetrics metrics;
  const BasePolicy base = train_bc(ds, cfg, env, 5, &metrics);
  CHECK(metrics.epochs_run >= 1);
  CHECK(metrics.final_loss < metrics.first_epoch_loss);
  CHECK(base.eval_success_rate >= 0.0);  // always evaluated before return
}

TEST_CASE("identical dataset rows drive the loss toward zero") {
  // One (state, chunk) pair repeated: pure memorization.
  DemoDataset ds;
  ds.states = Matrix::Zero(kStateDim, 64);
  ds.states.row(0).setConstant(0.5);
  ds.chunks = Matrix::Constant(16 * kActionDim, 64, 0.01);
  ds.stats = Normalizer::identity(kStateDim);
  ds.episodes = 1;
  BasePolicyConfig cfg;
  cfg.demo_count = 1;
  cfg.max_epochs = 200;
  cfg.eval_every = 1000;  // never eval: pure regression check
  cfg.eval_episodes = 1;
  EnvConfig env;
  BcMetrics metrics;
  train_bc(ds, cfg, env, 9, &metrics);
  CHECK(metrics.final_loss < 1e-6);
}

TEST_CASE("chunk is deterministic with the documented shape") {
  EnvConfig env;
  BasePolicyConfig cfg = small_config();
  const DemoDataset ds = collect_demos(env, cfg, 13);
  const BasePolicy base = train_bc(ds, cfg, env, 13);
  Env probe(env, 1);
  const StateVector s = probe.reset();
  const Matrix c1 = base.chunk(s);
  const Matrix c2 = base.chunk(s);
  CHECK(c1.rows() == cfg.pred_horizon);
  CHECK(c1.cols() == kActionDim);
  CHECK(bit_equal(c1, c2));
}

TEST_CASE("executor re-plans exactly every action_horizon steps") {
  EnvConfig env;
  BasePolicyConfig cfg = small_config();
  const DemoDataset ds = collect_demos(env, cfg, 17);
  const BasePolicy base = train_bc(ds, cfg, env, 17);
  ChunkExecutor exec(&base);
  Env probe(env, 2);
  probe.reset();
  // Feed a fixed state; actions must cycle with period action_horizon and
  // the cursor must wrap at exactly 8, 16, 24.
  const StateVector s = probe.state();
  std::vector<Vector> actions;
  std::vector<int> cursors;
  for (int t = 0; t < 24; ++t) {
    actions.push_back(exec.base_action(s).to_vector());
    cursors.push_back(exec.cursor());
  }
  for (int t = 0; t < 24; ++t) {
    // Cursor counts 1..8 and wraps on re-plan (steps 0, 8, 16).
    CHECK(cursors[t] == t % cfg.action_horizon + 1);
  }
  for (int t = 0; t < 24; ++t) {
    CHECK(bit_equal(actions[t], actions[t % cfg.action_horizon]));
  }
}

TEST_CASE("checkpoint roundtrip preserves parameters and metadata") {
  EnvConfig env;
  BasePolicyConfig cfg = small_config();
  const DemoDataset ds = collect_demos(env, cfg, 19);
  BasePolicy base = train_bc(ds, cfg, env, 19);
  base.eval_success_rate = 0.42;
  base.eval_level = Level::kLow;
  const std::string path =
      (std::filesystem::temp_directory_path() / "korr_test_base.ckpt").string();
  base.save(path);
  const BasePolicy loaded = BasePolicy::load(path);
  CHECK(loaded.checksum() == base.checksum());
  CHECK(loaded.eval_success_rate == 0.42);
  CHECK(loaded.config.pred_horizon == cfg.pred_horizon);
  CHECK(loaded.config.action_horizon == cfg.action_horizon);
  std::remove(path.c_str());
}

TEST_CASE("checksum changes when a parameter changes") {
  EnvConfig env;
  BasePolicyConfig cfg = small_config();
  const DemoDataset ds = collect_demos(env, cfg, 23);
  BasePolicy base = train_bc(ds, cfg, env, 23);
  const std::uint64_t before = base.checksum();
  base.net.weights[0](0, 0) += 1e-12;
  CHECK(base.checksum() != before);
}

}  // TEST_SUITE
