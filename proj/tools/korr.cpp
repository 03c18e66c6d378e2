// korr: single entry point for training, evaluation, and the analysis
// studies. One run directory per invocation; everything needed to reproduce
// a run (resolved config, seed, manifest) is written next to its outputs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "korr/config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericError = 3;
constexpr int kExitContractError = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string run_name;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("-O,--override", args.overrides,
                  "dotted key=value override (repeatable)");
  cmd->add_option("--out-dir", args.out_dir, "output root directory");
  cmd->add_option("--run-name", args.run_name, "run directory name");
}

korr::ExperimentConfig resolve(const CommonArgs& args) {
  korr::ExperimentConfig config;
  if (!args.config_path.empty()) {
    config = korr::parse_config_file(args.config_path);
  }
  for (const std::string& o : args.overrides) {
    korr::apply_override(config, o);
  }
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  if (!args.run_name.empty()) config.run_name = args.run_name;
  config.validate();
  return config;
}

class RunDir {
 public:
  RunDir(const korr::ExperimentConfig& config, const std::string& command)
      : path_(fs::path(config.out_dir) / config.run_name),
        command_(command),
        seed_(config.seed),
        start_(std::chrono::steady_clock::now()) {
    fs::create_directories(path_);
    write(path_ / "config.json", korr::resolved_config_json(config));
    metrics_.open(path_ / "metrics.jsonl");
  }

  const fs::path& path() const { return path_; }

  void log_metrics(const json& record) {
    metrics_ << record.dump() << "\n";
    metrics_.flush();
  }

  void write(const fs::path& file, const std::string& content) {
    std::ofstream out(file);
    out << content;
  }

  void finish() {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
            .count();
    json manifest{{"command", command_},
                  {"seed", seed_},
                  {"version", "0.1.0"},
                  {"wall_time_s", wall}};
    write(path_ / "manifest.json", manifest.dump(2));
  }

 private:
  fs::path path_;
  std::string command_;
  std::uint64_t seed_;
  std::chrono::steady_clock::time_point start_;
  std::ofstream metrics_;
};

korr::BasePolicy load_base_or_explain(const std::string& path) {
  if (!fs::exists(path)) {
    throw korr::ConfigError("base checkpoint '" + path +
                            "' not found; produce one with `korr train-base`");
  }
  return korr::BasePolicy::load(path);
}

json eval_record(const std::string& method, const korr::EvalResult& r,
                 korr::Level level, bool disturb) {
  return json{{"method", method},
              {"level", korr::level_name(level)},
              {"disturb", disturb},
              {"successes", r.successes},
              {"episodes", r.episodes},
              {"success_rate", r.success_rate},
              {"mean_episode_length", r.mean_episode_length}};
}

int cmd_train_base(const CommonArgs& common) {
  const korr::ExperimentConfig config = resolve(common);
  RunDir run(config, "train-base");
  const korr::DemoDataset demos =
      korr::collect_demos(config.env, config.base, config.seed);
  korr::BcMetrics metrics;
  const korr::BasePolicy base =
      korr::train_bc(demos, config.base, config.env, config.seed, &metrics);
  const std::string ckpt = (run.path() / "base.ckpt").string();
  base.save(ckpt);
  run.log_metrics(json{{"demo_pairs", demos.states.cols()},
                       {"demo_episodes", demos.episodes},
                       {"first_epoch_loss", metrics.first_epoch_loss},
                       {"final_loss", metrics.final_loss},
                       {"epochs_run", metrics.epochs_run},
                       {"eval_success_rate", metrics.eval_success_rate}});
  run.finish();
  std::cout << "base saved to " << ckpt << ", success rate "
            << base.eval_success_rate << " at "
            << korr::level_name(base.eval_level) << "\n";
  return 0;
}

int cmd_train_residual(const CommonArgs& common, const std::string& base_path) {
  const korr::ExperimentConfig config = resolve(common);
  RunDir run(config, "train-residual");
  const korr::BasePolicy base = load_base_or_explain(base_path);
  const korr::TrainResult result = korr::train(
      config.ppo, config.residual, config.koopman, config.nonlin, base,
      config.env, config.seed, [&run](const korr::IterationMetrics& m) {
        run.log_metrics(json{{"iteration", m.iteration},
                             {"mean_episode_reward", m.mean_episode_reward},
                             {"eval_success_rate", m.eval_success_rate},
                             {"koopman_loss", m.update.koopman_loss},
                             {"l_clip", m.update.ppo.l_clip},
                             {"l_vf", m.update.ppo.l_vf},
                             {"l_ppo", m.update.ppo.l_ppo},
                             {"kl", m.update.ppo.kl_estimate},
                             {"latent_norm", m.update.latent_norm_mean}});
      });
  korr::ResidualCheckpointInfo info;
  info.trained_level = config.env.randomness_level;
  info.eval_success_rate = result.best_eval_success;
  info.train_seed = config.seed;
  info.base_checksum = base.checksum();
  const std::string ckpt = (run.path() / "residual.ckpt").string();
  korr::save_residual(ckpt, result.policy, info);
  korr::save_residual((run.path() / "residual_final.ckpt").string(),
                      result.final_policy, info);
  run.finish();
  std::cout << "residual (" << korr::residual_mode_name(config.residual.mode)
            << ") saved to " << ckpt << ", best eval "
            << result.best_eval_success << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& base_path,
             const std::string& residual_path) {
  const korr::ExperimentConfig config = resolve(common);
  RunDir run(config, "eval");
  const korr::BasePolicy base = load_base_or_explain(base_path);
  korr::ResidualPolicy residual;
  const korr::ResidualPolicy* residual_ptr = nullptr;
  std::string method = "base";
  if (!residual_path.empty()) {
    if (!fs::exists(residual_path)) {
      throw korr::ConfigError(
          "residual checkpoint '" + residual_path +
          "' not found; produce one with `korr train-residual`");
    }
    auto [policy, info] = korr::load_residual(residual_path);
    residual = std::move(policy);
    residual_ptr = &residual;
    method = korr::residual_mode_name(residual.config.mode);
  }
  const korr::EvalResult result =
      korr::evaluate_stack(base, residual_ptr, config.env, config.eval);
  const json record =
      eval_record(method, result, config.eval.level, config.eval.disturb);
  run.log_metrics(record);
  run.write(run.path() / "results.json", record.dump(2));
  run.finish();
  std::cout << record.dump(2) << "\n";
  return 0;
}

int cmd_eval_grid(const CommonArgs& common, const std::string& base_path,
                  const std::vector<std::string>& residual_specs) {
  const korr::ExperimentConfig config = resolve(common);
  RunDir run(config, "eval-grid");
  const korr::BasePolicy base = load_base_or_explain(base_path);
  std::vector<std::pair<std::string, korr::ResidualPolicy>> methods;
  for (const std::string& spec : residual_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
      throw korr::ConfigError("--residual expects name=path, got '" + spec +
                              "'");
    }
    auto [policy, info] = korr::load_residual(spec.substr(eq + 1));
    methods.emplace_back(spec.substr(0, eq), std::move(policy));
  }
  std::vector<korr::EvalCell> cells;
  for (const korr::Level level :
       {korr::Level::kLow, korr::Level::kMed, korr::Level::kHigh}) {
    for (const bool disturb : {false, true}) {
      korr::EvalSpec spec = config.eval;
      spec.level = level;
      spec.disturb = disturb;
      korr::EvalCell cell;
      cell.level = level;
      cell.disturb = disturb;
      cell.seed = spec.base_seed;
      cell.method = "base";
      cell.result = korr::evaluate_stack(base, nullptr, config.env, spec);
      run.log_metrics(eval_record("base", cell.result, level, disturb));
      cells.push_back(cell);
      for (const auto& [name, policy] : methods) {
        cell.method = name;
        cell.result = korr::evaluate_stack(base, &policy, config.env, spec);
        run.log_metrics(eval_record(name, cell.result, level, disturb));
        cells.push_back(cell);
      }
    }
  }
  run.write(run.path() / "grid.txt", korr::results_table(cells));
  run.write(run.path() / "grid.json", korr::results_json(cells));
  run.finish();
  std::cout << korr::results_table(cells);
  return 0;
}

// Dynamics comparison on held-out base-policy trajectories: train both
// model families on one batch of rollouts, measure open-loop drift on fresh
// ones.
int cmd_drift_study(const CommonArgs& common, const std::string& base_path,
                    int horizon, int rollouts) {
  const korr::ExperimentConfig config = resolve(common);
  RunDir run(config, "drift-study");
  const korr::BasePolicy base = load_base_or_explain(base_path);

  korr::Rng rng(config.seed);
  korr::ResidualConfig korr_cfg = config.residual;
  korr_cfg.mode = korr::ResidualMode::kKorr;
  korr::ResidualPolicy km = korr::make_residual_policy(
      korr_cfg, config.koopman, config.nonlin, base.stats, rng);
  korr::ResidualConfig nl_cfg = config.residual;
  nl_cfg.mode = korr::ResidualMode::kResipNonlinDyn;
  korr::ResidualPolicy nm = korr::make_residual_policy(
      nl_cfg, config.koopman, config.nonlin, base.stats, rng);

  // Model-quality study: unlike the RL default (EDMD on a random lift, no
  // gradient epochs), both families get the full gradient regression here so
  // the nonlinear baseline is actually trained. Overrides still apply.
  korr::PpoConfig pcfg = config.ppo;
  if (pcfg.dyn_pretrain_epochs == 0) {
    pcfg.dyn_pretrain_epochs = 30;
    pcfg.edmd_warm_start = false;
    pcfg.dyn_lr = 1e-3;
  }
  korr::Adam km_opt(korr::AdamConfig{.lr = pcfg.dyn_lr});
  korr::Adam nm_opt(korr::AdamConfig{.lr = pcfg.dyn_lr});
  korr::Rng km_rng(config.seed + 1);
  korr::Rng nm_rng(config.seed + 1);
  korr::pretrain_dynamics(km, base, config.env, pcfg, km_opt, km_rng);
  korr::pretrain_dynamics(nm, base, config.env, pcfg, nm_opt, nm_rng);

  const std::vector<korr::Trajectory> held_out = korr::collect_trajectories(
      base, config.env, rollouts, horizon, config.seed + 100000);
  const korr::DriftStudyResult result =
      korr::drift_study(km.koopman, nm.nonlinear, held_out, horizon);

  json record{{"horizon", horizon},
              {"rollouts", rollouts},
              {"koopman_mean", result.koopman.mean},
              {"koopman_std", result.koopman.std_dev},
              {"nonlinear_mean", result.nonlinear.mean},
              {"nonlinear_std", result.nonlinear.std_dev},
              {"final_step_koopman_below", result.final_step_koopman_below}};
  run.log_metrics(record);
  run.write(run.path() / "drift.json", record.dump(2));
  run.finish();
  std::cout << "final-step MSE: koopman " << result.koopman.mean.back()
            << " vs nonlinear " << result.nonlinear.mean.back()
            << " (koopman below in " << result.final_step_koopman_below << "/"
            << rollouts << " rollouts)\n";
  return 0;
}

int cmd_extrapolation_study(const CommonArgs& common) {
  const korr::ExperimentConfig config = resolve(common);
  RunDir run(config, "extrapolation-study");
  const korr::StudyReport report = korr::run_study(config.study);
  run.write(run.path() / "curves.csv", report.curves_csv());
  run.write(run.path() / "summary.txt", report.summary());
  run.log_metrics(json{{"linear_extrap_mse", report.linear.extrap_mse},
                       {"poly_extrap_mse", report.poly.extrap_mse},
                       {"mlp_extrap_mse", report.mlp.extrap_mse},
                       {"linear_slope", report.linear_slope},
                       {"poly_slope", report.poly_slope}});
  run.finish();
  std::cout << report.summary();
  return 0;
}

int cmd_show_config(const CommonArgs& common) {
  std::cout << korr::resolved_config_json(resolve(common)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KORR desk-scale lab"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string base_path, residual_path;
  std::vector<std::string> residual_specs;
  std::string mode, level;
  bool no_bkp = false, goal = false;
  int lift_dim = 0;
  int horizon = 50, rollouts = 10;
  bool disturb = false;
  int episodes = 0;

  auto* train_base = app.add_subcommand("train-base", "behavior-clone the base");
  add_common(train_base, common);

  auto* train_res =
      app.add_subcommand("train-residual", "PPO residual on a frozen base");
  add_common(train_res, common);
  train_res->add_option("--base", base_path, "base checkpoint")->required();
  train_res->add_option("--mode", mode, "korr|resip|resip-nonlin-dyn");
  train_res->add_option("--level", level, "low|med|high");
  train_res->add_flag("--no-bkp", no_bkp, "cut RL backprop into the dynamics");
  train_res->add_flag("--goal", goal, "append goal conditioning");
  train_res->add_option("--lift-dim", lift_dim, "Koopman latent dimension");

  auto* eval = app.add_subcommand("eval", "evaluate base or base+residual");
  add_common(eval, common);
  eval->add_option("--base", base_path, "base checkpoint")->required();
  eval->add_option("--residual", residual_path, "residual checkpoint");
  eval->add_option("--level", level, "low|med|high");
  eval->add_flag("--disturb", disturb, "enable per-step disturbances");
  eval->add_option("--episodes", episodes, "episode count");

  auto* grid = app.add_subcommand("eval-grid", "level x disturbance sweep");
  add_common(grid, common);
  grid->add_option("--base", base_path, "base checkpoint")->required();
  grid->add_option("--residual", residual_specs,
                   "name=path residual checkpoint (repeatable)");

  auto* drift = app.add_subcommand("drift-study", "open-loop model drift");
  add_common(drift, common);
  drift->add_option("--base", base_path, "base checkpoint")->required();
  drift->add_option("--horizon", horizon, "open-loop horizon");
  drift->add_option("--rollouts", rollouts, "held-out rollouts");

  auto* extrap =
      app.add_subcommand("extrapolation-study", "linear vs nonlinear fits");
  add_common(extrap, common);

  auto* show = app.add_subcommand("show-config", "print the resolved config");
  add_common(show, common);

  CLI11_PARSE(app, argc, argv);

  // Flag-to-config translation keeps the ablation switches one-to-one with
  // config keys.
  if (!mode.empty()) common.overrides.push_back("residual.mode=" + mode);
  if (!level.empty()) common.overrides.push_back("env.level=" + level);
  if (no_bkp) common.overrides.push_back("ppo.bkp_rl_to_koopman=false");
  if (goal) common.overrides.push_back("residual.goal_conditioned=true");
  if (lift_dim > 0) {
    common.overrides.push_back("koopman.lift_dim=" + std::to_string(lift_dim));
  }
  if (eval->parsed()) {
    if (!level.empty()) common.overrides.push_back("eval.level=" + level);
    if (disturb) common.overrides.push_back("eval.disturb=true");
    if (episodes > 0) {
      common.overrides.push_back("eval.episodes=" + std::to_string(episodes));
    }
  }

  try {
    if (train_base->parsed()) return cmd_train_base(common);
    if (train_res->parsed()) return cmd_train_residual(common, base_path);
    if (eval->parsed()) return cmd_eval(common, base_path, residual_path);
    if (grid->parsed()) return cmd_eval_grid(common, base_path, residual_specs);
    if (drift->parsed()) {
      return cmd_drift_study(common, base_path, horizon, rollouts);
    }
    if (extrap->parsed()) return cmd_extrapolation_study(common);
    if (show->parsed()) return cmd_show_config(common);
  } catch (const korr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const korr::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumericError;
  } catch (const korr::ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return kExitContractError;
  }
  return 0;
}
