#include "korr/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace korr {

namespace {

using nlohmann::json;

struct Field {
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <typename T>
T checked(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "': type mismatch (got " +
                      v.dump() + ")");
  }
}

Level level_checked(const json& v, const std::string& key) {
  return level_from_name(checked<std::string>(v, key));
}

// The whole schema as dotted leaf keys. Anything not listed here is an
// unknown key and rejected.
const std::map<std::string, Field>& schema() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> m;
    auto add = [&m](const std::string& key,
                    std::function<json(const ExperimentConfig&)> get,
                    std::function<void(ExperimentConfig&, const json&)> set) {
      m[key] = {std::move(get), std::move(set)};
    };
#define KORR_NUM(KEY, REF, TYPE)                                       \
  add(KEY, [](const ExperimentConfig& c) { return json(c.REF); },      \
      [](ExperimentConfig& c, const json& v) {                         \
        c.REF = checked<TYPE>(v, KEY);                                 \
      })
#define KORR_LEVEL(KEY, REF)                                            \
  add(KEY,                                                              \
      [](const ExperimentConfig& c) { return json(level_name(c.REF)); },\
      [](ExperimentConfig& c, const json& v) {                          \
        c.REF = level_checked(v, KEY);                                  \
      })

    KORR_LEVEL("env.level", env.randomness_level);
    KORR_NUM("env.disturb", env.disturb_enabled, bool);
    KORR_NUM("env.max_steps", env.max_steps, int);
    KORR_NUM("env.pos_tolerance", env.pos_tolerance, double);
    KORR_NUM("env.ang_tolerance", env.ang_tolerance, double);
    KORR_NUM("env.observe_pre_disturbance", env.observe_pre_disturbance, bool);
    KORR_NUM("env.low.init_radius", env.low.init_radius, double);
    KORR_NUM("env.low.max_shift", env.low.max_shift_magnitude, double);
    KORR_NUM("env.low.max_rot", env.low.max_rot_magnitude, double);
    KORR_NUM("env.med.init_radius", env.med.init_radius, double);
    KORR_NUM("env.med.max_shift", env.med.max_shift_magnitude, double);
    KORR_NUM("env.med.max_rot", env.med.max_rot_magnitude, double);
    KORR_NUM("env.high.init_radius", env.high.init_radius, double);
    KORR_NUM("env.high.max_shift", env.high.max_shift_magnitude, double);
    KORR_NUM("env.high.max_rot", env.high.max_rot_magnitude, double);

    KORR_NUM("base.pred_horizon", base.pred_horizon, int);
    KORR_NUM("base.action_horizon", base.action_horizon, int);
    KORR_NUM("base.hidden", base.hidden, std::vector<int>);
    KORR_NUM("base.demo_count", base.demo_count, int);
    KORR_LEVEL("base.demo_level", base.demo_level);
    KORR_NUM("base.max_epochs", base.max_epochs, int);
    KORR_NUM("base.eval_every", base.eval_every, int);
    KORR_NUM("base.eval_episodes", base.eval_episodes, int);
    KORR_NUM("base.band_lo", base.band_lo, double);
    KORR_NUM("base.band_hi", base.band_hi, double);
    KORR_NUM("base.band_target", base.band_target, double);
    KORR_NUM("base.lr", base.lr, double);
    KORR_NUM("base.batch_size", base.batch_size, int);
    KORR_NUM("base.demo_action_noise", base.demo_action_noise, double);

    KORR_NUM("koopman.lift_dim", koopman.lift_dim, int);
    KORR_NUM("koopman.lift_hidden", koopman.lift_hidden, std::vector<int>);
    KORR_NUM("koopman.lr", koopman.lr, double);

    KORR_NUM("nonlin.depth", nonlin.depth, int);
    KORR_NUM("nonlin.hidden", nonlin.hidden, int);
    KORR_NUM("nonlin.lr", nonlin.lr, double);

    add("residual.mode",
        [](const ExperimentConfig& c) {
          return json(residual_mode_name(c.residual.mode));
        },
        [](ExperimentConfig& c, const json& v) {
          c.residual.mode =
              residual_mode_from_name(checked<std::string>(v, "residual.mode"));
        });
    KORR_NUM("residual.action_scale", residual.action_scale, double);
    KORR_NUM("residual.init_logstd", residual.init_logstd, double);
    KORR_NUM("residual.learn_std", residual.learn_std, bool);
    KORR_NUM("residual.hidden", residual.hidden, std::vector<int>);
    KORR_NUM("residual.goal_conditioned", residual.goal_conditioned, bool);
    KORR_NUM("residual.critic_last_layer_std", residual.critic_last_layer_std,
             double);
    KORR_NUM("residual.critic_last_layer_bias",
             residual.critic_last_layer_bias, double);

    KORR_NUM("ppo.gamma", ppo.gamma, double);
    KORR_NUM("ppo.lambda", ppo.lambda, double);
    KORR_NUM("ppo.clip_eps", ppo.clip_eps, double);
    KORR_NUM("ppo.c1", ppo.c1, double);
    KORR_NUM("ppo.c2", ppo.c2, double);
    KORR_NUM("ppo.epochs_per_iter", ppo.epochs_per_iter, int);
    KORR_NUM("ppo.minibatch_size", ppo.minibatch_size, int);
    KORR_NUM("ppo.num_envs", ppo.num_envs, int);
    KORR_NUM("ppo.steps_per_env", ppo.steps_per_env, int);
    KORR_NUM("ppo.iterations", ppo.iterations, int);
    KORR_NUM("ppo.bkp_rl_to_koopman", ppo.bkp_rl_to_koopman, bool);
    KORR_NUM("ppo.koopman_loss_weight", ppo.koopman_loss_weight, double);
    KORR_NUM("ppo.actor_lr", ppo.actor_lr, double);
    KORR_NUM("ppo.dyn_lr", ppo.dyn_lr, double);
    KORR_NUM("ppo.max_grad_norm", ppo.max_grad_norm, double);
    KORR_NUM("ppo.combined_loss_single_step", ppo.combined_loss_single_step,
             bool);
    KORR_NUM("ppo.eval_every", ppo.eval_every, int);
    KORR_NUM("ppo.eval_episodes", ppo.eval_episodes, int);
    KORR_NUM("ppo.eval_deterministic", ppo.eval_deterministic, bool);
    KORR_NUM("ppo.dyn_pretrain_episodes", ppo.dyn_pretrain_episodes, int);
    KORR_NUM("ppo.dyn_pretrain_epochs", ppo.dyn_pretrain_epochs, int);
    KORR_NUM("ppo.edmd_warm_start", ppo.edmd_warm_start, bool);

    KORR_LEVEL("eval.level", eval.level);
    KORR_NUM("eval.disturb", eval.disturb, bool);
    KORR_NUM("eval.episodes", eval.episodes, int);
    KORR_NUM("eval.base_seed", eval.base_seed, std::uint64_t);
    KORR_NUM("eval.deterministic_actions", eval.deterministic_actions, bool);
    KORR_NUM("eval.workers", eval.workers, int);

    add("study.target",
        [](const ExperimentConfig& c) {
          return json(extrap_target_name(c.study.target));
        },
        [](ExperimentConfig& c, const json& v) {
          c.study.target =
              extrap_target_from_name(checked<std::string>(v, "study.target"));
        });
    KORR_NUM("study.train_lo", study.train_lo, double);
    KORR_NUM("study.train_hi", study.train_hi, double);
    KORR_NUM("study.extrap_lo", study.extrap_lo, double);
    KORR_NUM("study.extrap_hi", study.extrap_hi, double);
    KORR_NUM("study.n_train", study.n_train, int);
    KORR_NUM("study.n_extrap", study.n_extrap, int);
    KORR_NUM("study.poly_degree", study.poly_degree, int);
    KORR_NUM("study.noise_std", study.noise_std, double);
    KORR_NUM("study.mlp_hidden", study.mlp_hidden, int);
    KORR_NUM("study.mlp_depth", study.mlp_depth, int);
    KORR_NUM("study.mlp_max_epochs", study.mlp_max_epochs, int);
    KORR_NUM("study.seed", study.seed, std::uint64_t);

    KORR_NUM("seed", seed, std::uint64_t);
    KORR_NUM("out_dir", out_dir, std::string);
    KORR_NUM("run_name", run_name, std::string);
#undef KORR_NUM
#undef KORR_LEVEL
    return m;
  }();
  return fields;
}

void apply_leaf(ExperimentConfig& config, const std::string& key,
                const json& value) {
  const auto it = schema().find(key);
  if (it == schema().end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  it->second.set(config, value);
}

void apply_tree(ExperimentConfig& config, const json& node,
                const std::string& prefix) {
  if (!node.is_object()) {
    throw ConfigError("config node '" + prefix + "' must be an object");
  }
  for (const auto& [k, v] : node.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    // Arrays are leaves (hidden-layer lists); objects recurse.
    if (v.is_object()) {
      apply_tree(config, v, path);
    } else {
      apply_leaf(config, path, v);
    }
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  env.validate();
  base.validate();
  residual.validate();
  ppo.validate();
  study.validate();
  if (run_name.empty()) throw ConfigError("run_name must be non-empty");
}

ExperimentConfig parse_config_text(const std::string& json_text) {
  ExperimentConfig config;
  if (json_text.empty()) return config;
  json parsed;
  try {
    parsed = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  apply_tree(config, parsed, "");
  config.validate();
  return config;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings (level names, run names) pass through
  }
  apply_leaf(config, key, value);
}

std::string resolved_config_json(const ExperimentConfig& config) {
  json out;
  for (const auto& [key, field] : schema()) {
    json* node = &out;
    std::size_t start = 0;
    for (std::size_t dot = key.find('.'); dot != std::string::npos;
         dot = key.find('.', start)) {
      node = &(*node)[key.substr(start, dot - start)];
      start = dot + 1;
    }
    (*node)[key.substr(start)] = field.get(config);
  }
  return out.dump(2);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  keys.reserve(schema().size());
  for (const auto& [key, _] : schema()) keys.push_back(key);
  return keys;
}

}  // namespace korr
