#pragma once

// Maps a flat Config onto the experiment structs. Every key has the struct's
// default as its fallback, so an empty config reproduces the defaults.

#include <string>

#include "dmpc/config.hpp"
#include "dmpc/experiments.hpp"

namespace dmpc {

inline Activation activation_from(const std::string& key, const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError(key + ": expected relu or tanh, got '" + s + "'");
}

inline std::string activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

inline std::uint64_t run_seed(Config& c) { return c.get_u64("seed", 0); }

inline CollectConfig collect_config(Config& c) {
  CollectConfig d;
  d.episodes = c.get_int("collect.episodes", d.episodes);
  d.steps = c.get_int("collect.steps", d.steps);
  d.horizon = c.get_int("collect.horizon", d.horizon);
  d.stride = c.get_int("collect.stride", d.stride);
  d.min_hold = c.get_double("collect.min_hold", d.min_hold);
  d.max_hold = c.get_double("collect.max_hold", d.max_hold);
  d.max_speed = c.get_double("collect.max_speed", d.max_speed);
  d.max_yaw = c.get_double("collect.max_yaw", d.max_yaw);
  d.zero_prob = c.get_double("collect.zero_prob", d.zero_prob);
  d.randomize = c.get_bool("collect.randomize", d.randomize);
  d.min_scale = c.get_double("collect.min_scale", d.min_scale);
  d.seed = run_seed(c);
  return d;
}

inline PriorConfig prior_config(Config& c) {
  PriorConfig d;
  d.hidden = c.get_ints("prior.hidden", d.hidden);
  d.activation = activation_from("prior.activation", c.get_string("prior.activation", activation_name(d.activation)));
  d.train_steps = c.get_int("prior.diffusion_steps", d.train_steps);
  d.beta_start = c.get_double("prior.beta_start", d.beta_start);
  d.beta_end = c.get_double("prior.beta_end", d.beta_end);
  d.condition_on_first_state = c.get_bool("prior.condition_on_first_state", d.condition_on_first_state);
  d.train.steps = c.get_int("prior.train_steps", d.train.steps);
  d.train.batch = c.get_int("prior.batch", d.train.batch);
  d.train.lr = c.get_double("prior.lr", d.train.lr);
  d.train.final_lr = c.get_double("prior.final_lr", d.train.final_lr);
  d.seed = run_seed(c);
  return d;
}

inline PlannerConfig planner_config(Config& c, const std::string& prefix = "planner") {
  PlannerConfig d;
  d.candidates = c.get_int(prefix + ".candidates", d.candidates);
  d.lambda = c.get_double(prefix + ".lambda", d.lambda);
  d.inference_steps = c.get_int(prefix + ".inference_steps", d.inference_steps);
  const std::string sampler = c.get_string(prefix + ".sampler", "ddpm");
  if (sampler == "ddpm") d.sampler = Sampler::kDdpm;
  else if (sampler == "ddim") d.sampler = Sampler::kDdim;
  else throw ConfigError(prefix + ".sampler: expected ddpm or ddim");
  const std::string space = c.get_string(prefix + ".guidance_space", "normalized");
  if (space == "normalized") d.space = GuidanceSpace::kNormalized;
  else if (space == "physical") d.space = GuidanceSpace::kPhysical;
  else throw ConfigError(prefix + ".guidance_space: expected normalized or physical");
  return d;
}

inline ExecutorConfig executor_config(Config& c, ExecutorConfig d = {}, const std::string& prefix = "executor") {
  d.margin = c.get_int(prefix + ".margin", d.margin);
  d.cached_steps = c.get_int(prefix + ".cached_steps", d.cached_steps);
  d.inference_steps = c.get_int(prefix + ".inference_steps", d.inference_steps);
  d.refresh = c.get_bool(prefix + ".refresh", d.refresh);
  d.refresh_period = c.get_int(prefix + ".refresh_period", d.refresh_period);
  d.refresh_on_command_change = c.get_bool(prefix + ".refresh_on_command_change", d.refresh_on_command_change);
  d.step_cost = c.get_double(prefix + ".step_cost", d.step_cost);
  return d;
}

inline HeightRewardConfig reward_config(Config& c) {
  HeightRewardConfig d;
  d.target = c.get_double("reward.target", d.target);
  d.holdout = c.get_double("reward.holdout", d.holdout);
  d.max_segments = c.get_int("reward.max_segments", d.max_segments);
  d.train.hidden = c.get_ints("reward.hidden", d.train.hidden);
  d.train.epochs = c.get_int("reward.epochs", d.train.epochs);
  d.train.batch = c.get_int("reward.batch", d.train.batch);
  d.train.lr = c.get_double("reward.lr", d.train.lr);
  d.seed = run_seed(c);
  return d;
}

inline FinetuneConfig finetune_config(Config& c) {
  FinetuneConfig d;
  InteractiveConfig& t = d.train;
  t.iterations = c.get_int("finetune.iterations", t.iterations);
  t.episodes_per_iteration = c.get_int("finetune.episodes_per_iteration", t.episodes_per_iteration);
  t.episode_steps = c.get_int("finetune.episode_steps", t.episode_steps);
  t.updates_per_iteration = c.get_int("finetune.updates_per_iteration", t.updates_per_iteration);
  t.window_stride = c.get_int("finetune.window_stride", t.window_stride);
  t.capacity = static_cast<std::size_t>(c.get_int("finetune.capacity", static_cast<int>(t.capacity)));
  t.lr = c.get_double("finetune.lr", t.lr);
  t.min_speed = c.get_double("finetune.min_speed", t.min_speed);
  t.max_speed = c.get_double("finetune.max_speed", t.max_speed);
  t.uniform_weights = c.get_bool("finetune.uniform_weights", t.uniform_weights);
  t.temperature_window = c.get_int("finetune.temperature_window", t.temperature_window);
  t.weighting.temperature = c.get_double("finetune.temperature", t.weighting.temperature);
  t.weighting.keep = c.get_int("finetune.keep", t.weighting.keep);
  t.weighting.batch = c.get_int("finetune.batch", t.weighting.batch);
  t.weighting.fresh_ratio = c.get_double("finetune.fresh_ratio", t.weighting.fresh_ratio);
  t.executor = executor_config(c, t.executor, "finetune.executor");
  t.planner = planner_config(c, "finetune.planner");
  t.seed = run_seed(c);
  d.eval_speeds = c.get_doubles("finetune.eval_speeds", d.eval_speeds);
  d.eval_episodes = c.get_int("finetune.eval_episodes", d.eval_episodes);
  d.eval_steps = c.get_int("finetune.eval_steps", d.eval_steps);
  d.eval_seed = c.get_u64("finetune.eval_seed", d.eval_seed);
  d.replay_demos = c.get_bool("finetune.replay_demos", d.replay_demos);
  d.demos.episodes = c.get_int("finetune.demo_episodes", d.demos.episodes);
  t.anchor_share = c.get_double("finetune.anchor_share", t.anchor_share);
  return d;
}

inline AdaptationConfig adaptation_config(Config& c) {
  AdaptationConfig d;
  std::vector<std::string> names;
  for (Objective o : d.objectives) names.push_back(to_string(o));
  d.objectives.clear();
  for (const auto& n : c.get_strings("adapt.objectives", names)) {
    try {
      d.objectives.push_back(objective_from_string(n));
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("adapt.objectives: ") + e.what());
    }
  }
  d.candidates = c.get_ints("adapt.candidates", d.candidates);
  d.seeds = c.get_int("adapt.seeds", d.seeds);
  d.episode_steps = c.get_int("adapt.episode_steps", d.episode_steps);
  d.max_speed = c.get_double("adapt.max_speed", d.max_speed);
  d.max_yaw = c.get_double("adapt.max_yaw", d.max_yaw);
  for (Objective o : kAllObjectives) d.lambda[o] = c.get_double("adapt.lambda." + to_string(o), d.lambda[o]);
  d.range_lo = c.get_double("adapt.range_lo", d.range_lo);
  d.range_hi = c.get_double("adapt.range_hi", d.range_hi);
  d.rate_limit = c.get_double("adapt.rate_limit", d.rate_limit);
  d.gate = c.get_double("adapt.gate", d.gate);
  d.inference_steps = c.get_int("adapt.inference_steps", d.inference_steps);
  d.executor = executor_config(c, d.executor, "adapt.executor");
  d.seed = run_seed(c);
  return d;
}

inline DeployConfig deploy_config(Config& c) {
  DeployConfig d;
  d.episodes = c.get_int("deploy.episodes", d.episodes);
  d.phase_seconds = c.get_double("deploy.phase_seconds", d.phase_seconds);
  d.forward_speed = c.get_double("deploy.forward_speed", d.forward_speed);
  d.turn_speed = c.get_double("deploy.turn_speed", d.turn_speed);
  d.turn_rate = c.get_double("deploy.turn_rate", d.turn_rate);
  d.pass_ratio = c.get_double("deploy.pass_ratio", d.pass_ratio);
  d.step_cost = c.get_double("deploy.step_cost", d.step_cost);
  d.planner = planner_config(c, "deploy.planner");
  d.seed = run_seed(c);
  return d;
}

}  // namespace dmpc
