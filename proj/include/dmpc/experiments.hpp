#pragma once

// Desk-scale experiment drivers shared by the CLI and the acceptance binary.

#include <Eigen/Core>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmpc/checkpoint.hpp"
#include "dmpc/constraints.hpp"
#include "dmpc/diffusion.hpp"
#include "dmpc/executor.hpp"
#include "dmpc/planner.hpp"
#include "dmpc/policy.hpp"
#include "dmpc/rewards.hpp"
#include "dmpc/toy_env.hpp"
#include "dmpc/trainer.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {

// ---------------------------------------------------------------------------
// Demonstration corpus

struct CollectConfig {
  int episodes = 400;
  int steps = 1000;
  int horizon = 11;
  int stride = 5;
  double min_hold = 2.0;  // seconds between command switches
  double max_hold = 4.0;
  double max_speed = 1.0;
  double max_yaw = 0.5;
  double zero_prob = 0.1;  // chance a new command is a stand-still
  bool randomize = false;
  double min_scale = 0.1;  // floor on per-row std so unexcited rows (roll, lateral command) stay bounded
  DemonstratorConfig demo{};
  std::uint64_t seed = 0;
};

/// Command schedule for one episode: piecewise constant, redrawn every
/// min_hold..max_hold seconds.
inline std::vector<Eigen::Vector3d> command_schedule(const CollectConfig& cfg, Rng& rng, double dt) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(static_cast<std::size_t>(cfg.steps));
  while (static_cast<int>(out.size()) < cfg.steps) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    if (rng.uniform(0.0, 1.0) >= cfg.zero_prob) {
      c.x() = rng.uniform(-cfg.max_speed, cfg.max_speed);
      c.z() = rng.uniform(-cfg.max_yaw, cfg.max_yaw);
    }
    const int hold = static_cast<int>(std::lround(rng.uniform(cfg.min_hold, cfg.max_hold) / dt));
    for (int k = 0; k < hold && static_cast<int>(out.size()) < cfg.steps; ++k) out.push_back(c);
  }
  return out;
}

struct CollectResult {
  TrajectoryDataset dataset;
  int failed_episodes = 0;
  double mean_tracking = 0.0;
};

/// Demonstrator rollouts windowed into H-step segments. Failed episodes are
/// truncated at the failure step and still windowed.
inline CollectResult collect_demos(const CollectConfig& cfg) {
  if (cfg.episodes < 1 || cfg.steps < cfg.horizon) throw InvalidInput("collect needs episodes >= 1 and steps >= H");
  CollectResult res;
  std::vector<Trajectory> segments;
  double tracking = 0.0;
  long long count = 0;
  for (int e = 0; e < cfg.episodes; ++e) {
    const std::uint64_t seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(e));
    auto [params, state] = reset(seed, cfg.randomize);
    Rng rng(seed, 0x636f6c6cULL);
    const auto commands = command_schedule(cfg, rng, params.dt);
    Demonstrator demo(seed, cfg.demo, rng.uniform(0.0, 1.0) < 0.5);
    EpisodeRecord rec;
    for (int t = 0; t < cfg.steps; ++t) {
      state.command = commands[static_cast<std::size_t>(t)];
      if (!record_step(rec, state, params, demo.act(state, params))) break;
    }
    rec.complete = true;
    res.failed_episodes += rec.failed ? 1 : 0;
    for (double tr : rec.tracking) tracking += tr;
    count += static_cast<long long>(rec.steps());
    if (static_cast<int>(rec.steps()) < cfg.horizon) continue;
    for (auto& seg : window_rollout(rec.samples(), cfg.horizon, cfg.stride)) segments.push_back(std::move(seg));
  }
  const StateLayout L{};
  DatasetMeta meta{L.state_dim(), L.action_dim(), cfg.horizon, 0.02, "demonstrator"};
  res.dataset = make_dataset(std::move(segments), meta, true, cfg.min_scale);
  res.mean_tracking = count ? tracking / static_cast<double>(count) : 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// Prior training

struct PriorConfig {
  std::vector<int> hidden{512, 512, 512};
  Activation activation = Activation::kRelu;
  int train_steps = 50;  // K
  double beta_start = 1e-4;
  double beta_end = 0.2;
  bool condition_on_first_state = true;
  DenoiserTrainOptions train{.steps = 30000, .batch = 256, .lr = 1e-3, .final_lr = 1e-5};
  std::uint64_t seed = 0;
};

inline std::vector<Eigen::VectorXd> normalized_flat(const TrajectoryDataset& ds) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(ds.segments.size());
  for (const auto& s : ds.segments) out.push_back(normalize(s, ds.stats).flatten());
  return out;
}

struct PriorTrainResult {
  PriorCheckpoint prior;
  std::vector<double> losses;
};

inline PriorTrainResult train_prior(const TrajectoryDataset& ds, const PriorConfig& cfg) {
  ds.validate();
  if (ds.segments.empty()) throw InsufficientData("dataset has no segments");
  PriorTrainResult r;
  r.prior.model = Denoiser(ds.meta.state_dim, ds.meta.action_dim, ds.meta.horizon, cfg.hidden, cfg.activation, cfg.seed);
  r.prior.schedule = make_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end);
  r.prior.stats = ds.stats;
  r.prior.clean_prefix = cfg.condition_on_first_state ? ds.meta.state_dim : 0;
  DenoiserTrainOptions opt = cfg.train;
  opt.seed = stream_seed(cfg.seed, 1);
  opt.clean_prefix = r.prior.clean_prefix;
  const auto data = normalized_flat(ds);
  r.losses = train_denoiser(r.prior.model, data, r.prior.schedule, opt);
  quantize_float32(r.prior.model.net().mutable_params());
  return r;
}

// ---------------------------------------------------------------------------
// Neural height reward

struct HeightRewardConfig {
  double target = 0.15;  // h*
  double holdout = 0.1;
  int max_segments = 20000;
  RewardTrainOptions train{};
  std::uint64_t seed = 0;
};

/// Ground-truth label -(h - h*)^2 averaged over the segment, with the height
/// rebuilt from the joints under nominal parameters.
inline double height_label(const Trajectory& seg, double target, const EnvParams& params = {}) {
  const StateLayout L = params.layout();
  double total = 0.0;
  for (int t = 0; t < seg.horizon(); ++t) {
    const Eigen::VectorXd q = seg.data().col(t).segment(L.q(), L.joints);
    const double e = detail::true_height(params, q) - target;
    total -= e * e;
  }
  return total / seg.horizon();
}

struct HeightRewardResult {
  RewardModel model;
  std::vector<double> epoch_loss;
  double heldout_correlation = 0.0;
  int train_count = 0;
  int heldout_count = 0;
};

inline double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InsufficientData("correlation needs two paired samples");
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

inline HeightRewardResult train_height_reward(const TrajectoryDataset& ds, const NoiseSchedule& schedule,
                                              const HeightRewardConfig& cfg) {
  ds.validate();
  std::vector<std::size_t> idx(ds.segments.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(cfg.seed, 0x68676874ULL);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  if (static_cast<int>(idx.size()) > cfg.max_segments) idx.resize(static_cast<std::size_t>(cfg.max_segments));
  const auto n_hold = static_cast<std::size_t>(std::lround(cfg.holdout * static_cast<double>(idx.size())));
  if (n_hold < 2 || n_hold >= idx.size()) throw InsufficientData("too few segments for a held-out split");
  std::vector<Trajectory> train, hold;
  std::vector<double> train_y, hold_y;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Trajectory& seg = ds.segments[idx[i]];
    (i < n_hold ? hold : train).push_back(seg);
    (i < n_hold ? hold_y : train_y).push_back(height_label(seg, cfg.target));
  }
  RewardTrainOptions opt = cfg.train;
  opt.seed = stream_seed(cfg.seed, 1);
  auto r = train_reward_model(train, train_y, ds.stats, schedule, opt);
  quantize_float32(r.model.net().mutable_params());
  std::vector<double> pred;
  for (const auto& seg : hold) pred.push_back(r.model.value(seg.data(), 0));
  HeightRewardResult out{std::move(r.model), std::move(r.epoch_loss), correlation(pred, hold_y),
                         static_cast<int>(train.size()), static_cast<int>(hold.size())};
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct SampleSummary {
  double mean = 0.0;
  double se = 0.0;
  int n = 0;
};

inline SampleSummary summarize(std::span<const double> v) {
  SampleSummary s;
  s.n = static_cast<int>(v.size());
  if (s.n == 0) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / s.n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / (s.n - 1) / s.n);
  }
  return s;
}

/// One-sided paired t-test of H1: mean(a - b) > 0. Returns the p-value.
inline double paired_t_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidInput("paired test needs two equal samples of size >= 2");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const SampleSummary s = summarize(d);
  if (s.se == 0.0) return s.mean > 0.0 ? 0.0 : 1.0;
  const boost::math::students_t dist(static_cast<double>(s.n - 1));
  return boost::math::cdf(boost::math::complement(dist, s.mean / s.se));
}

// ---------------------------------------------------------------------------
// Adaptation grid (candidate count x reward planning x constraints)

enum class Objective { kJointVel, kJointAcc, kJointRange, kEnergy, kBalance };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::kJointVel: return "joint_vel";
    case Objective::kJointAcc: return "joint_acc";
    case Objective::kJointRange: return "joint_range";
    case Objective::kEnergy: return "energy";
    case Objective::kBalance: return "balance";
  }
  return "?";
}

inline Objective objective_from_string(const std::string& s) {
  for (Objective o : {Objective::kJointVel, Objective::kJointAcc, Objective::kJointRange, Objective::kEnergy,
                      Objective::kBalance})
    if (to_string(o) == s) return o;
  throw InvalidInput("unknown objective: " + s);
}

inline constexpr std::array<Objective, 5> kAllObjectives{Objective::kJointVel, Objective::kJointAcc,
                                                         Objective::kJointRange, Objective::kEnergy,
                                                         Objective::kBalance};

struct AdaptationConfig {
  std::vector<Objective> objectives{Objective::kJointVel, Objective::kJointRange, Objective::kEnergy};
  std::vector<int> candidates{1, 10, 100};
  int seeds = 200;
  int episode_steps = 200;
  double max_speed = 1.0;
  double max_yaw = 0.5;
  // Normalized-space guidance strengths, calibrated on the default prior at N = 1.
  std::map<Objective, double> lambda{{Objective::kJointVel, 0.3}, {Objective::kJointAcc, 1e-4},
                                     {Objective::kJointRange, 100.0}, {Objective::kEnergy, 1.0},
                                     {Objective::kBalance, 5.0}};
  double range_lo = 0.5;  // tightened joint range
  double range_hi = 1.1;
  double rate_limit = 4.0;  // |qdot| box used as the constraint for the rate-type objectives
  double gate = 0.97;
  ExecutorConfig executor{.margin = 3, .cached_steps = 0, .step_cost = 0.0};
  int inference_steps = 10;
  std::uint64_t seed = 0;
};

struct ObjectivePlan {
  RewardSpec reward;
  ConstraintSet constraints;
};

inline ObjectivePlan objective_plan(Objective o, const AdaptationConfig& cfg) {
  const StateLayout L{};
  ObjectivePlan p;
  p.reward.layout = L;
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(L.joints, cfg.range_lo);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(L.joints, cfg.range_hi);
  switch (o) {
    case Objective::kJointVel:
      p.reward.add(VelAccTerm{.lambda_v = 1.0, .lambda_a = 0.0}, 1.0);
      p.constraints.add(joint_rate_limit(L, cfg.rate_limit));
      break;
    case Objective::kJointAcc:
      p.reward.add(VelAccTerm{.lambda_v = 0.0, .lambda_a = 1.0}, 1.0);
      p.constraints.add(joint_rate_limit(L, cfg.rate_limit));
      break;
    case Objective::kJointRange:
      p.reward.add(RangeTerm{lo, hi}, 1.0);
      p.constraints.add(joint_position_box(L, lo, hi));
      p.constraints.add(action_box(L, lo, hi));
      break;
    case Objective::kEnergy:
      p.reward.add(EnergyTerm{}, 1.0);
      p.constraints.add(joint_rate_limit(L, cfg.rate_limit));
      break;
    case Objective::kBalance:
      p.reward.add(BalanceTerm{}, 1.0);
      p.constraints.add(joint_rate_limit(L, cfg.rate_limit));
      break;
  }
  return p;
}

/// Per-step penalty of one objective from the realized episode (lower is better).
inline double realized_penalty(Objective o, const EpisodeRecord& rec, const AdaptationConfig& cfg) {
  const StateLayout L{};
  const std::size_t T = rec.steps();
  if (T == 0) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    // The next observation (or the final one) carries the post-step joints.
    const Eigen::VectorXd& o_next = rec.observations[std::min(t + 1, T - 1)];
    const auto q = o_next.segment(L.q(), L.joints);
    const auto qd = o_next.segment(L.qdot(), L.joints);
    switch (o) {
      case Objective::kJointVel:
        total += qd.squaredNorm();
        break;
      case Objective::kJointAcc: {
        const auto qd_prev = rec.observations[t].segment(L.qdot(), L.joints);
        total += ((qd - qd_prev) / 0.02).squaredNorm();
        break;
      }
      case Objective::kJointRange:
        total += (q.array() - cfg.range_hi).max(0.0).square().sum() + (cfg.range_lo - q.array()).max(0.0).square().sum();
        break;
      case Objective::kEnergy:
        total += rec.energy[t];
        break;
      case Objective::kBalance: {
        const Eigen::Vector3d g = o_next.segment<3>(StateLayout::gravity());
        total += (g - Eigen::Vector3d(0.0, 0.0, -1.0)).squaredNorm();
        break;
      }
    }
  }
  return total / static_cast<double>(T);
}

/// Per-step penalty of one objective on the executed plan columns.
inline double plan_penalty(Objective o, const Eigen::MatrixXd& executed, const AdaptationConfig& cfg) {
  if (executed.cols() == 0) return 0.0;
  const ObjectivePlan p = objective_plan(o, cfg);
  return -composite(p.reward, executed) / static_cast<double>(executed.cols());
}

struct AdaptationCell {
  std::string objective;
  int candidates = 1;
  bool reward = false;
  bool constraint = false;
  std::vector<double> penalty;       // per seed, realized, normalized by the baseline mean
  std::vector<double> plan_penalty;  // per seed, executed plan columns, normalized
  std::vector<double> tracking;      // per seed mean tracking metric
  int failures = 0;
  double tracking_ratio = 0.0;
  bool gate_ok = false;

  [[nodiscard]] std::string label() const {
    return "C" + std::to_string(candidates) + (reward ? "_R+" : "_R-") + (constraint ? "_C+" : "_C-");
  }
};

struct EpisodeOutcome {
  EpisodeRecord record;
  Eigen::MatrixXd executed;
  double tracking = 0.0;
};

inline Eigen::Vector3d episode_command(std::uint64_t seed, double max_speed, double max_yaw) {
  Rng rng(seed, 0x636d64ULL);
  const double vx = rng.uniform(-max_speed, max_speed);
  return {vx, 0.0, rng.uniform(-max_yaw, max_yaw)};
}

inline EpisodeOutcome adaptation_episode(const PlanFn& fn, const AdaptationConfig& cfg, int index) {
  const std::uint64_t seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(index));
  auto [params, state] = reset(seed, false);
  const Eigen::Vector3d cmd = episode_command(seed, cfg.max_speed, cfg.max_yaw);
  ClosedLoopResult r = run_closed_loop(params, state, cfg.executor, fn, {{"run", cmd, cfg.episode_steps}},
                                       stream_seed(seed, 0x706c616eULL));
  EpisodeOutcome out;
  out.tracking = r.record.steps() ? std::accumulate(r.record.tracking.begin(), r.record.tracking.end(), 0.0) /
                                        static_cast<double>(r.record.steps())
                                  : 0.0;
  out.record = std::move(r.record);
  out.executed = std::move(r.executed);
  return out;
}

struct AdaptationResult {
  std::vector<AdaptationCell> cells;  // objective-major, baseline first within each objective
};

/// Runs the grid. The N=1, R-, C- baseline ignores the objective, so one set
/// of baseline episodes is shared by every objective.
inline AdaptationResult run_adaptation(const PriorCheckpoint& prior, const AdaptationConfig& cfg,
                                       const std::function<void(const std::string&)>& log = {}) {
  if (cfg.seeds < 2) throw InvalidInput("adaptation needs at least two seeds");
  PlannerConfig base;
  base.inference_steps = cfg.inference_steps;
  std::vector<EpisodeOutcome> baseline;
  {
    const PlanFn fn = make_plan_fn(prior, base);
    for (int i = 0; i < cfg.seeds; ++i) baseline.push_back(adaptation_episode(fn, cfg, i));
  }
  std::vector<double> base_tracking;
  for (const auto& e : baseline) base_tracking.push_back(e.tracking);
  const double base_track = summarize(base_tracking).mean;

  AdaptationResult res;
  for (Objective o : cfg.objectives) {
    const ObjectivePlan op = objective_plan(o, cfg);
    std::vector<double> raw_base, raw_base_plan;
    for (const auto& e : baseline) {
      raw_base.push_back(realized_penalty(o, e.record, cfg));
      raw_base_plan.push_back(plan_penalty(o, e.executed, cfg));
    }
    const double norm = std::max(summarize(raw_base).mean, 1e-12);
    const double norm_plan = std::max(summarize(raw_base_plan).mean, 1e-12);
    for (bool constraint : {false, true}) {
      for (bool reward : {false, true}) {
        for (int n : cfg.candidates) {
          AdaptationCell cell;
          cell.objective = to_string(o);
          cell.candidates = n;
          cell.reward = reward;
          cell.constraint = constraint;
          const bool is_base = n == 1 && !reward && !constraint;
          PlannerConfig pc = base;
          pc.candidates = n;
          pc.spec = op.reward;
          pc.lambda = reward ? cfg.lambda.at(o) : 0.0;
          if (constraint) pc.constraints = op.constraints;
          const PlanFn fn = make_plan_fn(prior, pc);
          for (int i = 0; i < cfg.seeds; ++i) {
            const EpisodeOutcome e = is_base ? baseline[static_cast<std::size_t>(i)] : adaptation_episode(fn, cfg, i);
            cell.penalty.push_back(realized_penalty(o, e.record, cfg) / norm);
            cell.plan_penalty.push_back(plan_penalty(o, e.executed, cfg) / norm_plan);
            cell.tracking.push_back(e.tracking);
            cell.failures += e.record.failed ? 1 : 0;
          }
          cell.tracking_ratio = summarize(cell.tracking).mean / base_track;
          cell.gate_ok = cell.tracking_ratio >= cfg.gate;
          if (log)
            log(cell.objective + " " + cell.label() + " penalty " + std::to_string(summarize(cell.penalty).mean) +
                " tracking " + std::to_string(cell.tracking_ratio));
          res.cells.push_back(std::move(cell));
        }
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Deployment ablation: replan margin, caching, refresh

struct DeployVariant {
  std::string name;
  ExecutorConfig executor;
};

/// Configurations A-E: synchronous cold, synchronous warm, synchronous short
/// chain, asynchronous warm without refresh, asynchronous warm with refresh.
inline std::vector<DeployVariant> deploy_variants(double step_cost = 0.005) {
  auto base = [&] {
    ExecutorConfig c;
    c.step_cost = step_cost;
    return c;
  };
  std::vector<DeployVariant> v(5);
  v[0] = {"A", base()};
  v[0].executor.margin = 0;
  v[0].executor.cached_steps = 0;
  v[1] = {"B", base()};
  v[1].executor.margin = 0;
  v[1].executor.refresh = false;
  v[2] = {"C", base()};
  v[2].executor.margin = 0;
  v[2].executor.cached_steps = 0;
  v[2].executor.inference_steps = 3;
  v[3] = {"D", base()};
  v[3].executor.refresh = false;
  v[4] = {"E", base()};
  return v;
}

struct DeployConfig {
  int episodes = 20;
  double phase_seconds = 3.0;
  double forward_speed = 0.8;
  double turn_speed = 0.5;
  double turn_rate = 1.0;
  double pass_ratio = 0.8;  // phase tracking needed, relative to the demonstrator
  double step_cost = 0.005;
  PlannerConfig planner{};
  std::uint64_t seed = 0;
};

inline std::vector<ScriptPhase> deploy_script(const DeployConfig& cfg, double dt = 0.02) {
  const int n = static_cast<int>(std::lround(cfg.phase_seconds / dt));
  return {{"forward", {cfg.forward_speed, 0.0, 0.0}, n},
          {"turn", {cfg.turn_speed, 0.0, cfg.turn_rate}, n},
          {"backward", {-cfg.forward_speed, 0.0, 0.0}, n}};
}

struct PhaseScore {
  std::string name;
  double tracking = 0.0;  // mean over episodes and phase steps; a failed step counts as 0
  int failures = 0;       // episodes that failed during this phase
  bool pass = false;
};

struct DeployRow {
  std::string name;
  ExecutorConfig executor;
  ExecutorMetrics metrics;
  std::vector<PhaseScore> phases;
};

struct DeployResult {
  std::vector<PhaseScore> reference;  // demonstrator on the same script and seeds
  std::vector<DeployRow> rows;
};

namespace detail {

inline void accumulate_phases(const EpisodeRecord& rec, const std::vector<ScriptPhase>& script,
                              std::vector<PhaseScore>& out, int episodes) {
  std::size_t t0 = 0;
  for (std::size_t p = 0; p < script.size(); ++p) {
    const auto n = static_cast<std::size_t>(script[p].steps);
    double sum = 0.0;
    for (std::size_t t = t0; t < std::min(t0 + n, rec.steps()); ++t) sum += rec.tracking[t];
    out[p].tracking += sum / static_cast<double>(n) / episodes;
    if (rec.failed && rec.steps() >= t0 && rec.steps() < t0 + n) ++out[p].failures;
    t0 += n;
  }
}

inline std::vector<PhaseScore> empty_phases(const std::vector<ScriptPhase>& script) {
  std::vector<PhaseScore> v;
  for (const auto& ph : script) v.push_back({ph.name});
  return v;
}

}  // namespace detail

/// Demonstrator phase tracking on the deployment script.
inline std::vector<PhaseScore> demonstrator_reference(const DeployConfig& cfg) {
  const auto script = deploy_script(cfg);
  auto out = detail::empty_phases(script);
  for (int e = 0; e < cfg.episodes; ++e) {
    const std::uint64_t seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(e));
    auto [params, state] = reset(seed, false);
    Demonstrator demo(seed, {}, false);
    EpisodeRecord rec;
    bool alive = true;
    for (const auto& ph : script) {
      state.command = ph.command;
      for (int k = 0; k < ph.steps && alive; ++k) alive = record_step(rec, state, params, demo.act(state, params));
    }
    rec.complete = true;
    detail::accumulate_phases(rec, script, out, cfg.episodes);
  }
  for (auto& p : out) p.pass = p.failures == 0;
  return out;
}

/// Runs A-E over the script. A phase passes when no episode fails in it and
/// its tracking reaches pass_ratio of the demonstrator's.
inline DeployResult run_deploy_ablation(const PriorCheckpoint& prior, const DeployConfig& cfg) {
  if (cfg.episodes < 1) throw InvalidInput("deploy ablation needs at least one episode");
  DeployResult res;
  res.reference = demonstrator_reference(cfg);
  const auto script = deploy_script(cfg);
  for (const auto& v : deploy_variants(cfg.step_cost)) {
    PlannerConfig pc = cfg.planner;
    pc.inference_steps = v.executor.inference_steps;
    const PlanFn fn = make_plan_fn(prior, pc);
    DeployRow row{v.name, v.executor, {}, detail::empty_phases(script)};
    std::vector<TickRecord> ticks;
    std::vector<ReplanRecord> replans;
    for (int e = 0; e < cfg.episodes; ++e) {
      const std::uint64_t seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(e));
      auto [params, state] = reset(seed, false);
      const ClosedLoopResult r = run_closed_loop(params, state, v.executor, fn, script, stream_seed(seed, 0x706c616eULL));
      detail::accumulate_phases(r.record, script, row.phases, cfg.episodes);
      ticks.insert(ticks.end(), r.ticks.begin(), r.ticks.end());
      replans.insert(replans.end(), r.replans.begin(), r.replans.end());
    }
    row.metrics = measure_run(ticks, replans, v.executor.control_period, 1);
    for (std::size_t p = 0; p < row.phases.size(); ++p)
      row.phases[p].pass = row.phases[p].failures == 0 &&
                           row.phases[p].tracking >= cfg.pass_ratio * res.reference[p].tracking;
    res.rows.push_back(std::move(row));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Finetuning: held-out stability before and after interactive training

struct StabilityEval {
  double speed = 0.0;
  int episodes = 0;
  int stable = 0;
  double tracking_error = 0.0;

  [[nodiscard]] double rate() const { return episodes ? static_cast<double>(stable) / episodes : 0.0; }
};

struct FinetuneConfig {
  InteractiveConfig train{};
  std::vector<double> eval_speeds{0.5, 1.0};
  int eval_episodes = 100;
  int eval_steps = 250;
  std::uint64_t eval_seed = 0x686f6c64;  // held out: disjoint from training env seeds
  bool replay_demos = true;              // replay the pretraining demonstrations as anchors
  CollectConfig demos{};
};

/// Randomized environments at a constant forward command.
inline StabilityEval evaluate_stability(const PriorCheckpoint& prior, const PlannerConfig& planner,
                                        const ExecutorConfig& exec, double speed, int episodes, int steps,
                                        std::uint64_t seed) {
  const PlanFn fn = make_plan_fn(prior, planner);
  StabilityEval ev{speed, episodes, 0, 0.0};
  for (int e = 0; e < episodes; ++e) {
    const auto r = planner_episode(fn, exec, stream_seed(seed, static_cast<std::uint64_t>(e)),
                                   Eigen::Vector3d(speed, 0.0, 0.0), steps);
    ev.stable += r.record.failed ? 0 : 1;
    ev.tracking_error += mean_tracking_error(r.record) / episodes;
  }
  return ev;
}

struct FinetuneResult {
  std::vector<IterationStats> curve;
  std::vector<StabilityEval> before;
  std::vector<StabilityEval> after;
};

inline FinetuneResult run_finetune(PriorCheckpoint& prior, const FinetuneConfig& cfg,
                                   const std::function<void(const IterationStats&)>& log = {}) {
  FinetuneResult res;
  auto eval_all = [&] {
    std::vector<StabilityEval> v;
    for (double s : cfg.eval_speeds)
      v.push_back(evaluate_stability(prior, cfg.train.planner, cfg.train.executor, s, cfg.eval_episodes,
                                     cfg.eval_steps, cfg.eval_seed));
    return v;
  };
  res.before = eval_all();
  std::vector<Eigen::VectorXd> anchors;
  if (cfg.replay_demos)
    for (const auto& seg : collect_demos(cfg.demos).dataset.segments) anchors.push_back(normalize(seg, prior.stats).flatten());
  res.curve = train_interactive(prior, cfg.train, {}, anchors);
  if (log)
    for (const auto& s : res.curve) log(s);
  res.after = eval_all();
  return res;
}

// ---------------------------------------------------------------------------
// CSV output. Numbers use a fixed format so reruns are byte-identical.

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) throw InvalidInput("csv row width does not match the header");
    rows.push_back(std::move(row));
  }

  [[nodiscard]] std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += r[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

inline Csv adaptation_csv(const AdaptationResult& r) {
  Csv c{{"objective", "candidates", "reward", "constraint", "penalty", "penalty_se", "plan_penalty", "tracking_ratio",
         "gate", "failures"}, {}};
  for (const auto& cell : r.cells) {
    const auto s = summarize(cell.penalty);
    c.add({cell.objective, std::to_string(cell.candidates), cell.reward ? "1" : "0", cell.constraint ? "1" : "0",
           fmt(s.mean), fmt(s.se), fmt(summarize(cell.plan_penalty).mean), fmt(cell.tracking_ratio),
           cell.gate_ok ? "pass" : "reject", std::to_string(cell.failures)});
  }
  return c;
}

/// Table-shaped view: one row per objective, one column per grid cell.
inline Csv adaptation_table(const AdaptationResult& r) {
  Csv c{{"objective"}, {}};
  std::vector<std::string> labels;
  for (const auto& cell : r.cells) {
    if (std::find(labels.begin(), labels.end(), cell.label()) == labels.end()) labels.push_back(cell.label());
  }
  c.header.insert(c.header.end(), labels.begin(), labels.end());
  std::vector<std::string> objectives;
  for (const auto& cell : r.cells)
    if (std::find(objectives.begin(), objectives.end(), cell.objective) == objectives.end())
      objectives.push_back(cell.objective);
  for (const auto& o : objectives) {
    std::vector<std::string> row{o};
    for (const auto& l : labels) {
      std::string v = "";
      for (const auto& cell : r.cells)
        if (cell.objective == o && cell.label() == l) v = cell.gate_ok ? fmt(summarize(cell.penalty).mean) : "rejected";
      row.push_back(v);
    }
    c.add(std::move(row));
  }
  return c;
}

inline Csv deploy_csv(const DeployResult& r) {
  Csv c{{"config", "margin", "cached_steps", "inference_steps", "refresh", "frequency_hz", "median_latency_ms"}, {}};
  for (const auto& p : r.reference) {
    c.header.push_back(p.name + "_tracking");
    c.header.push_back(p.name + "_pass");
  }
  auto phases = [&](std::vector<std::string>& row, const std::vector<PhaseScore>& ps) {
    for (const auto& p : ps) {
      row.push_back(fmt(p.tracking));
      row.push_back(p.pass ? "pass" : "fail");
    }
  };
  std::vector<std::string> ref{"demonstrator", "", "", "", "", "", ""};
  phases(ref, r.reference);
  c.add(std::move(ref));
  for (const auto& row : r.rows) {
    std::vector<std::string> v{row.name,
                               std::to_string(row.executor.margin),
                               std::to_string(row.executor.cached_steps),
                               std::to_string(row.executor.inference_steps),
                               row.executor.refresh ? "1" : "0",
                               fmt(row.metrics.frequency),
                               fmt(1000.0 * row.metrics.median_latency)};
    phases(v, row.phases);
    c.add(std::move(v));
  }
  return c;
}

inline Csv curve_csv(const std::vector<IterationStats>& curve) {
  Csv c{{"iteration", "mean_return", "stability", "tracking_error", "loss", "temperature"}, {}};
  for (const auto& s : curve)
    c.add({std::to_string(s.iteration), fmt(s.mean_return), fmt(s.stability), fmt(s.tracking_error), fmt(s.loss),
           fmt(s.temperature)});
  return c;
}

inline Csv stability_csv(const FinetuneResult& r) {
  Csv c{{"speed", "episodes", "untuned_stable", "finetuned_stable", "untuned_rate", "finetuned_rate",
         "untuned_tracking_error", "finetuned_tracking_error"}, {}};
  for (std::size_t i = 0; i < r.before.size(); ++i)
    c.add({fmt(r.before[i].speed), std::to_string(r.before[i].episodes), std::to_string(r.before[i].stable),
           std::to_string(r.after[i].stable), fmt(r.before[i].rate()), fmt(r.after[i].rate()),
           fmt(r.before[i].tracking_error), fmt(r.after[i].tracking_error)});
  return c;
}

// ---------------------------------------------------------------------------
// Pre-registered adaptation comparisons

struct AdaptationTest {
  std::string objective;
  std::string name;
  std::string from;
  std::string to;
  double mean_from = 0.0;
  double mean_to = 0.0;
  double p_value = 1.0;
  bool gate_ok = false;  // both cells within the tracking gate

  [[nodiscard]] bool pass(double alpha = 0.05) const { return gate_ok && mean_to < mean_from && p_value < alpha; }
};

inline const AdaptationCell* find_cell(const AdaptationResult& r, const std::string& objective, int n, bool reward,
                                       bool constraint) {
  for (const auto& c : r.cells)
    if (c.objective == objective && c.candidates == n && c.reward == reward && c.constraint == constraint) return &c;
  return nullptr;
}

/// (a) N = 1 -> max N with R and C off; (b) R off -> on at every N with C off.
/// Each is a one-sided paired t-test of a penalty decrease.
inline std::vector<AdaptationTest> adaptation_tests(const AdaptationResult& r) {
  std::vector<std::string> objectives;
  std::vector<int> ns;
  for (const auto& c : r.cells) {
    if (std::find(objectives.begin(), objectives.end(), c.objective) == objectives.end())
      objectives.push_back(c.objective);
    if (std::find(ns.begin(), ns.end(), c.candidates) == ns.end()) ns.push_back(c.candidates);
  }
  std::sort(ns.begin(), ns.end());
  std::vector<AdaptationTest> out;
  auto compare = [&](const std::string& o, const std::string& name, const AdaptationCell* a, const AdaptationCell* b) {
    if (!a || !b) return;
    AdaptationTest t{o, name, a->label(), b->label(), summarize(a->penalty).mean, summarize(b->penalty).mean};
    t.p_value = paired_t_greater(a->penalty, b->penalty);
    t.gate_ok = a->gate_ok && b->gate_ok;
    out.push_back(t);
  };
  for (const auto& o : objectives) {
    if (ns.size() > 1)
      compare(o, "candidates", find_cell(r, o, ns.front(), false, false), find_cell(r, o, ns.back(), false, false));
    for (int n : ns) compare(o, "reward", find_cell(r, o, n, false, false), find_cell(r, o, n, true, false));
  }
  return out;
}

inline Csv adaptation_tests_csv(const std::vector<AdaptationTest>& tests) {
  Csv c{{"objective", "comparison", "from", "to", "mean_from", "mean_to", "p_value", "gate", "result"}, {}};
  for (const auto& t : tests)
    c.add({t.objective, t.name, t.from, t.to, fmt(t.mean_from), fmt(t.mean_to), fmt(t.p_value),
           t.gate_ok ? "pass" : "reject", t.pass() ? "improved" : "not_improved"});
  return c;
}

}  // namespace dmpc
