#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dmpc/checkpoint.hpp"
#include "dmpc/diffusion.hpp"
#include "dmpc/error.hpp"
#include "dmpc/executor.hpp"
#include "dmpc/policy.hpp"
#include "dmpc/rng.hpp"
#include "dmpc/toy_env.hpp"

namespace dmpc {

/// w_i = exp((R_i - max R) / T). The max shift only rescales the weights,
/// which the normalization below cancels.
inline std::vector<double> compute_weights(std::span<const double> returns, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidInput("temperature must be finite and > 0");
  if (returns.empty()) return {};
  double mx = -std::numeric_limits<double>::infinity();
  for (double r : returns) {
    if (!std::isfinite(r)) throw InvalidInput("returns must be finite");
    mx = std::max(mx, r);
  }
  std::vector<double> w;
  w.reserve(returns.size());
  for (double r : returns) w.push_back(std::exp((r - mx) / temperature));
  return w;
}

/// Keeps the K largest weights (earliest index wins ties), zeroes the rest
/// and divides by the mean over the whole batch.
inline std::vector<double> topk_normalize(std::span<const double> weights, int keep) {
  const int n = static_cast<int>(weights.size());
  if (n == 0) throw InvalidInput("no weights to normalize");
  if (keep < 1 || keep > n) throw InvalidInput("top-K count must satisfy 1 <= K <= batch");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return weights[static_cast<std::size_t>(a)] > weights[static_cast<std::size_t>(b)];
  });
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  double sum = 0.0;
  for (int i = 0; i < keep; ++i) {
    const auto j = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    out[j] = weights[j];
    sum += weights[j];
  }
  if (!(sum > 0.0)) throw NumericalError("top-K weights sum to zero");
  const double mean = sum / n;
  for (double& w : out) w /= mean;
  return out;
}

/// Linear-interpolated quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw InsufficientData("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Interquartile range with a floor so identical returns still give T > 0.
inline double iqr_temperature(std::span<const double> returns, double floor = 1e-6) {
  std::vector<double> v(returns.begin(), returns.end());
  return std::max(quantile(v, 0.75) - quantile(v, 0.25), floor);
}

// ---------------------------------------------------------------------------

struct ReplayEntry {
  Eigen::VectorXd x0;  // normalized, flattened
  double ret = 0.0;
  int iteration = 0;   // source tag: the iteration that produced it
};

/// Ring buffer; the oldest entry is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidInput("replay capacity must be positive");
  }

  void push(ReplayEntry e) {
    if (!std::isfinite(e.ret)) throw InvalidInput("replay entries need a finite return");
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(e));
    } else {
      entries_[head_] = std::move(e);
      head_ = (head_ + 1) % capacity_;
    }
  }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] const std::vector<ReplayEntry>& entries() const { return entries_; }

  /// round(rho * batch) entries from iteration `fresh_iteration`, the rest
  /// from older iterations; either side falls back to the other when empty.
  [[nodiscard]] std::vector<const ReplayEntry*> sample(int batch, double rho, int fresh_iteration, Rng& rng) const {
    if (entries_.empty()) throw InsufficientData("replay buffer is empty");
    if (batch < 1 || !(rho >= 0.0 && rho <= 1.0)) throw InvalidInput("bad replay sample request");
    std::vector<const ReplayEntry*> fresh, old;
    for (const auto& e : entries_) (e.iteration == fresh_iteration ? fresh : old).push_back(&e);
    int n_fresh = static_cast<int>(std::lround(rho * batch));
    if (fresh.empty()) n_fresh = 0;
    if (old.empty()) n_fresh = batch;
    std::vector<const ReplayEntry*> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      const auto& pool = i < n_fresh ? fresh : old;
      out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<ReplayEntry> entries_;
};

// ---------------------------------------------------------------------------

struct WeightingConfig {
  double temperature = 0.0;  // <= 0: interquartile range of the returns in the batch
  int keep = 0;              // <= 0: ceil(batch / 4)
  int batch = 64;
  double fresh_ratio = 0.5;

  [[nodiscard]] int keep_for(int n) const { return keep > 0 ? std::min(keep, n) : (n + 3) / 4; }
};

struct RwdStep {
  LossResult result;
  double temperature = 0.0;
  std::vector<double> weights;
};

/// Reward-weighted denoising loss and exact gradients on a prepared batch.
inline RwdStep rwd_loss(const Denoiser& model, std::span<const DenoisingSample> batch, std::span<const double> returns,
                        const NoiseSchedule& s, const WeightingConfig& cfg) {
  if (batch.size() != returns.size() || batch.empty()) throw InvalidInput("rwd batch needs one return per trajectory");
  RwdStep out;
  out.temperature = cfg.temperature > 0.0 ? cfg.temperature : iqr_temperature(returns);
  const int n = static_cast<int>(batch.size());
  out.weights = topk_normalize(compute_weights(returns, out.temperature), cfg.keep_for(n));
  out.result = training_loss(model, batch, s, out.weights);
  if (!std::isfinite(out.result.loss)) throw NumericalError("non-finite reward-weighted loss");
  return out;
}

/// One optimizer step of the reward-weighted objective on (x0, R_r) pairs.
/// `anchor` segments join the batch with weight 1 (plain denoising); the
/// returns-based weights cover only the (x0, R_r) part.
inline RwdStep rwd_update(Denoiser& model, std::span<const Eigen::VectorXd> x0, std::span<const double> returns,
                          const NoiseSchedule& s, const WeightingConfig& cfg, AdamState& adam, Rng& rng,
                          int clean_prefix = 0, std::span<const Eigen::VectorXd> anchor = {}) {
  if (x0.size() != returns.size() || x0.empty()) throw InvalidInput("rwd batch needs one return per trajectory");
  std::vector<DenoisingSample> batch(x0.size() + anchor.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].x0 = i < x0.size() ? x0[i] : anchor[i - x0.size()];
    batch[i].level = rng.uniform_int(1, s.levels());
    batch[i].eps = rng.normal_matrix(batch[i].x0.size(), 1).col(0);
    batch[i].clean_prefix = clean_prefix;
  }
  if (!anchor.empty()) {
    RwdStep out;
    out.temperature = cfg.temperature > 0.0 ? cfg.temperature : iqr_temperature(returns);
    out.weights = topk_normalize(compute_weights(returns, out.temperature), cfg.keep_for(static_cast<int>(x0.size())));
    out.weights.resize(batch.size(), 1.0);
    out.result = training_loss(model, batch, s, out.weights);
    if (!std::isfinite(out.result.loss)) throw NumericalError("non-finite reward-weighted loss");
    if (!adam_step(model.net().mutable_params(), out.result.grads, adam)) throw NumericalError("non-finite rwd gradient");
    return out;
  }
  RwdStep out = rwd_loss(model, batch, returns, s, cfg);
  if (!adam_step(model.net().mutable_params(), out.result.grads, adam)) throw NumericalError("non-finite rwd gradient");
  return out;
}

// ---------------------------------------------------------------------------

struct InteractiveConfig {
  int iterations = 200;
  int episodes_per_iteration = 8;
  int episode_steps = 150;
  int updates_per_iteration = 8;
  int window_stride = 2;
  std::size_t capacity = 10000;
  double lr = 1e-4;
  double min_speed = 0.5;  // |vx| commands drawn from [min_speed, max_speed]
  double max_speed = 1.0;
  bool uniform_weights = false;  // null control: w = 1 for every sample
  double anchor_share = 0.5;     // replayed share of a batch drawn from the anchor pool, when one is given
  int temperature_window = 4;    // iterations of episode returns behind the IQR temperature
  WeightingConfig weighting{};
  ExecutorConfig executor{.margin = 3, .cached_steps = 0};
  PlannerConfig planner{};
  std::uint64_t seed = 0;
};

struct IterationStats {
  int iteration = 0;
  double mean_return = 0.0;
  double stability = 0.0;
  double tracking_error = 0.0;  // mean |v - v_cmd| over executed steps
  double loss = 0.0;
  double temperature = 0.0;
};

/// One randomized episode driven by the planner at a constant command.
inline ClosedLoopResult planner_episode(const PlanFn& fn, const ExecutorConfig& exec, std::uint64_t env_seed,
                                        const Eigen::Vector3d& command, int steps, bool randomize = true) {
  auto [params, state] = reset(env_seed, randomize);
  return run_closed_loop(params, state, exec, fn, {{"run", command, steps}}, stream_seed(env_seed, 0x706c616eULL));
}

/// Mean |v - v_cmd| recovered from the per-step tracking metric.
inline double mean_tracking_error(const EpisodeRecord& rec) {
  if (rec.steps() == 0) return 0.0;
  double e = 0.0;
  for (double tr : rec.tracking) e += std::sqrt(-std::log(std::max(tr, 1e-300)) * kTrackingSigma);
  return e / static_cast<double>(rec.steps());
}

/// Roll out, weight by realized return, filter, and update the prior in place.
/// `anchor_pool` holds previously collected segments (normalized, flattened)
/// that are replayed alongside the rollouts with weight 1.
inline std::vector<IterationStats> train_interactive(PriorCheckpoint& prior, const InteractiveConfig& cfg,
                                                     const ReturnTask& task = {},
                                                     std::span<const Eigen::VectorXd> anchor_pool = {}) {
  const PlanFn fn = make_plan_fn(prior, cfg.planner);
  ReplayBuffer buffer(cfg.capacity);
  AdamState adam = AdamState::for_params(prior.model.net().params(), cfg.lr);
  Rng rng(cfg.seed, 0x66696e65ULL);
  const int H = prior.model.horizon();
  std::deque<std::vector<double>> recent;
  WeightingConfig wcfg = cfg.weighting;
  if (cfg.uniform_weights) wcfg.keep = wcfg.batch;
  std::vector<IterationStats> curve;
  for (int it = 0; it < cfg.iterations; ++it) {
    IterationStats st;
    st.iteration = it;
    for (int e = 0; e < cfg.episodes_per_iteration; ++e) {
      const std::uint64_t env_seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(it * 1000 + e));
      Rng cmd_rng(env_seed, 0x636d64ULL);
      const double speed = cmd_rng.uniform(cfg.min_speed, cfg.max_speed) * (cmd_rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
      const auto res = planner_episode(fn, cfg.executor, env_seed, Eigen::Vector3d(speed, 0.0, 0.0), cfg.episode_steps);
      const double ret = realized_return(res.record, task);
      if (e == 0) recent.emplace_back();
      recent.back().push_back(ret);
      st.mean_return += ret / cfg.episodes_per_iteration;
      st.stability += (res.record.failed ? 0.0 : 1.0) / cfg.episodes_per_iteration;
      st.tracking_error += mean_tracking_error(res.record) / cfg.episodes_per_iteration;
      if (static_cast<int>(res.record.steps()) < H) continue;
      const auto samples = res.record.samples();
      for (auto& seg : window_rollout(samples, H, cfg.window_stride))
        buffer.push({normalize(seg, prior.stats).flatten(), cfg.uniform_weights ? 0.0 : ret, it});
    }
    while (static_cast<int>(recent.size()) > std::max(cfg.temperature_window, 1)) recent.pop_front();
    if (cfg.weighting.temperature <= 0.0) {
      std::vector<double> pool;
      for (const auto& r : recent) pool.insert(pool.end(), r.begin(), r.end());
      wcfg.temperature = iqr_temperature(pool);
    }
    if (buffer.size() > 0) {
      for (int u = 0; u < cfg.updates_per_iteration; ++u) {
        const int batch = cfg.weighting.batch;
        const int n_anchor =
            anchor_pool.empty()
                ? 0
                : std::min(batch - 1, static_cast<int>(std::lround((1.0 - cfg.weighting.fresh_ratio) * batch *
                                                                    cfg.anchor_share)));
        const auto picks = buffer.sample(batch - n_anchor, std::min(1.0, cfg.weighting.fresh_ratio * batch / (batch - n_anchor)), it, rng);
        std::vector<Eigen::VectorXd> x0, anchor;
        std::vector<double> rets;
        for (const auto* p : picks) {
          x0.push_back(p->x0);
          rets.push_back(p->ret);
        }
        for (int a = 0; a < n_anchor; ++a)
          anchor.push_back(anchor_pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(anchor_pool.size()) - 1))]);
        const auto step =
            rwd_update(prior.model, x0, rets, prior.schedule, wcfg, adam, rng, prior.clean_prefix, anchor);
        st.loss += step.result.loss / cfg.updates_per_iteration;
        st.temperature += step.temperature / cfg.updates_per_iteration;
      }
    }
    curve.push_back(st);
  }
  return curve;
}

}  // namespace dmpc
