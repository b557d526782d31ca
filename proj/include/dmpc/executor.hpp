#pragma once

// Receding-horizon execution on a virtual clock. A replan requested at tick
// t_r from observation o_{t_r} becomes ready after its modeled compute time;
// with margin D > 0 it is installed at t_r + D starting at column D, so every
// applied column j of a plan is applied at t_r + j. With D = 0 the control
// loop blocks while planning and the env holds the last action.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dmpc/error.hpp"
#include "dmpc/planner.hpp"
#include "dmpc/rewards.hpp"
#include "dmpc/rng.hpp"
#include "dmpc/toy_env.hpp"

namespace dmpc {

struct ExecutorConfig {
  int horizon = 11;
  int margin = 3;          // D
  int cached_steps = 7;    // m
  int inference_steps = 10;
  bool refresh = true;
  int refresh_period = 10;  // R_reset, in replans
  bool refresh_on_command_change = true;
  double control_period = 0.02;
  double step_cost = 0.005;  // modeled seconds per reverse step

  void validate() const {
    if (horizon < 2) throw InvalidInput("executor horizon must be >= 2");
    if (margin < 0 || margin >= horizon) throw InvalidInput("replan margin must satisfy 0 <= D < H");
    if (cached_steps < 0 || cached_steps >= inference_steps) throw InvalidInput("cached steps must satisfy 0 <= m < n");
    if (refresh_period < 1) throw InvalidInput("refresh period must be >= 1");
    if (!(control_period > 0.0) || !(step_cost >= 0.0)) throw InvalidInput("executor timing must be positive");
  }
};

struct PlanRequest {
  Eigen::VectorXd observation;
  std::optional<WarmStart> warm;
  std::uint64_t seed = 0;
};

struct PlanOutput {
  Eigen::MatrixXd plan;              // physical rows x H
  Eigen::MatrixXd clean_normalized;  // normalized rows x H, the warm-start cache
  int reverse_steps = 0;
  int action_dim = 0;

  [[nodiscard]] Eigen::VectorXd action(int col) const { return plan.col(col).tail(action_dim); }
};

using PlanFn = std::function<PlanOutput(const PlanRequest&)>;

/// Shifts the cached clean plan left by `shift` columns and repeats the last
/// column into the tail; a fully consumed plan becomes its last column
/// repeated. Returns nothing without a cache or when m = 0.
inline std::optional<WarmStart> warm_start(const std::optional<Eigen::MatrixXd>& cache, int shift, int inference_steps,
                                           int cached_steps) {
  if (cached_steps < 0 || cached_steps >= inference_steps) throw InvalidInput("cached steps must satisfy 0 <= m < n");
  if (!cache || cached_steps == 0 || shift < 0 || cache->cols() < 1) return std::nullopt;
  const auto H = static_cast<int>(cache->cols());
  shift = std::min(shift, H);
  WarmStart w;
  w.clean.resize(cache->rows(), H);
  w.clean.leftCols(H - shift) = cache->rightCols(H - shift);
  for (int c = H - shift; c < H; ++c) w.clean.col(c) = cache->col(H - 1);
  w.start_level = inference_steps - cached_steps;
  return w;
}

struct RefreshState {
  int replans = 0;
};

/// Counts one replan and decides whether it runs the full chain.
inline bool maybe_refresh(RefreshState& st, const ExecutorConfig& cfg, bool command_changed) {
  st.replans += 1;
  if (!cfg.refresh) return false;
  if (command_changed && cfg.refresh_on_command_change) return true;
  return st.replans % cfg.refresh_period == 0;
}

struct ReplanRecord {
  int request_tick = 0;
  int install_tick = 0;
  int offset = 0;
  bool warm = false;
  bool refresh = false;
  bool deadline_miss = false;
  int reverse_steps = 0;
  double latency = 0.0;  // seconds
};

struct TickRecord {
  int tick = 0;
  Eigen::VectorXd action;
  bool fresh = false;     // a new plan column, not a held action
  int plan_id = -1;       // index into replans; -1 for the initial plan
  int column = -1;
  int source_tick = -1;   // observation tick the column was planned from
};

struct ExecutorMetrics {
  double frequency = 0.0;       // fresh actions per second
  double median_latency = 0.0;  // seconds, refresh replans excluded
  int replans = 0;
  int deadline_misses = 0;
};

/// Achieved fresh-action frequency and median non-refresh replan latency.
inline ExecutorMetrics measure_run(const std::vector<TickRecord>& ticks, const std::vector<ReplanRecord>& replans,
                                   double control_period, int min_replans = 50) {
  if (static_cast<int>(replans.size()) < min_replans)
    throw InsufficientData("executor metrics need at least " + std::to_string(min_replans) + " replans");
  ExecutorMetrics m;
  m.replans = static_cast<int>(replans.size());
  int fresh = 0;
  for (const auto& r : ticks) fresh += r.fresh ? 1 : 0;
  m.frequency = static_cast<double>(fresh) / (static_cast<double>(ticks.size()) * control_period);
  std::vector<double> lat;
  for (const auto& r : replans) {
    if (!r.refresh) lat.push_back(r.latency);
    m.deadline_misses += r.deadline_miss ? 1 : 0;
  }
  if (lat.empty())
    for (const auto& r : replans) lat.push_back(r.latency);
  std::sort(lat.begin(), lat.end());
  const std::size_t n = lat.size();
  m.median_latency = n % 2 ? lat[n / 2] : 0.5 * (lat[n / 2 - 1] + lat[n / 2]);
  return m;
}

/// Single-slot mailbox with replace semantics served by one worker thread.
class PlannerWorker {
 public:
  explicit PlannerWorker(PlanFn fn) : fn_(std::move(fn)), thread_([this] { run(); }) {}
  PlannerWorker(const PlannerWorker&) = delete;
  PlannerWorker& operator=(const PlannerWorker&) = delete;
  ~PlannerWorker() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
  }

  void submit(PlanRequest req) {
    {
      std::lock_guard lock(mu_);
      request_ = std::move(req);
      result_.reset();
      error_ = nullptr;
    }
    cv_.notify_all();
  }

  PlanOutput wait() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return result_.has_value() || error_ != nullptr; });
    if (error_) std::rethrow_exception(error_);
    PlanOutput out = std::move(*result_);
    result_.reset();
    return out;
  }

 private:
  void run() {
    std::unique_lock lock(mu_);
    while (true) {
      cv_.wait(lock, [this] { return stop_ || request_.has_value(); });
      if (stop_) return;
      PlanRequest req = std::move(*request_);
      request_.reset();
      lock.unlock();
      std::optional<PlanOutput> out;
      std::exception_ptr err;
      try {
        out = fn_(req);
      } catch (...) {
        err = std::current_exception();
      }
      lock.lock();
      if (!request_) {  // a newer request replaces this result
        result_ = std::move(out);
        error_ = err;
      }
      cv_.notify_all();
    }
  }

  PlanFn fn_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::optional<PlanRequest> request_;
  std::optional<PlanOutput> result_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread thread_;
};

class Executor {
 public:
  Executor(ExecutorConfig cfg, PlanFn fn, std::uint64_t seed, bool threaded = false)
      : cfg_(cfg), fn_(std::move(fn)), seed_(seed) {
    cfg_.validate();
    if (threaded) worker_ = std::make_unique<PlannerWorker>(fn_);
  }

  [[nodiscard]] const ExecutorConfig& config() const { return cfg_; }
  [[nodiscard]] const std::vector<ReplanRecord>& replans() const { return replans_; }
  [[nodiscard]] const std::vector<TickRecord>& ticks() const { return ticks_; }
  [[nodiscard]] const PlanOutput& current_plan() const { return plan_; }
  [[nodiscard]] int current_column() const { return index_ - 1; }

  /// Cold plan from the initial observation, installed at column 0 of tick `t`.
  void start(const Eigen::VectorXd& obs, int t = 0) {
    PlanRequest req{obs, std::nullopt, stream_seed(seed_, 0)};
    plan_ = fn_(req);
    check_plan(plan_);
    plan_id_ = -1;
    plan_tick_ = t;
    index_ = 0;
    last_command_ = command_of(obs);
    cache_ = plan_.clean_normalized;
    cache_tick_ = t;
    last_action_ = plan_.action(0);
    started_ = true;
  }

  /// Action to apply at tick `t` given the latest observation.
  Eigen::VectorXd tick(int t, const Eigen::VectorXd& obs) {
    if (!started_) throw InvalidInput("executor not started");
    const int H = cfg_.horizon, D = cfg_.margin;
    if (pending_ && t == pending_->install_tick) install(t);
    if (!pending_ && index_ == H - D) {
      request(t, obs);
      if (pending_ && t == pending_->install_tick) install(t);
    }
    TickRecord rec;
    rec.tick = t;
    if (index_ < H && !(pending_ && D == 0)) {
      rec.action = plan_.action(index_);
      rec.fresh = true;
      rec.plan_id = plan_id_;
      rec.column = index_;
      rec.source_tick = plan_tick_;
      ++index_;
      last_action_ = rec.action;
    } else {
      rec.action = last_action_;
    }
    ticks_.push_back(rec);
    return rec.action;
  }

  [[nodiscard]] ExecutorMetrics measure(int min_replans = 50) const {
    return measure_run(ticks_, replans_, cfg_.control_period, min_replans);
  }

 private:
  struct Pending {
    int request_tick = 0;
    int install_tick = 0;
    int record = 0;
    std::optional<PlanOutput> output;  // virtual mode only
  };

  static Eigen::Vector3d command_of(const Eigen::VectorXd& obs) {
    return obs.segment<3>(StateLayout::command());
  }

  void check_plan(const PlanOutput& p) const {
    if (p.plan.cols() != cfg_.horizon || p.clean_normalized.cols() != cfg_.horizon || p.action_dim < 1)
      throw InvalidInput("planner output does not match the executor horizon");
  }

  void request(int t, const Eigen::VectorXd& obs) {
    const Eigen::Vector3d cmd = command_of(obs);
    const bool changed = cmd != last_command_;
    last_command_ = cmd;
    ReplanRecord rec;
    rec.request_tick = t;
    rec.refresh = maybe_refresh(refresh_, cfg_, changed);
    PlanRequest req;
    req.observation = obs;
    req.seed = stream_seed(seed_, static_cast<std::uint64_t>(replans_.size()) + 1);
    if (!rec.refresh) req.warm = warm_start(cache_, t - cache_tick_, cfg_.inference_steps, cfg_.cached_steps);
    rec.warm = req.warm.has_value();
    // The step count is known before planning, which keeps the virtual clock
    // independent of when a threaded worker finishes.
    rec.reverse_steps = rec.warm ? cfg_.inference_steps - cfg_.cached_steps : cfg_.inference_steps;
    const double compute = rec.reverse_steps * cfg_.step_cost;
    const int compute_ticks = static_cast<int>(std::ceil(compute / cfg_.control_period - 1e-9));
    Pending p;
    p.request_tick = t;
    if (cfg_.margin == 0) {
      rec.latency = compute_ticks * cfg_.control_period;
      p.install_tick = t + compute_ticks;
    } else {
      rec.latency = compute;
      rec.deadline_miss = compute_ticks > cfg_.margin;
      p.install_tick = t + std::max(cfg_.margin, compute_ticks);
    }
    if (worker_)
      worker_->submit(std::move(req));
    else
      p.output = fn_(req);
    p.record = static_cast<int>(replans_.size());
    replans_.push_back(rec);
    pending_ = std::move(p);
  }

  void install(int t) {
    PlanOutput out = worker_ ? worker_->wait() : std::move(*pending_->output);
    check_plan(out);
    auto& rec = replans_[static_cast<std::size_t>(pending_->record)];
    if (out.reverse_steps != rec.reverse_steps) throw InvalidInput("planner ran an unexpected number of reverse steps");
    const int offset = cfg_.margin == 0 ? 0 : std::min(t - pending_->request_tick, cfg_.horizon - 1);
    rec.install_tick = t;
    rec.offset = offset;
    plan_ = std::move(out);
    plan_id_ = pending_->record;
    plan_tick_ = cfg_.margin == 0 ? t : pending_->request_tick;
    index_ = offset;
    cache_ = plan_.clean_normalized;
    cache_tick_ = plan_tick_;
    pending_.reset();
  }

  ExecutorConfig cfg_;
  PlanFn fn_;
  std::uint64_t seed_;
  std::unique_ptr<PlannerWorker> worker_;
  bool started_ = false;

  PlanOutput plan_;
  int plan_id_ = -1;
  int plan_tick_ = 0;
  int index_ = 0;
  Eigen::VectorXd last_action_;
  Eigen::Vector3d last_command_ = Eigen::Vector3d::Zero();
  std::optional<Eigen::MatrixXd> cache_;
  int cache_tick_ = 0;
  RefreshState refresh_;
  std::optional<Pending> pending_;
  std::vector<ReplanRecord> replans_;
  std::vector<TickRecord> ticks_;
};

// ---------------------------------------------------------------------------
// Closed-loop episodes

struct ScriptPhase {
  std::string name;
  Eigen::Vector3d command = Eigen::Vector3d::Zero();
  int steps = 0;
};

struct ClosedLoopResult {
  EpisodeRecord record;
  Eigen::MatrixXd executed;  // plan column applied at each tick (rows x T)
  std::vector<TickRecord> ticks;
  std::vector<ReplanRecord> replans;
};

/// Runs `script` (command per phase) until it ends or the env fails.
inline ClosedLoopResult run_closed_loop(EnvParams params, EnvState state, const ExecutorConfig& cfg, const PlanFn& fn,
                                        const std::vector<ScriptPhase>& script, std::uint64_t seed,
                                        bool threaded = false) {
  if (script.empty()) throw InvalidInput("closed-loop script is empty");
  Executor ex(cfg, fn, seed, threaded);
  ClosedLoopResult res;
  std::vector<Eigen::VectorXd> cols;
  state.command = script.front().command;
  ex.start(observe(state, params), 0);
  int t = 0;
  bool alive = true;
  for (const auto& ph : script) {
    state.command = ph.command;
    for (int k = 0; k < ph.steps && alive; ++k, ++t) {
      const Eigen::VectorXd a = ex.tick(t, observe(state, params));
      const auto& rec = ex.ticks().back();
      cols.push_back(ex.current_plan().plan.col(rec.fresh ? rec.column : std::max(ex.current_column(), 0)));
      alive = record_step(res.record, state, params, a);
    }
    if (!alive) break;
  }
  res.record.complete = true;
  res.executed.resize(cols.empty() ? 0 : cols.front().size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) res.executed.col(static_cast<Eigen::Index>(i)) = cols[i];
  res.ticks = ex.ticks();
  res.replans = ex.replans();
  return res;
}

}  // namespace dmpc
