#pragma once

// Articulated-robot surrogate: J joints under PD control drive a planar base
// through joint speed and fore/aft lean. Posture sets the hidden base height;
// a lateral mass offset rolls a tall, fast-moving base over.
//
// Joint order for J = 4 is FL, FR, RL, RR. Front joints are the first half,
// left joints have even index.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "dmpc/error.hpp"
#include "dmpc/rewards.hpp"
#include "dmpc/rng.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {

struct EnvParams {
  int joints = 4;
  double dt = 0.02;
  double kp = kPdKp;
  double kd = kPdKd;
  Eigen::VectorXd inertia = Eigen::VectorXd::Constant(4, 0.1);
  Eigen::VectorXd damping = Eigen::VectorXd::Constant(4, 0.5);
  double action_bound = 3.0;

  // Base drive.
  double drive_gain = 0.75;  // forward speed per unit mean |qdot| at full lean
  double lean_scale = 0.4;
  double yaw_gain = 0.7;
  double lateral_gain = 0.5;
  double velocity_tau = 0.25;

  // Attitude and height.
  double tilt_rate = 2.0;
  double pitch_lean_gain = 0.3;
  double pitch_mass_gain = 0.5;
  double roll_gain = 100.0;
  double roll_ref_height = 0.2;  // roll coupling acts only above this height
  double height0 = 0.3;
  double height_gain = 0.25;  // height drops as mean q rises
  double nominal_q = 0.8;

  // Failure thresholds.
  double max_tilt = 0.6;
  double min_height = 0.05;

  // Randomized quantities, at nominal values.
  double friction = 1.0;
  double motor_strength = 1.0;
  int latency = 0;
  double base_mass = 2.0;
  Eigen::Vector3d com_offset = Eigen::Vector3d::Zero();
  double nominal_mass = 2.0;

  [[nodiscard]] StateLayout layout() const { return StateLayout{joints}; }
  [[nodiscard]] double traction() const { return 0.5 + 0.5 * friction; }
  [[nodiscard]] double mass_factor() const { return base_mass / nominal_mass; }

  void validate() const {
    if (joints < 2 || joints % 2 != 0) throw InvalidInput("toy env needs an even joint count >= 2");
    if (inertia.size() != joints || damping.size() != joints) throw InvalidInput("per-joint parameters need J entries");
    if (!(inertia.array() > 0.0).all() || !(damping.array() >= 0.0).all())
      throw InvalidInput("inertia must be positive and damping non-negative");
    if (!(dt > 0.0) || !(velocity_tau > 0.0) || !(tilt_rate > 0.0) || !(base_mass > 0.0))
      throw InvalidInput("time constants and mass must be positive");
    if (latency < 0) throw InvalidInput("latency must be >= 0");
  }
};

struct EnvState {
  // Observable.
  double yaw_rate = 0.0;
  Eigen::Vector3d gravity{0.0, 0.0, -1.0};
  Eigen::Vector3d command = Eigen::Vector3d::Zero();  // vx, vy, yaw rate
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;
  Eigen::VectorXd prev_action;
  // Hidden.
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // vx, vy, yaw rate
  double pitch = 0.0;
  double roll = 0.0;
  double height = 0.3;
  int step = 0;
  /// Delayed (q, qdot) pairs; front is the oldest, size latency + 1.
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> history;
};

struct StepInfo {
  double tracking = 0.0;
  double energy = 0.0;  // sum_j |tau_j qdot_j| dt at the pre-step state
  double height = 0.0;  // true post-step height
  bool failed = false;
  std::string reason;
};

inline constexpr double kTrackingSigma = 0.25;

inline double tracking_metric(const Eigen::Vector3d& velocity, const Eigen::Vector3d& command,
                              double sigma = kTrackingSigma) {
  return std::exp(-(velocity - command).squaredNorm() / sigma);
}

inline double tilt_angle(const Eigen::Vector3d& g) { return std::acos(std::clamp(-g.z() / g.norm(), -1.0, 1.0)); }

namespace detail {

inline Eigen::Vector3d gravity_from(double pitch, double roll) {
  return {std::sin(pitch), -std::sin(roll) * std::cos(pitch), -std::cos(roll) * std::cos(pitch)};
}

inline double true_height(const EnvParams& p, const Eigen::VectorXd& q) {
  return p.height0 - p.height_gain * (q.mean() - p.nominal_q) + p.com_offset.z();
}

}  // namespace detail

/// Observation o_t = {v_yaw, g, v_cmd, q, qdot, a_prev} with delayed joints.
inline Eigen::VectorXd observe(const EnvState& s, const EnvParams& p) {
  const StateLayout L = p.layout();
  Eigen::VectorXd o(L.state_dim());
  o(StateLayout::yaw_rate()) = s.yaw_rate;
  o.segment<3>(StateLayout::gravity()) = s.gravity;
  o.segment<3>(StateLayout::command()) = s.command;
  o.segment(L.q(), p.joints) = s.history.front().first;
  o.segment(L.qdot(), p.joints) = s.history.front().second;
  o.segment(L.prev_action(), p.joints) = s.prev_action;
  return o;
}

/// Draws parameters and an initial state. With randomize=false only the
/// initial joint positions vary with the seed.
inline std::pair<EnvParams, EnvState> reset(std::uint64_t seed, bool randomize, EnvParams base = {}) {
  base.validate();
  Rng rng(seed, 0x656e76ULL);
  EnvParams p = base;
  const int J = p.joints;
  if (randomize) {
    p.friction = rng.uniform(0.0, 2.0) * base.friction;
    p.motor_strength = rng.uniform(0.9, 1.1) * base.motor_strength;
    p.latency = rng.uniform_int(0, 2);
    p.base_mass = rng.uniform(0.5, 1.5) * base.base_mass;
    p.com_offset = Eigen::Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.1, 0.1), rng.uniform(-0.05, 0.05));
    for (int j = 0; j < J; ++j) p.inertia(j) = base.inertia(j) * rng.uniform(0.8, 1.2);
  }
  EnvState s;
  s.q.resize(J);
  for (int j = 0; j < J; ++j) s.q(j) = p.nominal_q * rng.uniform(0.5, 1.5);
  s.qdot = Eigen::VectorXd::Zero(J);
  s.prev_action = s.q;
  s.height = detail::true_height(p, s.q);
  s.history.assign(static_cast<std::size_t>(p.latency) + 1, {s.q, s.qdot});
  return {p, s};
}

/// Rest state with q = prev_action = q0 and no motion; used by tests.
inline EnvState rest_state(const EnvParams& p, const Eigen::VectorXd& q0) {
  EnvState s;
  s.q = q0;
  s.qdot = Eigen::VectorXd::Zero(p.joints);
  s.prev_action = q0;
  s.height = detail::true_height(p, q0);
  s.history.assign(static_cast<std::size_t>(p.latency) + 1, {s.q, s.qdot});
  return s;
}

/// One control period. Actions are clipped to the action bound.
inline StepInfo step(EnvState& s, const EnvParams& p, const Eigen::VectorXd& action) {
  const int J = p.joints;
  if (action.size() != J) throw InvalidInput("action has wrong length");
  StepInfo info;
  if (!action.allFinite()) {
    info.failed = true;
    info.reason = "non-finite action";
    return info;
  }
  const Eigen::VectorXd a = action.cwiseMax(-p.action_bound).cwiseMin(p.action_bound);
  const Eigen::ArrayXd tau = p.motor_strength * (p.kp * (a - s.q).array() - p.kd * s.qdot.array());
  info.energy = (tau * s.qdot.array()).abs().sum() * p.dt;

  s.qdot.array() += p.dt * (tau - p.damping.array() * s.qdot.array()) / p.inertia.array();
  s.q += p.dt * s.qdot;

  const int half = J / 2;
  const double speed = s.qdot.cwiseAbs().mean();
  const double lean = s.q.head(half).mean() - s.q.tail(half).mean();
  double left = 0.0, right = 0.0;
  for (int j = 0; j < J; ++j) (j % 2 == 0 ? left : right) += std::abs(s.qdot(j)) / half;

  const double k_v = p.dt / p.velocity_tau;
  const double vx_target = p.drive_gain * p.traction() * speed * std::tanh(lean / p.lean_scale) / p.mass_factor();
  const double wz_target = p.yaw_gain * p.traction() * (right - left) / p.mass_factor();
  const double vy_target = p.lateral_gain * std::sin(s.roll);
  s.velocity += k_v * (Eigen::Vector3d(vx_target, vy_target, wz_target) - s.velocity);
  s.yaw_rate = s.velocity.z();

  s.height = detail::true_height(p, s.q);
  const double k_t = p.dt * p.tilt_rate;
  const double pitch_target = p.pitch_lean_gain * lean + p.pitch_mass_gain * p.com_offset.x();
  const double roll_target =
      p.roll_gain * std::max(0.0, s.height - p.roll_ref_height) * std::abs(s.velocity.x()) * p.com_offset.y() * p.base_mass;
  s.pitch += k_t * (pitch_target - s.pitch);
  s.roll += k_t * (roll_target - s.roll);
  s.gravity = detail::gravity_from(s.pitch, s.roll);

  s.prev_action = a;
  s.history.emplace_back(s.q, s.qdot);
  while (static_cast<int>(s.history.size()) > p.latency + 1) s.history.pop_front();
  s.step += 1;

  info.tracking = tracking_metric(s.velocity, s.command);
  info.height = s.height;
  if (!s.q.allFinite() || !s.qdot.allFinite() || !s.velocity.allFinite()) {
    info.failed = true;
    info.reason = "non-finite state";
  } else if (tilt_angle(s.gravity) > p.max_tilt) {
    info.failed = true;
    info.reason = "tilt";
  } else if (s.height < p.min_height) {
    info.failed = true;
    info.reason = "height";
  }
  return info;
}

// ---------------------------------------------------------------------------
// Episodes and returns

struct EpisodeRecord {
  std::vector<Eigen::VectorXd> observations;  // o_t before action t
  std::vector<Eigen::VectorXd> actions;
  std::vector<Eigen::Vector3d> commands;
  std::vector<double> tracking;
  std::vector<double> energy;
  std::vector<double> height;
  bool failed = false;
  std::string reason;
  bool complete = false;

  [[nodiscard]] std::size_t steps() const { return actions.size(); }

  void validate() const {
    const auto n = actions.size();
    if (observations.size() != n || commands.size() != n || tracking.size() != n || energy.size() != n ||
        height.size() != n)
      throw InvalidInput("episode record lengths disagree");
    if (!complete) throw InvalidInput("episode record is incomplete");
  }

  /// Per-step (state, action) samples for windowing.
  [[nodiscard]] std::vector<StepSample> samples() const {
    std::vector<StepSample> out;
    out.reserve(actions.size());
    for (std::size_t t = 0; t < actions.size(); ++t) out.push_back({observations[t], actions[t]});
    return out;
  }
};

/// Scoring of a finished episode from true quantities.
struct ReturnTask {
  double energy_weight = 0.0;
  double height_weight = 0.0;
  double height_target = 0.0;
};

inline double realized_return(const EpisodeRecord& r, const ReturnTask& task = {}) {
  r.validate();
  double total = 0.0;
  for (std::size_t t = 0; t < r.steps(); ++t) {
    total += r.tracking[t] - task.energy_weight * r.energy[t];
    if (task.height_weight != 0.0) {
      const double e = r.height[t] - task.height_target;
      total -= task.height_weight * e * e;
    }
  }
  return total;
}

/// Appends one step to the record; returns false once the episode ends.
inline bool record_step(EpisodeRecord& rec, EnvState& s, const EnvParams& p, const Eigen::VectorXd& action) {
  rec.observations.push_back(observe(s, p));
  rec.commands.push_back(s.command);
  const StepInfo info = step(s, p, action);
  rec.actions.push_back(s.prev_action);
  rec.tracking.push_back(info.tracking);
  rec.energy.push_back(info.energy);
  rec.height.push_back(info.height);
  if (info.failed) {
    rec.failed = true;
    rec.reason = info.reason;
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Scripted demonstrator

struct DemonstratorConfig {
  double frequency = 2.0;
  double tall_bias = 0.8;
  double crouch_bias = 1.4;
  double lean = 0.2;
  double posture_rate = 0.05;  // per-step relaxation toward the mode bias
  double switch_prob = 0.01;   // per-step posture mode switch
  double amp_speed = 0.28;
  double amp_yaw = 0.15;
  double amp_feedback = 0.3;
  double max_amp = 0.6;
  double yaw_ff = 0.4;
  double yaw_fb = 0.5;
  double max_asym = 0.8;
  double noise = 0.02;
};

/// Trot gait: diagonal pairs (FL, RR) and (FR, RL) in antiphase. Amplitude
/// follows the command plus a proportional correction on the true speed.
class Demonstrator {
 public:
  Demonstrator(std::uint64_t seed, DemonstratorConfig cfg = {}, bool start_crouched = false)
      : cfg_(cfg), rng_(seed, 0x64656d6fULL), crouched_(start_crouched) {}

  [[nodiscard]] bool crouched() const { return crouched_; }
  void set_crouched(bool c) { crouched_ = c; }

  Eigen::VectorXd act(const EnvState& s, const EnvParams& p) {
    const int J = p.joints;
    if (std::isnan(bias_)) bias_ = s.q.mean();  // relax from the current posture
    if (cfg_.switch_prob > 0.0 && rng_.uniform(0.0, 1.0) < cfg_.switch_prob) crouched_ = !crouched_;
    bias_ += cfg_.posture_rate * ((crouched_ ? cfg_.crouch_bias : cfg_.tall_bias) - bias_);

    const double vx_cmd = s.command.x(), yaw_cmd = s.command.z();
    const double dir = vx_cmd > 0.0 ? 1.0 : (vx_cmd < 0.0 ? -1.0 : 0.0);
    double amp = cfg_.amp_speed * std::abs(vx_cmd) + cfg_.amp_yaw * std::abs(yaw_cmd) +
                 cfg_.amp_feedback * (std::abs(vx_cmd) - dir * s.velocity.x());
    amp = std::clamp(amp, 0.0, cfg_.max_amp);
    const double asym =
        std::clamp(cfg_.yaw_ff * yaw_cmd + cfg_.yaw_fb * (yaw_cmd - s.velocity.z()), -cfg_.max_asym, cfg_.max_asym);

    const double t = s.step * p.dt;
    const double phase = 2.0 * std::numbers::pi * cfg_.frequency * t;
    const int half = J / 2;
    Eigen::VectorXd a(J);
    for (int j = 0; j < J; ++j) {
      const bool front = j < half;
      const bool left = j % 2 == 0;
      const bool diag = (j % 2) == (front ? 0 : 1);  // FL and RR share phase
      const double side = left ? 1.0 - asym : 1.0 + asym;
      const double lean = (front ? 0.5 : -0.5) * cfg_.lean * dir;
      a(j) = side * amp * std::sin(phase + (diag ? 0.0 : std::numbers::pi)) + bias_ + lean +
             cfg_.noise * rng_.normal();
    }
    return a;
  }

 private:
  DemonstratorConfig cfg_;
  Rng rng_;
  bool crouched_;
  double bias_ = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace dmpc
