#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dmpc/constraints.hpp"
#include "dmpc/diffusion.hpp"
#include "dmpc/error.hpp"
#include "dmpc/rewards.hpp"
#include "dmpc/rng.hpp"
#include "dmpc/schedule.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {

/// Coordinates in which the guidance covariance is isotropic.
///  kNormalized: sigma_k^2 I in normalized coordinates, i.e. the physical
///               update is scaled per row by scale^2.
///  kPhysical:   sigma_k^2 I applied directly to physical coordinates.
enum class GuidanceSpace { kNormalized, kPhysical };

struct PlannerConfig {
  int candidates = 1;
  double lambda = 0.0;
  /// Per-level multiplier eta_k indexed by level (size levels()+1); empty
  /// means 1 everywhere.
  std::vector<double> eta;
  int inference_steps = 10;
  RewardSpec spec;
  ConstraintSet constraints;
  GuidanceSpace space = GuidanceSpace::kNormalized;
  Sampler sampler = Sampler::kDdpm;

  void validate() const {
    if (candidates < 1) throw InvalidInput("planner needs at least one candidate");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInput("planner lambda must be finite and >= 0");
    if (inference_steps < 1) throw InvalidInput("planner needs at least one inference step");
    if (!eta.empty() && static_cast<int>(eta.size()) != inference_steps + 1)
      throw InvalidInput("eta needs one entry per level");
  }

  [[nodiscard]] double eta_at(int level) const { return eta.empty() ? 1.0 : eta[static_cast<std::size_t>(level)]; }
};

/// Initial iterate for a shortened chain: a clean normalized plan (rows x H)
/// that is forward-noised to `start_level` independently per candidate.
struct WarmStart {
  Eigen::MatrixXd clean;
  int start_level = 0;
};

struct PlanDiagnostics {
  int start_level = 0;
  int reverse_steps = 0;               // per candidate
  std::vector<double> guidance_norm;   // per executed step, mean over candidates
  std::vector<double> violation_pre;   // per executed step, max before projection
  std::vector<double> violation_post;  // per executed step, max after s0 enforcement
  std::vector<int> discarded;          // candidates dropped as non-finite
};

struct PlanResult {
  Trajectory best;
  std::vector<double> all_rewards;  // NaN for discarded candidates
  int selected_index = 0;
  PlanDiagnostics diagnostics;
  /// Every candidate in physical space, for inspection.
  std::vector<Trajectory> candidates;
};

/// Argmax with ties to the lowest index. NaN entries are skipped.
inline std::pair<int, double> rank_candidates(std::span<const double> rewards) {
  if (rewards.empty()) throw InvalidInput("no candidates to rank");
  int best = -1;
  for (int i = 0; i < static_cast<int>(rewards.size()); ++i) {
    const double r = rewards[static_cast<std::size_t>(i)];
    if (std::isnan(r)) continue;
    if (best < 0 || r > rewards[static_cast<std::size_t>(best)]) best = i;
  }
  if (best < 0) throw PlanningFailure("every candidate is non-finite");
  return {best, rewards[static_cast<std::size_t>(best)]};
}

inline std::pair<int, double> rank_candidates(std::span<const Trajectory> candidates, const RewardSpec& spec) {
  std::vector<double> r;
  r.reserve(candidates.size());
  for (const auto& c : candidates) r.push_back(composite(spec, c.data(), 0));
  return rank_candidates(r);
}

/// Reward-guided, constraint-projected sampling of N candidates.
///
/// `schedule` is the (respaced) inference schedule; its level count must match
/// config.inference_steps. Rewards and constraints act in physical space via
/// `stats`. `s0` (physical, length n_s) overwrites the state rows of column 0
/// after every step. Candidate j draws all of its noise from stream j of
/// `seed`, so results do not depend on N or evaluation order.
template <CleanPredictor P>
PlanResult guided_sample(const P& model, const NoiseSchedule& schedule, const PlannerConfig& config,
                         const NormStats& stats, int state_dim, int action_dim, int horizon,
                         const std::optional<Eigen::VectorXd>& s0, std::uint64_t seed,
                         const std::optional<WarmStart>& warm = std::nullopt) {
  config.validate();
  stats.validate();
  if (schedule.levels() != config.inference_steps)
    throw InvalidInput("schedule level count differs from config.inference_steps");
  const int rows = state_dim + action_dim;
  if (stats.rows() != rows) throw InvalidInput("norm stats do not match trajectory rows");
  if (s0 && (s0->size() != state_dim || !s0->allFinite())) throw InvalidInput("s0 must be finite with length n_s");
  const int dim = rows * horizon;
  const int N = config.candidates;

  Eigen::VectorXd z_s0;
  if (s0) z_s0 = (s0->array() - stats.mean.head(state_dim).array()) / stats.scale.head(state_dim).array();
  auto enforce = [&](Eigen::MatrixXd& z) {
    if (s0)
      for (int j = 0; j < N; ++j) z.col(j).head(state_dim) = z_s0;
  };

  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(N));
  for (int j = 0; j < N; ++j) streams.emplace_back(seed, static_cast<std::uint64_t>(j));

  PlanResult res;
  int start = schedule.levels();
  Eigen::MatrixXd z(dim, N);
  if (warm) {
    if (warm->start_level < 0 || warm->start_level > schedule.levels())
      throw InvalidInput("warm start level out of range");
    if (warm->clean.rows() != rows || warm->clean.cols() != horizon) throw InvalidInput("warm start shape mismatch");
    start = warm->start_level;
    const Eigen::Map<const Eigen::VectorXd> clean(warm->clean.data(), dim);
    const double ab = schedule.alpha_bar[start];
    for (int j = 0; j < N; ++j)
      z.col(j) = std::sqrt(ab) * clean + std::sqrt(1.0 - ab) * streams[static_cast<std::size_t>(j)].normal_matrix(dim, 1);
  } else {
    for (int j = 0; j < N; ++j) z.col(j) = streams[static_cast<std::size_t>(j)].normal_matrix(dim, 1);
  }
  enforce(z);
  res.diagnostics.start_level = start;

  std::vector<bool> alive(static_cast<std::size_t>(N), true);
  const bool guide = config.lambda > 0.0 && !config.spec.empty();
  const bool constrain = !config.constraints.empty();
  const Eigen::VectorXd scale_flat = stats.scale.replicate(horizon, 1);
  const Eigen::VectorXd mean_flat = stats.mean.replicate(horizon, 1);

  for (int level = start; level >= 1; --level) {
    if (config.sampler == Sampler::kDdim) {
      z = ddim_step(model, z, level, level - 1, schedule);
    } else {
      Eigen::MatrixXd eps(dim, N);
      for (int j = 0; j < N; ++j) eps.col(j) = streams[static_cast<std::size_t>(j)].normal_matrix(dim, 1);
      z = reverse_step(model, z, level, schedule, eps);
    }
    res.diagnostics.reverse_steps += 1;
    const int t_next = schedule.timesteps[level - 1];

    double gnorm = 0.0, pre = 0.0, post = 0.0;
    for (int j = 0; j < N; ++j) {
      if (!alive[static_cast<std::size_t>(j)]) continue;
      if (!z.col(j).allFinite()) {
        alive[static_cast<std::size_t>(j)] = false;
        res.diagnostics.discarded.push_back(j);
        z.col(j).setZero();
        continue;
      }
      if (!guide && !constrain) continue;
      Eigen::VectorXd xf = z.col(j).cwiseProduct(scale_flat) + mean_flat;
      Eigen::MatrixXd x = Eigen::Map<Eigen::MatrixXd>(xf.data(), rows, horizon);
      if (guide) {
        const double gain = config.lambda * config.eta_at(level) * schedule.covariance(level);
        Eigen::MatrixXd g = composite_grad(config.spec, x, t_next);
        if (!g.allFinite()) {
          alive[static_cast<std::size_t>(j)] = false;
          res.diagnostics.discarded.push_back(j);
          z.col(j).setZero();
          continue;
        }
        if (config.space == GuidanceSpace::kNormalized) g.array().colwise() *= stats.scale.array().square();
        x += gain * g;
        gnorm += gain * g.norm();
      }
      if (constrain) {
        const auto f = is_feasible(x, config.constraints);
        for (double v : f.max_violation) pre = std::max(pre, v);
        project_in_place(x, config.constraints);
      }
      xf = Eigen::Map<const Eigen::VectorXd>(x.data(), dim);
      z.col(j) = (xf - mean_flat).cwiseQuotient(scale_flat);
    }
    enforce(z);
    if (constrain && s0) {
      // s0 itself may violate C; the residual is reported, not corrected.
      for (int j = 0; j < N; ++j) {
        if (!alive[static_cast<std::size_t>(j)]) continue;
        Eigen::MatrixXd x = denormalize_matrix(unflatten_columns(Eigen::MatrixXd(z.col(j)), rows, horizon), stats);
        for (double v : is_feasible(x, config.constraints).max_violation) post = std::max(post, v);
      }
    }
    res.diagnostics.guidance_norm.push_back(gnorm / N);
    res.diagnostics.violation_pre.push_back(pre);
    res.diagnostics.violation_post.push_back(post);
  }

  res.all_rewards.assign(static_cast<std::size_t>(N), std::nan(""));
  res.candidates.reserve(static_cast<std::size_t>(N));
  for (int j = 0; j < N; ++j) {
    Eigen::MatrixXd x = denormalize_matrix(unflatten_columns(Eigen::MatrixXd(z.col(j)), rows, horizon), stats);
    if (s0) x.col(0).head(state_dim) = *s0;
    if (alive[static_cast<std::size_t>(j)] && x.allFinite()) {
      const double r = config.spec.empty() ? 0.0 : composite(config.spec, x, 0);
      if (std::isfinite(r)) res.all_rewards[static_cast<std::size_t>(j)] = r;
    }
    res.candidates.emplace_back(state_dim, action_dim, std::move(x));
  }
  const auto [best, reward] = rank_candidates(res.all_rewards);
  (void)reward;
  res.selected_index = best;
  res.best = res.candidates[static_cast<std::size_t>(best)];
  return res;
}

}  // namespace dmpc
