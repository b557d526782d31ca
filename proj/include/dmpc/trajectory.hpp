#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmpc/error.hpp"

namespace dmpc {

/// State-action sequence of horizon H. Column t stacks s_t (top n_s rows)
/// on a_t (bottom n_a rows).
class Trajectory {
 public:
  Trajectory() = default;

  Trajectory(int state_dim, int action_dim, int horizon)
      : Trajectory(state_dim, action_dim, Eigen::MatrixXd::Zero(state_dim + action_dim, horizon)) {}

  Trajectory(int state_dim, int action_dim, Eigen::MatrixXd data)
      : state_dim_(state_dim), action_dim_(action_dim), data_(std::move(data)) {
    if (state_dim < 0 || action_dim < 0 || data_.rows() != state_dim + action_dim)
      throw InvalidInput("trajectory rows must equal n_s + n_a");
    if (data_.cols() < 1) throw InvalidInput("trajectory horizon must be >= 1");
  }

  [[nodiscard]] int state_dim() const { return state_dim_; }
  [[nodiscard]] int action_dim() const { return action_dim_; }
  [[nodiscard]] int rows() const { return state_dim_ + action_dim_; }
  [[nodiscard]] int horizon() const { return static_cast<int>(data_.cols()); }

  [[nodiscard]] const Eigen::MatrixXd& data() const { return data_; }
  Eigen::MatrixXd& data() { return data_; }

  [[nodiscard]] auto state(int t) const { return data_.col(t).head(state_dim_); }
  auto state(int t) { return data_.col(t).head(state_dim_); }
  [[nodiscard]] auto action(int t) const { return data_.col(t).tail(action_dim_); }
  auto action(int t) { return data_.col(t).tail(action_dim_); }

  [[nodiscard]] bool all_finite() const { return data_.allFinite(); }
  [[nodiscard]] bool same_shape(const Trajectory& o) const {
    return state_dim_ == o.state_dim_ && action_dim_ == o.action_dim_ && horizon() == o.horizon();
  }

  /// Column-major flattening, the layout consumed by the networks.
  [[nodiscard]] Eigen::VectorXd flatten() const {
    return Eigen::Map<const Eigen::VectorXd>(data_.data(), data_.size());
  }

  static Trajectory unflatten(int state_dim, int action_dim, int horizon,
                              const Eigen::Ref<const Eigen::VectorXd>& flat) {
    if (flat.size() != static_cast<Eigen::Index>(state_dim + action_dim) * horizon)
      throw InvalidInput("flat trajectory length mismatch");
    Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(flat.data(), state_dim + action_dim, horizon);
    return {state_dim, action_dim, std::move(m)};
  }

  friend bool operator==(const Trajectory& a, const Trajectory& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  Eigen::MatrixXd data_;
};

/// Reshapes a single flattened column back into a rows x horizon matrix.
inline Eigen::MatrixXd unflatten_columns(const Eigen::MatrixXd& flat, int rows, int horizon) {
  if (flat.cols() != 1 || flat.rows() != static_cast<Eigen::Index>(rows) * horizon)
    throw InvalidInput("flat column has wrong length");
  return Eigen::Map<const Eigen::MatrixXd>(flat.data(), rows, horizon);
}

/// Per-row affine normalization x -> (x - mean) / scale.
struct NormStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static NormStats identity(int rows) {
    return {Eigen::VectorXd::Zero(rows), Eigen::VectorXd::Ones(rows)};
  }

  [[nodiscard]] int rows() const { return static_cast<int>(mean.size()); }

  void validate() const {
    if (mean.size() != scale.size()) throw InvalidInput("norm stats size mismatch");
    if (!(scale.array() > 0.0).all()) throw InvalidInput("norm scale must be strictly positive");
  }

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

inline void check_dims(const Trajectory& traj, const NormStats& stats) {
  if (traj.rows() != stats.rows()) throw InvalidInput("trajectory rows do not match norm stats");
}

inline Eigen::MatrixXd normalize_matrix(const Eigen::MatrixXd& x, const NormStats& stats) {
  return (x.colwise() - stats.mean).array().colwise() / stats.scale.array();
}

inline Eigen::MatrixXd denormalize_matrix(const Eigen::MatrixXd& z, const NormStats& stats) {
  return (z.array().colwise() * stats.scale.array()).matrix().colwise() + stats.mean;
}

inline Trajectory normalize(const Trajectory& traj, const NormStats& stats) {
  check_dims(traj, stats);
  return {traj.state_dim(), traj.action_dim(), normalize_matrix(traj.data(), stats)};
}

inline Trajectory denormalize(const Trajectory& traj, const NormStats& stats) {
  check_dims(traj, stats);
  return {traj.state_dim(), traj.action_dim(), denormalize_matrix(traj.data(), stats)};
}

/// Per-row mean and standard deviation over every column of every segment.
/// The scale is clamped below at `min_scale` so constant channels stay finite.
inline NormStats compute_stats(std::span<const Trajectory> segments, double min_scale = 1e-6) {
  if (segments.empty()) throw InvalidInput("cannot compute stats of an empty segment list");
  const int rows = segments.front().rows();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(rows);
  double count = 0.0;
  for (const auto& s : segments) {
    if (s.rows() != rows) throw InvalidInput("segments disagree on row count");
    sum += s.data().rowwise().sum();
    count += s.horizon();
  }
  Eigen::VectorXd mean = sum / count;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(rows);
  for (const auto& s : segments) sq += (s.data().colwise() - mean).array().square().matrix().rowwise().sum();
  Eigen::VectorXd scale = (sq / count).array().sqrt().max(min_scale);
  return {std::move(mean), std::move(scale)};
}

/// One recorded control step.
struct StepSample {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
};

/// Cuts a rollout into overlapping length-H windows starting at j * stride.
inline std::vector<Trajectory> window_rollout(std::span<const StepSample> rollout, int horizon, int stride) {
  if (horizon < 1) throw InvalidInput("horizon must be >= 1");
  if (stride < 1) throw InvalidInput("stride must be >= 1");
  if (static_cast<int>(rollout.size()) < horizon) throw InvalidInput("rollout shorter than horizon");
  const int n_s = static_cast<int>(rollout.front().state.size());
  const int n_a = static_cast<int>(rollout.front().action.size());
  for (const auto& step : rollout)
    if (step.state.size() != n_s || step.action.size() != n_a) throw InvalidInput("ragged rollout");

  const int len = static_cast<int>(rollout.size());
  const int count = (len - horizon) / stride + 1;
  std::vector<Trajectory> out;
  out.reserve(count);
  for (int j = 0; j < count; ++j) {
    Trajectory seg(n_s, n_a, horizon);
    for (int t = 0; t < horizon; ++t) {
      const auto& step = rollout[static_cast<std::size_t>(j * stride + t)];
      seg.state(t) = step.state;
      seg.action(t) = step.action;
    }
    out.push_back(std::move(seg));
  }
  return out;
}

struct DatasetMeta {
  int state_dim = 0;
  int action_dim = 0;
  int horizon = 0;
  double dt = 0.02;
  std::string source = "unknown";

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct TrajectoryDataset {
  DatasetMeta meta;
  NormStats stats;
  std::vector<Trajectory> segments;

  [[nodiscard]] int rows() const { return meta.state_dim + meta.action_dim; }

  void validate() const {
    if (meta.state_dim < 0 || meta.action_dim < 1 || meta.horizon < 1)
      throw InvalidInput("dataset meta has invalid dimensions");
    if (stats.rows() != rows()) throw InvalidInput("dataset stats do not match meta");
    stats.validate();
    for (const auto& s : segments)
      if (s.state_dim() != meta.state_dim || s.action_dim() != meta.action_dim || s.horizon() != meta.horizon)
        throw InvalidInput("dataset segment shape differs from meta");
  }

  friend bool operator==(const TrajectoryDataset&, const TrajectoryDataset&) = default;
};

/// Rounds every value to the nearest float32 so the in-memory dataset equals
/// what the float32 file format stores.
inline void quantize_float32(Eigen::MatrixXd& m) {
  m = m.cast<float>().cast<double>();
}

inline void quantize_float32(Eigen::VectorXd& v) { v = v.cast<float>().cast<double>(); }

/// Builds a dataset from segments, computing stats over all of them. When
/// `normalize` is false the stats are the identity map.
inline TrajectoryDataset make_dataset(std::vector<Trajectory> segments, DatasetMeta meta, bool normalize = true,
                                      double min_scale = 1e-6) {
  for (auto& s : segments) quantize_float32(s.data());
  TrajectoryDataset ds;
  ds.meta = std::move(meta);
  if (normalize && !segments.empty()) {
    ds.stats = compute_stats(segments, min_scale);
  } else {
    ds.stats = NormStats::identity(ds.meta.state_dim + ds.meta.action_dim);
  }
  quantize_float32(ds.stats.mean);
  quantize_float32(ds.stats.scale);
  ds.stats.scale = ds.stats.scale.cwiseMax(static_cast<double>(static_cast<float>(min_scale)));
  ds.segments = std::move(segments);
  ds.validate();
  return ds;
}

}  // namespace dmpc
