#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "dmpc/error.hpp"
#include "dmpc/mlp.hpp"
#include "dmpc/rng.hpp"
#include "dmpc/schedule.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {

inline constexpr double kPdKp = 40.0;
inline constexpr double kPdKd = 1.0;

/// Row layout of the J-joint observation {v_yaw, g, v_cmd, q, qdot, a_prev}
/// followed by the J action rows.
struct StateLayout {
  int joints = 4;

  [[nodiscard]] int state_dim() const { return 3 * joints + 7; }
  [[nodiscard]] int action_dim() const { return joints; }
  [[nodiscard]] int rows() const { return state_dim() + action_dim(); }

  [[nodiscard]] static constexpr int yaw_rate() { return 0; }
  [[nodiscard]] static constexpr int gravity() { return 1; }
  [[nodiscard]] static constexpr int command() { return 4; }
  [[nodiscard]] int q() const { return 7; }
  [[nodiscard]] int qdot() const { return 7 + joints; }
  [[nodiscard]] int prev_action() const { return 7 + 2 * joints; }
  [[nodiscard]] int action() const { return state_dim(); }

  void check(const Eigen::MatrixXd& x) const {
    if (x.rows() != rows()) throw InvalidInput("trajectory rows do not match the state layout");
    if (x.cols() < 1) throw InvalidInput("trajectory needs at least one column");
  }

  friend bool operator==(const StateLayout&, const StateLayout&) = default;
};

// ---------------------------------------------------------------------------
// Learned reward model f(tau^(k), k)

/// Regressor over a (possibly noisy) trajectory and its diffusion timestep.
/// Inputs are physical; the model normalizes them with its own stats and
/// rescales its output by the label statistics.
class RewardModel {
 public:
  RewardModel() = default;
  RewardModel(int state_dim, int action_dim, int horizon, NormStats stats, Mlp net, double label_mean,
              double label_scale, int embed_dim = 16)
      : state_dim_(state_dim),
        action_dim_(action_dim),
        horizon_(horizon),
        embed_dim_(embed_dim),
        stats_(std::move(stats)),
        net_(std::move(net)),
        label_mean_(label_mean),
        label_scale_(label_scale) {
    stats_.validate();
    if (stats_.rows() != state_dim + action_dim) throw InvalidInput("reward model stats do not match dims");
    if (net_.spec().input_dim() != flat_dim() + embed_dim_ || net_.spec().output_dim() != 1)
      throw InvalidInput("reward network dimensions do not match the trajectory shape");
    if (!(label_scale_ > 0.0)) throw InvalidInput("label scale must be positive");
  }

  [[nodiscard]] bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  [[nodiscard]] int state_dim() const { return state_dim_; }
  [[nodiscard]] int action_dim() const { return action_dim_; }
  [[nodiscard]] int horizon() const { return horizon_; }
  [[nodiscard]] int embed_dim() const { return embed_dim_; }
  [[nodiscard]] int flat_dim() const { return (state_dim_ + action_dim_) * horizon_; }
  [[nodiscard]] const NormStats& stats() const { return stats_; }
  [[nodiscard]] const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  [[nodiscard]] double label_mean() const { return label_mean_; }
  [[nodiscard]] double label_scale() const { return label_scale_; }

  /// Batched prediction over normalized flattened inputs (one per column).
  [[nodiscard]] Eigen::RowVectorXd predict_normalized(const Eigen::MatrixXd& z, std::span<const int> timesteps,
                                                      Tape* tape = nullptr) const {
    if (z.rows() != flat_dim()) throw InvalidInput("reward model input has wrong length");
    if (static_cast<Eigen::Index>(timesteps.size()) != z.cols()) throw InvalidInput("one timestep per column");
    Eigen::MatrixXd in(flat_dim() + embed_dim_, z.cols());
    in.topRows(flat_dim()) = z;
    for (Eigen::Index c = 0; c < z.cols(); ++c)
      in.col(c).tail(embed_dim_) = timestep_embedding(timesteps[static_cast<std::size_t>(c)], embed_dim_);
    return net_.forward(in, tape).row(0);
  }

  [[nodiscard]] double value(const Eigen::MatrixXd& x, int timestep) const {
    require_trained();
    const int ts[1] = {timestep};
    return label_mean_ + label_scale_ * predict_normalized(flat_normalized(x), ts)(0);
  }

  /// Gradient with respect to the physical trajectory.
  [[nodiscard]] Eigen::MatrixXd grad(const Eigen::MatrixXd& x, int timestep) const {
    require_trained();
    const int ts[1] = {timestep};
    Tape tape;
    (void)predict_normalized(flat_normalized(x), ts, &tape);
    auto g = net_.backward(tape, Eigen::MatrixXd::Constant(1, 1, label_scale_), false);
    Eigen::MatrixXd dz = unflatten_columns(g.input.topRows(flat_dim()), state_dim_ + action_dim_, horizon_);
    return dz.array().colwise() / stats_.scale.array();
  }

 private:
  [[nodiscard]] Eigen::MatrixXd flat_normalized(const Eigen::MatrixXd& x) const {
    if (x.rows() != state_dim_ + action_dim_ || x.cols() != horizon_)
      throw InvalidInput("reward model trajectory shape mismatch");
    Eigen::MatrixXd z = normalize_matrix(x, stats_);
    return Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
  }

  void require_trained() const {
    if (!trained_) throw InvalidInput("reward model has not been trained");
  }

  int state_dim_ = 0;
  int action_dim_ = 0;
  int horizon_ = 0;
  int embed_dim_ = 16;
  NormStats stats_;
  Mlp net_;
  double label_mean_ = 0.0;
  double label_scale_ = 1.0;
  bool trained_ = false;
};

// ---------------------------------------------------------------------------
// Reward terms. Every term maps a physical trajectory matrix to a scalar and
// has an exact gradient of the same shape.

struct PostureTerm {
  Eigen::VectorXd target;
};

struct RangeTerm {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

/// Mechanical power with torques rebuilt from the PD law.
struct EnergyTerm {
  double dt = 0.02;
  double kp = kPdKp;
  double kd = kPdKd;
};

struct VelAccTerm {
  double lambda_v = 1.0;
  double lambda_a = 0.0;
  double dt = 0.02;
};

struct BalanceTerm {
  Eigen::Vector3d d_hat{0.0, 0.0, -1.0};
  double lambda_tv = 0.0;
};

struct HeightNnTerm {
  std::shared_ptr<const RewardModel> model;
};

struct CustomTerm {
  std::string name;
  std::function<double(const Eigen::MatrixXd&, int)> value;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int)> grad;
};

using RewardTerm = std::variant<PostureTerm, RangeTerm, EnergyTerm, VelAccTerm, BalanceTerm, HeightNnTerm, CustomTerm>;

inline std::string term_kind(const RewardTerm& t) {
  static const char* names[] = {"posture", "range", "energy", "velacc", "balance", "height_nn", "custom"};
  return names[t.index()];
}

namespace detail {

inline auto joint_block(const Eigen::MatrixXd& x, int first, int joints) { return x.middleRows(first, joints); }

inline void check_joint_vector(const Eigen::VectorXd& v, const StateLayout& L, const char* what) {
  if (v.size() != L.joints) throw InvalidInput(std::string(what) + " must have one entry per joint");
}

inline double value(const PostureTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  check_joint_vector(t.target, L, "posture target");
  return -(joint_block(x, L.q(), L.joints).colwise() - t.target).squaredNorm() / static_cast<double>(x.cols());
}

inline Eigen::MatrixXd grad(const PostureTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  check_joint_vector(t.target, L, "posture target");
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  g.middleRows(L.q(), L.joints) =
      (-2.0 / static_cast<double>(x.cols())) * (joint_block(x, L.q(), L.joints).colwise() - t.target);
  return g;
}

inline void check_range(const RangeTerm& t, const StateLayout& L) {
  check_joint_vector(t.lo, L, "range lower bound");
  check_joint_vector(t.hi, L, "range upper bound");
  if ((t.lo.array() > t.hi.array()).any()) throw InvalidInput("range bounds are inverted");
}

inline double value(const RangeTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  check_range(t, L);
  const auto q = joint_block(x, L.q(), L.joints);
  const Eigen::ArrayXXd over = (q.colwise() - t.hi).array().max(0.0);
  const Eigen::ArrayXXd under = ((-q).colwise() + t.lo).array().max(0.0);
  return -(over.square().sum() + under.square().sum()) / static_cast<double>(x.cols());
}

inline Eigen::MatrixXd grad(const RangeTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  check_range(t, L);
  const auto q = joint_block(x, L.q(), L.joints);
  const Eigen::ArrayXXd over = (q.colwise() - t.hi).array().max(0.0);
  const Eigen::ArrayXXd under = ((-q).colwise() + t.lo).array().max(0.0);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  g.middleRows(L.q(), L.joints) = ((-2.0 / static_cast<double>(x.cols())) * (over - under)).matrix();
  return g;
}

inline Eigen::ArrayXXd pd_torque(const EnergyTerm& t, const StateLayout& L, const Eigen::MatrixXd& x) {
  const auto q = joint_block(x, L.q(), L.joints).array();
  const auto qd = joint_block(x, L.qdot(), L.joints).array();
  const auto a = joint_block(x, L.action(), L.joints).array();
  return t.kp * (a - q) - t.kd * qd;
}

inline double value(const EnergyTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  const Eigen::ArrayXXd tau = pd_torque(t, L, x);
  return -(tau * joint_block(x, L.qdot(), L.joints).array()).abs().sum() * t.dt;
}

inline Eigen::MatrixXd grad(const EnergyTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  const Eigen::ArrayXXd tau = pd_torque(t, L, x);
  const Eigen::ArrayXXd qd = joint_block(x, L.qdot(), L.joints).array();
  const Eigen::ArrayXXd s = (tau * qd).sign() * (-t.dt);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  g.middleRows(L.q(), L.joints) = (s * (-t.kp) * qd).matrix();
  g.middleRows(L.qdot(), L.joints) = (s * (tau - t.kd * qd)).matrix();
  g.middleRows(L.action(), L.joints) = (s * t.kp * qd).matrix();
  return g;
}

inline double value(const VelAccTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  const auto qd = joint_block(x, L.qdot(), L.joints);
  double r = -t.lambda_v * qd.squaredNorm();
  if (x.cols() > 1) {
    const Eigen::MatrixXd diff = (qd.rightCols(x.cols() - 1) - qd.leftCols(x.cols() - 1)) / t.dt;
    r -= t.lambda_a * diff.squaredNorm();
  }
  return r;
}

inline Eigen::MatrixXd grad(const VelAccTerm& t, const StateLayout& L, const Eigen::MatrixXd& x, int) {
  const auto qd = joint_block(x, L.qdot(), L.joints);
  Eigen::MatrixXd gq = -2.0 * t.lambda_v * qd;
  const Eigen::Index H = x.cols();
  if (H > 1) {
    const Eigen::MatrixXd diff = (qd.rightCols(H - 1) - qd.leftCols(H - 1)) / t.dt;
    const Eigen::MatrixXd d = (-2.0 * t.lambda_a / t.dt) * diff;
    gq.rightCols(H - 1) += d;
    gq.leftCols(H - 1) -= d;
  }
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.rows(), H);
  g.middleRows(L.qdot(), L.joints) = gq;
  return g;
}

inline Eigen::Matrix3Xd unit_gravity(const Eigen::MatrixXd& x, Eigen::RowVectorXd* norms = nullptr) {
  Eigen::Matrix3Xd g = x.middleRows(StateLayout::gravity(), 3);
  Eigen::RowVectorXd n = g.colwise().norm();
  if (!(n.array() > 1e-12).all()) throw InvalidInput("gravity vector has zero norm");
  if (norms) *norms = n;
  return g.array().rowwise() / n.array();
}

inline void check_balance(const BalanceTerm& t) {
  if (std::abs(t.d_hat.norm() - 1.0) > 1e-9) throw InvalidInput("desired gravity direction must be a unit vector");
}

inline double value(const BalanceTerm& t, const StateLayout&, const Eigen::MatrixXd& x, int) {
  check_balance(t);
  const Eigen::Matrix3Xd g = unit_gravity(x);
  const double align = -(1.0 - (t.d_hat.transpose() * g).array()).sum() / static_cast<double>(x.cols());
  double smooth = 0.0;
  if (x.cols() > 1) smooth = -t.lambda_tv * (g.rightCols(x.cols() - 1) - g.leftCols(x.cols() - 1)).cwiseAbs().sum();
  return align + smooth;
}

inline Eigen::MatrixXd grad(const BalanceTerm& t, const StateLayout&, const Eigen::MatrixXd& x, int) {
  check_balance(t);
  Eigen::RowVectorXd norms;
  const Eigen::Matrix3Xd g = unit_gravity(x, &norms);
  const Eigen::Index H = x.cols();
  Eigen::Matrix3Xd dg = t.d_hat.replicate(1, H) / static_cast<double>(H);
  if (H > 1) {
    const Eigen::Matrix3Xd s = (g.rightCols(H - 1) - g.leftCols(H - 1)).array().sign();
    dg.rightCols(H - 1) -= t.lambda_tv * s;
    dg.leftCols(H - 1) += t.lambda_tv * s;
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), H);
  for (Eigen::Index c = 0; c < H; ++c) {
    const Eigen::Vector3d u = g.col(c);
    out.block<3, 1>(StateLayout::gravity(), c) = (dg.col(c) - u * u.dot(dg.col(c))) / norms(c);
  }
  return out;
}

inline double value(const HeightNnTerm& t, const StateLayout&, const Eigen::MatrixXd& x, int timestep) {
  if (!t.model) throw InvalidInput("height reward has no model");
  return t.model->value(x, timestep);
}

inline Eigen::MatrixXd grad(const HeightNnTerm& t, const StateLayout&, const Eigen::MatrixXd& x, int timestep) {
  if (!t.model) throw InvalidInput("height reward has no model");
  return t.model->grad(x, timestep);
}

inline double value(const CustomTerm& t, const StateLayout&, const Eigen::MatrixXd& x, int timestep) {
  if (!t.value) throw InvalidInput("custom reward '" + t.name + "' has no value function");
  return t.value(x, timestep);
}

inline Eigen::MatrixXd grad(const CustomTerm& t, const StateLayout&, const Eigen::MatrixXd& x, int timestep) {
  if (!t.grad) throw InvalidInput("custom reward '" + t.name + "' has no gradient");
  Eigen::MatrixXd g = t.grad(x, timestep);
  if (g.rows() != x.rows() || g.cols() != x.cols()) throw InvalidInput("custom reward gradient has wrong shape");
  return g;
}

// Learned and custom terms carry their own shape contract.
inline void check_layout(const RewardTerm& term, const StateLayout& layout, const Eigen::MatrixXd& x) {
  if (std::holds_alternative<CustomTerm>(term) || std::holds_alternative<HeightNnTerm>(term)) return;
  layout.check(x);
}

}  // namespace detail

inline double term_value(const RewardTerm& term, const StateLayout& layout, const Eigen::MatrixXd& x,
                         int timestep = 0) {
  detail::check_layout(term, layout, x);
  return std::visit([&](const auto& t) { return detail::value(t, layout, x, timestep); }, term);
}

inline Eigen::MatrixXd term_grad(const RewardTerm& term, const StateLayout& layout, const Eigen::MatrixXd& x,
                                 int timestep = 0) {
  detail::check_layout(term, layout, x);
  return std::visit([&](const auto& t) { return detail::grad(t, layout, x, timestep); }, term);
}

struct WeightedTerm {
  RewardTerm term;
  double weight = 1.0;
};

/// R_alpha(tau) = sum_i alpha_i R_i(tau).
struct RewardSpec {
  StateLayout layout;
  std::vector<WeightedTerm> terms;

  [[nodiscard]] bool empty() const { return terms.empty(); }

  RewardSpec& add(RewardTerm term, double weight) {
    if (!std::isfinite(weight)) throw InvalidInput("reward weight must be finite");
    terms.push_back({std::move(term), weight});
    return *this;
  }

  [[nodiscard]] RewardSpec scaled(double c) const {
    RewardSpec s = *this;
    for (auto& t : s.terms) t.weight *= c;
    return s;
  }
};

inline double composite(const RewardSpec& spec, const Eigen::MatrixXd& x, int timestep = 0) {
  double r = 0.0;
  for (const auto& t : spec.terms)
    if (t.weight != 0.0) r += t.weight * term_value(t.term, spec.layout, x, timestep);
  return r;
}

inline Eigen::MatrixXd composite_grad(const RewardSpec& spec, const Eigen::MatrixXd& x, int timestep = 0) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (const auto& t : spec.terms)
    if (t.weight != 0.0) g += t.weight * term_grad(t.term, spec.layout, x, timestep);
  return g;
}

inline double composite(const RewardSpec& spec, const Trajectory& traj, int timestep = 0) {
  return composite(spec, traj.data(), timestep);
}

// ---------------------------------------------------------------------------
// Reward model training

struct RewardTrainOptions {
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::kTanh;
  int epochs = 40;
  int batch = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Levels are drawn uniformly from 0..K (0 = clean input).
  bool include_clean = true;
};

struct RewardTrainResult {
  RewardModel model;
  std::vector<double> epoch_loss;  // mean normalized-label MSE per epoch
};

/// MSE regression of labels on noised, normalized trajectories. Aborts with
/// TrainingDiverged when an epoch loss exceeds 10x the first epoch's.
inline RewardTrainResult train_reward_model(std::span<const Trajectory> inputs, std::span<const double> labels,
                                            const NormStats& stats, const NoiseSchedule& schedule,
                                            const RewardTrainOptions& opt) {
  if (inputs.empty()) throw InvalidInput("reward model needs training data");
  if (inputs.size() != labels.size()) throw InvalidInput("one label per trajectory");
  for (double l : labels)
    if (!std::isfinite(l)) throw InvalidInput("reward labels must be finite");
  const auto& first = inputs.front();
  const int n_s = first.state_dim(), n_a = first.action_dim(), H = first.horizon();

  const double n = static_cast<double>(labels.size());
  const double mean = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
  double var = 0.0;
  for (double l : labels) var += (l - mean) * (l - mean);
  const double scale = std::max(std::sqrt(var / n), 1e-6);

  std::vector<Eigen::VectorXd> flat;
  flat.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (t.state_dim() != n_s || t.action_dim() != n_a || t.horizon() != H)
      throw InvalidInput("reward inputs disagree on shape");
    flat.push_back(normalize(t, stats).flatten());
  }

  std::vector<int> sizes{(n_s + n_a) * H + 16};
  sizes.insert(sizes.end(), opt.hidden.begin(), opt.hidden.end());
  sizes.push_back(1);
  RewardModel model(n_s, n_a, H, stats, Mlp(MlpSpec::make(sizes, opt.activation), opt.seed), mean, scale);

  Rng rng(opt.seed, 0x72657764ULL);
  AdamState adam = AdamState::for_params(model.net().params(), opt.lr);
  const int count = static_cast<int>(flat.size());
  const int lo_level = opt.include_clean ? 0 : 1;
  std::vector<int> order(static_cast<std::size_t>(count));
  RewardTrainResult res;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    double total = 0.0;
    for (int start = 0; start < count; start += opt.batch) {
      const int B = std::min(opt.batch, count - start);
      Eigen::MatrixXd z(model.flat_dim(), B);
      Eigen::RowVectorXd y(B);
      std::vector<int> ts(static_cast<std::size_t>(B));
      for (int b = 0; b < B; ++b) {
        const int idx = order[static_cast<std::size_t>(start + b)];
        const int level = rng.uniform_int(lo_level, schedule.levels());
        const double ab = schedule.alpha_bar[level];
        z.col(b) = std::sqrt(ab) * flat[static_cast<std::size_t>(idx)] +
                   std::sqrt(1.0 - ab) * rng.normal_matrix(model.flat_dim(), 1).col(0);
        ts[static_cast<std::size_t>(b)] = schedule.timesteps[level];
        y(b) = (labels[static_cast<std::size_t>(idx)] - mean) / scale;
      }
      Tape tape;
      const Eigen::RowVectorXd pred = model.predict_normalized(z, ts, &tape);
      const Eigen::RowVectorXd diff = pred - y;
      total += diff.squaredNorm();
      auto g = model.net().backward(tape, (2.0 / B) * Eigen::MatrixXd(diff));
      if (!adam_step(model.net().mutable_params(), g.params, adam))
        throw TrainingDiverged("non-finite reward model gradient at epoch " + std::to_string(epoch));
    }
    const double epoch_loss = total / count;
    if (!std::isfinite(epoch_loss) || (!res.epoch_loss.empty() && epoch_loss > 10.0 * res.epoch_loss.front()))
      throw TrainingDiverged("reward model loss diverged at epoch " + std::to_string(epoch) + ": " +
                             std::to_string(epoch_loss));
    res.epoch_loss.push_back(epoch_loss);
  }
  model.mark_trained();
  res.model = std::move(model);
  return res;
}

}  // namespace dmpc
