#pragma once

#include <Eigen/Core>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "dmpc/error.hpp"
#include "dmpc/mlp.hpp"
#include "dmpc/rng.hpp"
#include "dmpc/schedule.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {

/// Anything that maps a batch of noisy flattened trajectories (one per
/// column) at a training timestep to predicted clean trajectories.
template <class P>
concept CleanPredictor = requires(const P& p, const Eigen::MatrixXd& x, int timestep) {
  { p.predict_x0(x, timestep) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// MLP over [flattened trajectory ; sinusoidal embedding of k] that predicts
/// the clean trajectory directly.
class Denoiser {
 public:
  Denoiser() = default;

  Denoiser(int state_dim, int action_dim, int horizon, const std::vector<int>& hidden, Activation act,
           std::uint64_t seed, int embed_dim = 16)
      : state_dim_(state_dim), action_dim_(action_dim), horizon_(horizon), embed_dim_(embed_dim) {
    std::vector<int> sizes{flat_dim() + embed_dim_};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(flat_dim());
    net_ = Mlp(MlpSpec::make(std::move(sizes), act), seed);
  }

  Denoiser(int state_dim, int action_dim, int horizon, Mlp net, int embed_dim = 16)
      : state_dim_(state_dim), action_dim_(action_dim), horizon_(horizon), embed_dim_(embed_dim), net_(std::move(net)) {
    if (net_.spec().input_dim() != flat_dim() + embed_dim_ || net_.spec().output_dim() != flat_dim())
      throw InvalidInput("denoiser network dimensions do not match the trajectory shape");
  }

  [[nodiscard]] int state_dim() const { return state_dim_; }
  [[nodiscard]] int action_dim() const { return action_dim_; }
  [[nodiscard]] int horizon() const { return horizon_; }
  [[nodiscard]] int embed_dim() const { return embed_dim_; }
  [[nodiscard]] int flat_dim() const { return (state_dim_ + action_dim_) * horizon_; }
  [[nodiscard]] const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

  [[nodiscard]] Eigen::MatrixXd network_input(const Eigen::MatrixXd& x, std::span<const int> timesteps) const {
    if (x.rows() != flat_dim()) throw InvalidInput("denoiser input has wrong length");
    if (static_cast<Eigen::Index>(timesteps.size()) != x.cols()) throw InvalidInput("one timestep per column");
    Eigen::MatrixXd in(flat_dim() + embed_dim_, x.cols());
    in.topRows(flat_dim()) = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      in.col(c).tail(embed_dim_) = timestep_embedding(timesteps[static_cast<std::size_t>(c)], embed_dim_);
    return in;
  }

  [[nodiscard]] Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& x, std::span<const int> timesteps,
                                           Tape* tape = nullptr) const {
    return net_.forward(network_input(x, timesteps), tape);
  }

  [[nodiscard]] Eigen::MatrixXd predict_x0(const Eigen::MatrixXd& x, int timestep) const {
    std::vector<int> ts(static_cast<std::size_t>(x.cols()), timestep);
    return predict_x0(x, std::span<const int>(ts));
  }

  [[nodiscard]] Trajectory predict(const Trajectory& x, int timestep) const {
    Eigen::VectorXd out = predict_x0(Eigen::MatrixXd(x.flatten()), timestep).col(0);
    return Trajectory::unflatten(state_dim_, action_dim_, horizon_, out);
  }

 private:
  int state_dim_ = 0;
  int action_dim_ = 0;
  int horizon_ = 0;
  int embed_dim_ = 16;
  Mlp net_;
};

static_assert(CleanPredictor<Denoiser>);

// ---------------------------------------------------------------------------
// Forward process

/// Closed-form marginal sqrt(abar_k) x0 + sqrt(1 - abar_k) eps, column-wise.
inline Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& x0, int level, const NoiseSchedule& s,
                                     const Eigen::MatrixXd& eps) {
  s.check_level(level);
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols()) throw InvalidInput("noise shape mismatch");
  const double ab = s.alpha_bar[level];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

inline Trajectory forward_noise(const Trajectory& x0, int level, const NoiseSchedule& s, const Trajectory& eps) {
  if (!x0.same_shape(eps)) throw InvalidInput("noise shape mismatch");
  return {x0.state_dim(), x0.action_dim(), forward_noise(x0.data(), level, s, eps.data())};
}

/// One step of q(x_k | x_{k-1}) = N(sqrt(alpha_k) x_{k-1}, (1 - alpha_k) I).
inline Eigen::MatrixXd forward_kernel(const Eigen::MatrixXd& prev, int level, const NoiseSchedule& s,
                                      const Eigen::MatrixXd& eps) {
  s.check_level(level, 1);
  return std::sqrt(s.alpha[level]) * prev + std::sqrt(1.0 - s.alpha[level]) * eps;
}

// ---------------------------------------------------------------------------
// Reverse process

/// Posterior mean coefficients: mu = c_x0 * x0_hat + c_xk * x_k.
struct PosteriorCoefficients {
  double c_x0;
  double c_xk;
};

inline PosteriorCoefficients posterior_coefficients(int level, const NoiseSchedule& s) {
  s.check_level(level, 1);
  const double ab = s.alpha_bar[level];
  const double ab_prev = s.alpha_bar[level - 1];
  return {std::sqrt(ab_prev) * s.beta[level] / (1.0 - ab),
          std::sqrt(s.alpha[level]) * (1.0 - ab_prev) / (1.0 - ab)};
}

/// x_{k-1} = mu_theta(x_k, k) + sigma_k eps; no noise on the final step.
template <CleanPredictor P>
Eigen::MatrixXd reverse_step(const P& model, const Eigen::MatrixXd& xk, int level, const NoiseSchedule& s,
                             const Eigen::MatrixXd& eps) {
  s.check_level(level, 1);
  const auto c = posterior_coefficients(level, s);
  Eigen::MatrixXd x0_hat = model.predict_x0(xk, s.timesteps[level]);
  Eigen::MatrixXd out = c.c_x0 * x0_hat + c.c_xk * xk;
  if (level > 1) {
    if (eps.rows() != xk.rows() || eps.cols() != xk.cols()) throw InvalidInput("noise shape mismatch");
    out += s.sigma[level] * eps;
  }
  return out;
}

template <CleanPredictor P>
Trajectory reverse_step(const P& model, const Trajectory& xk, int level, const NoiseSchedule& s,
                        const Trajectory& eps) {
  return {xk.state_dim(), xk.action_dim(),
          unflatten_columns(reverse_step(model, Eigen::MatrixXd(xk.flatten()), level, s,
                                         Eigen::MatrixXd(eps.flatten())),
                            xk.rows(), xk.horizon())};
}

/// Deterministic DDIM jump from `level` to `target` (< level) through the
/// noise implied by (x_k, x0_hat).
template <CleanPredictor P>
Eigen::MatrixXd ddim_step(const P& model, const Eigen::MatrixXd& xk, int level, int target, const NoiseSchedule& s) {
  s.check_level(level, 1);
  if (target < 0 || target >= level) throw InvalidInput("ddim target level must be below the current level");
  const double ab = s.alpha_bar[level];
  const double ab_t = s.alpha_bar[target];
  Eigen::MatrixXd x0_hat = model.predict_x0(xk, s.timesteps[level]);
  Eigen::MatrixXd eps_hat = (xk - std::sqrt(ab) * x0_hat) / std::sqrt(1.0 - ab);
  return std::sqrt(ab_t) * x0_hat + std::sqrt(1.0 - ab_t) * eps_hat;
}

template <CleanPredictor P>
Trajectory ddim_step(const P& model, const Trajectory& xk, int level, int target, const NoiseSchedule& s) {
  return {xk.state_dim(), xk.action_dim(),
          unflatten_columns(ddim_step(model, Eigen::MatrixXd(xk.flatten()), level, target, s), xk.rows(),
                            xk.horizon())};
}

enum class Sampler { kDdpm, kDdim };

/// Unconditional samples, one per column, starting from N(0, I) at the top
/// level. Column j uses RNG stream j of `seed` so any column can be reproduced
/// alone.
template <CleanPredictor P>
Eigen::MatrixXd sample_prior(const P& model, const NoiseSchedule& s, int dim, int count, std::uint64_t seed,
                             Sampler sampler = Sampler::kDdpm) {
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) streams.emplace_back(seed, static_cast<std::uint64_t>(j));
  Eigen::MatrixXd x(dim, count);
  for (int j = 0; j < count; ++j) x.col(j) = streams[static_cast<std::size_t>(j)].normal_matrix(dim, 1);
  for (int level = s.levels(); level >= 1; --level) {
    if (sampler == Sampler::kDdim) {
      x = ddim_step(model, x, level, level - 1, s);
    } else {
      Eigen::MatrixXd eps(dim, count);
      for (int j = 0; j < count; ++j) eps.col(j) = streams[static_cast<std::size_t>(j)].normal_matrix(dim, 1);
      x = reverse_step(model, x, level, s, eps);
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Training objective

struct DenoisingSample {
  Eigen::VectorXd x0;  // flattened, normalized clean trajectory
  int level = 1;
  Eigen::VectorXd eps;
  /// Leading flattened entries kept clean in the noised input (the first
  /// state column when training for s0-inpainted sampling).
  int clean_prefix = 0;
};

struct LossResult {
  double loss = 0.0;
  MlpParams grads;
};

/// Mean over batch and entries of w_b * (x0 - x0_hat)^2 with exact parameter
/// gradients. Empty `weights` means all ones.
inline LossResult training_loss(const Denoiser& model, std::span<const DenoisingSample> batch, const NoiseSchedule& s,
                                std::span<const double> weights = {}) {
  if (batch.empty()) throw InvalidInput("empty training batch");
  if (!weights.empty() && weights.size() != batch.size()) throw InvalidInput("one weight per sample");
  const int dim = model.flat_dim();
  const auto B = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd x0(dim, B), eps(dim, B);
  std::vector<int> timesteps(batch.size());
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& smp = batch[static_cast<std::size_t>(b)];
    if (smp.x0.size() != dim || smp.eps.size() != dim) throw InvalidInput("training sample has wrong length");
    s.check_level(smp.level, 1);
    x0.col(b) = smp.x0;
    eps.col(b) = smp.eps;
    timesteps[static_cast<std::size_t>(b)] = s.timesteps[smp.level];
  }
  Eigen::MatrixXd xk(dim, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double ab = s.alpha_bar[batch[static_cast<std::size_t>(b)].level];
    xk.col(b) = std::sqrt(ab) * x0.col(b) + std::sqrt(1.0 - ab) * eps.col(b);
    const int p = batch[static_cast<std::size_t>(b)].clean_prefix;
    if (p < 0 || p > dim) throw InvalidInput("clean prefix out of range");
    xk.col(b).head(p) = x0.col(b).head(p);
  }
  Tape tape;
  Eigen::MatrixXd pred = model.predict_x0(xk, timesteps, &tape);
  if (!pred.allFinite()) throw NumericalError("denoiser produced non-finite activations");

  Eigen::MatrixXd diff = pred - x0;
  const double norm = 1.0 / (static_cast<double>(B) * dim);
  Eigen::VectorXd per_sample = diff.colwise().squaredNorm().transpose();
  Eigen::MatrixXd out_grad = (2.0 * norm) * diff;
  if (!weights.empty()) {
    for (Eigen::Index b = 0; b < B; ++b) {
      per_sample(b) *= weights[static_cast<std::size_t>(b)];
      out_grad.col(b) *= weights[static_cast<std::size_t>(b)];
    }
  }
  LossResult r;
  r.loss = per_sample.sum() * norm;
  r.grads = model.net().backward(tape, out_grad).params;
  return r;
}

struct DenoiserTrainOptions {
  int steps = 20000;
  int batch = 64;
  double lr = 1e-3;
  double final_lr = 1e-4;  // cosine decay target
  std::uint64_t seed = 0;
  int clean_prefix = 0;
};

/// Draws a denoising batch: uniform sample indices and levels, fresh noise.
inline std::vector<DenoisingSample> draw_batch(std::span<const Eigen::VectorXd> data, const NoiseSchedule& s,
                                               int batch, Rng& rng, int clean_prefix = 0) {
  std::vector<DenoisingSample> out(static_cast<std::size_t>(batch));
  const int n = static_cast<int>(data.size());
  for (auto& smp : out) {
    smp.x0 = data[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    smp.level = rng.uniform_int(1, s.levels());
    smp.eps = rng.normal_matrix(smp.x0.size(), 1).col(0);
    smp.clean_prefix = clean_prefix;
  }
  return out;
}

/// Adam with a cosine learning-rate decay; returns the per-step loss.
inline std::vector<double> train_denoiser(Denoiser& model, std::span<const Eigen::VectorXd> data,
                                          const NoiseSchedule& s, const DenoiserTrainOptions& opt) {
  if (data.empty()) throw InvalidInput("no training data");
  Rng rng(opt.seed, 0x7261696eULL);
  AdamState adam = AdamState::for_params(model.net().params(), opt.lr);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(opt.steps));
  for (int step = 0; step < opt.steps; ++step) {
    const double progress = opt.steps > 1 ? static_cast<double>(step) / (opt.steps - 1) : 1.0;
    adam.lr = opt.final_lr + 0.5 * (opt.lr - opt.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
    const auto batch = draw_batch(data, s, opt.batch, rng, opt.clean_prefix);
    auto r = training_loss(model, batch, s);
    if (!std::isfinite(r.loss)) throw NumericalError("non-finite training loss at step " + std::to_string(step));
    if (!adam_step(model.net().mutable_params(), r.grads, adam))
      throw NumericalError("non-finite gradient at step " + std::to_string(step));
    losses.push_back(r.loss);
  }
  return losses;
}

}  // namespace dmpc
