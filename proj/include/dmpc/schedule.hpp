#pragma once

#include <cmath>
#include <vector>

#include "dmpc/error.hpp"

namespace dmpc {

/// Variance schedule indexed by level i = 0..levels(). Level 0 is clean data
/// (alpha_bar = 1). For a training schedule level i is timestep i; a respaced
/// schedule keeps a strided subset of the training timesteps.
struct NoiseSchedule {
  int train_steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;

  std::vector<int> timesteps;     // timesteps[i]: training index of level i
  std::vector<double> alpha_bar;  // cumulative product, alpha_bar[0] = 1
  std::vector<double> alpha;      // alpha[i] = alpha_bar[i] / alpha_bar[i-1]; alpha[0] = 1
  std::vector<double> beta;       // 1 - alpha
  std::vector<double> sigma;      // reverse std into level i-1; sigma[1] = 0

  [[nodiscard]] int levels() const { return static_cast<int>(timesteps.size()) - 1; }

  /// Sigma squared, the scalar covariance factor of the reverse transition.
  [[nodiscard]] double covariance(int level) const { return sigma[level] * sigma[level]; }

  void check_level(int level, int lo = 0) const {
    if (level < lo || level > levels()) throw InvalidInput("diffusion level out of range");
  }
};

namespace detail {

inline void fill_from_alpha_bar(NoiseSchedule& s) {
  const int n = s.levels();
  s.alpha.assign(n + 1, 1.0);
  s.beta.assign(n + 1, 0.0);
  s.sigma.assign(n + 1, 0.0);
  for (int i = 1; i <= n; ++i) {
    s.alpha[i] = s.alpha_bar[i] / s.alpha_bar[i - 1];
    s.beta[i] = 1.0 - s.alpha[i];
    const double posterior_var = (1.0 - s.alpha_bar[i - 1]) / (1.0 - s.alpha_bar[i]) * s.beta[i];
    s.sigma[i] = std::sqrt(std::max(posterior_var, 0.0));
  }
}

}  // namespace detail

/// Linear beta schedule; sigma uses the posterior variance
/// ((1 - abar_{k-1}) / (1 - abar_k)) * beta_k.
inline NoiseSchedule make_schedule(int train_steps, double beta_start, double beta_end) {
  if (train_steps < 1) throw InvalidInput("schedule needs K >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw InvalidInput("schedule needs 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.train_steps = train_steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.timesteps.resize(train_steps + 1);
  s.alpha_bar.resize(train_steps + 1);
  s.timesteps[0] = 0;
  s.alpha_bar[0] = 1.0;
  for (int k = 1; k <= train_steps; ++k) {
    const double b =
        train_steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * (k - 1) / (train_steps - 1);
    s.timesteps[k] = k;
    s.alpha_bar[k] = s.alpha_bar[k - 1] * (1.0 - b);
  }
  detail::fill_from_alpha_bar(s);
  return s;
}

/// Evenly strided sub-schedule keeping timesteps floor(i * K / n), i = 1..n,
/// which always includes K. Alphas and sigmas are recomputed from the
/// retained alpha_bar values.
inline NoiseSchedule respace(const NoiseSchedule& full, int inference_steps) {
  const int K = full.levels();
  if (inference_steps < 1 || inference_steps > K) throw InvalidInput("inference step count out of range");
  NoiseSchedule s;
  s.train_steps = full.train_steps;
  s.beta_start = full.beta_start;
  s.beta_end = full.beta_end;
  s.timesteps.push_back(full.timesteps[0]);
  s.alpha_bar.push_back(full.alpha_bar[0]);
  for (int i = 1; i <= inference_steps; ++i) {
    const int level = static_cast<int>((static_cast<long long>(i) * K) / inference_steps);
    s.timesteps.push_back(full.timesteps[level]);
    s.alpha_bar.push_back(full.alpha_bar[level]);
  }
  detail::fill_from_alpha_bar(s);
  return s;
}

}  // namespace dmpc
