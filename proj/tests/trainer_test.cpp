#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dmpc/trainer.hpp"

namespace dmpc {
namespace {

TEST(Weights, Examples) {
  const std::vector<double> r{0.0, 2.0};
  const auto w = compute_weights(r, 2.0);
  EXPECT_NEAR(w[1] / w[0], std::numbers::e, 1e-15);
  EXPECT_EQ(w[1], 1.0);
  EXPECT_THROW((void)compute_weights(r, 0.0), InvalidInput);
  EXPECT_THROW((void)compute_weights(std::vector<double>{std::nan("")}, 1.0), InvalidInput);
}

TEST(Weights, MonotoneAndOverflowSafe) {
  const std::vector<double> r{1e6, 1e6 + 1.0, 1e6 - 3.0};
  const auto w = compute_weights(r, 0.5);
  for (double x : w) EXPECT_TRUE(std::isfinite(x));
  EXPECT_GT(w[1], w[0]);
  EXPECT_GT(w[0], w[2]);
}

TEST(TopK, TwoEqualSurvivors) {
  const auto w = topk_normalize(std::vector<double>{0.1, 0.7, 0.7, 0.2}, 2);
  EXPECT_EQ(w, (std::vector<double>{0.0, 2.0, 2.0, 0.0}));
}

TEST(TopK, TiesKeepEarliestIndex) {
  const auto w = topk_normalize(std::vector<double>{0.5, 0.9, 0.5, 0.5, 0.1}, 3);
  EXPECT_GT(w[0], 0.0);
  EXPECT_GT(w[1], 0.0);
  EXPECT_GT(w[2], 0.0);
  EXPECT_EQ(w[3], 0.0);
  EXPECT_EQ(w[4], 0.0);
}

TEST(TopK, FullBatchEqualReturnsGiveOnes) {
  const std::vector<double> r(16, -3.25);
  const auto w = topk_normalize(compute_weights(r, 0.7), 16);
  for (double x : w) EXPECT_EQ(x, 1.0);
}

TEST(TopK, MeanIsOne) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.uniform_int(1, 200);
    std::vector<double> r(static_cast<std::size_t>(n));
    for (double& x : r) x = 50.0 * rng.normal();
    const auto w = topk_normalize(compute_weights(r, rng.uniform(0.1, 20.0)), rng.uniform_int(1, n));
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0) / n, 1.0, 1e-12);
  }
  EXPECT_THROW((void)topk_normalize(std::vector<double>{1.0}, 2), InvalidInput);
  EXPECT_THROW((void)topk_normalize(std::vector<double>{1.0}, 0), InvalidInput);
}

TEST(TopK, ShiftInvariance) {
  // Exact when R - max(R) is computed without rounding, as for dyadic values.
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(32), shifted(32);
    const double c = std::ldexp(static_cast<double>(rng.uniform_int(-1000, 1000)), 3);
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = rng.uniform_int(-400, 400) / 8.0;
      shifted[i] = r[i] + c;
    }
    const double T = rng.uniform(0.5, 30.0);
    EXPECT_EQ(topk_normalize(compute_weights(r, T), 8), topk_normalize(compute_weights(shifted, T), 8));
  }
}

TEST(Temperature, InterquartileRange) {
  EXPECT_DOUBLE_EQ(iqr_temperature(std::vector<double>{1, 2, 3, 4, 5}), 2.0);
  EXPECT_DOUBLE_EQ(iqr_temperature(std::vector<double>{4, 4, 4}), 1e-6);
  EXPECT_DOUBLE_EQ(quantile({3, 1, 2, 4}, 0.5), 2.5);
}

TEST(Replay, CapacityAndEviction) {
  ReplayBuffer buf(100);
  for (int i = 0; i < 1000; ++i) {
    buf.push({Eigen::VectorXd::Constant(1, i), static_cast<double>(i), i / 10});
    ASSERT_LE(buf.size(), 100u);
  }
  double lo = 1e9;
  for (const auto& e : buf.entries()) lo = std::min(lo, e.ret);
  EXPECT_EQ(lo, 900.0);
  EXPECT_THROW(buf.push({Eigen::VectorXd::Zero(1), std::nan(""), 0}), InvalidInput);
  EXPECT_THROW(ReplayBuffer(0), InvalidInput);
}

TEST(Replay, MixRatio) {
  ReplayBuffer buf(1000);
  for (int i = 0; i < 300; ++i) buf.push({Eigen::VectorXd::Zero(1), 0.0, i < 200 ? 0 : 1});
  Rng rng(3);
  const auto picks = buf.sample(64, 0.5, 1, rng);
  int fresh = 0;
  for (const auto* p : picks) fresh += p->iteration == 1 ? 1 : 0;
  EXPECT_EQ(fresh, 32);
  const auto only_old = buf.sample(10, 0.5, 7, rng);
  for (const auto* p : only_old) EXPECT_NE(p->iteration, 7);
  ReplayBuffer empty(5);
  EXPECT_THROW((void)empty.sample(4, 0.5, 0, rng), InsufficientData);
}

std::vector<DenoisingSample> fixed_batch(const Denoiser& m, const NoiseSchedule& s, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DenoisingSample> b(static_cast<std::size_t>(n));
  for (auto& smp : b) {
    smp.x0 = rng.normal_matrix(m.flat_dim(), 1).col(0);
    smp.eps = rng.normal_matrix(m.flat_dim(), 1).col(0);
    smp.level = rng.uniform_int(1, s.levels());
  }
  return b;
}

TEST(RwdLoss, EqualReturnsReproduceUnweightedBitwise) {
  const Denoiser m(3, 1, 2, {16}, Activation::kTanh, 4);
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.2);
  const auto batch = fixed_batch(m, s, 12, 5);
  const std::vector<double> r(12, 0.4);
  const RwdStep w = rwd_loss(m, batch, r, s, {.keep = 12});
  const LossResult u = training_loss(m, batch, s);
  EXPECT_EQ(w.result.loss, u.loss);
  for (std::size_t l = 0; l < u.grads.weights.size(); ++l) {
    EXPECT_EQ(w.result.grads.weights[l], u.grads.weights[l]);
    EXPECT_EQ(w.result.grads.biases[l], u.grads.biases[l]);
  }
}

TEST(RwdLoss, ZeroWeightSamplesDoNotContribute) {
  const Denoiser m(3, 1, 2, {16}, Activation::kTanh, 4);
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.2);
  auto batch = fixed_batch(m, s, 8, 6);
  const std::vector<double> r{5, 4, 3, 2, 1, 0, -1, -2};
  const RwdStep a = rwd_loss(m, batch, r, s, {.temperature = 1.0, .keep = 2});
  for (std::size_t i = 2; i < batch.size(); ++i) batch[i].x0.array() += 3.0;
  const RwdStep b = rwd_loss(m, batch, r, s, {.temperature = 1.0, .keep = 2});
  EXPECT_EQ(a.result.loss, b.result.loss);
  for (std::size_t l = 0; l < a.result.grads.weights.size(); ++l)
    EXPECT_EQ(a.result.grads.weights[l], b.result.grads.weights[l]);
}

TEST(RwdLoss, RejectsMismatchedBatch) {
  const Denoiser m(3, 1, 2, {16}, Activation::kTanh, 4);
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.2);
  const auto batch = fixed_batch(m, s, 4, 6);
  EXPECT_THROW((void)rwd_loss(m, batch, std::vector<double>{1.0}, s, {}), InvalidInput);
}

// Two clusters at +1 and -1; the +1 cluster earns the higher return. Iterated
// reward-weighted updates should move sampled mass toward it.
TEST(RwdUpdate, TwoModeTiltShiftsMass) {
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.2);
  Denoiser m(1, 1, 1, {64, 64}, Activation::kRelu, 8);
  Rng rng(9);
  std::vector<Eigen::VectorXd> data;
  std::vector<double> rets;
  for (int i = 0; i < 512; ++i) {
    const double mode = i % 2 == 0 ? 1.0 : -1.0;
    data.push_back(Eigen::Vector2d(mode + 0.05 * rng.normal(), mode + 0.05 * rng.normal()));
    rets.push_back(mode > 0 ? 1.0 : 0.0);
  }
  (void)train_denoiser(m, data, s, {.steps = 1500, .batch = 64, .lr = 3e-3, .final_lr = 1e-3, .seed = 1});
  auto frac_a = [&](std::uint64_t seed) {
    const Eigen::MatrixXd x = sample_prior(m, s, 2, 1000, seed);
    return (x.row(0).array() > 0.0).cast<double>().mean();
  };
  std::vector<double> freq{frac_a(100)};
  AdamState adam = AdamState::for_params(m.net().params(), 2e-4);
  for (int round = 0; round < 4; ++round) {
    for (int k = 0; k < 10; ++k) {
      std::vector<Eigen::VectorXd> x0;
      std::vector<double> r;
      for (int b = 0; b < 64; ++b) {
        const int j = rng.uniform_int(0, 511);
        x0.push_back(data[static_cast<std::size_t>(j)]);
        r.push_back(rets[static_cast<std::size_t>(j)]);
      }
      (void)rwd_update(m, x0, r, s, {.temperature = 2.0}, adam, rng);
    }
    freq.push_back(frac_a(101 + round));
  }
  EXPECT_NEAR(freq.front(), 0.5, 0.1);
  for (std::size_t i = 1; i < freq.size(); ++i) EXPECT_GT(freq[i], freq[i - 1]) << i;
}

TEST(RwdUpdate, AnchorsEnterWithUnitWeight) {
  Rng rng(41);
  const NoiseSchedule s = make_schedule(50, 1e-4, 0.2);
  const Denoiser m0(2, 1, 3, {8}, Activation::kTanh, 2);
  std::vector<Eigen::VectorXd> x0, anchor;
  for (int i = 0; i < 6; ++i) x0.push_back(rng.normal_matrix(m0.flat_dim(), 1).col(0));
  for (int i = 0; i < 3; ++i) anchor.push_back(rng.normal_matrix(m0.flat_dim(), 1).col(0));
  const std::vector<double> r{3.0, -1.0, 0.5, 2.0, 2.0, -4.0};
  Denoiser m = m0;
  AdamState adam = AdamState::for_params(m.net().params(), 1e-3);
  Rng a(9), b(9);
  const RwdStep step = rwd_update(m, x0, r, s, {.temperature = 1.5, .keep = 3}, adam, a, 0, anchor);
  ASSERT_EQ(step.weights.size(), 9u);
  const auto head = topk_normalize(compute_weights(r, 1.5), 3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(step.weights[i], head[i]);
  for (std::size_t i = 6; i < 9; ++i) EXPECT_EQ(step.weights[i], 1.0);

  // Same draws, rebuilt by hand.
  std::vector<DenoisingSample> batch(9);
  for (std::size_t i = 0; i < 9; ++i) {
    batch[i].x0 = i < 6 ? x0[i] : anchor[i - 6];
    batch[i].level = b.uniform_int(1, s.levels());
    batch[i].eps = b.normal_matrix(m0.flat_dim(), 1).col(0);
  }
  EXPECT_EQ(step.result.loss, training_loss(m0, batch, s, step.weights).loss);
}

TEST(TrainInteractive, SmokeRunProducesCurve) {
  const StateLayout L{4};
  PriorCheckpoint prior;
  prior.model = Denoiser(L.state_dim(), L.action_dim(), 11, {32}, Activation::kTanh, 3);
  prior.schedule = make_schedule(50, 1e-4, 0.2);
  prior.stats = NormStats::identity(L.rows());
  InteractiveConfig cfg;
  cfg.iterations = 2;
  cfg.episodes_per_iteration = 2;
  cfg.episode_steps = 30;
  cfg.updates_per_iteration = 2;
  cfg.weighting.batch = 8;
  const auto before = prior.model.net().params().weights[0];
  std::vector<Eigen::VectorXd> anchors(5, Eigen::VectorXd::Zero(prior.model.flat_dim()));
  const auto curve = train_interactive(prior, cfg, {}, anchors);
  ASSERT_EQ(curve.size(), 2u);
  for (const auto& c : curve) {
    EXPECT_TRUE(std::isfinite(c.mean_return));
    EXPECT_GE(c.stability, 0.0);
    EXPECT_LE(c.stability, 1.0);
    EXPECT_GT(c.temperature, 0.0);
  }
  EXPECT_NE(prior.model.net().params().weights[0], before);
}

}  // namespace
}  // namespace dmpc
