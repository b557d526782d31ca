#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dmpc/planner.hpp"

namespace dmpc {
namespace {

// One joint keeps the trajectories small: 10 state rows, 1 action row.
const StateLayout kLayout{1};
constexpr int kH = 6;

struct Fixture {
  NoiseSchedule full = make_schedule(50, 1e-4, 0.2);
  NoiseSchedule sched = respace(full, 10);
  Denoiser model{kLayout.state_dim(), kLayout.action_dim(), kH, {32}, Activation::kTanh, 7};
  NormStats identity{Eigen::VectorXd::Zero(kLayout.rows()), Eigen::VectorXd::Ones(kLayout.rows())};
  NormStats skewed{Eigen::VectorXd::LinSpaced(kLayout.rows(), -1.0, 1.0),
                   Eigen::VectorXd::LinSpaced(kLayout.rows(), 0.5, 2.0)};

  PlanResult plan(const PlannerConfig& cfg, const NormStats& stats, const std::optional<Eigen::VectorXd>& s0,
                  std::uint64_t seed = 3, const std::optional<WarmStart>& warm = std::nullopt) const {
    return guided_sample(model, sched, cfg, stats, kLayout.state_dim(), kLayout.action_dim(), kH, s0, seed, warm);
  }
};

RewardSpec posture_spec(double target = 0.5) {
  RewardSpec s{kLayout, {}};
  s.add(PostureTerm{Eigen::VectorXd::Constant(1, target)}, 1.0);
  return s;
}

Eigen::VectorXd some_state() {
  Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(kLayout.state_dim(), -0.3, 0.6);
  s.segment(StateLayout::gravity(), 3) = Eigen::Vector3d(0.0, 0.0, -1.0);
  return s;
}

TEST(Rank, TiesGoToLowestIndex) {
  const double r[] = {1.0, 3.0, 3.0, 2.0};
  EXPECT_EQ(rank_candidates(r).first, 1);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double s[] = {nan, -1.0, nan, -1.0};
  EXPECT_EQ(rank_candidates(s).first, 1);
  const double all_nan[] = {nan, nan};
  EXPECT_THROW(rank_candidates(all_nan), PlanningFailure);
}

TEST(Planner, ReducesToPriorSampling) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 3;
  auto res = f.plan(cfg, f.identity, std::nullopt);
  Eigen::MatrixXd prior = sample_prior(f.model, f.sched, kLayout.rows() * kH, 3, 3);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(res.candidates[static_cast<std::size_t>(j)].flatten(), prior.col(j));
  EXPECT_EQ(res.selected_index, 0);  // empty spec: every reward is 0
}

TEST(Planner, TenReverseStepsAndShape) {
  Fixture f;
  PlannerConfig cfg;
  auto res = f.plan(cfg, f.skewed, some_state());
  EXPECT_EQ(res.diagnostics.reverse_steps, 10);
  EXPECT_EQ(res.best.rows(), kLayout.rows());
  EXPECT_EQ(res.best.horizon(), kH);
}

TEST(Planner, WarmStartRunsShortChain) {
  Fixture f;
  PlannerConfig cfg;
  WarmStart w{Eigen::MatrixXd::Zero(kLayout.rows(), kH), 3};
  auto res = f.plan(cfg, f.skewed, some_state(), 3, w);
  EXPECT_EQ(res.diagnostics.start_level, 3);
  EXPECT_EQ(res.diagnostics.reverse_steps, 3);
  EXPECT_THROW(f.plan(cfg, f.skewed, some_state(), 3, WarmStart{Eigen::MatrixXd::Zero(2, 2), 3}), InvalidInput);
  EXPECT_THROW(f.plan(cfg, f.skewed, some_state(), 3, WarmStart{Eigen::MatrixXd::Zero(kLayout.rows(), kH), 11}),
               InvalidInput);
}

TEST(Planner, InitialStateExact) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 4;
  cfg.lambda = 0.5;
  cfg.spec = posture_spec();
  cfg.constraints.add(joint_rate_limit(kLayout, 0.1));
  const Eigen::VectorXd s0 = some_state();
  auto res = f.plan(cfg, f.skewed, s0);
  for (const auto& c : res.candidates) EXPECT_EQ(c.data().col(0).head(kLayout.state_dim()), s0);
}

TEST(Planner, CandidateIndependentOfPoolSize) {
  Fixture f;
  PlannerConfig cfg;
  cfg.lambda = 0.3;
  cfg.spec = posture_spec();
  cfg.constraints.add(action_box(kLayout, Eigen::VectorXd::Constant(1, -0.2), Eigen::VectorXd::Constant(1, 0.4)));
  cfg.candidates = 5;
  auto five = f.plan(cfg, f.skewed, some_state());
  cfg.candidates = 3;
  auto three = f.plan(cfg, f.skewed, some_state());
  for (int j = 0; j < 3; ++j)
    EXPECT_LT((three.candidates[static_cast<std::size_t>(j)].data() - five.candidates[static_cast<std::size_t>(j)].data())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
}

TEST(Planner, ConstrainedOutputFeasible) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 8;
  cfg.lambda = 1.0;
  cfg.spec = posture_spec(3.0);  // pulls q well outside the box
  cfg.constraints.add(joint_position_box(kLayout, Eigen::VectorXd::Constant(1, -0.5), Eigen::VectorXd::Constant(1, 0.5)))
      .add(joint_rate_limit(kLayout, 0.2))
      .add(action_box(kLayout, Eigen::VectorXd::Constant(1, -0.3), Eigen::VectorXd::Constant(1, 0.3)));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto res = f.plan(cfg, f.skewed, std::nullopt, seed);
    for (const auto& c : res.candidates) EXPECT_TRUE(is_feasible(c, cfg.constraints, 1e-12).feasible);
    EXPECT_EQ(res.diagnostics.violation_post.back(), 0.0);
  }
}

TEST(Planner, SelectsHighestReward) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 16;
  cfg.spec = posture_spec();
  auto res = f.plan(cfg, f.skewed, some_state());
  for (std::size_t j = 0; j < res.all_rewards.size(); ++j) {
    EXPECT_DOUBLE_EQ(res.all_rewards[j], composite(cfg.spec, res.candidates[j]));
    EXPECT_LE(res.all_rewards[j], res.all_rewards[static_cast<std::size_t>(res.selected_index)]);
  }
  EXPECT_EQ(res.best.data(), res.candidates[static_cast<std::size_t>(res.selected_index)].data());
}

TEST(Planner, SelectionInvariantToRewardScale) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 16;
  cfg.spec = posture_spec();
  auto a = f.plan(cfg, f.skewed, some_state());
  cfg.spec = cfg.spec.scaled(7.5);
  auto b = f.plan(cfg, f.skewed, some_state());
  EXPECT_EQ(a.selected_index, b.selected_index);
}

TEST(Planner, GuidanceRaisesReward) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 64;
  cfg.spec = posture_spec(1.5);
  auto mean_reward = [](const PlanResult& r) {
    double s = 0;
    for (double v : r.all_rewards) s += v;
    return s / static_cast<double>(r.all_rewards.size());
  };
  const double base = mean_reward(f.plan(cfg, f.skewed, some_state()));
  cfg.lambda = 5.0;
  auto guided = f.plan(cfg, f.skewed, some_state());
  EXPECT_GT(mean_reward(guided), base);
  EXPECT_GT(guided.diagnostics.guidance_norm.front(), 0.0);
  EXPECT_EQ(guided.diagnostics.guidance_norm.back(), 0.0);  // sigma_1 = 0
}

TEST(Planner, GuidanceSpacesAgreeUnderUnitScale) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 4;
  cfg.lambda = 0.4;
  cfg.spec = posture_spec();
  NormStats shifted = f.identity;
  shifted.mean.setConstant(0.25);
  auto a = f.plan(cfg, shifted, some_state());
  cfg.space = GuidanceSpace::kPhysical;
  auto b = f.plan(cfg, shifted, some_state());
  for (std::size_t j = 0; j < 4; ++j)
    EXPECT_LT((a.candidates[j].data() - b.candidates[j].data()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Planner, NonFiniteCandidatesDiscarded) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 6;
  cfg.lambda = 1.0;
  const int row = kLayout.action();
  cfg.spec.add(CustomTerm{"poison",
                          [](const Eigen::MatrixXd&, int) { return 0.0; },
                          [row](const Eigen::MatrixXd& x, int) {
                            Eigen::MatrixXd g = Eigen::MatrixXd::Zero(x.rows(), x.cols());
                            if (x(row, 0) > 1.0) g(row, 0) = std::numeric_limits<double>::quiet_NaN();
                            return g;
                          }},
               1.0);
  auto res = f.plan(cfg, f.identity, std::nullopt);
  ASSERT_FALSE(res.diagnostics.discarded.empty());
  for (int j : res.diagnostics.discarded) EXPECT_TRUE(std::isnan(res.all_rewards[static_cast<std::size_t>(j)]));
  EXPECT_FALSE(std::isnan(res.all_rewards[static_cast<std::size_t>(res.selected_index)]));
}

TEST(Planner, RejectsBadConfig) {
  Fixture f;
  PlannerConfig cfg;
  cfg.candidates = 0;
  EXPECT_THROW(f.plan(cfg, f.skewed, std::nullopt), InvalidInput);
  cfg.candidates = 1;
  cfg.lambda = -1.0;
  EXPECT_THROW(f.plan(cfg, f.skewed, std::nullopt), InvalidInput);
  cfg.lambda = 0.0;
  cfg.inference_steps = 5;
  EXPECT_THROW(f.plan(cfg, f.skewed, std::nullopt), InvalidInput);
  cfg.inference_steps = 10;
  EXPECT_THROW(f.plan(cfg, f.skewed, Eigen::VectorXd::Zero(3)), InvalidInput);
}

}  // namespace
}  // namespace dmpc
