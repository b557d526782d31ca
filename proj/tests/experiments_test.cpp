#include <gtest/gtest.h>

#include <cmath>

#include "dmpc/experiments.hpp"

namespace dmpc {
namespace {

PriorCheckpoint tiny_prior(std::uint64_t seed = 1) {
  const StateLayout L{};
  PriorCheckpoint p;
  p.model = Denoiser(L.state_dim(), L.action_dim(), 11, {32}, Activation::kTanh, seed);
  p.schedule = make_schedule(50, 1e-4, 0.2);
  p.stats = NormStats::identity(L.rows());
  p.clean_prefix = L.state_dim();
  return p;
}

TEST(PairedT, MatchesClosedFormAtTwoDegreesOfFreedom) {
  // For nu = 2 the Student-t survival function is 1/2 - t / (2 sqrt(2 + t^2)).
  const std::vector<double> a{1.0, 2.0, 6.0}, b{0.0, 0.0, 0.0};
  const double t = 3.0 / std::sqrt(7.0 / 3.0);
  EXPECT_NEAR(paired_t_greater(a, b), 0.5 - t / (2.0 * std::sqrt(2.0 + t * t)), 1e-12);
}

TEST(PairedT, DegenerateAndInvalid) {
  const std::vector<double> a{2.0, 2.0}, b{1.0, 1.0};
  EXPECT_EQ(paired_t_greater(a, b), 0.0);
  EXPECT_EQ(paired_t_greater(b, a), 1.0);
  EXPECT_THROW((void)paired_t_greater(std::vector<double>{1.0}, std::vector<double>{1.0}), InvalidInput);
}

TEST(PairedT, NullRejectionRateNearAlpha) {
  Rng rng(7);
  int rejected = 0;
  const int trials = 4000;
  for (int k = 0; k < trials; ++k) {
    std::vector<double> a(20), b(20);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    rejected += paired_t_greater(a, b) < 0.05 ? 1 : 0;
  }
  // Binomial(4000, 0.05): sd ~ 0.0034.
  EXPECT_NEAR(static_cast<double>(rejected) / trials, 0.05, 0.012);
}

TEST(Stats, SummaryAndCorrelation) {
  const std::vector<double> v{1, 2, 3, 4};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
  const std::vector<double> w{2, 4, 6, 8}, u{4, 3, 2, 1};
  EXPECT_NEAR(correlation(v, w), 1.0, 1e-15);
  EXPECT_NEAR(correlation(v, u), -1.0, 1e-15);
}

TEST(HeightReward, LabelFromJointPosture) {
  const StateLayout L{};
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(L.rows(), 11);
  x.middleRows(L.q(), L.joints).setConstant(0.8);  // nominal posture, h = 0.3
  EXPECT_NEAR(height_label(Trajectory(L.state_dim(), L.action_dim(), x), 0.15), -0.0225, 1e-15);
  x.middleRows(L.q(), L.joints).setConstant(1.4);  // h = 0.15
  EXPECT_NEAR(height_label(Trajectory(L.state_dim(), L.action_dim(), x), 0.15), 0.0, 1e-15);
}

TEST(HeightReward, HeldOutCorrelationOnToyData) {
  CollectConfig cc;
  cc.episodes = 24;
  cc.steps = 400;
  cc.seed = 3;
  const auto col = collect_demos(cc);
  HeightRewardConfig rc;
  rc.train.hidden = {64, 64};
  rc.train.epochs = 30;
  const auto r = train_height_reward(col.dataset, make_schedule(50, 1e-4, 0.2), rc);
  EXPECT_GT(r.heldout_correlation, 0.9);
  EXPECT_GT(r.heldout_count, 100);
}

TEST(Csv, FormatAndWidthCheck) {
  Csv c{{"a", "b"}, {}};
  c.add({"1", fmt(0.1)});
  EXPECT_EQ(c.str(), "a,b\n1,0.1\n");
  EXPECT_THROW(c.add({"only"}), InvalidInput);
  EXPECT_EQ(fmt(1.0 / 3.0), "0.333333333");
}

AdaptationCell cell(const std::string& o, int n, bool r, std::vector<double> pen, bool gate = true) {
  AdaptationCell c;
  c.objective = o;
  c.candidates = n;
  c.reward = r;
  c.penalty = std::move(pen);
  c.plan_penalty = c.penalty;
  c.gate_ok = gate;
  return c;
}

TEST(AdaptationTests, ComparisonsAndGate) {
  AdaptationResult res;
  res.cells.push_back(cell("energy", 1, false, {1.0, 1.1, 0.9, 1.0}));
  res.cells.push_back(cell("energy", 1, true, {0.8, 0.85, 0.7, 0.8}));
  res.cells.push_back(cell("energy", 100, false, {0.7, 0.75, 0.6, 0.72}, false));
  res.cells.push_back(cell("energy", 100, true, {0.6, 0.6, 0.5, 0.6}));
  const auto tests = adaptation_tests(res);
  ASSERT_EQ(tests.size(), 3u);
  EXPECT_EQ(tests[0].name, "candidates");
  EXPECT_EQ(tests[0].from, "C1_R-_C-");
  EXPECT_EQ(tests[0].to, "C100_R-_C-");
  EXPECT_LT(tests[0].p_value, 0.05);
  EXPECT_FALSE(tests[0].pass());  // improved but the N=100 cell broke the tracking gate
  EXPECT_TRUE(tests[1].pass());
  EXPECT_EQ(tests[1].to, "C1_R+_C-");
  EXPECT_FALSE(tests[2].pass());
}

TEST(AdaptationTable, OneRowPerObjectiveOneColumnPerCell) {
  AdaptationResult res;
  for (const char* o : {"joint_vel", "energy"})
    for (int n : {1, 10})
      for (bool r : {false, true}) res.cells.push_back(cell(o, n, r, {1.0, 2.0}, !(n == 10 && r)));
  const Csv t = adaptation_table(res);
  EXPECT_EQ(t.header.size(), 5u);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][0], "joint_vel");
  EXPECT_EQ(t.rows[1][4], "rejected");
  EXPECT_EQ(t.rows[1][1], "1.5");
}

TEST(Adaptation, SmallGridIsDeterministicAndProjectionHolds) {
  const PriorCheckpoint prior = tiny_prior();
  AdaptationConfig cfg;
  cfg.objectives = {Objective::kJointRange, Objective::kEnergy};
  cfg.candidates = {1, 4};
  cfg.seeds = 3;
  cfg.episode_steps = 40;
  const AdaptationResult a = run_adaptation(prior, cfg);
  const AdaptationResult b = run_adaptation(prior, cfg);
  ASSERT_EQ(a.cells.size(), 2u * 2u * 2u * 2u);
  EXPECT_EQ(adaptation_csv(a).str(), adaptation_csv(b).str());
  // The shared baseline normalizes itself to mean 1.
  EXPECT_NEAR(summarize(a.cells.front().penalty).mean, 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(a.cells.front().tracking_ratio, 1.0);
}

TEST(Adaptation, ConstraintZeroesExecutedRangeViolation) {
  const PriorCheckpoint prior = tiny_prior(4);
  AdaptationConfig cfg;
  const ObjectivePlan op = objective_plan(Objective::kJointRange, cfg);
  PlannerConfig pc;
  pc.constraints = op.constraints;
  const PlanFn fn = make_plan_fn(prior, pc);
  cfg.episode_steps = 60;
  const StateLayout L{};
  for (int i = 0; i < 3; ++i) {
    const EpisodeOutcome e = adaptation_episode(fn, cfg, i);
    // Column 0 of the first plan is the observed state; every later column is projected.
    for (Eigen::Index t = 1; t < e.executed.cols(); ++t) {
      const auto q = e.executed.col(t).segment(L.q(), L.joints);
      EXPECT_GE(q.minCoeff(), cfg.range_lo);
      EXPECT_LE(q.maxCoeff(), cfg.range_hi);
    }
  }
}

TEST(Deploy, VariantsMatchTheAblationGrid) {
  const auto v = deploy_variants();
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v[0].executor.margin, 0);
  EXPECT_EQ(v[0].executor.cached_steps, 0);
  EXPECT_EQ(v[1].executor.cached_steps, 7);
  EXPECT_FALSE(v[1].executor.refresh);
  EXPECT_EQ(v[2].executor.inference_steps, 3);
  EXPECT_EQ(v[3].executor.margin, 3);
  EXPECT_FALSE(v[3].executor.refresh);
  EXPECT_TRUE(v[4].executor.refresh);
  for (const auto& x : v) EXPECT_NO_THROW(x.executor.validate());
}

TEST(Deploy, SmokeRunOrdersLatency) {
  const PriorCheckpoint prior = tiny_prior();
  DeployConfig cfg;
  cfg.episodes = 2;
  cfg.phase_seconds = 1.0;
  const DeployResult r = run_deploy_ablation(prior, cfg);
  ASSERT_EQ(r.rows.size(), 5u);
  ASSERT_EQ(r.reference.size(), 3u);
  for (const auto& p : r.reference) EXPECT_GT(p.tracking, 0.0);
  const auto lat = [&](int i) { return r.rows[static_cast<std::size_t>(i)].metrics.median_latency; };
  EXPECT_GT(lat(0), lat(1));
  EXPECT_GT(lat(0), lat(2));
  EXPECT_GT(lat(1), lat(3));
  EXPECT_DOUBLE_EQ(lat(3), lat(4));
  const Csv c = deploy_csv(r);
  EXPECT_EQ(c.rows.size(), 6u);
  EXPECT_EQ(c.rows[0][0], "demonstrator");
}

TEST(Finetune, StabilityEvalIsDeterministic) {
  const PriorCheckpoint prior = tiny_prior();
  ExecutorConfig exec{.margin = 3, .cached_steps = 0};
  const auto a = evaluate_stability(prior, {}, exec, 1.0, 3, 40, 11);
  const auto b = evaluate_stability(prior, {}, exec, 1.0, 3, 40, 11);
  EXPECT_EQ(a.stable, b.stable);
  EXPECT_EQ(a.tracking_error, b.tracking_error);
  EXPECT_GE(a.rate(), 0.0);
  EXPECT_LE(a.rate(), 1.0);
}

}  // namespace
}  // namespace dmpc
