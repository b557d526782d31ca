#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dmpc/dataset_io.hpp"
#include "dmpc/rng.hpp"
#include "dmpc/trajectory.hpp"

namespace dmpc {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dmpc_" + name)).string();
}

Trajectory random_traj(Rng& rng, int n_s, int n_a, int h) {
  Eigen::MatrixXd m = rng.normal_matrix(n_s + n_a, h);
  quantize_float32(m);
  return {n_s, n_a, m};
}

TEST(Trajectory, RejectsBadShapes) {
  EXPECT_THROW(Trajectory(2, 1, Eigen::MatrixXd::Zero(4, 3)), InvalidInput);
  EXPECT_THROW(Trajectory(2, 1, Eigen::MatrixXd::Zero(3, 0)), InvalidInput);
  Trajectory t(2, 1, 5);
  EXPECT_EQ(t.rows(), 3);
  EXPECT_EQ(t.horizon(), 5);
}

TEST(Trajectory, FlattenRoundTrip) {
  Rng rng(3);
  Trajectory t = random_traj(rng, 3, 2, 4);
  EXPECT_EQ(Trajectory::unflatten(3, 2, 4, t.flatten()), t);
}

TEST(Normalize, MeanMapsToZero) {
  NormStats st{Eigen::Vector3d(1.0, -2.0, 0.5), Eigen::Vector3d(2.0, 3.0, 0.1)};
  Eigen::MatrixXd m = st.mean.replicate(1, 4);
  auto z = normalize(Trajectory(2, 1, m), st);
  EXPECT_TRUE(z.data().isZero(0.0));
}

TEST(Normalize, AffineValue) {
  NormStats st{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Constant(2, 2.0)};
  Eigen::MatrixXd m(2, 1);
  m << 4.0, -1.0;
  auto z = normalize(Trajectory(1, 1, m), st);
  EXPECT_DOUBLE_EQ(z.data()(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(z.data()(1, 0), -0.5);
}

TEST(Normalize, RoundTripWithinTolerance) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    NormStats st{rng.normal_matrix(5, 1).col(0) * 10.0,
                 (rng.normal_matrix(5, 1).col(0).array().abs() + 1e-3).matrix()};
    Trajectory t(3, 2, rng.normal_matrix(5, 7) * 100.0);
    auto back = denormalize(normalize(t, st), st);
    const double rel = (back.data() - t.data()).cwiseAbs().maxCoeff() / t.data().cwiseAbs().maxCoeff();
    EXPECT_LT(rel, 1e-9);
  }
}

TEST(Normalize, DimensionMismatchRejected) {
  NormStats st = NormStats::identity(4);
  EXPECT_THROW(normalize(Trajectory(2, 1, 3), st), InvalidInput);
}

TEST(Stats, ScaleClampedForConstantRows) {
  std::vector<Trajectory> segs;
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 5, 5, 5;
  segs.emplace_back(1, 1, m);
  auto st = compute_stats(segs);
  EXPECT_DOUBLE_EQ(st.mean(1), 5.0);
  EXPECT_DOUBLE_EQ(st.scale(1), 1e-6);
  EXPECT_GT(st.scale(0), 0.0);
}

TEST(Stats, NormalizedDatasetHasZeroMean) {
  Rng rng(5);
  std::vector<Trajectory> segs;
  for (int i = 0; i < 50; ++i) {
    Eigen::MatrixXd m = rng.normal_matrix(4, 6);
    m.row(0).array() += 3.0;
    m.row(2) *= 7.0;
    segs.emplace_back(3, 1, m);
  }
  auto st = compute_stats(segs);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4), sq = Eigen::VectorXd::Zero(4);
  double n = 0;
  for (const auto& s : segs) {
    auto z = normalize(s, st);
    sum += z.data().rowwise().sum();
    sq += z.data().array().square().matrix().rowwise().sum();
    n += s.horizon();
  }
  for (int r = 0; r < 4; ++r) {
    EXPECT_NEAR(sum(r) / n, 0.0, 1e-6);
    EXPECT_NEAR(sq(r) / n, 1.0, 1e-6);
  }
}

std::vector<StepSample> ramp_rollout(int len) {
  std::vector<StepSample> r;
  for (int i = 0; i < len; ++i)
    r.push_back({Eigen::Vector2d(i, -i), Eigen::VectorXd::Constant(1, 0.5 * i)});
  return r;
}

TEST(Window, CountFormula) {
  auto r = ramp_rollout(1000);
  EXPECT_EQ(window_rollout(r, 11, 1).size(), 990u);
  EXPECT_EQ(window_rollout(r, 11, 5).size(), 198u);
}

TEST(Window, DegenerateWindowEqualsRollout) {
  auto r = ramp_rollout(7);
  auto w = window_rollout(r, 7, 3);
  ASSERT_EQ(w.size(), 1u);
  for (int t = 0; t < 7; ++t) {
    EXPECT_EQ(w[0].state(t), r[t].state);
    EXPECT_EQ(w[0].action(t), r[t].action);
  }
}

TEST(Window, StrideStartsEnumerated) {
  auto r = ramp_rollout(20);
  auto w = window_rollout(r, 11, 5);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].state(0)(0), 0.0);
  EXPECT_EQ(w[1].state(0)(0), 5.0);
  EXPECT_EQ(w[1].state(10)(0), 15.0);
}

TEST(Window, ShortRolloutRejected) {
  auto r = ramp_rollout(5);
  EXPECT_THROW(window_rollout(r, 6, 1), InvalidInput);
  EXPECT_THROW(window_rollout(r, 3, 0), InvalidInput);
}

// Stride 1 reproduces every contiguous slice exactly once.
TEST(Window, StrideOneMatchesBruteForce) {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int len = rng.uniform_int(3, 40);
    const int h = rng.uniform_int(1, len);
    std::vector<StepSample> r;
    for (int i = 0; i < len; ++i) r.push_back({rng.normal_matrix(3, 1).col(0), rng.normal_matrix(2, 1).col(0)});
    auto w = window_rollout(r, h, 1);
    ASSERT_EQ(static_cast<int>(w.size()), len - h + 1);
    for (int start = 0; start <= len - h; ++start) {
      int matches = 0;
      for (const auto& seg : w) {
        bool same = true;
        for (int t = 0; t < h && same; ++t)
          same = seg.state(t) == r[start + t].state && seg.action(t) == r[start + t].action;
        matches += same;
      }
      EXPECT_EQ(matches, 1);
    }
  }
}

TrajectoryDataset random_dataset(Rng& rng, int count) {
  std::vector<Trajectory> segs;
  for (int i = 0; i < count; ++i) segs.push_back(random_traj(rng, 3, 2, 4));
  return make_dataset(std::move(segs), {3, 2, 4, 0.02, "unit"});
}

TEST(DatasetIo, EmptyDatasetRoundTrips) {
  Rng rng(1);
  auto ds = random_dataset(rng, 0);
  const auto path = temp_path("empty.bin");
  save_dataset(ds, path);
  EXPECT_EQ(load_dataset(path), ds);
}

TEST(DatasetIo, RandomDatasetsRoundTripExactly) {
  Rng rng(2);
  for (int count : {1, 2, 17}) {
    auto ds = random_dataset(rng, count);
    const auto path = temp_path("rt.bin");
    save_dataset(ds, path);
    auto back = load_dataset(path);
    EXPECT_EQ(back, ds);
    save_dataset(back, path + "2");
    std::ifstream a(path, std::ios::binary), b(path + "2", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    EXPECT_EQ(sa, sb);
  }
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_all(const std::string& path, const std::string& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << s;
}

ParseError::Kind parse_kind(const std::string& path) {
  try {
    (void)load_dataset(path);
  } catch (const ParseError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a parse error";
  return ParseError::Kind::kIo;
}

TEST(DatasetIo, CorruptionsGiveDistinctErrors) {
  Rng rng(4);
  auto ds = random_dataset(rng, 2);
  const auto path = temp_path("corrupt.bin");
  save_dataset(ds, path);
  const std::string good = read_all(path);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  write_all(path, bad_magic);
  EXPECT_EQ(parse_kind(path), ParseError::Kind::kBadMagic);

  std::string bad_version = good;
  bad_version.replace(bad_version.find(" 1\n"), 3, " 9\n");
  write_all(path, bad_version);
  EXPECT_EQ(parse_kind(path), ParseError::Kind::kVersionMismatch);

  write_all(path, good.substr(0, good.size() - 10));
  EXPECT_EQ(parse_kind(path), ParseError::Kind::kTruncated);

  std::string bad_header = good;
  bad_header.replace(bad_header.find("horizon 4"), 9, "horizon x");
  write_all(path, bad_header);
  EXPECT_EQ(parse_kind(path), ParseError::Kind::kMalformedHeader);
}

}  // namespace
}  // namespace dmpc
