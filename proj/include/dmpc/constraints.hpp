#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "dmpc/error.hpp"
#include "dmpc/rewards.hpp"

namespace dmpc {

/// Elementwise box on a block of rows over a range of columns. `lo`/`hi`
/// hold one bound per selected row. A rate limit is a symmetric box on the
/// joint-velocity rows.
struct BoxConstraint {
  std::string name;
  int first_row = 0;
  int row_count = 0;
  int first_col = 0;
  int col_count = -1;  // -1: through the last column
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  void validate(Eigen::Index rows, Eigen::Index cols) const {
    if (row_count < 1 || first_row < 0 || first_row + row_count > rows)
      throw InvalidInput("constraint '" + name + "' row selector out of range");
    if (first_col < 0 || first_col >= cols || (col_count != -1 && (col_count < 1 || first_col + col_count > cols)))
      throw InvalidInput("constraint '" + name + "' column selector out of range");
    if (lo.size() != row_count || hi.size() != row_count)
      throw InvalidInput("constraint '" + name + "' needs one bound per selected row");
    if ((lo.array() > hi.array()).any()) throw InvalidInput("constraint '" + name + "' has lo > hi");
  }

  [[nodiscard]] int cols_in(Eigen::Index cols) const {
    return col_count == -1 ? static_cast<int>(cols) - first_col : col_count;
  }
};

inline BoxConstraint joint_position_box(const StateLayout& L, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return {"joint_position", L.q(), L.joints, 0, -1, lo, hi};
}

inline BoxConstraint joint_rate_limit(const StateLayout& L, double qdot_max) {
  return {"joint_rate", L.qdot(), L.joints, 0, -1, Eigen::VectorXd::Constant(L.joints, -qdot_max),
          Eigen::VectorXd::Constant(L.joints, qdot_max)};
}

inline BoxConstraint action_box(const StateLayout& L, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return {"action", L.action(), L.joints, 0, -1, lo, hi};
}

/// Applied in declaration order.
struct ConstraintSet {
  std::vector<BoxConstraint> boxes;

  [[nodiscard]] bool empty() const { return boxes.empty(); }
  ConstraintSet& add(BoxConstraint b) {
    boxes.push_back(std::move(b));
    return *this;
  }
};

inline void project_in_place(Eigen::MatrixXd& x, const ConstraintSet& c) {
  for (const auto& b : c.boxes) {
    b.validate(x.rows(), x.cols());
    auto blk = x.block(b.first_row, b.first_col, b.row_count, b.cols_in(x.cols()));
    for (Eigen::Index c = 0; c < blk.cols(); ++c) blk.col(c) = blk.col(c).cwiseMax(b.lo).cwiseMin(b.hi);
  }
}

inline Eigen::MatrixXd project(const Eigen::MatrixXd& x, const ConstraintSet& c) {
  Eigen::MatrixXd out = x;
  project_in_place(out, c);
  return out;
}

inline Trajectory project(const Trajectory& traj, const ConstraintSet& c) {
  return {traj.state_dim(), traj.action_dim(), project(traj.data(), c)};
}

struct Feasibility {
  bool feasible = true;
  std::vector<double> max_violation;  // one per constraint
};

inline Feasibility is_feasible(const Eigen::MatrixXd& x, const ConstraintSet& c, double tol = 1e-9) {
  Feasibility f;
  for (const auto& b : c.boxes) {
    b.validate(x.rows(), x.cols());
    const auto blk = x.block(b.first_row, b.first_col, b.row_count, b.cols_in(x.cols())).array();
    const double over = (blk.colwise() - b.hi.array()).maxCoeff();
    const double under = ((-blk).colwise() + b.lo.array()).maxCoeff();
    const double v = std::max({0.0, over, under});
    f.max_violation.push_back(v);
    if (v > tol) f.feasible = false;
  }
  return f;
}

inline Feasibility is_feasible(const Trajectory& traj, const ConstraintSet& c, double tol = 1e-9) {
  return is_feasible(traj.data(), c, tol);
}

}  // namespace dmpc
