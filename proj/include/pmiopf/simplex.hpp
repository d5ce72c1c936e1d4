#pragma once

// Two-phase dense tableau simplex with Bland's rule, for the small linear
// programs of the DC-OPF baseline:
//
//     min c'x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lo <= x <= hi
//
// Infinite bounds are allowed. Sizes here are a few hundred columns at most.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <vector>

#include "pmiopf/errors.hpp"

namespace pmiopf::lp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Problem {
  Vector c;
  Matrix a_eq;
  Vector b_eq;
  Matrix a_ub;
  Vector b_ub;
  Vector lo, hi;
};

enum class Status { optimal, infeasible, unbounded, iteration_limit };

struct Result {
  Status status = Status::infeasible;
  Vector x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  int pivots = 0;
};

namespace detail {

/// Tableau over standard form  min c'y, A y = b, y >= 0, b >= 0.
class Tableau {
 public:
  Tableau(const Matrix& a, const Vector& b, const Vector& c, double tol) : tol_(tol) {
    m_ = a.rows();
    n_ = a.cols();
    // columns: y (n), artificials (m), rhs
    t_ = Matrix::Zero(m_ + 1, n_ + m_ + 1);
    t_.topLeftCorner(m_, n_) = a;
    t_.block(0, n_, m_, m_).setIdentity();
    t_.col(n_ + m_).head(m_) = b;
    basis_.resize(static_cast<std::size_t>(m_));
    for (Eigen::Index i = 0; i < m_; ++i) basis_[static_cast<std::size_t>(i)] = n_ + i;
    c_ = c;
  }

  Status run(int max_pivots, int& pivots) {
    // Phase 1: minimize the sum of artificials.
    Vector cost1 = Vector::Zero(n_ + m_);
    cost1.tail(m_).setOnes();
    set_objective(cost1);
    auto st = iterate(n_ + m_, max_pivots, pivots);
    if (st != Status::optimal) return st;
    if (-t_(m_, n_ + m_) > 1e-7 * (1.0 + t_.col(n_ + m_).head(m_).cwiseAbs().maxCoeff())) return Status::infeasible;
    drive_out_artificials();

    Vector cost2 = Vector::Zero(n_ + m_);
    cost2.head(n_) = c_;
    set_objective(cost2);
    return iterate(n_, max_pivots, pivots);
  }

  Vector solution() const {
    Vector y = Vector::Zero(n_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      const auto j = basis_[static_cast<std::size_t>(i)];
      if (j < n_ && !dropped_[static_cast<std::size_t>(i)]) y[j] = t_(i, n_ + m_);
    }
    return y;
  }

 private:
  void set_objective(const Vector& cost) {
    t_.row(m_).setZero();
    t_.row(m_).head(n_ + m_) = cost.transpose();
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (dropped_.size() && dropped_[static_cast<std::size_t>(i)]) continue;
      const double cb = cost[basis_[static_cast<std::size_t>(i)]];
      if (cb != 0.0) t_.row(m_) -= cb * t_.row(i);
    }
  }

  /// Bland's rule over the first `ncols` columns.
  Status iterate(Eigen::Index ncols, int max_pivots, int& pivots) {
    if (dropped_.empty()) dropped_.assign(static_cast<std::size_t>(m_), false);
    const auto rhs = n_ + m_;
    while (true) {
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < ncols; ++j)
        if (t_(m_, j) < -tol_) {
          enter = j;
          break;
        }
      if (enter < 0) return Status::optimal;
      Eigen::Index leave = -1;
      double best = kInf;
      for (Eigen::Index i = 0; i < m_; ++i) {
        if (dropped_[static_cast<std::size_t>(i)]) continue;
        const double a = t_(i, enter);
        if (a > tol_) {
          const double r = t_(i, rhs) / a;
          if (r < best - 1e-15 ||
              (std::abs(r - best) <= 1e-15 && basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
            best = r;
            leave = i;
          }
        }
      }
      if (leave < 0) return Status::unbounded;
      pivot(leave, enter);
      if (++pivots > max_pivots) return Status::iteration_limit;
    }
  }

  void pivot(Eigen::Index r, Eigen::Index c) {
    t_.row(r) /= t_(r, c);
    for (Eigen::Index i = 0; i <= m_; ++i)
      if (i != r && t_(i, c) != 0.0) t_.row(i) -= t_(i, c) * t_.row(r);
    basis_[static_cast<std::size_t>(r)] = c;
  }

  void drive_out_artificials() {
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (basis_[static_cast<std::size_t>(i)] < n_) continue;
      Eigen::Index col = -1;
      for (Eigen::Index j = 0; j < n_; ++j)
        if (std::abs(t_(i, j)) > 1e-9) {
          col = j;
          break;
        }
      if (col >= 0) pivot(i, col);
      else dropped_[static_cast<std::size_t>(i)] = true;  // redundant row
    }
  }

  double tol_;
  Eigen::Index m_ = 0, n_ = 0;
  Matrix t_;
  Vector c_;
  std::vector<Eigen::Index> basis_;
  std::vector<bool> dropped_;
};

}  // namespace detail

inline Result solve(const Problem& p, int max_pivots = 20000, double tol = 1e-10) {
  const auto nv = p.c.size();
  if (p.lo.size() != nv || p.hi.size() != nv) throw DimensionError("lp::solve: bound size mismatch");
  const auto neq = p.a_eq.rows(), nub = p.a_ub.rows();
  if ((neq && p.a_eq.cols() != nv) || (nub && p.a_ub.cols() != nv)) throw DimensionError("lp::solve: matrix size mismatch");

  // Map each original variable onto nonnegative standard-form columns:
  // x = shift + sign * y_pos (- y_neg for free variables).
  struct Map {
    Eigen::Index pos = -1, neg = -1;
    double shift = 0, sign = 1;
  };
  std::vector<Map> map(static_cast<std::size_t>(nv));
  Eigen::Index ny = 0;
  std::vector<std::pair<Eigen::Index, double>> upper;  // (column, bound) rows y <= u
  for (Eigen::Index j = 0; j < nv; ++j) {
    auto& mj = map[static_cast<std::size_t>(j)];
    const double lo = p.lo[j], hi = p.hi[j];
    if (lo > hi) return {Status::infeasible, {}, std::numeric_limits<double>::quiet_NaN(), 0};
    if (std::isfinite(lo)) {
      mj = {ny++, -1, lo, 1.0};
      if (std::isfinite(hi)) upper.emplace_back(mj.pos, hi - lo);
    } else if (std::isfinite(hi)) {
      mj = {ny++, -1, hi, -1.0};
    } else {
      mj.pos = ny++;
      mj.neg = ny++;
    }
  }
  const Eigen::Index n_slack = nub + static_cast<Eigen::Index>(upper.size());
  const Eigen::Index rows = neq + n_slack;
  const Eigen::Index cols = ny + n_slack;
  Matrix a = Matrix::Zero(rows, cols);
  Vector b = Vector::Zero(rows);
  Vector c = Vector::Zero(cols);
  double c0 = 0;

  auto scatter = [&](Eigen::Index row, const Eigen::RowVectorXd& coeff, double rhs) {
    double r = rhs;
    for (Eigen::Index j = 0; j < nv; ++j) {
      const double v = coeff[j];
      if (v == 0.0) continue;
      const auto& mj = map[static_cast<std::size_t>(j)];
      r -= v * mj.shift;
      a(row, mj.pos) += v * mj.sign;
      if (mj.neg >= 0) a(row, mj.neg) -= v;
    }
    b[row] = r;
  };
  for (Eigen::Index i = 0; i < neq; ++i) scatter(i, p.a_eq.row(i), p.b_eq[i]);
  for (Eigen::Index i = 0; i < nub; ++i) {
    scatter(neq + i, p.a_ub.row(i), p.b_ub[i]);
    a(neq + i, ny + i) = 1.0;
  }
  for (std::size_t k = 0; k < upper.size(); ++k) {
    const auto row = neq + nub + static_cast<Eigen::Index>(k);
    a(row, upper[k].first) = 1.0;
    a(row, ny + nub + static_cast<Eigen::Index>(k)) = 1.0;
    b[row] = upper[k].second;
  }
  for (Eigen::Index j = 0; j < nv; ++j) {
    const auto& mj = map[static_cast<std::size_t>(j)];
    c0 += p.c[j] * mj.shift;
    c[mj.pos] += p.c[j] * mj.sign;
    if (mj.neg >= 0) c[mj.neg] -= p.c[j];
  }
  for (Eigen::Index i = 0; i < rows; ++i)
    if (b[i] < 0) {
      a.row(i) *= -1.0;
      b[i] = -b[i];
    }

  detail::Tableau tab(a, b, c, tol);
  Result res;
  res.status = tab.run(max_pivots, res.pivots);
  if (res.status != Status::optimal) return res;
  const Vector y = tab.solution();
  res.x.resize(nv);
  for (Eigen::Index j = 0; j < nv; ++j) {
    const auto& mj = map[static_cast<std::size_t>(j)];
    res.x[j] = mj.shift + mj.sign * y[mj.pos] - (mj.neg >= 0 ? y[mj.neg] : 0.0);
  }
  res.objective = p.c.dot(res.x);
  (void)c0;
  return res;
}

}  // namespace pmiopf::lp
