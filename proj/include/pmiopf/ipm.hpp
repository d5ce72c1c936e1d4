#pragma once

// Dense primal-dual interior point method for
//
//     min f(x)  s.t.  h(x) = 0,  g(x) <= 0
//
// following the classic MATPOWER/PYPOWER MIPS iteration: Newton steps on the
// perturbed KKT conditions, slack variables z for the inequalities and a
// fraction-to-boundary rule on both primal and dual step lengths.
//
// `Problem` must provide
//   Eigen::Index nx() const;
//   double objective(const Vector& x, Vector& grad) const;
//   void equalities(const Vector& x, Vector& h, Matrix& jac) const;    // jac: nh x nx
//   void inequalities(const Vector& x, Vector& g, Matrix& jac) const;  // jac: ng x nx
//   Matrix lagrangian_hessian(const Vector& x, const Vector& lam, const Vector& mu) const;

#include <Eigen/Core>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>

namespace pmiopf::ipm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Options {
  double feas_tol = 1e-10;
  double grad_tol = 1e-9;
  double comp_tol = 1e-10;
  double cost_tol = 1e-12;
  int max_iterations = 150;
  double step_fraction = 0.99995;  ///< fraction-to-boundary
  double centering = 0.1;
  double z0 = 1.0;
  /// Dual regularization; keeps the KKT matrix solvable when equality
  /// constraints are linearly dependent (e.g. reactive balance on purely
  /// resistive networks).
  double dual_regularization = 1e-12;
};

struct Result {
  Vector x, lam, mu, z;
  double objective = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int iterations = 0;
  double feascond = std::numeric_limits<double>::infinity();
  double gradcond = std::numeric_limits<double>::infinity();
  double compcond = std::numeric_limits<double>::infinity();
};

template <class Problem>
Result solve(const Problem& prob, Vector x, const Options& opt = {}) {
  const auto nx = prob.nx();
  Vector df, h, g;
  Matrix jh, jg;
  double f = prob.objective(x, df);
  prob.equalities(x, h, jh);
  prob.inequalities(x, g, jg);
  const auto neq = h.size(), niq = g.size();

  Vector lam = Vector::Zero(neq);
  Vector z = Vector::Constant(niq, opt.z0);
  for (Eigen::Index i = 0; i < niq; ++i) z[i] = std::max(opt.z0, -g[i]);
  double gamma = 1.0;
  Vector mu = (gamma / z.array()).matrix();

  auto inf_norm = [](const Vector& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; };
  auto lagrangian_grad = [&]() -> Vector {
    Vector lx = df;
    if (neq) lx.noalias() += jh.transpose() * lam;
    if (niq) lx.noalias() += jg.transpose() * mu;
    return lx;
  };

  Result res;
  Vector lx = lagrangian_grad();
  double f_prev = f;
  auto update_conditions = [&]() {
    const double maxg = niq ? std::max(0.0, g.maxCoeff()) : 0.0;
    res.feascond = std::max(inf_norm(h), maxg) / (1.0 + std::max(inf_norm(x), inf_norm(z)));
    res.gradcond = inf_norm(lx) / (1.0 + std::max(inf_norm(lam), inf_norm(mu)));
    res.compcond = (niq ? z.dot(mu) : 0.0) / (1.0 + inf_norm(x));
  };
  update_conditions();

  for (int it = 0; it < opt.max_iterations; ++it) {
    const Matrix lxx = prob.lagrangian_hessian(x, lam, mu);
    Matrix m = lxx;
    Vector n = lx;
    if (niq) {
      const Vector zinv = z.cwiseInverse();
      const Matrix jg_scaled = jg.transpose() * zinv.asDiagonal();  // nx x niq
      m.noalias() += jg_scaled * mu.asDiagonal() * jg;
      n.noalias() += jg_scaled * (mu.cwiseProduct(g) + Vector::Constant(niq, gamma));
    }
    Matrix kkt = Matrix::Zero(nx + neq, nx + neq);
    kkt.topLeftCorner(nx, nx) = m;
    if (neq) {
      kkt.topRightCorner(nx, neq) = jh.transpose();
      kkt.bottomLeftCorner(neq, nx) = jh;
      kkt.bottomRightCorner(neq, neq).diagonal().setConstant(-opt.dual_regularization);
    }
    Vector rhs(nx + neq);
    rhs << -n, -h;
    const Vector step = kkt.partialPivLu().solve(rhs);
    if (!step.allFinite()) break;
    const Vector dx = step.head(nx);
    const Vector dlam = step.tail(neq);

    Vector dz, dmu;
    double alpha_p = 1.0, alpha_d = 1.0;
    if (niq) {
      dz = -g - z - jg * dx;
      dmu = -mu + z.cwiseInverse().cwiseProduct(Vector::Constant(niq, gamma) - mu.cwiseProduct(dz));
      for (Eigen::Index i = 0; i < niq; ++i) {
        if (dz[i] < 0) alpha_p = std::min(alpha_p, opt.step_fraction * z[i] / -dz[i]);
        if (dmu[i] < 0) alpha_d = std::min(alpha_d, opt.step_fraction * mu[i] / -dmu[i]);
      }
    }
    x += alpha_p * dx;
    lam += alpha_d * dlam;
    if (niq) {
      z += alpha_p * dz;
      mu += alpha_d * dmu;
      gamma = opt.centering * z.dot(mu) / static_cast<double>(niq);
    }

    f_prev = f;
    f = prob.objective(x, df);
    prob.equalities(x, h, jh);
    prob.inequalities(x, g, jg);
    lx = lagrangian_grad();
    update_conditions();
    res.iterations = it + 1;
    if (!x.allFinite() || !std::isfinite(f)) break;

    const double costcond = std::abs(f - f_prev) / (1.0 + std::abs(f_prev));
    if (res.feascond < opt.feas_tol && res.gradcond < opt.grad_tol && res.compcond < opt.comp_tol &&
        costcond < opt.cost_tol) {
      res.converged = true;
      break;
    }
  }
  res.x = std::move(x);
  res.lam = std::move(lam);
  res.mu = std::move(mu);
  res.z = std::move(z);
  res.objective = f;
  return res;
}

}  // namespace pmiopf::ipm
