#pragma once

// Reference solvers: AC-OPF via a primal-dual interior point method in
// rectangular voltage coordinates, the angle-based DC-OPF linear program, and
// the analytic solution of the 3-bus example.

#include <Eigen/Core>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "pmiopf/acpf.hpp"
#include "pmiopf/complex_vec.hpp"
#include "pmiopf/dataset.hpp"
#include "pmiopf/errors.hpp"
#include "pmiopf/ipm.hpp"
#include "pmiopf/netmodel.hpp"
#include "pmiopf/simplex.hpp"

namespace pmiopf {

struct OPFSolution {
  ComplexVec v;
  ComplexVec s_gen;
  double objective = std::numeric_limits<double>::quiet_NaN();
  ViolationVec vio;
  bool converged = false;
  int iterations = 0;
  std::chrono::duration<double> solve_time{0};
  double balance_residual = std::numeric_limits<double>::infinity();
  double kkt_residual = std::numeric_limits<double>::infinity();
};

struct AcOpfOptions {
  double feas_tol = 1e-6;
  double opt_tol = 1e-5;
  int max_iterations = 150;
  int starts = 3;
  std::uint64_t seed = 0;
};

namespace detail {

/// AC-OPF over y = [e, f, Pg, Qg] (4n). Entries that are fixed by the model
/// (slack angle, fixed magnitudes, degenerate generator boxes) are removed from
/// the optimization vector x.
class AcOpfProblem {
 public:
  AcOpfProblem(const PowerNetwork& net, const ComplexVec& s_load) : net_(net), s_load_(s_load) {
    const auto n = net.n();
    ny_ = 4 * n;
    fixed_value_ = Eigen::VectorXd::Zero(ny_);
    std::vector<bool> free(static_cast<std::size_t>(ny_), true);
    const auto s = net.slack();
    free[static_cast<std::size_t>(n + s)] = false;  // slack angle
    if (net.v_min()[s] == net.v_max()[s]) {
      free[static_cast<std::size_t>(s)] = false;
      fixed_value_[s] = net.v_min()[s];
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (net.gen_min().re[i] == net.gen_max().re[i]) {
        free[static_cast<std::size_t>(2 * n + i)] = false;
        fixed_value_[2 * n + i] = net.gen_min().re[i];
      }
      if (net.gen_min().im[i] == net.gen_max().im[i]) {
        free[static_cast<std::size_t>(3 * n + i)] = false;
        fixed_value_[3 * n + i] = net.gen_min().im[i];
      }
    }
    for (Eigen::Index k = 0; k < ny_; ++k)
      if (free[static_cast<std::size_t>(k)]) free_.push_back(k);
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != s && net.v_min()[i] == net.v_max()[i]) fixed_mag_.push_back(i);
  }

  Eigen::Index nx() const { return static_cast<Eigen::Index>(free_.size()); }

  Eigen::VectorXd full(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = fixed_value_;
    for (std::size_t k = 0; k < free_.size(); ++k) y[free_[k]] = x[static_cast<Eigen::Index>(k)];
    return y;
  }
  Eigen::VectorXd reduce(const Eigen::VectorXd& y) const {
    Eigen::VectorXd x(nx());
    for (std::size_t k = 0; k < free_.size(); ++k) x[static_cast<Eigen::Index>(k)] = y[free_[k]];
    return x;
  }

  double objective(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
    const auto n = net_.n();
    const Eigen::VectorXd y = full(x);
    const auto pg = y.segment(2 * n, n);
    Eigen::VectorXd gy = Eigen::VectorXd::Zero(ny_);
    double f = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!net_.is_generator(i)) continue;
      const double c2 = net_.cost_quadratic()[i], c1 = net_.cost_linear()[i];
      f += c2 * pg[i] * pg[i] + c1 * pg[i];
      gy[2 * n + i] = 2 * c2 * pg[i] + c1;
    }
    grad = reduce(gy);
    return f;
  }

  void equalities(const Eigen::VectorXd& x, Eigen::VectorXd& h, Eigen::MatrixXd& jac) const {
    const auto n = net_.n();
    const Eigen::VectorXd y = full(x);
    const auto e = y.head(n), f = y.segment(n, n);
    const auto& G = net_.g_bus();
    const auto& B = net_.b_bus();
    const Eigen::VectorXd ir = G * e - B * f, ii = B * e + G * f;
    const auto nv = static_cast<Eigen::Index>(fixed_mag_.size());
    h.resize(2 * n + nv);
    h.head(n) = e.cwiseProduct(ir) + f.cwiseProduct(ii) - y.segment(2 * n, n) + s_load_.re;
    h.segment(n, n) = f.cwiseProduct(ir) - e.cwiseProduct(ii) - y.segment(3 * n, n) + s_load_.im;

    Eigen::MatrixXd jy = Eigen::MatrixXd::Zero(2 * n + nv, ny_);
    jy.block(0, 0, n, n) = e.asDiagonal() * G + f.asDiagonal() * B;
    jy.block(0, 0, n, n).diagonal() += ir;
    jy.block(0, n, n, n) = f.asDiagonal() * G - e.asDiagonal() * B;
    jy.block(0, n, n, n).diagonal() += ii;
    jy.block(0, 2 * n, n, n).diagonal().setConstant(-1.0);
    jy.block(n, 0, n, n) = f.asDiagonal() * G - e.asDiagonal() * B;
    jy.block(n, 0, n, n).diagonal() -= ii;
    jy.block(n, n, n, n) = -(f.asDiagonal() * B) - e.asDiagonal() * G;
    jy.block(n, n, n, n).diagonal() += ir;
    jy.block(n, 3 * n, n, n).diagonal().setConstant(-1.0);
    for (Eigen::Index k = 0; k < nv; ++k) {
      const auto i = fixed_mag_[static_cast<std::size_t>(k)];
      h[2 * n + k] = e[i] * e[i] + f[i] * f[i] - net_.v_min()[i] * net_.v_min()[i];
      jy(2 * n + k, i) = 2 * e[i];
      jy(2 * n + k, n + i) = 2 * f[i];
    }
    jac = select_columns(jy);
  }

  void inequalities(const Eigen::VectorXd& x, Eigen::VectorXd& g, Eigen::MatrixXd& jac) const {
    const auto n = net_.n(), nb = net_.n_branch();
    const Eigen::VectorXd y = full(x);
    const auto e = y.head(n), f = y.segment(n, n);
    std::vector<double> vals;
    std::vector<Eigen::RowVectorXd> rows;
    auto row = [&]() { return Eigen::RowVectorXd::Zero(ny_).eval(); };
    const auto s = net_.slack();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (net_.v_min()[i] == net_.v_max()[i]) continue;
      if (i == s) {
        auto r = row();
        r[i] = 1;
        vals.push_back(e[i] - net_.v_max()[i]);
        rows.push_back(r);
        r[i] = -1;
        vals.push_back(net_.v_min()[i] - e[i]);
        rows.push_back(r);
        continue;
      }
      const double m2 = e[i] * e[i] + f[i] * f[i];
      auto r = row();
      r[i] = 2 * e[i];
      r[n + i] = 2 * f[i];
      vals.push_back(m2 - net_.v_max()[i] * net_.v_max()[i]);
      rows.push_back(r);
      vals.push_back(net_.v_min()[i] * net_.v_min()[i] - m2);
      rows.push_back(-r);
    }
    for (int part = 0; part < 2; ++part) {
      const auto& lo = part == 0 ? net_.gen_min().re : net_.gen_min().im;
      const auto& hi = part == 0 ? net_.gen_max().re : net_.gen_max().im;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (lo[i] == hi[i]) continue;
        const auto col = (2 + part) * n + i;
        auto r = row();
        r[col] = 1;
        vals.push_back(y[col] - hi[i]);
        rows.push_back(r);
        r[col] = -1;
        vals.push_back(lo[i] - y[col]);
        rows.push_back(r);
      }
    }
    const auto& Gb = net_.g_branch();
    const auto& Bb = net_.b_branch();
    for (Eigen::Index b = 0; b < nb; ++b) {
      const double ibr = Gb.row(b).dot(e) - Bb.row(b).dot(f);
      const double ibi = Bb.row(b).dot(e) + Gb.row(b).dot(f);
      auto r = row();
      r.head(n) = 2 * (ibr * Gb.row(b) + ibi * Bb.row(b));
      r.segment(n, n) = 2 * (-ibr * Bb.row(b) + ibi * Gb.row(b));
      vals.push_back(ibr * ibr + ibi * ibi - net_.i_max()[b] * net_.i_max()[b]);
      rows.push_back(r);
    }
    const auto m = static_cast<Eigen::Index>(vals.size());
    g = Eigen::Map<const Eigen::VectorXd>(vals.data(), m);
    Eigen::MatrixXd jy(m, ny_);
    for (Eigen::Index k = 0; k < m; ++k) jy.row(k) = rows[static_cast<std::size_t>(k)];
    jac = select_columns(jy);
  }

  Eigen::MatrixXd lagrangian_hessian(const Eigen::VectorXd& /*x*/, const Eigen::VectorXd& lam,
                                     const Eigen::VectorXd& mu) const {
    // All constraints are quadratic in y, so the Hessian depends only on the
    // multipliers.
    const auto n = net_.n(), nb = net_.n_branch();
    const auto& G = net_.g_bus();
    const auto& B = net_.b_bus();
    Eigen::MatrixXd hy = Eigen::MatrixXd::Zero(ny_, ny_);
    for (Eigen::Index i = 0; i < n; ++i)
      if (net_.is_generator(i)) hy(2 * n + i, 2 * n + i) = 2 * net_.cost_quadratic()[i];

    const Eigen::VectorXd lp = lam.head(n), lq = lam.segment(n, n);
    const Eigen::MatrixXd dpg = lp.asDiagonal() * G, dpb = lp.asDiagonal() * B;
    const Eigen::MatrixXd dqg = lq.asDiagonal() * G, dqb = lq.asDiagonal() * B;
    const Eigen::MatrixXd p_ee = dpg + dpg.transpose();
    const Eigen::MatrixXd p_ef = -dpb + dpb.transpose();
    const Eigen::MatrixXd q_ee = -(dqb + dqb.transpose());
    const Eigen::MatrixXd q_ef = dqg.transpose() - dqg;
    hy.block(0, 0, n, n) += p_ee + q_ee;
    hy.block(n, n, n, n) += p_ee + q_ee;
    hy.block(0, n, n, n) += p_ef + q_ef;
    hy.block(n, 0, n, n) += (p_ef + q_ef).transpose();
    for (std::size_t k = 0; k < fixed_mag_.size(); ++k) {
      const auto i = fixed_mag_[k];
      const double l = lam[2 * n + static_cast<Eigen::Index>(k)];
      hy(i, i) += 2 * l;
      hy(n + i, n + i) += 2 * l;
    }

    Eigen::Index k = 0;
    const auto s = net_.slack();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (net_.v_min()[i] == net_.v_max()[i]) continue;
      if (i == s) {
        k += 2;
        continue;
      }
      const double w = 2 * (mu[k] - mu[k + 1]);
      hy(i, i) += w;
      hy(n + i, n + i) += w;
      k += 2;
    }
    for (int part = 0; part < 2; ++part) {
      const auto& lo = part == 0 ? net_.gen_min().re : net_.gen_min().im;
      const auto& hi = part == 0 ? net_.gen_max().re : net_.gen_max().im;
      for (Eigen::Index i = 0; i < n; ++i)
        if (lo[i] != hi[i]) k += 2;
    }
    Eigen::RowVectorXd a(2 * n), c(2 * n);
    for (Eigen::Index b = 0; b < nb; ++b, ++k) {
      a << net_.g_branch().row(b), -net_.b_branch().row(b);
      c << net_.b_branch().row(b), net_.g_branch().row(b);
      hy.topLeftCorner(2 * n, 2 * n).noalias() += 2 * mu[k] * (a.transpose() * a + c.transpose() * c);
    }

    Eigen::MatrixXd hx(nx(), nx());
    for (Eigen::Index r = 0; r < nx(); ++r)
      for (Eigen::Index q = 0; q < nx(); ++q) hx(r, q) = hy(free_[static_cast<std::size_t>(r)], free_[static_cast<std::size_t>(q)]);
    return hx;
  }

 private:
  Eigen::MatrixXd select_columns(const Eigen::MatrixXd& jy) const {
    Eigen::MatrixXd j(jy.rows(), nx());
    for (std::size_t k = 0; k < free_.size(); ++k) j.col(static_cast<Eigen::Index>(k)) = jy.col(free_[k]);
    return j;
  }

  const PowerNetwork& net_;
  ComplexVec s_load_;
  Eigen::Index ny_ = 0;
  Eigen::VectorXd fixed_value_;
  std::vector<Eigen::Index> free_;
  std::vector<Eigen::Index> fixed_mag_;
};

inline Eigen::VectorXd start_vector(const PowerNetwork& net, const ComplexVec& v, const ComplexVec& s_gen) {
  const auto n = net.n();
  Eigen::VectorXd y(4 * n);
  y << v.re, v.im, s_gen.re, s_gen.im;
  y[n + net.slack()] = 0.0;
  return y;
}

inline ComplexVec box_midpoint(const PowerNetwork& net) {
  return 0.5 * (net.gen_min() + net.gen_max());
}

}  // namespace detail

/// Fills the derived fields of a solution from (v, s_gen).
inline void finish_solution(const PowerNetwork& net, const ComplexVec& s_load, OPFSolution& sol) {
  sol.vio = solution_violation(net, sol.v, s_load);
  sol.balance_residual = balance_residual(net, sol.v, sol.s_gen, s_load);
  Eigen::VectorXd pg = sol.s_gen.re;
  sol.objective = net.cost(pg);
}

/// Locally optimal AC-OPF solution. Runs up to `opts.starts` interior point
/// solves (flat, warm if given, random within bounds) and keeps the cheapest
/// converged one; if none converges, the iterate with the smallest balance
/// residual is returned with converged = false.
inline OPFSolution solve_ac_opf(const PowerNetwork& net, const ComplexVec& s_load, const AcOpfOptions& opts = {},
                                const OPFSolution* warm = nullptr) {
  check_size(net, s_load, "solve_ac_opf");
  const auto t0 = std::chrono::steady_clock::now();
  const auto n = net.n();
  detail::AcOpfProblem prob(net, s_load);

  std::vector<Eigen::VectorXd> starts;
  {
    const Eigen::VectorXd mag = Eigen::VectorXd::Ones(n).cwiseMax(net.v_min()).cwiseMin(net.v_max());
    starts.push_back(detail::start_vector(net, ComplexVec(mag, Eigen::VectorXd::Zero(n)), detail::box_midpoint(net)));
  }
  if (warm && warm->v.size() == n && warm->s_gen.size() == n && warm->v.all_finite())
    starts.push_back(detail::start_vector(net, warm->v, warm->s_gen));
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (static_cast<int>(starts.size()) < std::max(1, opts.starts)) {
    Eigen::VectorXd mag(n), ang(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mag[i] = net.v_min()[i] + u(rng) * (net.v_max()[i] - net.v_min()[i]);
      ang[i] = 0.2 * (u(rng) - 0.5);
    }
    ComplexVec sg(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      sg.re[i] = net.gen_min().re[i] + u(rng) * (net.gen_max().re[i] - net.gen_min().re[i]);
      sg.im[i] = net.gen_min().im[i] + u(rng) * (net.gen_max().im[i] - net.gen_min().im[i]);
    }
    starts.push_back(detail::start_vector(net, ComplexVec::polar(mag, ang), sg));
  }
  if (static_cast<int>(starts.size()) > std::max(1, opts.starts)) starts.resize(static_cast<std::size_t>(std::max(1, opts.starts)));

  ipm::Options io;
  io.max_iterations = opts.max_iterations;
  io.feas_tol = std::min(1e-10, opts.feas_tol);
  io.grad_tol = std::min(1e-9, opts.opt_tol);
  io.comp_tol = std::min(1e-10, opts.opt_tol);

  OPFSolution best;
  bool have = false;
  int total_iterations = 0;
  for (const auto& y0 : starts) {
    const auto r = ipm::solve(prob, prob.reduce(y0), io);
    total_iterations += r.iterations;
    if (!r.x.allFinite()) continue;
    const Eigen::VectorXd y = prob.full(r.x);
    OPFSolution sol;
    sol.v = ComplexVec(y.head(n), y.segment(n, n));
    sol.s_gen = ComplexVec(y.segment(2 * n, n), y.segment(3 * n, n));
    finish_solution(net, s_load, sol);
    sol.kkt_residual = r.gradcond;
    sol.iterations = r.iterations;
    // Accept a solve that stalls short of the tight internal tolerances if it
    // meets the user-facing ones.
    sol.converged = r.converged || (sol.balance_residual <= opts.feas_tol && sol.vio.total() <= opts.feas_tol &&
                                    r.gradcond <= opts.opt_tol && r.compcond <= opts.opt_tol);
    const bool better = !have || (sol.converged && !best.converged) ||
                        (sol.converged == best.converged &&
                         (sol.converged ? sol.objective < best.objective - 1e-9
                                        : sol.balance_residual < best.balance_residual));
    if (better) {
      best = std::move(sol);
      have = true;
    }
  }
  if (!have) {
    best.v = flat_profile(net);
    best.s_gen = ComplexVec(n);
    finish_solution(net, s_load, best);
  }
  best.iterations = total_iterations;
  best.solve_time = std::chrono::steady_clock::now() - t0;
  return best;
}

struct DcOpfOptions {
  int cost_segments = 10;  ///< piecewise-linear chords for quadratic costs
};

/// Lossless angle-based DC-OPF. Dispatch is mapped back to an AC operating
/// point (|V| = 1 clipped to bounds, DC angles) and the violation vector is
/// evaluated with the full AC equations; s_gen carries the DC dispatch in its
/// real part and the reactive power the AC equations then imply.
inline OPFSolution solve_dc_opf(const PowerNetwork& net, const ComplexVec& s_load, const DcOpfOptions& opts = {}) {
  check_size(net, s_load, "solve_dc_opf");
  const auto t0 = std::chrono::steady_clock::now();
  const auto n = net.n(), nb = net.n_branch();
  const auto s = net.slack();

  // Column layout: theta (n, slack fixed at 0), then cost segments per generator.
  struct Segment {
    Eigen::Index bus;
    double width;
  };
  std::vector<Segment> segs;
  std::vector<double> slopes;
  Eigen::VectorXd p_base = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!net.is_generator(i)) continue;
    const double lo = net.gen_min().re[i], hi = net.gen_max().re[i];
    const double c1 = net.cost_linear()[i], c2 = net.cost_quadratic()[i];
    p_base[i] = lo;
    if (hi <= lo) continue;
    const int k = c2 == 0.0 ? 1 : std::max(1, opts.cost_segments);
    const double w = (hi - lo) / k;
    for (int j = 0; j < k; ++j) {
      const double a = lo + j * w;
      segs.push_back({i, w});
      slopes.push_back(c1 + c2 * (2 * a + w));
    }
  }
  const auto ns = static_cast<Eigen::Index>(segs.size());
  const auto nv = n + ns;

  auto susceptance = [&](Eigen::Index b) {
    const auto& br = net.branches()[static_cast<std::size_t>(b)];
    return br.series_x != 0.0 ? 1.0 / br.series_x : 1.0 / br.series_r;
  };

  lp::Problem p;
  p.c = Eigen::VectorXd::Zero(nv);
  for (Eigen::Index j = 0; j < ns; ++j) p.c[n + j] = slopes[static_cast<std::size_t>(j)];
  p.lo = Eigen::VectorXd::Constant(nv, -lp::kInf);
  p.hi = Eigen::VectorXd::Constant(nv, lp::kInf);
  p.lo[s] = p.hi[s] = 0.0;
  for (Eigen::Index j = 0; j < ns; ++j) {
    p.lo[n + j] = 0.0;
    p.hi[n + j] = segs[static_cast<std::size_t>(j)].width;
  }
  // Bus balance: sum_b b (theta_i - theta_k) - sum segments = p_base - P_load.
  p.a_eq = Eigen::MatrixXd::Zero(n, nv);
  p.b_eq = p_base - s_load.re;
  for (Eigen::Index b = 0; b < nb; ++b) {
    const auto f = net.from_index(b), t = net.to_index(b);
    const double bb = susceptance(b);
    p.a_eq(f, f) += bb;
    p.a_eq(f, t) -= bb;
    p.a_eq(t, t) += bb;
    p.a_eq(t, f) -= bb;
  }
  for (Eigen::Index j = 0; j < ns; ++j) p.a_eq(segs[static_cast<std::size_t>(j)].bus, n + j) = -1.0;
  p.a_ub = Eigen::MatrixXd::Zero(2 * nb, nv);
  p.b_ub = Eigen::VectorXd::Zero(2 * nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const auto f = net.from_index(b), t = net.to_index(b);
    const double bb = susceptance(b);
    p.a_ub(2 * b, f) = bb;
    p.a_ub(2 * b, t) = -bb;
    p.a_ub(2 * b + 1, f) = -bb;
    p.a_ub(2 * b + 1, t) = bb;
    p.b_ub[2 * b] = p.b_ub[2 * b + 1] = net.i_max()[b];
  }

  const auto r = lp::solve(p);
  OPFSolution sol;
  sol.iterations = r.pivots;
  const Eigen::VectorXd mag = Eigen::VectorXd::Ones(n).cwiseMax(net.v_min()).cwiseMin(net.v_max());
  if (r.status == lp::Status::optimal) {
    Eigen::VectorXd pg = p_base;
    for (Eigen::Index j = 0; j < ns; ++j) pg[segs[static_cast<std::size_t>(j)].bus] += r.x[n + j];
    sol.v = ComplexVec::polar(mag, r.x.head(n));
    ComplexVec implied;
    sol.vio = solution_violation(net, sol.v, s_load, &implied);
    sol.s_gen = ComplexVec(pg, implied.im);
    sol.objective = net.cost(pg);
    sol.balance_residual = balance_residual(net, sol.v, sol.s_gen, s_load);
    sol.converged = true;
  } else {
    sol.v = ComplexVec::polar(mag, Eigen::VectorXd::Zero(n));
    sol.s_gen = ComplexVec(n);
    finish_solution(net, s_load, sol);
  }
  sol.solve_time = std::chrono::steady_clock::now() - t0;
  return sol;
}

/// Optimal (P1, P3) of the 3-bus example as a function of the bus-2 injection
/// p2 = -P_load,2 (p.u.), for -7 <= p2 <= 0.
inline std::pair<double, double> solve_3bus_closed_form(double p2) {
  if (!(p2 >= -7.0 && p2 <= 0.0)) throw ValidationError("solve_3bus_closed_form: p2 must lie in [-7, 0]");
  const double s = std::sqrt(1.0 + 0.04 * p2);
  if (p2 >= -3.84) return {50.0 - 50.0 * s, 0.0};
  // Bus 1 at its limit; V2 = (1 + s)/2 and V3 = 1.46 - s/2 follow from the
  // bus-1 balance and power-flow stationarity.
  return {4.0, 67.16 - 96.0 * s + 25.0 * s * s};
}

struct LabelResult {
  Dataset dataset;
  std::vector<std::size_t> rejects;  ///< indices into the input list
};

/// Labels every load with the AC reference solver. Non-converged loads are
/// listed in `rejects`; duplicates are kept. If `warm_pool` is given, each solve
/// is also warm-started from the pool sample with the nearest load.
inline LabelResult generate_labels(const PowerNetwork& net, const std::vector<ComplexVec>& loads,
                                   const AcOpfOptions& opts = {}, Provenance provenance = {},
                                   const Dataset* warm_pool = nullptr) {
  if (loads.empty()) throw ValidationError("generate_labels: empty load list");
  LabelResult out;
  out.dataset.case_fingerprint = net.fingerprint();
  for (std::size_t k = 0; k < loads.size(); ++k) {
    OPFSolution warm;
    const OPFSolution* wp = nullptr;
    if (warm_pool && !warm_pool->empty()) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& smp : warm_pool->samples) {
        const double d = max_abs_distance(smp.s_load, loads[k]);
        if (d < best) {
          best = d;
          warm.v = smp.v;
          warm.s_gen = smp.s_gen;
        }
      }
      wp = &warm;
    }
    auto o = opts;
    o.seed = opts.seed + k;
    const auto sol = solve_ac_opf(net, loads[k], o, wp);
    if (!sol.converged) {
      out.rejects.push_back(k);
      continue;
    }
    out.dataset.samples.push_back({loads[k], sol.v, sol.s_gen, provenance});
  }
  return out;
}

}  // namespace pmiopf
