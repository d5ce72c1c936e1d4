#pragma once

// Worth-learning data generation: the input-feasible-set module, the
// max-violation objective, gradient ascent over the auxiliary variables, and
// the filter/label step that turns terminal points into new samples.

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "pmiopf/acpf.hpp"
#include "pmiopf/autodiff.hpp"
#include "pmiopf/dataset.hpp"
#include "pmiopf/errors.hpp"
#include "pmiopf/refopt.hpp"
#include "pmiopf/surrogate.hpp"

namespace pmiopf {

/// Unconstrained auxiliary variables; they carry no physical meaning until
/// passed through `ifs_forward`.
struct AscentPoint {
  ComplexVec s_gen_aux;
  ComplexVec v_aux;

  static AscentPoint from_sample(const Sample& s) { return {s.s_gen, s.v}; }

  /// [sg.re; sg.im; v.re; v.im]
  VectorXd stacked() const {
    VectorXd x(4 * s_gen_aux.size());
    x << s_gen_aux.re, s_gen_aux.im, v_aux.re, v_aux.im;
    return x;
  }
  static AscentPoint unstack(const VectorXd& x) {
    if (x.size() % 4 != 0) throw DimensionError("AscentPoint::unstack: length not a multiple of 4");
    const auto n = x.size() / 4;
    return {{x.segment(0, n), x.segment(n, n)}, {x.segment(2 * n, n), x.segment(3 * n, n)}};
  }
};

struct IfsOutput {
  ComplexVec s_load;
  ComplexVec s_gen;  ///< S^G_ifs
  ComplexVec v;      ///< V_ifs
  ViolationVec vio;  ///< load box blocks and branch currents
};

/// Voltage magnitude clamped into [v_min, v_max] with the angle of v_aux
/// kept, except at the slack where the angle is 0.
inline ComplexVec clamp_voltage(const PowerNetwork& net, const ComplexVec& v_aux) {
  check_size(net, v_aux, "clamp_voltage");
  const VectorXd m = (v_aux.re.array().square() + v_aux.im.array().square() + kModulusDelta * kModulusDelta).sqrt();
  const VectorXd f = dre(m, net.v_min(), net.v_max()).cwiseQuotient(m);
  ComplexVec v{v_aux.re.cwiseProduct(f), v_aux.im.cwiseProduct(f)};
  const auto s = net.slack();
  v.re[s] = dre(m[s], net.v_min()[s], net.v_max()[s]);
  v.im[s] = 0.0;
  return v;
}

inline IfsOutput ifs_forward(const PowerNetwork& net, const AscentPoint& p) {
  check_size(net, p.s_gen_aux, "ifs_forward");
  check_size(net, p.v_aux, "ifs_forward");
  if (!p.s_gen_aux.all_finite() || !p.v_aux.all_finite()) throw ValidationError("ifs_forward: non-finite point");
  IfsOutput out;
  out.s_gen = {dre(p.s_gen_aux.re, net.gen_min().re, net.gen_max().re),
               dre(p.s_gen_aux.im, net.gen_min().im, net.gen_max().im)};
  out.v = clamp_voltage(net, p.v_aux);
  out.s_load = out.s_gen - injections(net, out.v);
  out.vio = combine(violation_load(net, out.s_load), violation_current(net, out.v));
  return out;
}

struct LossMaxValue {
  double vio_phm = 0, vio_ifs = 0, value = 0;
};

/// Vio_phm of the surrogate at the load produced by `p`, minus λ Vio_ifs.
inline LossMaxValue loss_max_value(const PmiModel& m, const AscentPoint& p, double lambda) {
  check_model(m);
  const auto ifs = ifs_forward(*m.net, p);
  const auto v = forward_mlp(m, ifs.s_load);
  LossMaxValue r;
  r.vio_phm = forward_physical(m, v, ifs.s_load).vio.total();
  r.vio_ifs = ifs.vio.total();
  r.value = r.vio_phm - lambda * r.vio_ifs;
  return r;
}

namespace graph {

struct Ifs {
  CVar s_load;
  CVar v;
  Var current;  ///< branch current magnitudes
  Var vio;
};

inline Ifs ifs_forward(const PowerNetwork& net, Var x) {
  Tape& t = *x.tape();
  const auto n = net.n();
  if (x.size() != 4 * n) throw DimensionError("graph::ifs_forward: size mismatch");
  const CVar sg_aux{t.slice(x, 0, n), t.slice(x, n, n)};
  const CVar v_aux{t.slice(x, 2 * n, n), t.slice(x, 3 * n, n)};
  const CVar sg{ad::dre(sg_aux.re, net.gen_min().re, net.gen_max().re),
                ad::dre(sg_aux.im, net.gen_min().im, net.gen_max().im)};
  const VectorXd mask = detail::angle_mask(net);
  const VectorXd slack = VectorXd::Ones(n) - mask;
  Var mod = t.modulus(v_aux.re, v_aux.im, kModulusDelta);
  Var mc = ad::dre(mod, net.v_min(), net.v_max());
  Var f = mc / mod;
  const CVar v{mul_const(v_aux.re * f, mask) + mul_const(mc, slack), mul_const(v_aux.im * f, mask)};
  const auto inj = injections(net, v);
  const CVar sl{sg.re - inj.re, sg.im - inj.im};
  Var cm = current_magnitudes(net, v);
  Var cur = relu(cm - net.i_max());
  return {sl, v, cm, t.concat(box_violation(sl, net.load_min(), net.load_max()), cur)};
}

/// loss_max on tape for a stacked auxiliary vector and a frozen model.
inline Var loss_max(Tape& t, const PmiModel& m, const Params& frozen, Var x, double lambda, double* vio_phm = nullptr,
                    double* vio_ifs = nullptr) {
  const auto& net = *m.net;
  const auto ifs = ifs_forward(net, x);
  Var sl = t.concat(ifs.s_load.re, ifs.s_load.im);
  const auto v = forward_mlp(t, m, frozen, sl);
  const auto phys = forward_physical(net, v, ifs.s_load);
  Var a = sum(phys.vio), b = sum(ifs.vio);
  if (vio_phm) *vio_phm = a.scalar();
  if (vio_ifs) *vio_ifs = b.scalar();
  return a - lambda * b;
}

}  // namespace graph

/// Value and gradient of loss_max with respect to the stacked aux vector.
inline LossMaxValue loss_max_gradient(const PmiModel& m, const VectorXd& x, double lambda, VectorXd& grad) {
  check_model(m);
  ad::Tape t;
  const auto frozen = graph::record_params(t, m, false);
  auto xv = t.variable(x);
  LossMaxValue r;
  auto l = graph::loss_max(t, m, frozen, xv, lambda, &r.vio_phm, &r.vio_ifs);
  t.backward(l);
  grad = xv.grad();
  r.value = l.scalar();
  return r;
}

enum class StepRule {
  gradient,  ///< x += η ∇loss_max
  tangent,   ///< load-space step of length η along the projected gradient, then a feasibility correction
};

/// Diagonal step scaling for the stacked aux vector: 1 on generation, 1/|Y_kk|² on voltage.
inline VectorXd ascent_preconditioner(const PowerNetwork& net) {
  const auto n = net.n();
  VectorXd p = VectorXd::Ones(4 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double y = std::abs(net.y_bus()(k, k));
    const double s = y > 0 ? 1.0 / (y * y) : 1.0;
    p[2 * n + k] = s;
    p[3 * n + k] = s;
  }
  return p;
}

struct PolishResult {
  VectorXd x;
  double vio_ifs = 0;
  int iterations = 0;
};

/// Levenberg-Marquardt on the input-feasibility violations: moves an aux
/// point to a nearby point whose Vio_ifs is at most `target`.
inline PolishResult restore_feasibility(const PowerNetwork& net, VectorXd x, double target, int max_iterations = 50) {
  auto eval = [&](const VectorXd& xv) { return ifs_forward(net, AscentPoint::unstack(xv)).vio.entries; };
  PolishResult r;
  VectorXd res = eval(x);
  double mu = 1e-3;
  for (int it = 0; it < max_iterations && res.sum() > target; ++it) {
    r.iterations = it + 1;
    std::vector<Eigen::Index> active;
    for (Eigen::Index i = 0; i < res.size(); ++i)
      if (res[i] > 0) active.push_back(i);
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(active.size()), x.size());
    VectorXd ra(jac.rows());
    {
      ad::Tape t;
      auto xv = t.variable(x);
      const auto ifs = graph::ifs_forward(net, xv);
      for (std::size_t k = 0; k < active.size(); ++k) {
        t.backward(t.slice(ifs.vio, active[k], 1));
        jac.row(static_cast<Eigen::Index>(k)) = xv.grad().transpose();
        ra[static_cast<Eigen::Index>(k)] = res[active[k]];
      }
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const VectorXd jtr = jac.transpose() * ra;
    const VectorXd d = jtj.diagonal().cwiseMax(1e-12);
    bool improved = false;
    for (int tries = 0; tries < 20 && !improved; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += mu * d;
      const VectorXd step = a.ldlt().solve(-jtr);
      const VectorXd trial = x + step;
      if (!trial.allFinite()) {
        mu *= 4;
        continue;
      }
      const VectorXd rt = eval(trial);
      if (rt.squaredNorm() < res.squaredNorm()) {
        x = trial;
        res = rt;
        mu = std::max(mu / 3, 1e-12);
        improved = true;
      } else {
        mu *= 4;
      }
    }
    if (!improved) break;
  }
  r.x = std::move(x);
  r.vio_ifs = res.sum();
  return r;
}

struct WorthOptions {
  double lambda = 100.0;
  double eta = 1e-3;
  double epsilon = 1e-2;  ///< ΔL threshold in MW
  int window = 100;
  int max_iterations = 4000;
  double zeta = 1e-4;
  double xi = 0.01;  ///< 1 MW on a 100 MVA base
  double dedup_tol = 1e-3;
  StepRule step = StepRule::tangent;
  bool polish = true;  ///< restore input feasibility of the terminal point
  double step_tolerance = 0.01;  ///< Vio_ifs allowed after each tangent step, relative to ζ
  double max_failure_fraction = 0.2;
};

struct WorthCandidate {
  ComplexVec s_load;
  double vio_phm_terminal = 0;
  double vio_ifs_terminal = 0;
  std::size_t origin_sample = 0;
  AscentPoint point;
};

struct AscentDiagnostic {
  std::size_t origin_sample = 0;
  int iterations = 0;
  bool converged = false;
  bool dropped_nan = false;
  double initial_loss = 0, terminal_loss = 0;
  double vio_phm = 0, vio_ifs = 0;  ///< at the last ascent iterate
  int polish_iterations = 0;
};

struct AscentResult {
  std::vector<WorthCandidate> candidates;
  std::vector<AscentDiagnostic> diagnostics;
};

namespace detail {

inline void check_model_case(const PmiModel& m, const PowerNetwork& net) {
  check_model(m);
  if (m.case_fingerprint != net.fingerprint()) throw ValidationError("model was trained on a different case");
}


enum class RowKind { equality, upper, lower };

struct ActiveRow {
  Eigen::Index index;  ///< into [s_load stacked; branch currents]
  RowKind kind;
  double target;
};

/// Fixed loads, plus loads and branch currents within `reach` of a bound.
inline std::vector<ActiveRow> active_rows(const PowerNetwork& net, const VectorXd& s_load, const VectorXd& current,
                                          double reach) {
  const VectorXd lo = net.load_min().stacked(), hi = net.load_max().stacked();
  std::vector<ActiveRow> rows;
  for (Eigen::Index i = 0; i < s_load.size(); ++i) {
    if (hi[i] - lo[i] <= 1e-12)
      rows.push_back({i, RowKind::equality, lo[i]});
    else if (s_load[i] >= hi[i] - reach)
      rows.push_back({i, RowKind::upper, std::min(s_load[i], hi[i])});
    else if (s_load[i] <= lo[i] + reach)
      rows.push_back({i, RowKind::lower, std::max(s_load[i], lo[i])});
  }
  for (Eigen::Index b = 0; b < current.size(); ++b)
    if (current[b] >= net.i_max()[b] - reach)
      rows.push_back({s_load.size() + b, RowKind::upper, std::min(current[b], net.i_max()[b])});
  return rows;
}

/// Step of load-space length η along the preconditioned ascent direction
/// projected onto the tangent space of the active constraints, then a
/// correction back onto them. Bound rows whose multiplier says the ascent
/// moves away from the bound are released. Returns false once no admissible
/// direction is left.
inline bool tangent_step(const PowerNetwork& net, VectorXd& x, const VectorXd& g, const VectorXd& precond,
                         const WorthOptions& opt) {
  ad::Tape t;
  auto xv = t.variable(x);
  const auto ifs = graph::ifs_forward(net, xv);
  ad::Var sl = t.concat(ifs.s_load.re, ifs.s_load.im);
  ad::Var all = t.concat(sl, ifs.current);
  const auto n_load = sl.size();
  auto rows = active_rows(net, sl.value(), ifs.current.value(), opt.eta);
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(rows.size()), x.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    t.backward(t.slice(all, rows[k].index, 1));
    jac.row(static_cast<Eigen::Index>(k)) = xv.grad().transpose();
  }
  const VectorXd pg = precond.cwiseProduct(g);
  VectorXd d = pg;
  Eigen::MatrixXd jp;
  Eigen::LDLT<Eigen::MatrixXd> fac;
  std::vector<std::size_t> keep(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) keep[k] = k;
  for (int pass = 0; pass <= static_cast<int>(rows.size()) && !keep.empty(); ++pass) {
    Eigen::MatrixXd j(static_cast<Eigen::Index>(keep.size()), x.size());
    for (std::size_t k = 0; k < keep.size(); ++k) j.row(static_cast<Eigen::Index>(k)) = jac.row(static_cast<Eigen::Index>(keep[k]));
    jp = j * precond.asDiagonal();
    Eigen::MatrixXd a = jp * j.transpose();
    a.diagonal().array() += 1e-12 * std::max(1.0, a.diagonal().maxCoeff());
    fac.compute(a);
    const VectorXd mu = fac.solve(j * pg);
    // Release the bound row that most wants to move inward, if any.
    std::size_t worst = keep.size();
    double worst_mu = 0;
    for (std::size_t k = 0; k < keep.size(); ++k) {
      const auto kind = rows[keep[k]].kind;
      const double m = kind == RowKind::upper ? -mu[static_cast<Eigen::Index>(k)]
                       : kind == RowKind::lower ? mu[static_cast<Eigen::Index>(k)]
                                                : 0.0;
      if (m > worst_mu) {
        worst_mu = m;
        worst = k;
      }
    }
    if (worst == keep.size()) {
      d = pg - jp.transpose() * mu;
      break;
    }
    keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(worst));
    if (keep.empty()) d = pg;
  }
  // Scale by the resulting change in load, measured by a directional difference.
  const VectorXd s0 = ifs_forward(net, AscentPoint::unstack(x)).s_load.stacked();
  const double h = 1e-6 / std::max(d.lpNorm<Eigen::Infinity>(), 1e-300);
  const double ds = (ifs_forward(net, AscentPoint::unstack(x + h * d)).s_load.stacked() - s0).lpNorm<Eigen::Infinity>() / h;
  if (!(ds > 0) || !std::isfinite(ds)) return false;
  VectorXd trial = x + (opt.eta / ds) * d;
  const double tol = opt.step_tolerance * opt.zeta;
  // Simplified Newton back onto the kept rows with the Jacobian at x;
  // Levenberg-Marquardt only if that is not enough.
  if (!keep.empty()) {
    VectorXd target(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) target[static_cast<Eigen::Index>(k)] = rows[keep[k]].target;
    auto kept_values = [&](const VectorXd& y) {
      const auto out = ifs_forward(net, AscentPoint::unstack(y));
      const VectorXd s = out.s_load.stacked();
      const VectorXd c = current_magnitudes(net, out.v);
      VectorXd r(static_cast<Eigen::Index>(keep.size()));
      for (std::size_t k = 0; k < keep.size(); ++k) {
        const auto i = rows[keep[k]].index;
        r[static_cast<Eigen::Index>(k)] = i < n_load ? s[i] : c[i - n_load];
      }
      return r;
    };
    for (int k = 0; k < 5 && ifs_forward(net, AscentPoint::unstack(trial)).vio.total() > tol; ++k)
      trial -= jp.transpose() * fac.solve(kept_values(trial) - target);
  }
  if (ifs_forward(net, AscentPoint::unstack(trial)).vio.total() > tol) trial = restore_feasibility(net, trial, tol, 10).x;
  x = std::move(trial);
  return true;
}

}  // namespace detail

/// One trajectory of gradient ascent from `start`.
inline std::pair<WorthCandidate, AscentDiagnostic> ascend_one(const PmiModel& m, const AscentPoint& start,
                                                              const WorthOptions& opt, std::size_t origin = 0) {
  check_model(m);
  const auto& net = *m.net;
  AscentDiagnostic d;
  d.origin_sample = origin;
  VectorXd x = start.stacked();
  std::vector<double> hist;
  hist.reserve(static_cast<std::size_t>(opt.max_iterations) + 1);
  ad::Tape t;
  const auto frozen = graph::record_params(t, m, false);
  const auto n_frozen = t.size();
  const VectorXd precond = ascent_preconditioner(net);
  const auto w = static_cast<std::size_t>(opt.window);
  LossMaxValue cur;
  for (int it = 0;; ++it) {
    t.truncate(n_frozen);
    auto xv = t.variable(x);
    auto l = graph::loss_max(t, m, frozen, xv, opt.lambda, &cur.vio_phm, &cur.vio_ifs);
    cur.value = l.scalar();
    d.iterations = it;
    if (!std::isfinite(cur.value)) {
      d.dropped_nan = true;
      break;
    }
    hist.push_back(cur.value);
    if (hist.size() > w && std::abs(hist.back() - hist[hist.size() - 1 - w]) * net.base_mva() < opt.epsilon) {
      d.converged = true;
      break;
    }
    if (it >= opt.max_iterations) break;
    t.backward(l);
    const VectorXd g = xv.grad();
    if (!g.allFinite()) {
      d.dropped_nan = true;
      break;
    }
    if (opt.step == StepRule::gradient) {
      x += opt.eta * g;
    } else if (!detail::tangent_step(net, x, g, precond, opt)) {
      d.converged = true;
      break;
    }
  }
  d.initial_loss = hist.empty() ? 0.0 : hist.front();
  d.terminal_loss = cur.value;
  d.vio_phm = cur.vio_phm;
  d.vio_ifs = cur.vio_ifs;
  WorthCandidate c;
  c.origin_sample = origin;
  c.vio_phm_terminal = cur.vio_phm;
  c.vio_ifs_terminal = cur.vio_ifs;
  if (d.dropped_nan) return {std::move(c), d};
  if (opt.polish && cur.vio_ifs > 0.01 * opt.zeta) {
    const auto pol = restore_feasibility(net, x, 0.01 * opt.zeta);
    d.polish_iterations = pol.iterations;
    x = pol.x;
    const auto lv = loss_max_value(m, AscentPoint::unstack(x), opt.lambda);
    c.vio_phm_terminal = lv.vio_phm;
    c.vio_ifs_terminal = lv.vio_ifs;
  }
  c.point = AscentPoint::unstack(x);
  c.s_load = ifs_forward(net, c.point).s_load;
  return {std::move(c), d};
}

/// Ascent from every sample in `starts`; NaN trajectories are dropped and
/// only show up in the diagnostics.
inline AscentResult ascend(const PmiModel& m, const PowerNetwork& net, const Dataset& starts, const WorthOptions& opt = {}) {
  detail::check_model_case(m, net);
  if (starts.empty()) throw ValidationError("ascend: no starting points");
  AscentResult r;
  for (std::size_t k = 0; k < starts.size(); ++k) {
    auto [c, d] = ascend_one(m, AscentPoint::from_sample(starts[k]), opt, k);
    if (!d.dropped_nan) r.candidates.push_back(std::move(c));
    r.diagnostics.push_back(d);
  }
  return r;
}

inline nlohmann::json diagnostic_to_json(const AscentDiagnostic& d) {
  return {{"origin_sample", d.origin_sample}, {"iterations", d.iterations},     {"converged", d.converged},
          {"dropped_nan", d.dropped_nan},     {"initial_loss", d.initial_loss}, {"terminal_loss", d.terminal_loss},
          {"vio_phm", d.vio_phm},             {"vio_ifs", d.vio_ifs},
          {"polish_iterations", d.polish_iterations}};
}

/// One JSON object per line.
inline std::string diagnostics_to_jsonl(const std::vector<AscentDiagnostic>& ds) {
  std::string out;
  for (const auto& d : ds) out += diagnostic_to_json(d).dump() + "\n";
  return out;
}

/// Keep feasible candidates with large surrogate violation; of near-equal
/// loads only the first is kept.
inline std::vector<WorthCandidate> filter_candidates(const std::vector<WorthCandidate>& cands, double zeta, double xi,
                                                     double dedup_tol = 1e-3) {
  std::vector<WorthCandidate> kept;
  for (const auto& c : cands) {
    if (!(c.vio_ifs_terminal <= zeta) || !(c.vio_phm_terminal >= xi)) continue;
    bool dup = false;
    for (const auto& k : kept)
      if (max_abs_distance(k.s_load, c.s_load) < dedup_tol) {
        dup = true;
        break;
      }
    if (!dup) kept.push_back(c);
  }
  return kept;
}

struct RoundStats {
  std::size_t starts = 0;
  std::size_t candidates = 0;
  std::size_t accepted = 0;
  std::size_t added = 0;
  std::size_t solver_failures = 0;
  double seconds = 0;         ///< whole round, labeling included
  double ascent_seconds = 0;
  double seconds_per_sample = 0;  ///< ascent wall time per terminal candidate
};

struct RoundResult {
  Dataset added;
  RoundStats stats;
  std::vector<AscentDiagnostic> diagnostics;
  std::vector<WorthCandidate> accepted;
};

/// Ascend from the whole dataset, filter, and label accepted loads with the
/// reference solver. Loads the solver cannot solve are dropped; too many of
/// them abort the round.
inline RoundResult worth_learning_round(const PmiModel& m, const PowerNetwork& net, const Dataset& data, int iteration,
                                        const WorthOptions& opt = {}, const AcOpfOptions& solver = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RoundResult r;
  auto asc = ascend(m, net, data, opt);
  r.stats.ascent_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.diagnostics = std::move(asc.diagnostics);
  r.accepted = filter_candidates(asc.candidates, opt.zeta, opt.xi, opt.dedup_tol);
  r.stats.starts = data.size();
  r.stats.candidates = asc.candidates.size();
  r.stats.accepted = r.accepted.size();
  r.added.case_fingerprint = net.fingerprint();
  if (!r.accepted.empty()) {
    std::vector<ComplexVec> loads;
    for (const auto& c : r.accepted) loads.push_back(c.s_load);
    auto lab = generate_labels(net, loads, solver, Provenance{iteration}, &data);
    r.stats.solver_failures = lab.rejects.size();
    if (static_cast<double>(lab.rejects.size()) > opt.max_failure_fraction * static_cast<double>(loads.size()))
      throw ConvergenceError("worth_learning_round: reference solver failed on " + std::to_string(lab.rejects.size()) +
                             " of " + std::to_string(loads.size()) + " candidates");
    r.added = std::move(lab.dataset);
  }
  r.stats.added = r.added.size();
  r.stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.stats.seconds_per_sample = r.stats.ascent_seconds / static_cast<double>(std::max<std::size_t>(1, r.stats.candidates));
  return r;
}

}  // namespace pmiopf
