#pragma once

// Algorithm 1 end to end, the random-sampling baseline, and the evaluation
// harness (violation degree in MW, optimality loss in %, timing).

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pmiopf/dataset.hpp"
#include "pmiopf/errors.hpp"
#include "pmiopf/refopt.hpp"
#include "pmiopf/surrogate.hpp"
#include "pmiopf/worthgen.hpp"

namespace pmiopf {

struct RunConfig {
  std::string case_path;
  std::size_t initial_samples = 10;
  int epochs_per_iter = 10000;
  double eta = 1e-3;           ///< training learning rate and ascent step
  double lr_final = 1e-6;      ///< end of the per-iteration learning-rate decay (0 = constant)
  double epsilon = 1e-2;
  double zeta = 1e-4;
  double xi = 0.01;
  double lambda = 100.0;
  std::uint64_t seed = 0;
  double stop_v_l1 = 2e-4;
  int max_iterations = 20;
  double vio_weight = 1.0;
  std::size_t max_dataset_size = 0;  ///< stop once the dataset grows past this (0: no limit)
  MlpConfig mlp;
  /// Sampling box for the initial set; the case's load bounds when unset.
  std::optional<ComplexVec> initial_load_min, initial_load_max;

  void validate() const {
    if (initial_samples < 1) throw ValidationError("RunConfig: initial_samples must be at least 1");
    if (epochs_per_iter < 1) throw ValidationError("RunConfig: epochs_per_iter must be at least 1");
    if (max_iterations < 0) throw ValidationError("RunConfig: max_iterations must be nonnegative");
    for (double v : {eta, epsilon, zeta, xi, lambda, stop_v_l1})
      if (!(v > 0)) throw ValidationError("RunConfig: tolerances and step sizes must be positive");
    if (lr_final < 0 || vio_weight < 0) throw ValidationError("RunConfig: lr_final and vio_weight must be nonnegative");
  }

  TrainOptions train_options() const {
    TrainOptions t;
    t.epochs = epochs_per_iter;
    t.lr = eta;
    t.lr_final = lr_final;
    t.stop_v_l1 = stop_v_l1;
    t.seed = seed;
    return t;
  }

  WorthOptions worth_options() const {
    WorthOptions w;
    w.lambda = lambda;
    w.eta = eta;
    w.epsilon = epsilon;
    w.zeta = zeta;
    w.xi = xi;
    return w;
  }

  MlpConfig mlp_config() const {
    MlpConfig m = mlp;
    m.seed = seed;
    return m;
  }
};

struct IterationRecord {
  int iteration = 0;
  std::size_t dataset_size = 0;
  std::size_t candidates = 0, accepted = 0, added = 0, solver_failures = 0;
  int epochs_run = 0;
  double train_loss = 0, train_v_l1 = 0;
  double train_seconds = 0, round_seconds = 0, seconds_per_sample = 0;
  double max_train_vio = 0;  ///< p.u., over the training set after training
};

struct RunResult {
  PmiModel model;
  Dataset dataset;
  std::vector<IterationRecord> history;
  bool terminated = false;  ///< a round added nothing
  bool aborted = false;     ///< training diverged; `model` is the last good one
  std::string message;
  int total_epochs = 0;
  std::vector<AscentDiagnostic> diagnostics;  ///< ascent trajectories of every round
  std::vector<WorthCandidate> accepted;       ///< filtered candidates of every round
};

/// Uniform initial loads from the configured box, labeled by the reference solver.
inline Dataset initial_dataset(const PowerNetwork& net, const RunConfig& cfg, std::mt19937_64& rng,
                               const AcOpfOptions& solver = {}) {
  const ComplexVec lo = cfg.initial_load_min.value_or(net.load_min());
  const ComplexVec hi = cfg.initial_load_max.value_or(net.load_max());
  auto lab = generate_labels(net, sample_loads(lo, hi, cfg.initial_samples, rng), solver);
  if (lab.dataset.empty()) throw ConvergenceError("initial_dataset: the reference solver failed on every load");
  return std::move(lab.dataset);
}

namespace detail {

inline double max_vio(const PmiModel& m, const Dataset& d) {
  double mx = 0;
  for (const auto& s : d.samples) {
    const auto v = forward_mlp(m, s.s_load);
    mx = std::max(mx, forward_physical(m, v, s.s_load).vio.total());
  }
  return mx;
}

inline IterationRecord train_record(PmiModel& m, const Dataset& data, const TrainOptions& opt, int iteration,
                                    int& total_epochs) {
  IterationRecord rec;
  rec.iteration = iteration;
  rec.dataset_size = data.size();
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = train_epochs(m, data, opt);
  rec.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rec.epochs_run = rep.epochs_run;
  rec.train_loss = rep.epoch_loss.back();
  rec.train_v_l1 = rep.epoch_v_l1.back();
  rec.max_train_vio = max_vio(m, data);
  total_epochs += rep.epochs_run;
  return rec;
}

}  // namespace detail

/// Train, search for worth-learning loads, label them, extend, repeat until a
/// round adds nothing or `max_iterations` rounds have run. Retraining starts
/// from the current weights.
inline RunResult run_algorithm1(const PowerNetwork& net, const RunConfig& cfg, const Dataset* initial = nullptr,
                                const AcOpfOptions& solver = {}) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  RunResult r;
  r.dataset = initial ? *initial : initial_dataset(net, cfg, rng, solver);
  if (r.dataset.case_fingerprint != net.fingerprint())
    throw ValidationError("run_algorithm1: dataset fingerprint does not match the case");
  r.model = make_model(net, cfg.mlp_config());
  r.model.vio_weight = cfg.vio_weight;
  const auto topt = cfg.train_options();
  const auto wopt = cfg.worth_options();
  for (int it = 0;; ++it) {
    PmiModel good = r.model;
    try {
      r.history.push_back(detail::train_record(r.model, r.dataset, topt, it, r.total_epochs));
    } catch (const ConvergenceError& e) {
      r.model = std::move(good);
      r.aborted = true;
      r.message = e.what();
      return r;
    }
    if (it >= cfg.max_iterations) break;
    auto round = worth_learning_round(r.model, net, r.dataset, it + 1, wopt, solver);
    auto& rec = r.history.back();
    rec.candidates = round.stats.candidates;
    rec.accepted = round.stats.accepted;
    rec.added = round.stats.added;
    rec.solver_failures = round.stats.solver_failures;
    rec.round_seconds = round.stats.seconds;
    rec.seconds_per_sample = round.stats.seconds_per_sample;
    r.diagnostics.insert(r.diagnostics.end(), round.diagnostics.begin(), round.diagnostics.end());
    r.accepted.insert(r.accepted.end(), round.accepted.begin(), round.accepted.end());
    if (round.added.empty()) {
      r.terminated = true;
      break;
    }
    r.dataset.append(round.added);
    if (cfg.max_dataset_size && r.dataset.size() > cfg.max_dataset_size) {
      r.message = "dataset size limit reached after iteration " + std::to_string(it + 1);
      break;
    }
  }
  return r;
}

/// B2-style baseline: the same initial set topped up with uniform loads from
/// the full bounds to `total_budget` samples, trained for `epochs` epochs.
inline RunResult run_baseline_random(const PowerNetwork& net, const RunConfig& cfg, std::size_t total_budget, int epochs,
                                     const Dataset* initial = nullptr, const AcOpfOptions& solver = {}) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  RunResult r;
  r.dataset = initial ? *initial : initial_dataset(net, cfg, rng, solver);
  if (r.dataset.size() > total_budget) throw ValidationError("run_baseline_random: budget smaller than the initial set");
  std::mt19937_64 extra_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  // Draw until the budget is met; loads the solver rejects are redrawn.
  for (int attempt = 0; r.dataset.size() < total_budget; ++attempt) {
    if (attempt > 10) throw ConvergenceError("run_baseline_random: too many reference-solver failures");
    auto lab = generate_labels(net, sample_loads(net, total_budget - r.dataset.size(), extra_rng), solver, Provenance{1});
    r.dataset.append(lab.dataset);
  }
  r.model = make_model(net, cfg.mlp_config());
  r.model.vio_weight = cfg.vio_weight;
  auto topt = cfg.train_options();
  topt.epochs = epochs;
  r.history.push_back(detail::train_record(r.model, r.dataset, topt, 0, r.total_epochs));
  return r;
}

// ----------------------------------------------------------------- evaluation

/// 3·per_axis loads: the largest-nominal varying load swept over [80%, 120%]
/// of nominal while every other load sits at 80%, 100% and 120%.
inline std::vector<ComplexVec> make_test_set(const PowerNetwork& net, int per_axis) {
  if (per_axis < 1) throw ValidationError("make_test_set: per_axis must be at least 1");
  const auto& nom = net.load_nominal();
  Eigen::Index axis = -1;
  for (Eigen::Index k = 0; k < net.n(); ++k)
    if (net.load_max().re[k] > net.load_min().re[k] && (axis < 0 || std::abs(nom.re[k]) > std::abs(nom.re[axis])))
      axis = k;
  if (axis < 0) throw ValidationError("make_test_set: the case has no varying active load");
  auto clamp = [&](ComplexVec s) {
    s.re = s.re.cwiseMax(net.load_min().re).cwiseMin(net.load_max().re);
    s.im = s.im.cwiseMax(net.load_min().im).cwiseMin(net.load_max().im);
    return s;
  };
  std::vector<ComplexVec> out;
  for (double level : {0.8, 1.0, 1.2}) {
    for (int i = 0; i < per_axis; ++i) {
      const double f = per_axis == 1 ? 1.0 : 0.8 + 0.4 * i / (per_axis - 1);
      ComplexVec s = level * nom;
      s.re[axis] = f * nom.re[axis];
      s.im[axis] = f * nom.im[axis];
      out.push_back(clamp(std::move(s)));
    }
  }
  return out;
}

struct Quartiles {
  double q1 = 0, median = 0, q3 = 0, max = 0;
  std::size_t count = 0;
};

inline Quartiles quartiles(std::vector<double> v) {
  Quartiles q;
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
  q.count = v.size();
  if (v.empty()) return q;
  std::sort(v.begin(), v.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  q.q1 = at(0.25);
  q.median = at(0.5);
  q.q3 = at(0.75);
  q.max = v.back();
  return q;
}

/// A solution from some method for one load.
using Predictor = std::function<OPFSolution(const ComplexVec&)>;

struct MethodRow {
  double vio_mw = std::numeric_limits<double>::quiet_NaN();
  double opt_pct = std::numeric_limits<double>::quiet_NaN();
  double time_ms = std::numeric_limits<double>::quiet_NaN();
};

struct EvalRow {
  ComplexVec s_load;
  bool reference_ok = false;
  double reference_cost = std::numeric_limits<double>::quiet_NaN();
  MethodRow nn, ac, dc;
};

struct MethodSummary {
  Quartiles vio_mw, opt_pct, time_ms;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  MethodSummary nn, ac, dc;
  std::size_t reference_failures = 0;
};

struct EvalOptions {
  int timing_repetitions = 100;  ///< surrogate inference is timed as the median of this many runs
  bool include_dc = true;
  AcOpfOptions ac;
};

/// Vio (MW) for a voltage/generation solution: generation box and currents.
inline double violation_mw(const PowerNetwork& net, const ComplexVec& v, const ComplexVec& s_gen) {
  return (violation_total(violation_gen(net, s_gen)) + violation_total(violation_current(net, v))) * net.base_mva();
}

/// Optimality loss in percent; NaN where the reference cost is zero.
inline double optimality_loss_pct(double cost, double reference) {
  if (std::abs(reference) < 1e-9) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * (cost - reference) / std::abs(reference);
}

/// Evaluate `nn` against the AC reference (and DC) on every load.
inline EvalReport evaluate_predictor(const PowerNetwork& net, const Predictor& nn, const std::vector<ComplexVec>& loads,
                                     const EvalOptions& opt = {}) {
  EvalReport rep;
  using clock = std::chrono::steady_clock;
  auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
  for (const auto& load : loads) {
    EvalRow row;
    row.s_load = load;
    auto t0 = clock::now();
    const auto ref = solve_ac_opf(net, load, opt.ac);
    row.ac.time_ms = ms(clock::now() - t0);
    row.reference_ok = ref.converged;
    if (ref.converged) {
      row.reference_cost = ref.objective;
      row.ac.vio_mw = violation_mw(net, ref.v, ref.s_gen);
      row.ac.opt_pct = 0.0;
    } else {
      ++rep.reference_failures;
    }

    std::vector<double> times;
    OPFSolution pred;
    for (int k = 0; k < std::max(1, opt.timing_repetitions); ++k) {
      t0 = clock::now();
      pred = nn(load);
      times.push_back(ms(clock::now() - t0));
    }
    row.nn.time_ms = quartiles(times).median;
    row.nn.vio_mw = violation_mw(net, pred.v, pred.s_gen);
    if (ref.converged) row.nn.opt_pct = optimality_loss_pct(net.cost(pred.s_gen.re), ref.objective);

    if (opt.include_dc) {
      t0 = clock::now();
      const auto dc = solve_dc_opf(net, load);
      row.dc.time_ms = ms(clock::now() - t0);
      if (dc.converged) {
        row.dc.vio_mw = dc.vio.total() * net.base_mva();
        if (ref.converged) row.dc.opt_pct = optimality_loss_pct(dc.objective, ref.objective);
      }
    }
    rep.rows.push_back(std::move(row));
  }
  auto summarize = [&](MethodRow EvalRow::*which) {
    std::vector<double> v, o, t;
    for (const auto& r : rep.rows) {
      v.push_back((r.*which).vio_mw);
      o.push_back((r.*which).opt_pct);
      t.push_back((r.*which).time_ms);
    }
    return MethodSummary{quartiles(v), quartiles(o), quartiles(t)};
  };
  rep.nn = summarize(&EvalRow::nn);
  rep.ac = summarize(&EvalRow::ac);
  rep.dc = summarize(&EvalRow::dc);
  return rep;
}

/// Surrogate prediction packaged as a solution.
inline OPFSolution predict(const PmiModel& m, const ComplexVec& load) {
  OPFSolution s;
  s.v = forward_mlp(m, load);
  const auto phys = forward_physical(m, s.v, load);
  s.s_gen = phys.s_gen;
  s.vio = phys.vio;
  s.objective = m.net->cost(s.s_gen.re);
  s.converged = true;
  return s;
}

inline EvalReport evaluate(const PmiModel& m, const PowerNetwork& net, const std::vector<ComplexVec>& loads,
                           const EvalOptions& opt = {}) {
  detail::check_model_case(m, net);
  return evaluate_predictor(net, [&](const ComplexVec& l) { return predict(m, l); }, loads, opt);
}

// ------------------------------------------------------------------- budget

/// FLOPs of one dense layer pass: (2I − 1)·O.
inline double layer_flops(long inputs, long outputs) {
  if (inputs < 1 || outputs < 1) throw ValidationError("layer_flops: sizes must be positive");
  return static_cast<double>(2 * inputs - 1) * static_cast<double>(outputs);
}

struct BudgetEstimate {
  double forward_flops = 0;
  double forward_backward_flops = 0;
  double passes_per_second = 0;
  double seconds_per_sample = 0;
};

/// Seconds per worth-learning sample: `steps` forward-backward passes
/// (forward and backward counted alike) at `flops_per_second`.
inline BudgetEstimate estimate_generation_budget(const std::vector<long>& layer_sizes, double flops_per_second,
                                                 double steps = 1e4) {
  if (layer_sizes.size() < 2) throw ValidationError("estimate_generation_budget: need at least two layer sizes");
  if (!(flops_per_second > 0) || !(steps > 0)) throw ValidationError("estimate_generation_budget: rates must be positive");
  BudgetEstimate b;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) b.forward_flops += layer_flops(layer_sizes[l], layer_sizes[l + 1]);
  b.forward_backward_flops = 2 * b.forward_flops;
  b.passes_per_second = flops_per_second / b.forward_backward_flops;
  b.seconds_per_sample = steps / b.passes_per_second;
  return b;
}

// ------------------------------------------------------------------ writers

inline nlohmann::json history_to_json(const RunResult& r) {
  nlohmann::json j;
  j["format"] = "pmiopf-history";
  j["version"] = 1;
  j["terminated"] = r.terminated;
  j["aborted"] = r.aborted;
  if (!r.message.empty()) j["message"] = r.message;
  j["final_dataset_size"] = r.dataset.size();
  j["total_epochs"] = r.total_epochs;
  j["iterations"] = nlohmann::json::array();
  for (const auto& h : r.history)
    j["iterations"].push_back({{"iteration", h.iteration},
                               {"dataset_size", h.dataset_size},
                               {"candidates", h.candidates},
                               {"accepted", h.accepted},
                               {"added", h.added},
                               {"solver_failures", h.solver_failures},
                               {"epochs_run", h.epochs_run},
                               {"train_loss", h.train_loss},
                               {"train_v_l1", h.train_v_l1},
                               {"max_train_vio", h.max_train_vio},
                               {"train_seconds", h.train_seconds},
                               {"round_seconds", h.round_seconds},
                               {"seconds_per_sample", h.seconds_per_sample}});
  return j;
}

namespace detail {

inline std::string csv_num(double v) {
  if (!std::isfinite(v)) return "";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace detail

/// One row per test load; empty cells for metrics that do not apply.
inline std::string report_to_csv(const PowerNetwork& net, const EvalReport& rep) {
  std::ostringstream os;
  os << "index";
  for (Eigen::Index k = 0; k < net.n(); ++k) os << ",p_load_" << net.buses()[static_cast<std::size_t>(k)].id;
  os << ",reference_ok,reference_cost";
  for (const char* m : {"nn", "ac", "dc"}) os << "," << m << "_vio_mw," << m << "_opt_pct," << m << "_time_ms";
  os << "\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    os << i;
    for (Eigen::Index k = 0; k < net.n(); ++k) os << "," << detail::csv_num(r.s_load.re[k] * net.base_mva());
    os << "," << (r.reference_ok ? 1 : 0) << "," << detail::csv_num(r.reference_cost);
    for (const MethodRow* m : {&r.nn, &r.ac, &r.dc})
      os << "," << detail::csv_num(m->vio_mw) << "," << detail::csv_num(m->opt_pct) << "," << detail::csv_num(m->time_ms);
    os << "\n";
  }
  return os.str();
}

}  // namespace pmiopf
