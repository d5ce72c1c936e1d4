// pmiopf: dataset generation, training, evaluation and single solves from
// the command line. Exit codes: 0 success, 2 validation error, 3 convergence
// failure.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pmiopf/dataset.hpp"
#include "pmiopf/netmodel.hpp"
#include "pmiopf/refopt.hpp"
#include "pmiopf/surrogate.hpp"
#include "pmiopf/trainflow.hpp"
#include "pmiopf/worthgen.hpp"

using namespace pmiopf;

namespace {

constexpr int kValidation = 2;
constexpr int kConvergence = 3;

PowerNetwork load_case(const std::string& path) { return parse_case(read_file(path)); }

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_file(path, text);
}

/// Comma-separated per-bus values in MW (or MVAr); converted to p.u.
Eigen::VectorXd parse_vector(const PowerNetwork& net, const std::string& text, const char* what) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ValidationError(std::string(what) + ": cannot parse '" + item + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos)
      throw ValidationError(std::string(what) + ": cannot parse '" + item + "'");
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite entry");
    vals.push_back(v);
  }
  if (static_cast<Eigen::Index>(vals.size()) != net.n())
    throw ValidationError(std::string(what) + ": expected " + std::to_string(net.n()) + " values, got " +
                          std::to_string(vals.size()));
  return Eigen::Map<Eigen::VectorXd>(vals.data(), net.n()) / net.base_mva();
}

nlohmann::json solution_json(const PowerNetwork& net, const std::string& method, const OPFSolution& s) {
  const double base = net.base_mva();
  std::vector<double> vm, va, pg, qg;
  for (Eigen::Index k = 0; k < net.n(); ++k) {
    vm.push_back(std::hypot(s.v.re[k], s.v.im[k]));
    va.push_back(std::atan2(s.v.im[k], s.v.re[k]));
    pg.push_back(s.s_gen.re[k] * base);
    qg.push_back(s.s_gen.im[k] * base);
  }
  nlohmann::json j{{"case", net.name()},   {"method", method},     {"converged", s.converged},
                   {"objective", s.objective}, {"v_mag", vm},      {"v_ang_rad", va},
                   {"p_gen_mw", pg},        {"q_gen_mvar", qg}};
  j["vio_mw"] = s.vio.entries.size() ? s.vio.total() * base : 0.0;
  return j;
}

struct TrainArgs {
  std::string case_path, dataset_path, model_out = "model.json", history_out = "history.json", diagnostics_out;
  std::string baseline = "none";
  std::size_t initial_samples = 10, budget = 0;
  bool no_vio_loss = false;
  RunConfig cfg;
};

int run_train(const TrainArgs& a) {
  const auto net = load_case(a.case_path);
  RunConfig cfg = a.cfg;
  cfg.case_path = a.case_path;
  cfg.initial_samples = a.initial_samples;
  if (a.no_vio_loss) cfg.vio_weight = 0.0;
  Dataset initial;
  const Dataset* init = nullptr;
  if (!a.dataset_path.empty()) {
    initial = dataset_from_text(net, read_file(a.dataset_path));
    if (initial.empty()) throw ValidationError("dataset " + a.dataset_path + " has no samples");
    init = &initial;
  }
  RunResult r;
  if (a.baseline == "random") {
    if (a.budget == 0) throw ValidationError("--baseline random needs --budget");
    r = run_baseline_random(net, cfg, a.budget, cfg.epochs_per_iter, init);
  } else {
    r = run_algorithm1(net, cfg, init);
  }
  emit(a.model_out, model_to_text(r.model));
  emit(a.history_out, history_to_json(r).dump(1) + "\n");
  if (!a.diagnostics_out.empty()) emit(a.diagnostics_out, diagnostics_to_jsonl(r.diagnostics));
  std::fprintf(stderr, "dataset %zu samples, %zu iterations, %s\n", r.dataset.size(), r.history.size(),
               r.terminated ? "terminated" : (r.aborted ? "aborted" : "not terminated"));
  if (!r.message.empty() && !r.aborted) std::fprintf(stderr, "%s\n", r.message.c_str());
  if (r.aborted) {
    std::fprintf(stderr, "error: %s\n", r.message.c_str());
    return kConvergence;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physical-model-integrated neural OPF: data generation, training, evaluation"};
  app.require_subcommand(1);

  std::string case_path;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-initial", "Uniformly sampled, solver-labeled dataset");
  std::size_t n_samples = 10;
  std::string gen_out = "dataset.json";
  gen->add_option("--case", case_path, "Case file")->required();
  gen->add_option("-n,--samples", n_samples, "Number of samples");
  gen->add_option("--seed", seed, "Random seed");
  gen->add_option("-o,--out", gen_out, "Dataset output (- for stdout)");

  auto* train = app.add_subcommand("train", "Algorithm 1 with worth-learning data, or the random baseline");
  TrainArgs ta;
  train->add_option("--case", ta.case_path, "Case file")->required();
  train->add_option("--dataset", ta.dataset_path, "Initial dataset (generated when omitted)");
  train->add_option("--initial-samples", ta.initial_samples, "Size of a generated initial dataset");
  train->add_option("--model", ta.model_out, "Model output");
  train->add_option("--history", ta.history_out, "Per-iteration history output");
  train->add_option("--diagnostics", ta.diagnostics_out, "Ascent diagnostics output (JSON lines)");
  train->add_option("--seed", ta.cfg.seed, "Random seed");
  train->add_option("--eta", ta.cfg.eta, "Learning rate and ascent step");
  train->add_option("--lr-final", ta.cfg.lr_final, "Final learning rate of each training phase (0 keeps eta)");
  train->add_option("--epsilon", ta.cfg.epsilon, "Ascent convergence tolerance on loss_max (MW)");
  train->add_option("--zeta", ta.cfg.zeta, "Input-feasibility tolerance (p.u.)");
  train->add_option("--xi", ta.cfg.xi, "Violation threshold for worth-learning samples (p.u.)");
  train->add_option("--lambda", ta.cfg.lambda, "Penalty weight on input infeasibility");
  train->add_option("--epochs", ta.cfg.epochs_per_iter, "Training epochs per iteration");
  train->add_option("--stop-v-l1", ta.cfg.stop_v_l1, "Stop training once the mean voltage L1 error is below this");
  train->add_option("--max-iterations", ta.cfg.max_iterations, "Worth-learning rounds at most");
  train->add_option("--max-dataset-size", ta.cfg.max_dataset_size, "Stop once the dataset grows past this (0: no limit)");
  train->add_option("--hidden", ta.cfg.mlp.hidden, "Hidden layer widths");
  train->add_option("--baseline", ta.baseline, "Training data source")->check(CLI::IsMember({"none", "random"}));
  train->add_option("--budget", ta.budget, "Total samples for --baseline random");
  train->add_flag("--no-vio-loss", ta.no_vio_loss, "Drop the violation term from the loss");

  auto* eval = app.add_subcommand("eval", "Evaluate a model against the AC and DC solvers");
  std::string model_path, report_out = "report.csv";
  int per_axis = 200, repetitions = 100;
  bool no_dc = false;
  eval->add_option("--case", case_path, "Case file")->required();
  eval->add_option("--model", model_path, "Model file")->required();
  eval->add_option("--per-axis", per_axis, "Test points per load level");
  eval->add_option("--repetitions", repetitions, "Timing repetitions per surrogate solve");
  eval->add_flag("--no-dc", no_dc, "Skip the DC-OPF column");
  eval->add_option("-o,--out", report_out, "Report output (CSV, - for stdout)");

  auto* solve = app.add_subcommand("solve", "Solve one load vector");
  std::string method = "ac", p_load, q_load, solve_out = "-";
  solve->add_option("--case", case_path, "Case file")->required();
  solve->add_option("--method", method, "Solver")->check(CLI::IsMember({"nn", "ac", "dc"}));
  solve->add_option("--model", model_path, "Model file for --method nn");
  solve->add_option("--p-load", p_load, "Active loads per bus, MW, comma separated")->required();
  solve->add_option("--q-load", q_load, "Reactive loads per bus, MVAr, comma separated (default 0)");
  solve->add_option("-o,--out", solve_out, "Solution output (JSON, - for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (*gen) {
      if (n_samples == 0) throw ValidationError("--samples must be at least 1");
      const auto net = load_case(case_path);
      std::mt19937_64 rng(seed);
      auto lab = generate_labels(net, sample_loads(net, n_samples, rng));
      if (!lab.rejects.empty())
        std::fprintf(stderr, "warning: solver failed on %zu of %zu loads\n", lab.rejects.size(), n_samples);
      if (lab.dataset.empty()) throw ConvergenceError("the reference solver failed on every load");
      emit(gen_out, dataset_to_text(lab.dataset));
    } else if (*train) {
      return run_train(ta);
    } else if (*eval) {
      const auto net = load_case(case_path);
      const auto m = model_from_text(net, read_file(model_path));
      EvalOptions opt;
      opt.timing_repetitions = repetitions;
      opt.include_dc = !no_dc;
      const auto rep = evaluate(m, net, make_test_set(net, per_axis), opt);
      emit(report_out, report_to_csv(net, rep));
      std::fprintf(stderr, "median Vio (MW): nn %.4g  ac %.4g  dc %.4g; median time (ms): nn %.4g  ac %.4g\n",
                   rep.nn.vio_mw.median, rep.ac.vio_mw.median, rep.dc.vio_mw.median, rep.nn.time_ms.median,
                   rep.ac.time_ms.median);
    } else if (*solve) {
      const auto net = load_case(case_path);
      ComplexVec load(parse_vector(net, p_load, "--p-load"),
                      q_load.empty() ? Eigen::VectorXd::Zero(net.n()) : parse_vector(net, q_load, "--q-load"));
      OPFSolution sol;
      if (method == "ac") {
        sol = solve_ac_opf(net, load);
      } else if (method == "dc") {
        sol = solve_dc_opf(net, load);
      } else {
        if (model_path.empty()) throw ValidationError("--method nn needs --model");
        sol = predict(model_from_text(net, read_file(model_path)), load);
      }
      emit(solve_out, solution_json(net, method, sol).dump(1) + "\n");
      if (!sol.converged) return kConvergence;
    }
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConvergence;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
  return 0;
}
