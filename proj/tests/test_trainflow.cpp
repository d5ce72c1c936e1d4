#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "pmiopf/refopt.hpp"
#include "pmiopf/trainflow.hpp"
#include "test_util.hpp"

using namespace pmiopf;
using Eigen::VectorXd;

namespace {

const PowerNetwork& case3() {
  static const PowerNetwork net = testutil::load_case("case3");
  return net;
}

const PowerNetwork& case14() {
  static const PowerNetwork net = testutil::load_case("case14");
  return net;
}

RunConfig quick_config(int epochs, int max_iterations, std::uint64_t seed = 1) {
  RunConfig cfg;
  cfg.epochs_per_iter = epochs;
  cfg.max_iterations = max_iterations;
  cfg.seed = seed;
  cfg.mlp.hidden = {16, 16};
  return cfg;
}

}  // namespace

TEST(TestSet, SizeAnchorsAndBounds) {
  for (const auto* net : {&case3(), &case14()}) {
    const auto loads = make_test_set(*net, 200);
    EXPECT_EQ(loads.size(), 600u);
    for (const auto& s : loads) {
      EXPECT_TRUE((s.re.array() >= net->load_min().re.array() - 1e-12).all());
      EXPECT_TRUE((s.re.array() <= net->load_max().re.array() + 1e-12).all());
      EXPECT_TRUE((s.im.array() >= net->load_min().im.array() - 1e-12).all());
      EXPECT_TRUE((s.im.array() <= net->load_max().im.array() + 1e-12).all());
    }
  }
  const auto& net = case14();
  const auto anchors = make_test_set(net, 1);
  ASSERT_EQ(anchors.size(), 3u);
  const double levels[] = {0.8, 1.0, 1.2};
  for (int i = 0; i < 3; ++i) {
    for (Eigen::Index k = 0; k < net.n(); ++k) {
      if (net.load_nominal().re[k] == 0) continue;
      const double f = anchors[static_cast<std::size_t>(i)].re[k] / net.load_nominal().re[k];
      // the swept load stays at nominal at per_axis = 1
      EXPECT_TRUE(std::abs(f - levels[i]) < 1e-12 || std::abs(f - 1.0) < 1e-12);
    }
  }
  EXPECT_THROW(make_test_set(net, 0), ValidationError);
}

TEST(TestSet, SweptLoadIsLargestNominal) {
  const auto& net = case3();
  const auto loads = make_test_set(net, 5);
  EXPECT_NEAR(loads.front().re[1], 0.8 * 3.5, 1e-12);
  EXPECT_NEAR(loads[4].re[1], std::min(1.2 * 3.5, net.load_max().re[1]), 1e-12);
}

TEST(Budget, SingleLayerFlops) {
  EXPECT_DOUBLE_EQ(layer_flops(2, 1), 3.0);
  EXPECT_THROW(layer_flops(0, 3), ValidationError);
}

TEST(Budget, PaperShapeFormula) {
  const std::vector<long> shape{84, 1000, 2560, 2560, 5120, 2000, 114};
  double fwd = 0;
  for (std::size_t l = 0; l + 1 < shape.size(); ++l) fwd += (2.0 * shape[l] - 1) * shape[l + 1];
  const auto b = estimate_generation_budget(shape, 12.2e12);
  EXPECT_DOUBLE_EQ(b.forward_flops, fwd);
  EXPECT_DOUBLE_EQ(b.forward_flops, 65532246.0);
  EXPECT_NEAR(b.seconds_per_sample, 2 * fwd * 1e4 / 12.2e12, 1e-12);
}

TEST(Budget, DeskShape) {
  const auto b = estimate_generation_budget({6, 64, 64, 6}, 1e10);
  EXPECT_DOUBLE_EQ(b.forward_flops, 11.0 * 64 + 127.0 * 64 + 127.0 * 6);
  EXPECT_NEAR(b.seconds_per_sample, 0.019188, 1e-9);
  EXPECT_THROW(estimate_generation_budget({6}, 1e10), ValidationError);
}

TEST(Metrics, QuartilesAndOptimalityLoss) {
  const auto q = quartiles({4.0, 1.0, 3.0, 2.0, 5.0, std::nan("")});
  EXPECT_EQ(q.count, 5u);
  EXPECT_DOUBLE_EQ(q.median, 3.0);
  EXPECT_DOUBLE_EQ(q.q1, 2.0);
  EXPECT_DOUBLE_EQ(q.q3, 4.0);
  EXPECT_DOUBLE_EQ(q.max, 5.0);
  EXPECT_DOUBLE_EQ(optimality_loss_pct(102.0, 100.0), 2.0);
  EXPECT_TRUE(std::isnan(optimality_loss_pct(1.0, 0.0)));
}

TEST(Evaluate, OracleHasNoViolationOrLoss) {
  const auto& net = case14();
  const auto loads = make_test_set(net, 3);
  EvalOptions opt;
  opt.timing_repetitions = 1;
  opt.include_dc = false;
  const auto rep =
      evaluate_predictor(net, [&](const ComplexVec& l) { return solve_ac_opf(net, l); }, loads, opt);
  ASSERT_EQ(rep.rows.size(), 9u);
  EXPECT_EQ(rep.reference_failures, 0u);
  for (const auto& r : rep.rows) {
    EXPECT_LT(r.nn.vio_mw, 1e-3);
    EXPECT_NEAR(r.nn.opt_pct, 0.0, 1e-9);
  }
}

TEST(Evaluate, DcViolatesWhereLossesMatter) {
  const auto& net = case3();
  EvalOptions opt;
  opt.timing_repetitions = 1;
  const auto m = make_model(net);
  const auto rep = evaluate(m, net, make_test_set(net, 10), opt);
  double worst = 0;
  for (const auto& r : rep.rows) worst = std::max(worst, r.dc.vio_mw);
  EXPECT_GT(worst, 0.0);
  EXPECT_GT(rep.dc.vio_mw.max, 0.0);
}

TEST(Evaluate, DeterministicApartFromTiming) {
  const auto& net = case3();
  const auto m = make_model(net);
  EvalOptions opt;
  opt.timing_repetitions = 1;
  const auto loads = make_test_set(net, 4);
  const auto a = evaluate(m, net, loads, opt);
  const auto b = evaluate(m, net, loads, opt);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].nn.vio_mw, b.rows[i].nn.vio_mw);
    EXPECT_EQ(a.rows[i].nn.opt_pct, b.rows[i].nn.opt_pct);
    EXPECT_EQ(a.rows[i].dc.vio_mw, b.rows[i].dc.vio_mw);
    EXPECT_EQ(a.rows[i].reference_cost, b.rows[i].reference_cost);
  }
}

TEST(Evaluate, OtherCaseModelIsRejected) {
  const auto m = make_model(case3());
  EXPECT_THROW(evaluate(m, case14(), make_test_set(case14(), 1)), ValidationError);
}

TEST(ReportCsv, HeaderAndRows) {
  const auto& net = case3();
  EvalOptions opt;
  opt.timing_repetitions = 1;
  const auto rep = evaluate(make_model(net), net, make_test_set(net, 2), opt);
  std::istringstream in(report_to_csv(net, rep));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line,
            "index,p_load_1,p_load_2,p_load_3,reference_ok,reference_cost,nn_vio_mw,nn_opt_pct,nn_time_ms,"
            "ac_vio_mw,ac_opt_pct,ac_time_ms,dc_vio_mw,dc_opt_pct,dc_time_ms");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST(RunConfig, Validation) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.initial_samples = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.zeta = 0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.max_iterations = -1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Algorithm1, ZeroIterationsIsInitialTrainingOnly) {
  const auto& net = case3();
  const auto r = run_algorithm1(net, quick_config(50, 0));
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.dataset.size(), 10u);
  EXPECT_FALSE(r.terminated);
  EXPECT_EQ(r.total_epochs, 50);
  for (const auto& s : r.dataset.samples) EXPECT_TRUE(s.provenance.initial());
}

TEST(Algorithm1, ProvenancePartitionsDatasetAndGrowthIsMonotone) {
  const auto& net = case3();
  const auto r = run_algorithm1(net, quick_config(1500, 3));
  ASSERT_FALSE(r.history.empty());
  std::map<int, std::size_t> by_iteration;
  for (const auto& s : r.dataset.samples) ++by_iteration[s.provenance.iteration];
  EXPECT_EQ(by_iteration[0], 10u);
  std::size_t total = by_iteration[0];
  for (std::size_t k = 0; k < r.history.size(); ++k) {
    const auto& h = r.history[k];
    EXPECT_EQ(h.dataset_size, total);
    EXPECT_EQ(by_iteration[h.iteration + 1], h.added);
    if (k + 1 < r.history.size()) EXPECT_GT(h.added, 0u);
    total += h.added;
  }
  EXPECT_EQ(total, r.dataset.size());
}

TEST(Algorithm1, DeterministicForFixedSeed) {
  const auto& net = case3();
  const auto a = run_algorithm1(net, quick_config(300, 1, 7));
  const auto b = run_algorithm1(net, quick_config(300, 1, 7));
  ASSERT_EQ(a.dataset.size(), b.dataset.size());
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    EXPECT_EQ(a.dataset[i].s_load.re, b.dataset[i].s_load.re);
    EXPECT_EQ(a.dataset[i].v.re, b.dataset[i].v.re);
  }
  EXPECT_EQ(get_parameters(a.model), get_parameters(b.model));
}

TEST(Algorithm1, RejectsDatasetOfOtherCase) {
  const auto& net = case3();
  auto other = generate_labels(case14(), {case14().load_nominal()}).dataset;
  EXPECT_THROW(run_algorithm1(net, quick_config(10, 0), &other), ValidationError);
}

TEST(Algorithm1, HistoryJson) {
  const auto r = run_algorithm1(case3(), quick_config(20, 0));
  const auto j = history_to_json(r);
  EXPECT_EQ(j.at("format"), "pmiopf-history");
  EXPECT_EQ(j.at("iterations").size(), 1u);
  EXPECT_EQ(j.at("final_dataset_size"), 10u);
}

TEST(Baseline, EqualBudgetAndDeterministic) {
  const auto& net = case3();
  const auto cfg = quick_config(20, 0, 3);
  const auto a = run_baseline_random(net, cfg, 17, 20);
  const auto b = run_baseline_random(net, cfg, 17, 20);
  ASSERT_EQ(a.dataset.size(), 17u);
  std::size_t initial = 0;
  for (std::size_t i = 0; i < a.dataset.size(); ++i) {
    initial += a.dataset[i].provenance.initial();
    EXPECT_EQ(a.dataset[i].s_load.re, b.dataset[i].s_load.re);
  }
  EXPECT_EQ(initial, 10u);
  EXPECT_THROW(run_baseline_random(net, cfg, 5, 20), ValidationError);
}

TEST(Baseline, ConventionalLossFlagDropsViolationTerm) {
  const auto& net = case3();
  auto cfg = quick_config(20, 0, 3);
  cfg.vio_weight = 0.0;
  const auto r = run_baseline_random(net, cfg, 12, 20);
  EXPECT_EQ(r.model.vio_weight, 0.0);
  for (const auto& s : r.dataset.samples) {
    const auto l = loss_value(r.model, s);
    EXPECT_DOUBLE_EQ(l.total, l.v_l1 + l.s_l1);
  }
}
