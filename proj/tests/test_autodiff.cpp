#include <gtest/gtest.h>

#include <random>

#include "pmiopf/acpf.hpp"
#include "pmiopf/autodiff.hpp"
#include "test_util.hpp"

using namespace pmiopf;
using ad::Tape;
using ad::Var;
using Eigen::VectorXd;

TEST(Tape, ReluForward) {
  Tape t;
  EXPECT_EQ(relu(t.variable(-1.0)).scalar(), 0.0);
  EXPECT_EQ(relu(t.variable(2.0)).scalar(), 2.0);
}

TEST(Tape, MatvecIdentity) {
  Tape t;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  const VectorXd x = Eigen::Vector3d(1, -2, 3);
  EXPECT_EQ(t.matvec_const(eye, t.variable(x)).value(), x);
  const VectorXd w = Eigen::Map<const VectorXd>(eye.data(), 9);
  EXPECT_EQ(t.matvec(t.variable(w), t.variable(x), 3, 3).value(), x);
}

TEST(Backward, SquareGradient) {
  Tape t;
  auto x = t.variable(3.0);
  auto f = x * x;
  t.backward(f);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, ReluGradientAtZeroIsZero) {
  Tape t;
  auto x = t.variable(0.0);
  t.backward(relu(x));
  EXPECT_EQ(x.grad()[0], 0.0);
  Tape t2;
  auto y = t2.variable(0.0);
  t2.backward(ad::dre(y, VectorXd::Constant(1, 0.0), VectorXd::Constant(1, 1.0)));
  EXPECT_EQ(y.grad()[0], 0.0);
}

TEST(Backward, NonScalarOutputIsError) {
  Tape t;
  auto x = t.variable(VectorXd::Ones(3));
  EXPECT_THROW(t.backward(x), DimensionError);
}

TEST(Backward, MixingTapesIsError) {
  Tape a, b;
  auto x = a.variable(1.0);
  auto y = b.variable(2.0);
  EXPECT_THROW(a.add(x, y), ValidationError);
}

TEST(Backward, ElementwisePrimitivesMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.2, 1.5);
  const VectorXd c = Eigen::Vector4d(0.3, -1.2, 2.0, 0.7);
  auto build = [&](Tape& t, Var x) {
    auto a = tanh(x) * sin(x) + cos(2.0 * x);
    auto b = sqrt(square(x) + c.cwiseAbs()) / (x + VectorXd::Constant(4, 2.0));
    auto m = t.modulus(a, b, kModulusDelta);
    auto s = t.concat(abs(a - b), relu(m - c));
    return sum(mul_const(t.slice(s, 1, 6), VectorXd::LinSpaced(6, 1.0, 2.0)));
  };
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd x0(4);
    for (auto& v : x0) v = u(rng);
    Tape t;
    auto x = t.variable(x0);
    t.backward(build(t, x));
    const auto fd = testutil::central_difference(
        [&](const VectorXd& xv) {
          Tape tt;
          return build(tt, tt.variable(xv)).scalar();
        },
        x0);
    EXPECT_LT(testutil::rel_error(x.grad(), fd), 1e-5);
  }
}

TEST(Backward, ViolationGenMatchesFiniteDifferences) {
  const auto net = testutil::load_case("case14");
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto build = [&](Tape& t, const VectorXd& stacked) {
    auto s = t.variable(stacked);
    auto re = t.slice(s, 0, net.n()), im = t.slice(s, net.n(), net.n());
    auto v = sum(relu(re - net.gen_max().re)) + sum(relu(net.gen_min().re - re)) + sum(relu(im - net.gen_max().im)) +
             sum(relu(net.gen_min().im - im));
    return std::make_pair(s, v);
  };
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd x0(2 * net.n());
    for (auto& v : x0) v = nd(rng);
    Tape t;
    auto [s, v] = build(t, x0);
    EXPECT_NEAR(v.scalar(), violation_total(violation_gen(net, ComplexVec::unstack(x0))), 1e-12);
    t.backward(v);
    const auto fd = testutil::central_difference(
        [&](const VectorXd& xv) { return violation_total(violation_gen(net, ComplexVec::unstack(xv))); }, x0);
    EXPECT_LT(testutil::rel_error(s.grad(), fd), 1e-5);
  }
}

TEST(ComplexHelpers, MulAndConj) {
  Tape t;
  ad::CVar one{t.variable(1.0), t.variable(0.0)};
  ad::CVar j{t.variable(0.0), t.variable(1.0)};
  const auto p = ad::complex_mul(one, j);
  EXPECT_EQ(p.re.scalar(), 0.0);
  EXPECT_EQ(p.im.scalar(), 1.0);
  ad::CVar z{t.variable(2.0), t.variable(3.0)};
  const auto zc = ad::complex_conj(z);
  EXPECT_EQ(zc.re.scalar(), 2.0);
  EXPECT_EQ(zc.im.scalar(), -3.0);
}

TEST(ComplexHelpers, InjectionPathGradientOnTwoBus) {
  const auto net = parse_case(R"({"base_mva": 100, "buses": [
    {"id": 1, "bus_kind": "slack", "v_min": 1, "v_max": 1, "p_gen_max": 500},
    {"id": 2, "bus_kind": "load", "v_min": 0.9, "v_max": 1.1}],
    "branches": [{"from_bus": 1, "to_bus": 2, "series_r": 0.01, "series_x": 0.03, "i_max": 1.0}]})");
  auto build = [&](Tape& t, Var v) {
    ad::CVar vv{t.slice(v, 0, 2), t.slice(v, 2, 2)};
    const auto i = ad::complex_matvec_const(net.g_bus(), net.b_bus(), vv);
    const auto s = ad::complex_mul(vv, ad::complex_conj(i));
    return sum(square(s.re)) + sum(square(s.im) * s.re);
  };
  const VectorXd x0 = Eigen::Vector4d(1.0, 1.0, 0.0, 0.0);
  Tape t;
  auto v = t.variable(x0);
  auto f = build(t, v);
  EXPECT_NEAR(f.scalar(), 0.0, 1e-20);
  t.backward(f);
  // At the flat point every injection is zero, so the squared-injection
  // objective is stationary.
  EXPECT_NEAR(v.grad().norm(), 0.0, 1e-12);
  const VectorXd x1 = Eigen::Vector4d(1.0, 0.97, 0.0, -0.05);
  Tape t1;
  auto v1 = t1.variable(x1);
  t1.backward(build(t1, v1));
  const auto fd = testutil::central_difference(
      [&](const VectorXd& xv) {
        Tape tt;
        return build(tt, tt.variable(xv)).scalar();
      },
      x1);
  EXPECT_LT(testutil::rel_error(v1.grad(), fd), 1e-5);
  // Same values as the plain-double algebra.
  Tape t2;
  auto v2 = t2.variable(x1);
  ad::CVar vv{t2.slice(v2, 0, 2), t2.slice(v2, 2, 2)};
  const auto s = ad::complex_mul(vv, ad::complex_conj(ad::complex_matvec_const(net.g_bus(), net.b_bus(), vv)));
  const auto ref = injections(net, ComplexVec::unstack(x1));
  EXPECT_LT((s.re.value() - ref.re).norm() + (s.im.value() - ref.im).norm(), 1e-12);
}

TEST(Properties, Linearity) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorXd x0(5);
  for (auto& v : x0) v = nd(rng);
  auto f = [](Var x) { return sum(tanh(x) * x); };
  auto g = [](Var x) { return sum(square(sin(x))); };
  const double alpha = 0.75, beta = -2.5;
  Tape tf, tg, th;
  auto xf = tf.variable(x0), xg = tg.variable(x0), xh = th.variable(x0);
  tf.backward(f(xf));
  tg.backward(g(xg));
  th.backward(alpha * f(xh) + beta * g(xh));
  const VectorXd combo = alpha * xf.grad() + beta * xg.grad();
  EXPECT_LT((xh.grad() - combo).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(Properties, ReplayIsBitIdentical) {
  const VectorXd x0 = VectorXd::LinSpaced(7, -1.0, 2.0);
  auto run = [&]() {
    Tape t;
    auto x = t.variable(x0);
    auto y = sum(relu(3.0 * (tanh(x) * x) - VectorXd::Constant(7, 0.1)) + sqrt(square(x) + VectorXd::Ones(7)));
    t.backward(y);
    return std::make_pair(y.scalar(), VectorXd(x.grad()));
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Properties, GradientsAccumulateOverReuse) {
  Tape t;
  auto x = t.variable(2.0);
  auto y = x * x + x + x;  // 2x + 2 = 6
  t.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  t.backward(y);  // a second sweep starts from zeroed gradients
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Dre, ClampsAndPassesInterior) {
  Tape t;
  const VectorXd lo = Eigen::Vector3d(0.0, 0.0, 0.95), hi = Eigen::Vector3d(1.0, 1.0, 1.05);
  auto x = t.variable(Eigen::Vector3d(0.5, -2.0, 1.07));
  auto y = ad::dre(x, lo, hi);
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.0);
  EXPECT_EQ(y.value()[2], 1.05);
  t.backward(sum(y));
  EXPECT_EQ(x.grad(), Eigen::Vector3d(1.0, 0.0, 0.0));
}

TEST(Dre, BoundsAreExactAndGradientMatchesReluForm) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 30.0);
  const VectorXd lo = VectorXd::Constant(50, 0.95), hi = VectorXd::Constant(50, 1.05);
  VectorXd xv(50);
  for (auto& x : xv) x = nd(rng);
  xv[0] = 0.95;  // on the bounds: derivative 0 at lo, 1 at hi
  xv[1] = 1.05;
  Tape t;
  auto x = t.variable(xv);
  auto y = ad::dre(x, lo, hi);
  EXPECT_TRUE((y.value().array() >= 0.95).all());
  EXPECT_TRUE((y.value().array() <= 1.05).all());
  t.backward(sum(y));
  Tape r;
  auto xr = r.variable(xv);
  r.backward(sum(relu(xr - lo) - relu(xr - hi)));
  EXPECT_EQ(x.grad(), xr.grad());
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
}
