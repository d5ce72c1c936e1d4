#pragma once

// Power-flow algebra on plain doubles: injections, branch currents and the
// ReLU constraint-violation vectors. The autodiff graphs in surrogate.hpp and
// worthgen.hpp rebuild the same expressions on tape; these functions are the
// reference they are tested against.

#include <Eigen/Core>
#include <array>
#include <cmath>

#include "pmiopf/complex_vec.hpp"
#include "pmiopf/errors.hpp"
#include "pmiopf/netmodel.hpp"

namespace pmiopf {

/// Modulus safeguard shared with the autodiff path.
inline constexpr double kModulusDelta = 1e-12;

/// Nonnegative violation entries in blocks
/// [P upper, P lower, Q upper, Q lower, branch current].
struct ViolationVec {
  Eigen::VectorXd entries;
  std::array<Eigen::Index, 5> block_sizes{};

  Eigen::Index block_offset(int b) const {
    Eigen::Index off = 0;
    for (int k = 0; k < b; ++k) off += block_sizes[static_cast<std::size_t>(k)];
    return off;
  }
  Eigen::VectorXd block(int b) const {
    return entries.segment(block_offset(b), block_sizes[static_cast<std::size_t>(b)]);
  }
  double total() const { return entries.sum(); }
};

enum ViolationBlock : int { kPUpper = 0, kPLower = 1, kQUpper = 2, kQLower = 3, kCurrent = 4 };

inline void check_size(const PowerNetwork& net, const ComplexVec& v, const char* what) {
  if (v.size() != net.n()) throw DimensionError(std::string(what) + ": expected length " + std::to_string(net.n()) +
                                                ", got " + std::to_string(v.size()));
}

/// Complex bus injections [V] conj(Y V).
inline ComplexVec injections(const PowerNetwork& net, const ComplexVec& v) {
  check_size(net, v, "injections");
  const Eigen::VectorXd ir = net.g_bus() * v.re - net.b_bus() * v.im;
  const Eigen::VectorXd ii = net.b_bus() * v.re + net.g_bus() * v.im;
  return {v.re.cwiseProduct(ir) + v.im.cwiseProduct(ii), v.im.cwiseProduct(ir) - v.re.cwiseProduct(ii)};
}

/// From-end branch currents Y_b V.
inline ComplexVec branch_currents(const PowerNetwork& net, const ComplexVec& v) {
  check_size(net, v, "branch_currents");
  return {net.g_branch() * v.re - net.b_branch() * v.im, net.b_branch() * v.re + net.g_branch() * v.im};
}

namespace detail {

inline Eigen::VectorXd relu(const Eigen::VectorXd& x) { return x.cwiseMax(0.0); }

inline ViolationVec box_violation(const ComplexVec& s, const ComplexVec& lo, const ComplexVec& hi) {
  const auto n = s.size();
  ViolationVec out;
  out.block_sizes = {n, n, n, n, 0};
  out.entries.resize(4 * n);
  out.entries << relu(s.re - hi.re), relu(lo.re - s.re), relu(s.im - hi.im), relu(lo.im - s.im);
  return out;
}

}  // namespace detail

/// Element-wise distances of generation to its bounds, P and Q separately.
inline ViolationVec violation_gen(const PowerNetwork& net, const ComplexVec& s_gen) {
  check_size(net, s_gen, "violation_gen");
  return detail::box_violation(s_gen, net.gen_min(), net.gen_max());
}

/// Element-wise distances of loads to their sampling range (closed bounds).
inline ViolationVec violation_load(const PowerNetwork& net, const ComplexVec& s_load) {
  check_size(net, s_load, "violation_load");
  return detail::box_violation(s_load, net.load_min(), net.load_max());
}

inline Eigen::VectorXd current_magnitudes(const PowerNetwork& net, const ComplexVec& v) {
  const auto i = branch_currents(net, v);
  return (i.re.array().square() + i.im.array().square() + kModulusDelta * kModulusDelta).sqrt();
}

/// ReLU(|Y_b V| - I_max); the result has only the current block populated.
inline ViolationVec violation_current(const PowerNetwork& net, const ComplexVec& v) {
  ViolationVec out;
  out.block_sizes = {0, 0, 0, 0, net.n_branch()};
  out.entries = detail::relu(current_magnitudes(net, v) - net.i_max());
  return out;
}

/// Concatenates a box block and a current block into the five-block layout.
inline ViolationVec combine(const ViolationVec& box, const ViolationVec& current) {
  ViolationVec out;
  out.block_sizes = box.block_sizes;
  out.block_sizes[kCurrent] = current.block_sizes[kCurrent];
  out.entries.resize(box.entries.size() + current.entries.size());
  out.entries << box.entries, current.entries;
  return out;
}

/// Sum of all entries.
inline double violation_total(const ViolationVec& vio) { return vio.entries.sum(); }

/// The full solution-side violation vector for a voltage profile and load.
inline ViolationVec solution_violation(const PowerNetwork& net, const ComplexVec& v, const ComplexVec& s_load,
                                       ComplexVec* s_gen_out = nullptr) {
  ComplexVec s_gen = injections(net, v) + s_load;
  auto vio = combine(violation_gen(net, s_gen), violation_current(net, v));
  if (s_gen_out) *s_gen_out = std::move(s_gen);
  return vio;
}

/// Flat 1∠0 profile.
inline ComplexVec flat_profile(const PowerNetwork& net) {
  return {Eigen::VectorXd::Ones(net.n()), Eigen::VectorXd::Zero(net.n())};
}

/// Series I²R losses of every branch computed from both end voltages.
inline double total_series_losses(const PowerNetwork& net, const ComplexVec& v) {
  double loss = 0;
  for (Eigen::Index b = 0; b < net.n_branch(); ++b) {
    const auto f = net.from_index(b), t = net.to_index(b);
    const std::complex<double> dv = v[f] - v[t];
    const auto& br = net.branches()[static_cast<std::size_t>(b)];
    const auto i = dv * br.series_admittance();
    loss += std::norm(i) * br.series_r;
  }
  return loss;
}

}  // namespace pmiopf
