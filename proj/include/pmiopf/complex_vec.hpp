#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>

#include "pmiopf/errors.hpp"

namespace pmiopf {

/// Paired real/imaginary vectors. Used for voltages, powers and currents so
/// that the autodiff layer can treat both halves as plain real vectors.
struct ComplexVec {
  Eigen::VectorXd re;
  Eigen::VectorXd im;

  ComplexVec() = default;
  explicit ComplexVec(Eigen::Index n) : re(Eigen::VectorXd::Zero(n)), im(Eigen::VectorXd::Zero(n)) {}
  ComplexVec(Eigen::VectorXd r, Eigen::VectorXd i) : re(std::move(r)), im(std::move(i)) {
    if (re.size() != im.size()) throw DimensionError("ComplexVec: re/im length mismatch");
  }

  static ComplexVec from_complex(const Eigen::VectorXcd& z) { return {z.real(), z.imag()}; }
  static ComplexVec polar(const Eigen::VectorXd& mag, const Eigen::VectorXd& ang) {
    return {mag.array() * ang.array().cos(), mag.array() * ang.array().sin()};
  }

  Eigen::Index size() const noexcept { return re.size(); }
  std::complex<double> operator[](Eigen::Index k) const { return {re[k], im[k]}; }

  Eigen::VectorXcd to_complex() const {
    Eigen::VectorXcd z(size());
    for (Eigen::Index k = 0; k < size(); ++k) z[k] = {re[k], im[k]};
    return z;
  }
  Eigen::VectorXd magnitude() const { return (re.array().square() + im.array().square()).sqrt(); }
  Eigen::VectorXd angle() const {
    Eigen::VectorXd a(size());
    for (Eigen::Index k = 0; k < size(); ++k) a[k] = std::atan2(im[k], re[k]);
    return a;
  }
  bool all_finite() const { return re.allFinite() && im.allFinite(); }

  /// Stacked [re; im], the layout the MLP sees.
  Eigen::VectorXd stacked() const {
    Eigen::VectorXd s(2 * size());
    s << re, im;
    return s;
  }
  static ComplexVec unstack(const Eigen::VectorXd& s) {
    if (s.size() % 2 != 0) throw DimensionError("ComplexVec::unstack: odd length");
    const auto n = s.size() / 2;
    return {s.head(n), s.tail(n)};
  }

  friend ComplexVec operator+(const ComplexVec& a, const ComplexVec& b) {
    return {a.re + b.re, a.im + b.im};
  }
  friend ComplexVec operator-(const ComplexVec& a, const ComplexVec& b) {
    return {a.re - b.re, a.im - b.im};
  }
  friend ComplexVec operator*(double s, const ComplexVec& a) { return {s * a.re, s * a.im}; }
  friend bool operator==(const ComplexVec& a, const ComplexVec& b) {
    return a.re.size() == b.re.size() && a.re == b.re && a.im == b.im;
  }
};

/// L1 norm of the stacked real representation.
inline double l1_distance(const ComplexVec& a, const ComplexVec& b) {
  return (a.re - b.re).lpNorm<1>() + (a.im - b.im).lpNorm<1>();
}

inline double max_abs_distance(const ComplexVec& a, const ComplexVec& b) {
  return std::max((a.re - b.re).lpNorm<Eigen::Infinity>(), (a.im - b.im).lpNorm<Eigen::Infinity>());
}

}  // namespace pmiopf
