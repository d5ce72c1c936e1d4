#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

#include "pmiopf/dataset.hpp"
#include "pmiopf/netmodel.hpp"

namespace testutil {

inline std::string data_path(const std::string& name) { return std::string(PMIOPF_DATA_DIR) + "/" + name; }

inline pmiopf::PowerNetwork load_case(const std::string& name) {
  return pmiopf::parse_case(pmiopf::read_file(data_path(name + ".json")));
}

/// Load vector of the 3-bus case with bus-2 injection p2 (= -P_load).
inline pmiopf::ComplexVec load3(double p2) {
  pmiopf::ComplexVec s(3);
  s.re[1] = -p2;
  return s;
}

inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// Norm-wise relative error ‖a − b‖ / max(‖a‖, ‖b‖); zero when both vanish.
inline double rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace testutil
