#pragma once

// Case-file parsing and the immutable electrical model shared by every
// other part of the library. All quantities are per-unit on the case MVA
// base; MW/MVAr only appear in the case file and at CLI boundaries.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pmiopf/complex_vec.hpp"
#include "pmiopf/errors.hpp"

namespace pmiopf {

enum class BusKind { slack, generator, load };

inline std::string_view to_string(BusKind k) {
  switch (k) {
    case BusKind::slack: return "slack";
    case BusKind::generator: return "generator";
    case BusKind::load: return "load";
  }
  return "load";
}

struct Bus {
  int id = 0;
  BusKind bus_kind = BusKind::load;
  double v_min = 0.95, v_max = 1.05;
  double p_gen_min = 0, p_gen_max = 0, q_gen_min = 0, q_gen_max = 0;
  double p_load_nominal = 0, q_load_nominal = 0;
  double p_load_min = 0, p_load_max = 0, q_load_min = 0, q_load_max = 0;
  double cost_linear = 0, cost_quadratic = 0;

  bool operator==(const Bus&) const = default;
};

struct Branch {
  int from_bus = 0;  ///< bus id, not index
  int to_bus = 0;
  double series_r = 0, series_x = 0;
  double shunt_b = 0;  ///< total line charging; half at each end
  double i_max = 0;

  std::complex<double> series_admittance() const { return 1.0 / std::complex<double>(series_r, series_x); }
  bool operator==(const Branch&) const = default;
};

using ComplexMatrix = Eigen::MatrixXcd;

/// Immutable network model. Construct through `parse_case` or `PowerNetwork::build`.
class PowerNetwork {
 public:
  /// Validates and assembles the admittance matrices. Throws CaseSemanticError.
  static PowerNetwork build(std::string name, double base_mva, std::vector<Bus> buses,
                            std::vector<Branch> branches);

  const std::string& name() const noexcept { return name_; }
  double base_mva() const noexcept { return base_mva_; }
  const std::vector<Bus>& buses() const noexcept { return buses_; }
  const std::vector<Branch>& branches() const noexcept { return branches_; }
  Eigen::Index n() const noexcept { return static_cast<Eigen::Index>(buses_.size()); }
  Eigen::Index n_branch() const noexcept { return static_cast<Eigen::Index>(branches_.size()); }
  Eigen::Index slack() const noexcept { return slack_; }

  const ComplexMatrix& y_bus() const noexcept { return y_bus_; }
  const ComplexMatrix& y_branch() const noexcept { return y_branch_; }
  /// Real/imaginary parts, cached for the real-arithmetic autodiff path.
  const Eigen::MatrixXd& g_bus() const noexcept { return g_bus_; }
  const Eigen::MatrixXd& b_bus() const noexcept { return b_bus_; }
  const Eigen::MatrixXd& g_branch() const noexcept { return g_branch_; }
  const Eigen::MatrixXd& b_branch() const noexcept { return b_branch_; }

  Eigen::Index index_of(int bus_id) const {
    auto it = index_.find(bus_id);
    if (it == index_.end()) throw CaseSemanticError("unknown bus id " + std::to_string(bus_id));
    return it->second;
  }
  Eigen::Index from_index(Eigen::Index br) const { return from_idx_[br]; }
  Eigen::Index to_index(Eigen::Index br) const { return to_idx_[br]; }

  // Bound vectors (length n, or n_branch for currents).
  const ComplexVec& gen_min() const noexcept { return gen_min_; }
  const ComplexVec& gen_max() const noexcept { return gen_max_; }
  const ComplexVec& load_min() const noexcept { return load_min_; }
  const ComplexVec& load_max() const noexcept { return load_max_; }
  const ComplexVec& load_nominal() const noexcept { return load_nominal_; }
  const Eigen::VectorXd& v_min() const noexcept { return v_min_; }
  const Eigen::VectorXd& v_max() const noexcept { return v_max_; }
  const Eigen::VectorXd& i_max() const noexcept { return i_max_; }
  const Eigen::VectorXd& cost_linear() const noexcept { return cost_linear_; }
  const Eigen::VectorXd& cost_quadratic() const noexcept { return cost_quadratic_; }

  bool is_generator(Eigen::Index k) const { return buses_[k].bus_kind != BusKind::load; }
  std::vector<Eigen::Index> generator_indices() const {
    std::vector<Eigen::Index> g;
    for (Eigen::Index k = 0; k < n(); ++k)
      if (is_generator(k)) g.push_back(k);
    return g;
  }
  bool has_shunts() const {
    return std::any_of(branches_.begin(), branches_.end(), [](const Branch& b) { return b.shunt_b != 0.0; });
  }

  /// Generation cost of a dispatch (active power only, per-unit).
  double cost(const Eigen::VectorXd& p_gen) const {
    double c = 0;
    for (Eigen::Index k = 0; k < n(); ++k)
      if (is_generator(k)) c += cost_quadratic_[k] * p_gen[k] * p_gen[k] + cost_linear_[k] * p_gen[k];
    return c;
  }

  /// FNV-1a hash of the canonical serialization, as 16 hex digits.
  std::string fingerprint() const;

  bool operator==(const PowerNetwork& o) const {
    return name_ == o.name_ && base_mva_ == o.base_mva_ && buses_ == o.buses_ && branches_ == o.branches_;
  }

 private:
  PowerNetwork() = default;

  std::string name_;
  double base_mva_ = 100.0;
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::map<int, Eigen::Index> index_;
  std::vector<Eigen::Index> from_idx_, to_idx_;
  Eigen::Index slack_ = 0;
  ComplexMatrix y_bus_, y_branch_;
  Eigen::MatrixXd g_bus_, b_bus_, g_branch_, b_branch_;
  ComplexVec gen_min_, gen_max_, load_min_, load_max_, load_nominal_;
  Eigen::VectorXd v_min_, v_max_, i_max_, cost_linear_, cost_quadratic_;
};

namespace detail {

inline void check_indices(const std::vector<Bus>& buses, const std::vector<Branch>& branches,
                          std::map<int, Eigen::Index>& index) {
  index.clear();
  for (std::size_t k = 0; k < buses.size(); ++k) {
    if (!index.emplace(buses[k].id, static_cast<Eigen::Index>(k)).second)
      throw CaseSemanticError("duplicate bus id " + std::to_string(buses[k].id));
  }
  for (const auto& br : branches) {
    if (!index.count(br.from_bus) || !index.count(br.to_bus))
      throw CaseSemanticError("branch " + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) +
                              " references an unknown bus");
    if (br.series_r == 0.0 && br.series_x == 0.0)
      throw CaseSemanticError("zero-impedance branch " + std::to_string(br.from_bus) + "-" +
                              std::to_string(br.to_bus));
  }
}

}  // namespace detail

/// Bus admittance matrix: y[k][k] = sum of (1/z + j b/2) over incident
/// branches, y[k][m] = -1/z for each branch k-m.
inline ComplexMatrix build_y_bus(const std::vector<Bus>& buses, const std::vector<Branch>& branches) {
  std::map<int, Eigen::Index> index;
  detail::check_indices(buses, branches, index);
  const auto n = static_cast<Eigen::Index>(buses.size());
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  for (const auto& br : branches) {
    const auto f = index.at(br.from_bus), t = index.at(br.to_bus);
    const auto ys = br.series_admittance();
    const std::complex<double> ysh(0.0, br.shunt_b / 2.0);
    y(f, f) += ys + ysh;
    y(t, t) += ys + ysh;
    y(f, t) -= ys;
    y(t, f) -= ys;
  }
  return y;
}

/// Branch admittance matrix: row i gives the from-end current of branch i,
/// I = (V_from - V_to)/z + j(b/2) V_from.
inline ComplexMatrix build_y_branch(const std::vector<Bus>& buses, const std::vector<Branch>& branches) {
  std::map<int, Eigen::Index> index;
  detail::check_indices(buses, branches, index);
  const auto n = static_cast<Eigen::Index>(buses.size());
  ComplexMatrix y = ComplexMatrix::Zero(static_cast<Eigen::Index>(branches.size()), n);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const auto& br = branches[i];
    const auto ys = br.series_admittance();
    const auto row = static_cast<Eigen::Index>(i);
    y(row, index.at(br.from_bus)) += ys + std::complex<double>(0.0, br.shunt_b / 2.0);
    y(row, index.at(br.to_bus)) -= ys;
  }
  return y;
}

inline PowerNetwork PowerNetwork::build(std::string name, double base_mva, std::vector<Bus> buses,
                                        std::vector<Branch> branches) {
  if (!(base_mva > 0)) throw CaseSemanticError("base_mva must be positive");
  if (buses.empty()) throw CaseSemanticError("case has no buses");
  const auto n_slack = std::count_if(buses.begin(), buses.end(), [](const Bus& b) { return b.bus_kind == BusKind::slack; });
  if (n_slack != 1) throw CaseSemanticError(n_slack == 0 ? "case has no slack bus" : "case has more than one slack bus");

  for (const auto& b : buses) {
    const std::string who = "bus " + std::to_string(b.id) + ": ";
    if (!(b.v_min > 0) || b.v_min > b.v_max) throw CaseSemanticError(who + "invalid voltage bounds");
    if (b.p_gen_min > b.p_gen_max || b.q_gen_min > b.q_gen_max) throw CaseSemanticError(who + "invalid generation bounds");
    if (b.p_load_min > b.p_load_max || b.q_load_min > b.q_load_max) throw CaseSemanticError(who + "invalid load range");
    if (b.bus_kind == BusKind::load && (b.p_gen_min != 0 || b.p_gen_max != 0 || b.q_gen_min != 0 || b.q_gen_max != 0))
      throw CaseSemanticError(who + "load bus with nonzero generation bounds");
  }
  for (const auto& br : branches) {
    const std::string who = "branch " + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) + ": ";
    if (br.from_bus == br.to_bus) throw CaseSemanticError(who + "self loop");
    if (br.series_r < 0) throw CaseSemanticError(who + "negative resistance");
    if (!(br.i_max > 0)) throw CaseSemanticError(who + "i_max must be positive");
  }

  PowerNetwork net;
  net.name_ = std::move(name);
  net.base_mva_ = base_mva;
  net.buses_ = std::move(buses);
  net.branches_ = std::move(branches);
  detail::check_indices(net.buses_, net.branches_, net.index_);
  net.y_bus_ = build_y_bus(net.buses_, net.branches_);
  net.y_branch_ = build_y_branch(net.buses_, net.branches_);
  net.g_bus_ = net.y_bus_.real();
  net.b_bus_ = net.y_bus_.imag();
  net.g_branch_ = net.y_branch_.real();
  net.b_branch_ = net.y_branch_.imag();
  for (const auto& br : net.branches_) {
    net.from_idx_.push_back(net.index_.at(br.from_bus));
    net.to_idx_.push_back(net.index_.at(br.to_bus));
  }

  const auto n = net.n();
  net.gen_min_ = ComplexVec(n);
  net.gen_max_ = ComplexVec(n);
  net.load_min_ = ComplexVec(n);
  net.load_max_ = ComplexVec(n);
  net.load_nominal_ = ComplexVec(n);
  net.v_min_.resize(n);
  net.v_max_.resize(n);
  net.cost_linear_.resize(n);
  net.cost_quadratic_.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& b = net.buses_[k];
    if (b.bus_kind == BusKind::slack) net.slack_ = k;
    net.gen_min_.re[k] = b.p_gen_min;
    net.gen_min_.im[k] = b.q_gen_min;
    net.gen_max_.re[k] = b.p_gen_max;
    net.gen_max_.im[k] = b.q_gen_max;
    net.load_min_.re[k] = b.p_load_min;
    net.load_min_.im[k] = b.q_load_min;
    net.load_max_.re[k] = b.p_load_max;
    net.load_max_.im[k] = b.q_load_max;
    net.load_nominal_.re[k] = b.p_load_nominal;
    net.load_nominal_.im[k] = b.q_load_nominal;
    net.v_min_[k] = b.v_min;
    net.v_max_[k] = b.v_max;
    net.cost_linear_[k] = b.cost_linear;
    net.cost_quadratic_[k] = b.cost_quadratic;
  }
  net.i_max_.resize(net.n_branch());
  for (Eigen::Index i = 0; i < net.n_branch(); ++i) net.i_max_[i] = net.branches_[i].i_max;
  return net;
}

namespace detail {

inline std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

/// Line of the first occurrence of `"key"` after `from`; a best-effort
/// locator for semantic errors since the JSON DOM keeps no positions.
inline std::size_t locate(std::string_view text, std::string_view key, std::size_t occurrence) {
  const std::string needle = "\"" + std::string(key) + "\"";
  std::size_t pos = 0;
  for (std::size_t k = 0; k <= occurrence; ++k) {
    pos = text.find(needle, k == 0 ? 0 : pos + 1);
    if (pos == std::string_view::npos) return 0;
  }
  return line_of(text, pos);
}

inline double number(const nlohmann::json& obj, const char* key, std::string_view text, std::string_view arr,
                     std::size_t idx) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number())
    throw CaseSyntaxError(std::string("missing or non-numeric field '") + key + "' in " + std::string(arr) + "[" +
                              std::to_string(idx) + "]",
                          locate(text, arr, 0));
  return it->get<double>();
}

inline std::optional<double> optional_number(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw CaseSyntaxError(std::string("non-numeric field '") + key + "'", 0);
  return it->get<double>();
}

inline void default_range(double nominal, std::optional<double> lo, std::optional<double> hi, double& out_lo,
                          double& out_hi) {
  const double a = 0.8 * nominal, b = 1.2 * nominal;
  out_lo = lo.value_or(std::min(a, b));
  out_hi = hi.value_or(std::max(a, b));
}

}  // namespace detail

/// Parses the JSON case format documented in docs/case_format.md.
/// Powers are MW/MVAr in the file and per-unit in the returned model;
/// impedances, voltages, currents and cost coefficients are per-unit.
inline PowerNetwork parse_case(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw CaseSyntaxError(e.what(), detail::line_of(text, e.byte == 0 ? 0 : e.byte - 1));
  }
  if (!doc.is_object()) throw CaseSyntaxError("case must be a JSON object", 1);
  for (const char* key : {"base_mva", "buses", "branches"})
    if (!doc.contains(key)) throw CaseSyntaxError(std::string("missing top-level key '") + key + "'", 1);
  if (!doc["base_mva"].is_number()) throw CaseSyntaxError("base_mva must be a number", detail::locate(text, "base_mva", 0));
  if (!doc["buses"].is_array() || !doc["branches"].is_array())
    throw CaseSyntaxError("buses and branches must be arrays", 1);

  const double base = doc["base_mva"].get<double>();
  if (!(base > 0)) throw CaseSemanticError("base_mva must be positive");
  const std::string name = doc.value("name", std::string("case"));

  std::vector<Bus> buses;
  std::size_t idx = 0;
  for (const auto& jb : doc["buses"]) {
    if (!jb.is_object()) throw CaseSyntaxError("bus entry is not an object", detail::locate(text, "buses", 0));
    Bus b;
    if (!jb.contains("id") || !jb["id"].is_number_integer())
      throw CaseSyntaxError("bus entry without integer 'id'", detail::locate(text, "id", idx));
    b.id = jb["id"].get<int>();
    const std::string kind = jb.value("bus_kind", std::string("load"));
    if (kind == "slack") b.bus_kind = BusKind::slack;
    else if (kind == "generator") b.bus_kind = BusKind::generator;
    else if (kind == "load") b.bus_kind = BusKind::load;
    else throw CaseSyntaxError("unknown bus_kind '" + kind + "'", detail::locate(text, "bus_kind", idx));

    auto num = [&](const char* key) { return detail::number(jb, key, text, "buses", idx); };
    auto opt = [&](const char* key) { return detail::optional_number(jb, key); };
    b.v_min = num("v_min");
    b.v_max = num("v_max");
    b.p_gen_min = opt("p_gen_min").value_or(0.0) / base;
    b.p_gen_max = opt("p_gen_max").value_or(0.0) / base;
    b.q_gen_min = opt("q_gen_min").value_or(0.0) / base;
    b.q_gen_max = opt("q_gen_max").value_or(0.0) / base;
    // Ranges are resolved in MW before conversion so that every per-unit
    // value has an exact MW preimage and serialization round-trips.
    const double p_nom = opt("p_load_nominal").value_or(0.0), q_nom = opt("q_load_nominal").value_or(0.0);
    detail::default_range(p_nom, opt("p_load_min"), opt("p_load_max"), b.p_load_min, b.p_load_max);
    detail::default_range(q_nom, opt("q_load_min"), opt("q_load_max"), b.q_load_min, b.q_load_max);
    b.p_load_nominal = p_nom / base;
    b.q_load_nominal = q_nom / base;
    b.p_load_min /= base;
    b.p_load_max /= base;
    b.q_load_min /= base;
    b.q_load_max /= base;
    b.cost_linear = opt("cost_linear").value_or(0.0);
    b.cost_quadratic = opt("cost_quadratic").value_or(0.0);
    buses.push_back(b);
    ++idx;
  }

  std::vector<Branch> branches;
  idx = 0;
  for (const auto& jr : doc["branches"]) {
    if (!jr.is_object()) throw CaseSyntaxError("branch entry is not an object", detail::locate(text, "branches", 0));
    Branch br;
    if (!jr.contains("from_bus") || !jr["from_bus"].is_number_integer() || !jr.contains("to_bus") ||
        !jr["to_bus"].is_number_integer())
      throw CaseSyntaxError("branch entry without integer from_bus/to_bus", detail::locate(text, "from_bus", idx));
    br.from_bus = jr["from_bus"].get<int>();
    br.to_bus = jr["to_bus"].get<int>();
    br.series_r = detail::number(jr, "series_r", text, "branches", idx);
    br.series_x = detail::number(jr, "series_x", text, "branches", idx);
    br.shunt_b = detail::optional_number(jr, "shunt_b").value_or(0.0);
    br.i_max = detail::number(jr, "i_max", text, "branches", idx);
    const double tap = detail::optional_number(jr, "tap").value_or(1.0);
    const double shift = detail::optional_number(jr, "shift").value_or(0.0);
    if ((tap != 1.0 && tap != 0.0) || shift != 0.0)
      throw CaseSemanticError("branch " + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) +
                              ": transformer taps and phase shifts are not supported");
    branches.push_back(br);
    ++idx;
  }
  return PowerNetwork::build(name, base, std::move(buses), std::move(branches));
}

namespace detail {

/// MW value that converts back to exactly `pu` under division by `base`.
inline double to_mw(double pu, double base) {
  double mw = pu * base;
  for (int k = 0; k < 8 && mw / base != pu; ++k)
    mw = std::nextafter(mw, mw / base < pu ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity());
  return mw;
}

}  // namespace detail

/// Case-file JSON for a network. Load ranges are always written explicitly.
inline nlohmann::json serialize_case(const PowerNetwork& net) {
  const double base = net.base_mva();
  auto mw = [base](double pu) { return detail::to_mw(pu, base); };
  nlohmann::json doc;
  doc["name"] = net.name();
  doc["base_mva"] = base;
  doc["buses"] = nlohmann::json::array();
  for (const auto& b : net.buses()) {
    doc["buses"].push_back({{"id", b.id},
                            {"bus_kind", std::string(to_string(b.bus_kind))},
                            {"v_min", b.v_min},
                            {"v_max", b.v_max},
                            {"p_gen_min", mw(b.p_gen_min)},
                            {"p_gen_max", mw(b.p_gen_max)},
                            {"q_gen_min", mw(b.q_gen_min)},
                            {"q_gen_max", mw(b.q_gen_max)},
                            {"p_load_nominal", mw(b.p_load_nominal)},
                            {"q_load_nominal", mw(b.q_load_nominal)},
                            {"p_load_min", mw(b.p_load_min)},
                            {"p_load_max", mw(b.p_load_max)},
                            {"q_load_min", mw(b.q_load_min)},
                            {"q_load_max", mw(b.q_load_max)},
                            {"cost_linear", b.cost_linear},
                            {"cost_quadratic", b.cost_quadratic}});
  }
  doc["branches"] = nlohmann::json::array();
  for (const auto& br : net.branches()) {
    doc["branches"].push_back({{"from_bus", br.from_bus},
                               {"to_bus", br.to_bus},
                               {"series_r", br.series_r},
                               {"series_x", br.series_x},
                               {"shunt_b", br.shunt_b},
                               {"i_max", br.i_max}});
  }
  return doc;
}

inline std::string serialize_case_text(const PowerNetwork& net, int indent = 2) {
  return serialize_case(net).dump(indent);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string PowerNetwork::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(serialize_case(*this).dump())));
  return buf;
}

}  // namespace pmiopf
