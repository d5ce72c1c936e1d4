#pragma once

// Labeled samples (S^L, V̂, Ŝ^G) and their JSON persistence.

#include <Eigen/Core>
#include <cstdint>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pmiopf/acpf.hpp"
#include "pmiopf/complex_vec.hpp"
#include "pmiopf/errors.hpp"
#include "pmiopf/netmodel.hpp"

namespace pmiopf {

/// Where a sample came from: the initial draw (iteration 0) or worth-learning
/// round k >= 1.
struct Provenance {
  int iteration = 0;

  bool initial() const noexcept { return iteration == 0; }
  std::string str() const { return iteration == 0 ? "initial" : "worth:" + std::to_string(iteration); }
  static Provenance parse(const std::string& s) {
    if (s == "initial") return {0};
    if (s.rfind("worth:", 0) == 0) {
      std::size_t pos = 0;
      int k = -1;
      try {
        k = std::stoi(s.substr(6), &pos);
      } catch (const std::exception&) {
      }
      if (k >= 1 && pos == s.size() - 6) return {k};
    }
    throw ValidationError("bad provenance tag '" + s + "'");
  }
  bool operator==(const Provenance&) const = default;
};

struct Sample {
  ComplexVec s_load;
  ComplexVec v;
  ComplexVec s_gen;
  Provenance provenance;
};

struct Dataset {
  std::string case_fingerprint;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  const Sample& operator[](std::size_t i) const { return samples[i]; }
  void append(const Dataset& other) { samples.insert(samples.end(), other.samples.begin(), other.samples.end()); }
};

/// Largest per-bus power-balance residual |injections(v) - (s_gen - s_load)|.
inline double balance_residual(const PowerNetwork& net, const ComplexVec& v, const ComplexVec& s_gen,
                               const ComplexVec& s_load) {
  const auto inj = injections(net, v);
  return max_abs_distance(inj, s_gen - s_load);
}

namespace detail {

inline nlohmann::json to_json(const ComplexVec& z) {
  return {{"re", std::vector<double>(z.re.data(), z.re.data() + z.re.size())},
          {"im", std::vector<double>(z.im.data(), z.im.data() + z.im.size())}};
}

inline ComplexVec complex_from_json(const nlohmann::json& j, Eigen::Index n, const char* what) {
  if (!j.is_object() || !j.contains("re") || !j.contains("im")) throw ValidationError(std::string(what) + ": expected {re, im}");
  const auto re = j.at("re").get<std::vector<double>>();
  const auto im = j.at("im").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(re.size()) != n || static_cast<Eigen::Index>(im.size()) != n)
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(n));
  ComplexVec z(Eigen::Map<const Eigen::VectorXd>(re.data(), n), Eigen::Map<const Eigen::VectorXd>(im.data(), n));
  if (!z.all_finite()) throw ValidationError(std::string(what) + ": non-finite entry");
  return z;
}

}  // namespace detail

inline nlohmann::json dataset_to_json(const Dataset& d) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : d.samples)
    samples.push_back({{"s_load", detail::to_json(s.s_load)},
                       {"v", detail::to_json(s.v)},
                       {"s_gen", detail::to_json(s.s_gen)},
                       {"provenance", s.provenance.str()}});
  return {{"case_fingerprint", d.case_fingerprint}, {"samples", std::move(samples)}};
}

inline std::string dataset_to_text(const Dataset& d) { return dataset_to_json(d).dump(1) + "\n"; }

/// Parses and re-validates a dataset against `net`: fingerprint must match and
/// every label must satisfy power balance within `balance_tol`.
inline Dataset dataset_from_text(const PowerNetwork& net, std::string_view text, double balance_tol = 1e-5) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("dataset: ") + e.what());
  }
  Dataset d;
  try {
    d.case_fingerprint = j.at("case_fingerprint").get<std::string>();
    if (d.case_fingerprint != net.fingerprint())
      throw ValidationError("dataset fingerprint " + d.case_fingerprint + " does not match case " + net.fingerprint());
    std::size_t row = 0;
    for (const auto& js : j.at("samples")) {
      Sample s;
      s.s_load = detail::complex_from_json(js.at("s_load"), net.n(), "s_load");
      s.v = detail::complex_from_json(js.at("v"), net.n(), "v");
      s.s_gen = detail::complex_from_json(js.at("s_gen"), net.n(), "s_gen");
      s.provenance = Provenance::parse(js.at("provenance").get<std::string>());
      const double r = balance_residual(net, s.v, s.s_gen, s.s_load);
      if (r > balance_tol)
        throw ValidationError("dataset sample " + std::to_string(row) + ": power balance residual " + std::to_string(r));
      d.samples.push_back(std::move(s));
      ++row;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("dataset: ") + e.what());
  }
  return d;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

/// Uniform draws inside [lo, hi] per component; fixed components stay fixed.
inline std::vector<ComplexVec> sample_loads(const ComplexVec& lo, const ComplexVec& hi, std::size_t count,
                                            std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ComplexVec> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    ComplexVec s(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      s.re[i] = lo.re[i] == hi.re[i] ? lo.re[i] : lo.re[i] + u(rng) * (hi.re[i] - lo.re[i]);
      s.im[i] = lo.im[i] == hi.im[i] ? lo.im[i] : lo.im[i] + u(rng) * (hi.im[i] - lo.im[i]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<ComplexVec> sample_loads(const PowerNetwork& net, std::size_t count, std::mt19937_64& rng) {
  return sample_loads(net.load_min(), net.load_max(), count, rng);
}

}  // namespace pmiopf
