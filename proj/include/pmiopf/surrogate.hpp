#pragma once

// The physical-model-integrated surrogate: an MLP from loads to voltage
// magnitude/angle, the dRe clamp into the voltage box, the explicit power-flow
// layer that turns voltages into generation and violations, and its loss.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pmiopf/acpf.hpp"
#include "pmiopf/autodiff.hpp"
#include "pmiopf/complex_vec.hpp"
#include "pmiopf/dataset.hpp"
#include "pmiopf/errors.hpp"
#include "pmiopf/netmodel.hpp"

namespace pmiopf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// ReLU(x - lo) - ReLU(x - hi) + lo. Computed as a clamp: the ReLU form
/// rounds to values just outside [lo, hi].
inline double dre(double x, double lo, double hi) {
  if (lo > hi) throw ValidationError("dre: lo > hi");
  return std::min(std::max(x, lo), hi);
}

inline VectorXd dre(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  if ((lo.array() > hi.array()).any()) throw ValidationError("dre: lo > hi");
  return x.cwiseMax(lo).cwiseMin(hi);
}

struct MlpConfig {
  std::vector<int> hidden = {64, 64};
  std::uint64_t seed = 0;
};

/// Weights of the surrogate for one network. Input is the stacked load
/// [P; Q] (2n), output is [raw |V|; raw angle] (2n).
struct PmiModel {
  const PowerNetwork* net = nullptr;
  std::vector<int> layer_sizes;
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  VectorXd input_offset, input_scale;
  double vio_weight = 1.0;
  std::string case_fingerprint;

  std::size_t n_layers() const noexcept { return weights.size(); }
  bool initialized() const noexcept { return net && !weights.empty(); }
  Eigen::Index n_parameters() const {
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) k += weights[l].size() + biases[l].size();
    return k;
  }
};

/// Glorot-uniform hidden layers; the output layer starts near the centre of
/// the voltage box with zero angles.
inline PmiModel make_model(const PowerNetwork& net, const MlpConfig& cfg = {}) {
  if (cfg.hidden.empty()) throw ValidationError("MlpConfig: at least one hidden layer is required");
  for (int h : cfg.hidden)
    if (h <= 0) throw ValidationError("MlpConfig: hidden sizes must be positive");
  const auto n = static_cast<int>(net.n());
  PmiModel m;
  m.net = &net;
  m.case_fingerprint = net.fingerprint();
  m.layer_sizes.push_back(2 * n);
  for (int h : cfg.hidden) m.layer_sizes.push_back(h);
  m.layer_sizes.push_back(2 * n);

  std::mt19937_64 rng(cfg.seed);
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    const int fan_in = m.layer_sizes[l], fan_out = m.layer_sizes[l + 1];
    const bool last = l + 2 == m.layer_sizes.size();
    const double a = std::sqrt(6.0 / (fan_in + fan_out)) * (last ? 0.1 : 1.0);
    std::uniform_real_distribution<double> u(-a, a);
    MatrixXd w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(VectorXd::Zero(fan_out));
  }
  m.biases.back().head(n) = 0.5 * (net.v_min() + net.v_max());

  const VectorXd nominal = net.load_nominal().stacked();
  m.input_offset = nominal;
  m.input_scale = nominal.cwiseAbs().unaryExpr([](double s) { return s > 0 ? s : 1.0; });
  return m;
}

inline void check_model(const PmiModel& m) {
  if (!m.initialized()) throw ValidationError("surrogate model has uninitialized weights");
}

/// Flat parameter vector, layer by layer, weights (column-major) then bias.
inline VectorXd get_parameters(const PmiModel& m) {
  VectorXd p(m.n_parameters());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    p.segment(k, m.weights[l].size()) = Eigen::Map<const VectorXd>(m.weights[l].data(), m.weights[l].size());
    k += m.weights[l].size();
    p.segment(k, m.biases[l].size()) = m.biases[l];
    k += m.biases[l].size();
  }
  return p;
}

inline void set_parameters(PmiModel& m, const VectorXd& p) {
  if (p.size() != m.n_parameters()) throw DimensionError("set_parameters: size mismatch");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    Eigen::Map<VectorXd>(m.weights[l].data(), m.weights[l].size()) = p.segment(k, m.weights[l].size());
    k += m.weights[l].size();
    m.biases[l] = p.segment(k, m.biases[l].size());
    k += m.biases[l].size();
  }
}

namespace detail {

inline VectorXd angle_mask(const PowerNetwork& net) {
  VectorXd mask = VectorXd::Ones(net.n());
  mask[net.slack()] = 0.0;
  return mask;
}

}  // namespace detail

/// Raw MLP output for a stacked load vector on plain doubles.
inline VectorXd mlp_output(const PmiModel& m, const VectorXd& s_load_stacked) {
  check_model(m);
  if (s_load_stacked.size() != m.layer_sizes.front()) throw DimensionError("forward_mlp: input size mismatch");
  VectorXd h = (s_load_stacked - m.input_offset).cwiseQuotient(m.input_scale);
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    VectorXd z = m.weights[l] * h + m.biases[l];
    h = l + 1 < m.n_layers() ? VectorXd(z.array().tanh().matrix()) : z;
  }
  return h;
}

/// |V_NN| after the dRe clamp.
inline VectorXd predicted_magnitudes(const PmiModel& m, const ComplexVec& s_load) {
  check_model(m);
  check_size(*m.net, s_load, "forward_mlp");
  const VectorXd out = mlp_output(m, s_load.stacked());
  return dre(VectorXd(out.head(m.net->n())), m.net->v_min(), m.net->v_max());
}

/// V_NN: magnitudes clamped into [v_min, v_max], slack angle 0.
inline ComplexVec forward_mlp(const PmiModel& m, const ComplexVec& s_load) {
  check_model(m);
  check_size(*m.net, s_load, "forward_mlp");
  const auto n = m.net->n();
  const VectorXd out = mlp_output(m, s_load.stacked());
  const VectorXd mag = dre(VectorXd(out.head(n)), m.net->v_min(), m.net->v_max());
  const VectorXd ang = out.tail(n).cwiseProduct(detail::angle_mask(*m.net));
  return ComplexVec::polar(mag, ang);
}

struct PhysicalOutput {
  ComplexVec s_gen;
  ViolationVec vio;
};

/// S^G_phm = injections(V_NN) + S^L and the generation/current violations.
inline PhysicalOutput forward_physical(const PmiModel& m, const ComplexVec& v_nn, const ComplexVec& s_load) {
  check_model(m);
  check_size(*m.net, v_nn, "forward_physical");
  check_size(*m.net, s_load, "forward_physical");
  PhysicalOutput out;
  out.vio = solution_violation(*m.net, v_nn, s_load, &out.s_gen);
  return out;
}

struct LossTerms {
  double v_l1 = 0, s_l1 = 0, vio = 0;
  double total = 0;
};

/// Loss evaluated without a tape.
inline LossTerms loss_value(const PmiModel& m, const Sample& s) {
  const auto v = forward_mlp(m, s.s_load);
  const auto phys = forward_physical(m, v, s.s_load);
  LossTerms t;
  t.v_l1 = l1_distance(s.v, v);
  t.s_l1 = l1_distance(s.s_gen, phys.s_gen);
  t.vio = phys.vio.total();
  t.total = t.v_l1 + t.s_l1 + m.vio_weight * t.vio;
  return t;
}

namespace graph {

using ad::CVar;
using ad::Tape;
using ad::Var;

/// Weight leaves for one pass; `trainable = false` records them as
/// constants (frozen model during ascent).
struct Params {
  std::vector<Var> w, b;
  bool trainable = true;
};

inline Params record_params(Tape& t, const PmiModel& m, bool trainable) {
  Params p;
  p.trainable = trainable;
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    VectorXd flat = Eigen::Map<const VectorXd>(m.weights[l].data(), m.weights[l].size());
    p.w.push_back(trainable ? t.variable(std::move(flat)) : t.constant(std::move(flat)));
    p.b.push_back(trainable ? t.variable(m.biases[l]) : t.constant(m.biases[l]));
  }
  return p;
}

/// V_NN on tape from a stacked load vector.
inline CVar forward_mlp(Tape& t, const PmiModel& m, const Params& p, Var s_load_stacked) {
  check_model(m);
  const auto n = m.net->n();
  Var h = mul_const(s_load_stacked - m.input_offset, m.input_scale.cwiseInverse());
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    Var z = p.trainable ? t.matvec(p.w[l], h, m.weights[l].rows(), m.weights[l].cols()) + p.b[l]
                        : t.matvec_const(m.weights[l], h) + m.biases[l];
    h = l + 1 < m.n_layers() ? tanh(z) : z;
  }
  Var mag = ad::dre(t.slice(h, 0, n), m.net->v_min(), m.net->v_max());
  Var ang = mul_const(t.slice(h, n, n), detail::angle_mask(*m.net));
  return {mag * cos(ang), mag * sin(ang)};
}

struct Physical {
  CVar s_gen;
  Var vio;  ///< stacked violation vector
};

/// Complex injections [V] conj(Y V) on tape.
inline CVar injections(const PowerNetwork& net, const CVar& v) {
  const auto i = ad::complex_matvec_const(net.g_bus(), net.b_bus(), v);
  return ad::complex_mul(v, ad::complex_conj(i));
}

/// |Y_b V| on tape with the shared modulus safeguard.
inline Var current_magnitudes(const PowerNetwork& net, const CVar& v) {
  const auto i = ad::complex_matvec_const(net.g_branch(), net.b_branch(), v);
  return v.re.tape()->modulus(i.re, i.im, kModulusDelta);
}

inline Var box_violation(const CVar& s, const ComplexVec& lo, const ComplexVec& hi) {
  Tape& t = *s.re.tape();
  return t.concat(t.concat(relu(s.re - hi.re), relu(lo.re - s.re)), t.concat(relu(s.im - hi.im), relu(lo.im - s.im)));
}

inline Physical forward_physical(const PowerNetwork& net, const CVar& v, const CVar& s_load) {
  Tape& t = *v.re.tape();
  const auto inj = injections(net, v);
  CVar s_gen{inj.re + s_load.re, inj.im + s_load.im};
  Var cur = relu(current_magnitudes(net, v) - net.i_max());
  return {s_gen, t.concat(box_violation(s_gen, net.gen_min(), net.gen_max()), cur)};
}

inline CVar constant(Tape& t, const ComplexVec& z) { return {t.constant(z.re), t.constant(z.im)}; }

/// Three-term loss for one labeled sample; also returns the V L1 term.
inline Var loss(Tape& t, const PmiModel& m, const Params& p, const Sample& s, double* v_l1 = nullptr) {
  const auto n = m.net->n();
  Var sl = t.constant(s.s_load.stacked());
  const auto v = forward_mlp(t, m, p, sl);
  const auto phys = forward_physical(*m.net, v, {t.slice(sl, 0, n), t.slice(sl, n, n)});
  Var lv = sum(abs(v.re - s.v.re)) + sum(abs(v.im - s.v.im));
  Var ls = sum(abs(phys.s_gen.re - s.s_gen.re)) + sum(abs(phys.s_gen.im - s.s_gen.im));
  if (v_l1) *v_l1 = lv.scalar();
  if (m.vio_weight == 0.0) return lv + ls;
  return lv + ls + m.vio_weight * sum(phys.vio);
}

}  // namespace graph

/// Loss and its gradient with respect to the flat parameter vector, averaged
/// over `idx` samples of `data`.
inline double loss_gradient(const PmiModel& m, const Dataset& data, const std::vector<std::size_t>& idx, VectorXd& grad,
                            double* mean_v_l1 = nullptr) {
  check_model(m);
  if (idx.empty()) throw ValidationError("loss_gradient: empty batch");
  ad::Tape t;
  const auto p = graph::record_params(t, m, true);
  double vl1 = 0;
  ad::Var total;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    double v = 0;
    auto l = graph::loss(t, m, p, data.samples.at(idx[j]), &v);
    total = j == 0 ? l : total + l;
    vl1 += v;
  }
  t.backward(total);
  grad.resize(m.n_parameters());
  Eigen::Index off = 0;
  for (std::size_t layer = 0; layer < m.n_layers(); ++layer) {
    grad.segment(off, p.w[layer].size()) = p.w[layer].grad();
    off += p.w[layer].size();
    grad.segment(off, p.b[layer].size()) = p.b[layer].grad();
    off += p.b[layer].size();
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  grad *= inv;
  if (mean_v_l1) *mean_v_l1 = vl1 * inv;
  return total.scalar() * inv;
}

enum class Optimizer { adam, sgd };

struct TrainOptions {
  int epochs = 1000;
  double lr = 1e-3;
  double lr_final = 0.0;  ///< if > 0, lr decays geometrically to this value at the last epoch
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::size_t batch_size = 0;  ///< 0 = full batch
  double stop_v_l1 = 0.0;      ///< stop once the mean V L1 falls below this (0 disables)
  std::uint64_t seed = 0;      ///< minibatch shuffling
};

struct TrainReport {
  std::vector<double> epoch_loss;  ///< mean loss per epoch
  std::vector<double> epoch_v_l1;  ///< mean ‖V̂ − V_NN‖₁ after each epoch
  int epochs_run = 0;
  bool reached_stop = false;
};

/// Mean of ‖V̂ − V_NN‖₁ over a dataset.
inline double mean_v_l1(const PmiModel& m, const Dataset& data) {
  if (data.empty()) return 0.0;
  double s = 0;
  for (const auto& smp : data.samples) s += l1_distance(smp.v, forward_mlp(m, smp.s_load));
  return s / static_cast<double>(data.size());
}

inline TrainReport train_epochs(PmiModel& m, const Dataset& data, const TrainOptions& opt = {}) {
  check_model(m);
  if (data.empty()) throw ValidationError("train_epochs: empty dataset");
  TrainReport rep;
  VectorXd w = get_parameters(m);
  VectorXd m1 = VectorXd::Zero(w.size()), m2 = VectorXd::Zero(w.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed);
  const std::size_t bs = opt.batch_size == 0 ? data.size() : std::min(opt.batch_size, data.size());
  long step = 0;
  VectorXd g;
  for (int e = 0; e < opt.epochs; ++e) {
    const double lr = opt.lr_final > 0 && opt.epochs > 1
                          ? opt.lr * std::pow(opt.lr_final / opt.lr, static_cast<double>(e) / (opt.epochs - 1))
                          : opt.lr;
    if (bs < data.size()) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.size(); start += bs) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(start + bs, data.size())));
      const double l = loss_gradient(m, data, idx, g);
      if (!std::isfinite(l) || !g.allFinite())
        throw ConvergenceError("train_epochs: non-finite loss at epoch " + std::to_string(e) + " (last mean loss " +
                               (rep.epoch_loss.empty() ? std::string("n/a") : std::to_string(rep.epoch_loss.back())) +
                               ")");
      epoch_loss += l;
      ++batches;
      ++step;
      if (lr != 0.0) {
        if (opt.optimizer == Optimizer::adam) {
          m1 = opt.beta1 * m1 + (1 - opt.beta1) * g;
          m2 = opt.beta2 * m2 + (1 - opt.beta2) * g.cwiseAbs2();
          const double c1 = 1 - std::pow(opt.beta1, static_cast<double>(step));
          const double c2 = 1 - std::pow(opt.beta2, static_cast<double>(step));
          w.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + opt.adam_eps);
        } else {
          w -= lr * g;
        }
        set_parameters(m, w);
      }
    }
    rep.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    rep.epoch_v_l1.push_back(mean_v_l1(m, data));
    rep.epochs_run = e + 1;
    if (opt.stop_v_l1 > 0 && rep.epoch_v_l1.back() < opt.stop_v_l1) {
      rep.reached_stop = true;
      break;
    }
  }
  return rep;
}

// ---------------------------------------------------------------- persistence

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const PmiModel& m) {
  check_model(m);
  nlohmann::json j;
  j["format"] = "pmiopf-model";
  j["version"] = kModelFormatVersion;
  j["case_fingerprint"] = m.case_fingerprint;
  j["layer_sizes"] = m.layer_sizes;
  j["vio_weight"] = m.vio_weight;
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  j["input_offset"] = vec(m.input_offset);
  j["input_scale"] = vec(m.input_scale);
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t l = 0; l < m.n_layers(); ++l) {
    // row-major rows of W
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r) rows.push_back(vec(m.weights[l].row(r).transpose()));
    j["weights"].push_back(std::move(rows));
    j["biases"].push_back(vec(m.biases[l]));
  }
  return j;
}

inline std::string model_to_text(const PmiModel& m) { return model_to_json(m).dump(1) + "\n"; }

inline PmiModel model_from_text(const PowerNetwork& net, std::string_view text) {
  PmiModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "pmiopf-model") throw ValidationError("not a model file");
    if (j.at("version").get<int>() != kModelFormatVersion)
      throw ValidationError("unsupported model version " + std::to_string(j.at("version").get<int>()));
    m.case_fingerprint = j.at("case_fingerprint").get<std::string>();
    if (m.case_fingerprint != net.fingerprint())
      throw ValidationError("model fingerprint " + m.case_fingerprint + " does not match case " + net.fingerprint());
    m.net = &net;
    m.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    m.vio_weight = j.at("vio_weight").get<double>();
    if (m.layer_sizes.size() < 3 || m.layer_sizes.front() != 2 * net.n() || m.layer_sizes.back() != 2 * net.n())
      throw DimensionError("model layer sizes do not fit the case");
    auto vec = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    m.input_offset = vec(j.at("input_offset"));
    m.input_scale = vec(j.at("input_scale"));
    if (m.input_offset.size() != 2 * net.n() || m.input_scale.size() != 2 * net.n())
      throw DimensionError("model input scaling has the wrong length");
    const auto& jw = j.at("weights");
    const auto& jb = j.at("biases");
    if (jw.size() + 1 != m.layer_sizes.size() || jb.size() != jw.size()) throw DimensionError("model layer count mismatch");
    for (std::size_t l = 0; l < jw.size(); ++l) {
      const int rows = m.layer_sizes[l + 1], cols = m.layer_sizes[l];
      if (jw[l].size() != static_cast<std::size_t>(rows)) throw DimensionError("model weight shape mismatch");
      MatrixXd w(rows, cols);
      for (int r = 0; r < rows; ++r) {
        const auto row = vec(jw[l][static_cast<std::size_t>(r)]);
        if (row.size() != cols) throw DimensionError("model weight shape mismatch");
        w.row(r) = row.transpose();
      }
      const auto b = vec(jb[l]);
      if (b.size() != rows) throw DimensionError("model bias shape mismatch");
      m.weights.push_back(std::move(w));
      m.biases.push_back(b);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
  return m;
}

}  // namespace pmiopf
