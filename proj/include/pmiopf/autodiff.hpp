#pragma once

// Reverse-mode automatic differentiation on a tape of vector-valued nodes.
//
// Nodes are appended in evaluation order, so parents always precede children
// and a single reverse sweep visits each node once. Primitives are fused over
// Eigen vectors (element-wise ops, matrix-vector products, sums) which keeps
// the tape short for the small MLPs and power-flow graphs used here.
//
// A Tape is single-writer. Use one tape per worker thread.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "pmiopf/errors.hpp"

namespace pmiopf::ad {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Op : std::uint8_t {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  neg,
  scale,
  add_const,
  mul_const,
  relu,
  clamp,
  abs,
  sqrt,
  square,
  tanh,
  sin,
  cos,
  modulus,
  matvec_const,
  matvec,
  sum,
  concat,
  slice,
};

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its tape lives and
/// has not been cleared.
class Var {
 public:
  Var() = default;

  const Vector& value() const;
  const Vector& grad() const;
  Eigen::Index size() const { return value().size(); }
  double scalar() const { return value()[0]; }
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() { nodes_.clear(); }
  /// Drop every node recorded after the first `n`.
  void truncate(std::size_t n) {
    if (n < nodes_.size()) nodes_.resize(n);
  }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Differentiable input.
  Var variable(Vector value) { return push(Op::leaf, kNone, kNone, std::move(value)); }
  Var variable(double value) { return variable(Vector::Constant(1, value)); }
  /// Non-differentiable input; backward skips it.
  Var constant(Vector value) { return push(Op::constant, kNone, kNone, std::move(value)); }

  Var add(Var a, Var b) { same(a, b, "add"); return push(Op::add, a.id_, b.id_, val(a) + val(b)); }
  Var sub(Var a, Var b) { same(a, b, "sub"); return push(Op::sub, a.id_, b.id_, val(a) - val(b)); }
  Var mul(Var a, Var b) {
    same(a, b, "mul");
    return push(Op::mul, a.id_, b.id_, val(a).cwiseProduct(val(b)));
  }
  Var div(Var a, Var b) {
    same(a, b, "div");
    return push(Op::div, a.id_, b.id_, val(a).cwiseQuotient(val(b)));
  }
  Var neg(Var a) { return push(Op::neg, a.id_, kNone, -val(a)); }
  Var scale(Var a, double c) {
    auto v = push(Op::scale, a.id_, kNone, c * val(a));
    nodes_.back().c = c;
    return v;
  }
  Var add_const(Var a, const Vector& c) {
    if (c.size() != val(a).size()) throw DimensionError("ad::add_const: size mismatch");
    return push(Op::add_const, a.id_, kNone, val(a) + c);
  }
  Var mul_const(Var a, const Vector& c) {
    if (c.size() != val(a).size()) throw DimensionError("ad::mul_const: size mismatch");
    auto v = push(Op::mul_const, a.id_, kNone, val(a).cwiseProduct(c));
    nodes_.back().cvec = c;
    return v;
  }
  Var relu(Var a) { return push(Op::relu, a.id_, kNone, val(a).cwiseMax(0.0)); }
  /// Element-wise clamp into [lo, hi]; the derivative is 1 on (lo, hi].
  Var clamp(Var a, const Vector& lo, const Vector& hi) {
    if (lo.size() != val(a).size() || hi.size() != val(a).size()) throw DimensionError("ad::clamp: size mismatch");
    auto v = push(Op::clamp, a.id_, kNone, val(a).cwiseMax(lo).cwiseMin(hi));
    nodes_.back().cvec = lo;
    return v;
  }
  Var abs(Var a) { return push(Op::abs, a.id_, kNone, val(a).cwiseAbs()); }
  Var sqrt(Var a) { return push(Op::sqrt, a.id_, kNone, val(a).cwiseSqrt()); }
  Var square(Var a) { return push(Op::square, a.id_, kNone, val(a).cwiseAbs2()); }
  Var tanh(Var a) { return push(Op::tanh, a.id_, kNone, val(a).array().tanh().matrix()); }
  Var sin(Var a) { return push(Op::sin, a.id_, kNone, val(a).array().sin().matrix()); }
  Var cos(Var a) { return push(Op::cos, a.id_, kNone, val(a).array().cos().matrix()); }

  /// sqrt(re² + im² + delta²), differentiable at zero.
  Var modulus(Var re, Var im, double delta) {
    same(re, im, "modulus");
    Vector m = (val(re).array().square() + val(im).array().square() + delta * delta).sqrt().matrix();
    return push(Op::modulus, re.id_, im.id_, std::move(m));
  }

  /// M x for a constant matrix. `m` must outlive the tape's use of the node.
  Var matvec_const(const Matrix& m, Var x) {
    if (m.cols() != val(x).size()) throw DimensionError("ad::matvec_const: size mismatch");
    auto v = push(Op::matvec_const, x.id_, kNone, m * val(x));
    nodes_.back().mat = &m;
    return v;
  }

  /// W x where `w` holds a rows x cols matrix in column-major order.
  Var matvec(Var w, Var x, Eigen::Index rows, Eigen::Index cols) {
    if (val(w).size() != rows * cols || val(x).size() != cols) throw DimensionError("ad::matvec: size mismatch");
    Eigen::Map<const Matrix> wm(val(w).data(), rows, cols);
    Vector y = wm * val(x);
    auto v = push(Op::matvec, w.id_, x.id_, std::move(y));
    nodes_.back().rows = rows;
    nodes_.back().cols = cols;
    return v;
  }

  Var sum(Var a) { return push(Op::sum, a.id_, kNone, Vector::Constant(1, val(a).sum())); }

  Var concat(Var a, Var b) {
    Vector v(val(a).size() + val(b).size());
    v << val(a), val(b);
    return push(Op::concat, a.id_, b.id_, std::move(v));
  }

  Var slice(Var a, Eigen::Index offset, Eigen::Index length) {
    if (offset < 0 || length < 0 || offset + length > val(a).size()) throw DimensionError("ad::slice: out of range");
    auto v = push(Op::slice, a.id_, kNone, val(a).segment(offset, length));
    nodes_.back().offset = offset;
    return v;
  }

  /// Reverse sweep from a scalar output. Afterwards `grad()` on any node
  /// recorded before `output` holds d output / d node.
  void backward(Var output) {
    if (output.tape_ != this) throw ValidationError("ad::backward: variable belongs to another tape");
    if (val(output).size() != 1) throw DimensionError("ad::backward: output must be scalar");
    for (std::size_t k = 0; k <= output.id_; ++k) nodes_[k].grad.setZero(nodes_[k].value.size());
    nodes_[output.id_].grad[0] = 1.0;
    for (std::size_t k = output.id_ + 1; k-- > 0;) propagate(nodes_[k]);
  }

  const Vector& value_of(std::size_t id) const { return nodes_[id].value; }
  const Vector& grad_of(std::size_t id) const { return nodes_[id].grad; }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  struct Node {
    Op op;
    std::size_t a, b;
    Vector value;
    Vector grad;
    double c = 0;
    Vector cvec;
    const Matrix* mat = nullptr;
    Eigen::Index rows = 0, cols = 0, offset = 0;
  };

  const Vector& val(Var v) const {
    if (v.tape_ != this) throw ValidationError("ad: variable belongs to another tape");
    return nodes_[v.id_].value;
  }
  void same(Var a, Var b, const char* what) const {
    if (val(a).size() != val(b).size()) throw DimensionError(std::string("ad::") + what + ": size mismatch");
  }

  Var push(Op op, std::size_t a, std::size_t b, Vector value) {
    nodes_.push_back(Node{op, a, b, std::move(value), Vector(), 0, Vector(), nullptr, 0, 0, 0});
    return Var(this, nodes_.size() - 1);
  }

  void propagate(const Node& n) {
    if (n.op == Op::leaf || n.op == Op::constant) return;
    const Vector& g = n.grad;
    if (g.isZero(0.0)) return;
    auto ga = [&]() -> Vector& { return nodes_[n.a].grad; };
    auto gb = [&]() -> Vector& { return nodes_[n.b].grad; };
    const auto& va = nodes_[n.a].value;
    switch (n.op) {
      case Op::add: ga() += g; gb() += g; break;
      case Op::sub: ga() += g; gb() -= g; break;
      case Op::mul: {
        const auto& vb = nodes_[n.b].value;
        ga() += g.cwiseProduct(vb);
        gb() += g.cwiseProduct(va);
        break;
      }
      case Op::div: {
        const auto& vb = nodes_[n.b].value;
        ga() += g.cwiseQuotient(vb);
        gb() -= g.cwiseProduct(n.value).cwiseQuotient(vb);
        break;
      }
      case Op::neg: ga() -= g; break;
      case Op::scale: ga() += n.c * g; break;
      case Op::add_const: ga() += g; break;
      case Op::mul_const: ga() += g.cwiseProduct(n.cvec); break;
      case Op::relu:
        for (Eigen::Index i = 0; i < g.size(); ++i)
          if (va[i] > 0) ga()[i] += g[i];
        break;
      case Op::clamp:
        for (Eigen::Index i = 0; i < g.size(); ++i)
          if (va[i] > n.cvec[i] && n.value[i] == va[i]) ga()[i] += g[i];
        break;
      case Op::abs:
        for (Eigen::Index i = 0; i < g.size(); ++i) {
          if (va[i] > 0) ga()[i] += g[i];
          else if (va[i] < 0) ga()[i] -= g[i];
        }
        break;
      case Op::sqrt: ga() += (0.5 * g.array() / n.value.array()).matrix(); break;
      case Op::square: ga() += 2.0 * g.cwiseProduct(va); break;
      case Op::tanh: ga() += (g.array() * (1.0 - n.value.array().square())).matrix(); break;
      case Op::sin: ga() += (g.array() * va.array().cos()).matrix(); break;
      case Op::cos: ga() -= (g.array() * va.array().sin()).matrix(); break;
      case Op::modulus: {
        const auto& vb = nodes_[n.b].value;
        const Vector q = g.cwiseQuotient(n.value);
        ga() += q.cwiseProduct(va);
        gb() += q.cwiseProduct(vb);
        break;
      }
      case Op::matvec_const: ga().noalias() += n.mat->transpose() * g; break;
      case Op::matvec: {
        Eigen::Map<const Matrix> wm(va.data(), n.rows, n.cols);
        const auto& x = nodes_[n.b].value;
        Eigen::Map<Matrix> gw(ga().data(), n.rows, n.cols);
        gw.noalias() += g * x.transpose();
        gb().noalias() += wm.transpose() * g;
        break;
      }
      case Op::sum: ga().array() += g[0]; break;
      case Op::concat: {
        const auto na = va.size();
        ga() += g.head(na);
        gb() += g.tail(g.size() - na);
        break;
      }
      case Op::slice: ga().segment(n.offset, g.size()) += g; break;
      case Op::leaf:
      case Op::constant: break;
    }
  }

  friend class Var;
  std::vector<Node> nodes_;
};

inline const Vector& Var::value() const { return tape_->value_of(id_); }
inline const Vector& Var::grad() const { return tape_->grad_of(id_); }

// Operator sugar for readability in graph-building code.
inline Var operator+(Var a, Var b) { return a.tape()->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape()->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape()->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape()->div(a, b); }
inline Var operator-(Var a) { return a.tape()->neg(a); }
inline Var operator*(double c, Var a) { return a.tape()->scale(a, c); }
inline Var operator+(Var a, const Vector& c) { return a.tape()->add_const(a, c); }
inline Var operator-(Var a, const Vector& c) { return a.tape()->add_const(a, -c); }
inline Var operator-(const Vector& c, Var a) { return a.tape()->add_const(a.tape()->neg(a), c); }

inline Var relu(Var a) { return a.tape()->relu(a); }
inline Var abs(Var a) { return a.tape()->abs(a); }
inline Var sqrt(Var a) { return a.tape()->sqrt(a); }
inline Var square(Var a) { return a.tape()->square(a); }
inline Var tanh(Var a) { return a.tape()->tanh(a); }
inline Var sin(Var a) { return a.tape()->sin(a); }
inline Var cos(Var a) { return a.tape()->cos(a); }
inline Var sum(Var a) { return a.tape()->sum(a); }
inline Var mul_const(Var a, const Vector& c) { return a.tape()->mul_const(a, c); }

/// Complex value as a pair of real nodes.
struct CVar {
  Var re, im;
};

/// (a+jb)(c+jd) = (ac-bd) + j(ad+bc).
inline CVar complex_mul(const CVar& x, const CVar& y) {
  return {x.re * y.re - x.im * y.im, x.re * y.im + x.im * y.re};
}

inline CVar complex_conj(const CVar& x) { return {x.re, -x.im}; }

/// (G + jB)(x.re + j x.im) for constant G, B.
inline CVar complex_matvec_const(const Matrix& g, const Matrix& b, const CVar& x) {
  Tape& t = *x.re.tape();
  return {t.matvec_const(g, x.re) - t.matvec_const(b, x.im), t.matvec_const(b, x.re) + t.matvec_const(g, x.im)};
}

/// ReLU(x - lo) - ReLU(x - hi) + lo, evaluated as a clamp so that the
/// bounds are hit exactly.
inline Var dre(Var x, const Vector& lo, const Vector& hi) { return x.tape()->clamp(x, lo, hi); }

}  // namespace pmiopf::ad
