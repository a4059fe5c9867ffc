#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "h2jet/errors.hpp"

namespace h2jet {

class Tape;

// Handle to a scalar recorded on a Tape.  Values are computed eagerly as the
// expression is built, so a Var always carries a finished primal value; the
// reverse sweep only replays cached local partials.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  double value() const;
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

// Partial derivatives of one scalar with respect to every registered
// trainable input, in registration order.
struct GradientSet {
  std::vector<double> d;

  std::size_t size() const { return d.size(); }
  double at(std::size_t i) const {
    if (i >= d.size()) throw domain_error("GradientSet: parameter index out of range");
    return d[i];
  }
};

// Append-only arena of expression nodes.  Each node caches its value and the
// local partial with respect to each parent; constants fold into partials so
// mixed Var/double arithmetic adds no nodes for the double side.  Fused
// nodes (sum / dot / affine) park their (parent, partial) pairs in side
// arrays to keep wide reductions to a single node.
class Tape {
 public:
  static constexpr std::uint32_t npos = 0xffffffffu;

  // --- recording -----------------------------------------------------------
  Var constant(double v) { return push0(v, "constant"); }

  // A trainable leaf: recorded like a constant but remembered so gradient()
  // can return exactly one entry per input in registration order.
  Var input(double v) {
    Var x = push0(v, "input");
    inputs_.push_back(x.index());
    return x;
  }

  std::vector<Var> inputs(const std::vector<double>& values) {
    std::vector<Var> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(input(v));
    return out;
  }

  Var push0(double val, const char* op) {
    check(val, op);
    nodes_.push_back(Node{val, 0.0, 0.0, npos, npos, 0, 0});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  Var push1(double val, const Var& p0, double d0, const char* op) {
    check(val, op);
    nodes_.push_back(Node{val, d0, 0.0, p0.index(), npos, 0, 0});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  Var push2(double val, const Var& p0, double d0, const Var& p1, double d1, const char* op) {
    check(val, op);
    nodes_.push_back(Node{val, d0, d1, p0.index(), p1.index(), 0, 0});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  // Begin a fused node: stream (parent, partial) pairs, then seal it.
  std::uint32_t fused_begin() { return static_cast<std::uint32_t>(ext_parents_.size()); }
  void fused_pair(const Var& parent, double partial) {
    ext_parents_.push_back(parent.index());
    ext_partials_.push_back(partial);
  }
  Var fused_end(double val, std::uint32_t begin, const char* op) {
    check(val, op);
    const auto count = static_cast<std::uint32_t>(ext_parents_.size()) - begin;
    nodes_.push_back(Node{val, 0.0, 0.0, npos, npos, begin, count});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  // --- evaluation ----------------------------------------------------------
  double value(std::uint32_t index) const { return nodes_[index].val; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep seeding d(root)/d(root) = 1.  Zero-adjoint nodes are
  // skipped, so sweeping from an interior root ignores unrelated subgraphs.
  void backward(const Var& root) {
    if (nodes_.empty()) throw domain_error("backward: tape is empty (no forward pass recorded)");
    if (root.tape() != this || root.index() >= nodes_.size())
      throw domain_error("backward: root is not a node of this tape");
    adjoints_.assign(nodes_.size(), 0.0);
    adjoints_[root.index()] = 1.0;
    for (std::uint32_t i = root.index() + 1; i-- > 0;) {
      const double a = adjoints_[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.ext_count != 0) {
        const std::uint32_t* p = &ext_parents_[n.ext_begin];
        const double* d = &ext_partials_[n.ext_begin];
        for (std::uint32_t k = 0; k < n.ext_count; ++k) adjoints_[p[k]] += a * d[k];
      } else {
        if (n.p0 != npos) adjoints_[n.p0] += a * n.d0;
        if (n.p1 != npos) adjoints_[n.p1] += a * n.d1;
      }
    }
  }

  double adjoint(const Var& v) const {
    if (adjoints_.size() != nodes_.size())
      throw domain_error("adjoint: backward has not run on the current tape");
    if (v.tape() != this || v.index() >= nodes_.size())
      throw domain_error("adjoint: node is not on this tape");
    return adjoints_[v.index()];
  }

  // One finite entry per registered input, in registration order.
  GradientSet gradient() const {
    if (adjoints_.size() != nodes_.size())
      throw domain_error("gradient: backward has not run on the current tape");
    GradientSet g;
    g.d.reserve(inputs_.size());
    for (std::uint32_t idx : inputs_) {
      const double v = adjoints_[idx];
      if (!std::isfinite(v)) throw domain_error("gradient: non-finite partial derivative");
      g.d.push_back(v);
    }
    return g;
  }

  // Drops every node but keeps the arena capacity for the next build.
  void clear() {
    nodes_.clear();
    ext_parents_.clear();
    ext_partials_.clear();
    inputs_.clear();
    adjoints_.clear();
  }

 private:
  struct Node {
    double val;
    double d0, d1;
    std::uint32_t p0, p1;
    std::uint32_t ext_begin, ext_count;
  };

  static void check(double val, const char* op) {
    if (!std::isfinite(val))
      throw domain_error(std::string(op) + ": non-finite value produced during forward evaluation");
  }

  std::vector<Node> nodes_;
  std::vector<std::uint32_t> ext_parents_;
  std::vector<double> ext_partials_;
  std::vector<std::uint32_t> inputs_;
  std::vector<double> adjoints_;
};

inline double Var::value() const { return tape_->value(index_); }

// Hooks used by the templated physics assembly: value_of() exposes the primal
// for branch decisions, make_like() mints a tape constant next to an existing
// Var (the double overloads live in physics.hpp / jet_system.hpp).
inline double value_of(const Var& v) { return v.value(); }
inline Var make_like(const Var& like, double v) { return like.tape()->constant(v); }

// --- arithmetic ------------------------------------------------------------

inline Var operator+(const Var& a, const Var& b) {
  return a.tape()->push2(a.value() + b.value(), a, 1.0, b, 1.0, "add");
}
inline Var operator+(const Var& a, double c) {
  return a.tape()->push1(a.value() + c, a, 1.0, "add");
}
inline Var operator+(double c, const Var& a) { return a + c; }

inline Var operator-(const Var& a) { return a.tape()->push1(-a.value(), a, -1.0, "neg"); }
inline Var operator-(const Var& a, const Var& b) {
  return a.tape()->push2(a.value() - b.value(), a, 1.0, b, -1.0, "sub");
}
inline Var operator-(const Var& a, double c) {
  return a.tape()->push1(a.value() - c, a, 1.0, "sub");
}
inline Var operator-(double c, const Var& a) {
  return a.tape()->push1(c - a.value(), a, -1.0, "sub");
}

inline Var operator*(const Var& a, const Var& b) {
  return a.tape()->push2(a.value() * b.value(), a, b.value(), b, a.value(), "mul");
}
inline Var operator*(const Var& a, double c) {
  return a.tape()->push1(a.value() * c, a, c, "mul");
}
inline Var operator*(double c, const Var& a) { return a * c; }

inline Var operator/(const Var& a, const Var& b) {
  const double bv = b.value();
  const double q = a.value() / bv;
  return a.tape()->push2(q, a, 1.0 / bv, b, -q / bv, "div");
}
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, const Var& b) {
  const double bv = b.value();
  return b.tape()->push1(c / bv, b, -c / (bv * bv), "div");
}

// --- elementary functions --------------------------------------------------

inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return x.tape()->push1(e, x, e, "exp");
}

inline Var ln(const Var& x) {
  if (!(x.value() > 0.0))
    throw domain_error("ln: non-positive argument at node " + std::to_string(x.index()));
  return x.tape()->push1(std::log(x.value()), x, 1.0 / x.value(), "ln");
}
inline Var log(const Var& x) { return ln(x); }

inline Var sqrt(const Var& x) {
  if (!(x.value() > 0.0))
    throw domain_error("sqrt: non-positive argument at node " + std::to_string(x.index()));
  const double r = std::sqrt(x.value());
  return x.tape()->push1(r, x, 0.5 / r, "sqrt");
}

inline Var sin(const Var& x) {
  return x.tape()->push1(std::sin(x.value()), x, std::cos(x.value()), "sin");
}
inline Var cos(const Var& x) {
  return x.tape()->push1(std::cos(x.value()), x, -std::sin(x.value()), "cos");
}

inline Var pow(const Var& x, double p) {
  if (!(x.value() > 0.0))
    throw domain_error("pow: non-positive base at node " + std::to_string(x.index()));
  const double v = std::pow(x.value(), p);
  return x.tape()->push1(v, x, p * v / x.value(), "pow");
}

// Overflow-safe softplus / logistic pair (softplus' = sigmoid).
inline double softplus(double x) {
  return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var softplus(const Var& x) {
  return x.tape()->push1(softplus(x.value()), x, sigmoid(x.value()), "softplus");
}
inline Var sigmoid(const Var& x) {
  const double s = sigmoid(x.value());
  return x.tape()->push1(s, x, s * (1.0 - s), "sigmoid");
}

// --- fused reductions ------------------------------------------------------

// sum_i xs[i] as one node with unit partials.
inline Var sum(const Var* xs, std::size_t n, Tape& tape) {
  double v = 0.0;
  const std::uint32_t begin = tape.fused_begin();
  for (std::size_t i = 0; i < n; ++i) {
    v += xs[i].value();
    tape.fused_pair(xs[i], 1.0);
  }
  return tape.fused_end(v, begin, "sum");
}

// sum_i w[i]*x[i] as one node; both factor sets receive partials.
inline Var dot(const Var* w, const Var* x, std::size_t n, Tape& tape) {
  double v = 0.0;
  const std::uint32_t begin = tape.fused_begin();
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w[i].value(), xi = x[i].value();
    v += wi * xi;
    tape.fused_pair(w[i], xi);
    tape.fused_pair(x[i], wi);
  }
  return tape.fused_end(v, begin, "dot");
}

// bias + sum_i w[i]*x[i] as one node.
inline Var affine(const Var& bias, const Var* w, const Var* x, std::size_t n, Tape& tape) {
  double v = bias.value();
  const std::uint32_t begin = tape.fused_begin();
  tape.fused_pair(bias, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w[i].value(), xi = x[i].value();
    v += wi * xi;
    tape.fused_pair(w[i], xi);
    tape.fused_pair(x[i], wi);
  }
  return tape.fused_end(v, begin, "affine");
}

// bias + sum_i w[i]*x[i] with constant x: only the weights are parents.
inline Var affine_const(const Var& bias, const Var* w, const double* x, std::size_t n, Tape& tape) {
  double v = bias.value();
  const std::uint32_t begin = tape.fused_begin();
  tape.fused_pair(bias, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    v += w[i].value() * x[i];
    tape.fused_pair(w[i], x[i]);
  }
  return tape.fused_end(v, begin, "affine_const");
}

}  // namespace h2jet
