#ifndef SNF_DIFF_HPP
#define SNF_DIFF_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "snf/errors.hpp"
#include "snf/scalar.hpp"

// Reverse-mode differentiation by recorded computation. Var is a drop-in
// scalar for the templated math in this library: arithmetic on tracked Vars
// appends nodes to the active tape, and a reverse sweep accumulates adjoints.
// Gradients flow through exactly the operations executed forward (iterative
// procedures are unrolled as recorded), which is what makes the central
// finite-difference contract checkable.

namespace snf::ad {

class Tape {
 public:
  struct Node {
    std::int32_t a, b;
    double da, db;
  };

  std::int32_t leaf(double) {
    nodes_.push_back({-1, -1, 0.0, 0.0});
    return last_index();
  }

  std::int32_t push(std::int32_t a, double da, std::int32_t b, double db) {
    nodes_.push_back({a, b, da, db});
    return last_index();
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Adjoints of every node w.r.t. node `output`. Nodes only reference
  // earlier nodes, so one reverse pass suffices.
  std::vector<double> adjoints(std::int32_t output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (std::int32_t i = output; i >= 0; --i) {
      double g = adj[static_cast<std::size_t>(i)];
      if (g == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.a >= 0) adj[static_cast<std::size_t>(n.a)] += n.da * g;
      if (n.b >= 0) adj[static_cast<std::size_t>(n.b)] += n.db * g;
    }
    return adj;
  }

 private:
  std::int32_t last_index() const { return static_cast<std::int32_t>(nodes_.size()) - 1; }
  std::vector<Node> nodes_;
};

inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

// Scoped activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(active_tape()) { active_tape() = &t; }
  ~TapeScope() { active_tape() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

class Var {
 public:
  Var() = default;
  Var(double v) : v_(v) {}  // NOLINT: implicit constant lift is the point
  Var(double v, std::int32_t idx) : v_(v), idx_(idx) {}

  double value() const { return v_; }
  std::int32_t index() const { return idx_; }
  bool tracked() const { return idx_ >= 0; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);

 private:
  double v_ = 0.0;
  std::int32_t idx_ = -1;
};

inline double value_of(const Var& x) { return x.value(); }

inline Var leaf(Tape& t, double v) { return Var(v, t.leaf(v)); }

namespace detail {

inline Var unary(const Var& x, double value, double dx) {
  Tape* t = active_tape();
  if (t == nullptr || !x.tracked()) return Var(value);
  return Var(value, t->push(x.index(), dx, -1, 0.0));
}

inline Var binary(const Var& x, const Var& y, double value, double dx, double dy) {
  Tape* t = active_tape();
  std::int32_t ix = x.tracked() ? x.index() : -1;
  std::int32_t iy = y.tracked() ? y.index() : -1;
  if (t == nullptr || (ix < 0 && iy < 0)) return Var(value);
  return Var(value, t->push(ix, dx, iy, dy));
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value() + b.value(), 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value() - b.value(), 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a, b, a.value() * b.value(), b.value(), a.value());
}
inline Var operator/(const Var& a, const Var& b) {
  double inv = 1.0 / b.value();
  return detail::binary(a, b, a.value() * inv, inv, -a.value() * inv * inv);
}
inline Var operator-(const Var& a) { return detail::unary(a, -a.value(), -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }
inline bool operator==(const Var& a, const Var& b) { return a.value() == b.value(); }
inline bool operator!=(const Var& a, const Var& b) { return a.value() != b.value(); }

inline Var tanh(const Var& x) {
  double t = std::tanh(x.value());
  return detail::unary(x, t, 1.0 - t * t);
}
inline Var exp(const Var& x) {
  double e = std::exp(x.value());
  return detail::unary(x, e, e);
}
inline Var log(const Var& x) {
  return detail::unary(x, std::log(x.value()), 1.0 / x.value());
}
inline Var log1p(const Var& x) {
  return detail::unary(x, std::log1p(x.value()), 1.0 / (1.0 + x.value()));
}
inline Var sqrt(const Var& x) {
  double s = std::sqrt(x.value());
  return detail::unary(x, s, 0.5 / s);
}
inline Var abs(const Var& x) {
  return detail::unary(x, std::abs(x.value()), x.value() < 0.0 ? -1.0 : 1.0);
}
inline Var fabs(const Var& x) { return abs(x); }

inline Var logistic(const Var& x) {
  double s = snf::logistic(x.value());
  return detail::unary(x, s, s * (1.0 - s));
}
inline Var softplus(const Var& x) {
  return detail::unary(x, snf::softplus(x.value()), snf::logistic(x.value()));
}
// Continuously differentiable at 0: both one-sided derivatives are 1.
inline Var elu(const Var& x) {
  double v = x.value();
  return v > 0.0 ? detail::unary(x, v, 1.0) : detail::unary(x, std::expm1(v), std::exp(v));
}

}  // namespace snf::ad

namespace Eigen {

template <>
struct NumTraits<snf::ad::Var> : NumTraits<double> {
  using Real = snf::ad::Var;
  using NonInteger = snf::ad::Var;
  using Nested = snf::ad::Var;
  using Literal = double;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3,
  };
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<snf::ad::Var, double, BinaryOp> {
  using ReturnType = snf::ad::Var;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, snf::ad::Var, BinaryOp> {
  using ReturnType = snf::ad::Var;
};

}  // namespace Eigen

namespace snf::ad {

using ADMatrix = MatrixX<Var>;
using ADVector = VectorX<Var>;

// Registers every entry of `values` as a tape leaf.
inline ADMatrix lift(Tape& tape, const Matrix& values) {
  ADMatrix out(values.rows(), values.cols());
  for (Index j = 0; j < values.cols(); ++j) {
    for (Index i = 0; i < values.rows(); ++i) out(i, j) = leaf(tape, values(i, j));
  }
  return out;
}

// Gradient of each lifted block given the adjoint vector of a backward sweep.
inline Matrix block_gradient(const ADMatrix& lifted, const std::vector<double>& adj) {
  Matrix g(lifted.rows(), lifted.cols());
  for (Index j = 0; j < lifted.cols(); ++j) {
    for (Index i = 0; i < lifted.rows(); ++i) {
      const Var& v = lifted(i, j);
      g(i, j) = v.tracked() ? adj[static_cast<std::size_t>(v.index())] : 0.0;
    }
  }
  return g;
}

// objective must be callable on a vector of MatrixX<S> for S in
// {double, Var} and return S (a generic lambda fits).
template <class Objective>
std::vector<Matrix> gradients(Objective&& objective, const std::vector<Matrix>& blocks,
                              const std::vector<std::string>* names = nullptr) {
  Tape tape;
  std::vector<ADMatrix> lifted;
  lifted.reserve(blocks.size());
  Var y;
  {
    TapeScope scope(tape);
    for (const auto& b : blocks) lifted.push_back(lift(tape, b));
    y = objective(lifted);
  }
  std::vector<Matrix> grads;
  grads.reserve(blocks.size());
  if (!y.tracked()) {
    // Objective constant in the parameters.
    for (const auto& b : blocks) grads.push_back(Matrix::Zero(b.rows(), b.cols()));
    return grads;
  }
  if (!std::isfinite(y.value())) throw NumericalError("gradients: non-finite objective");
  std::vector<double> adj = tape.adjoints(y.index());
  for (std::size_t k = 0; k < lifted.size(); ++k) {
    Matrix g = block_gradient(lifted[k], adj);
    if (!all_finite(g)) {
      std::string block = names != nullptr ? (*names)[k] : "block " + std::to_string(k);
      throw NumericalError("gradients: non-finite gradient in " + block, block);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

struct GradientReport {
  std::string block;
  Matrix analytic;
  Matrix finite_difference;
  double max_rel_error;
};

// Central-difference comparison per parameter block. The objective closure
// must hold its noise fixed so both FD probes see identical draws.
template <class Objective>
std::vector<GradientReport> grad_check(Objective&& objective, std::vector<Matrix> blocks,
                                       const std::vector<std::string>& names,
                                       double fd_step = 1e-5) {
  std::vector<Matrix> analytic = gradients(objective, blocks, &names);

  std::vector<GradientReport> reports;
  reports.reserve(blocks.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    Matrix fd(blocks[k].rows(), blocks[k].cols());
    for (Index j = 0; j < blocks[k].cols(); ++j) {
      for (Index i = 0; i < blocks[k].rows(); ++i) {
        double saved = blocks[k](i, j);
        blocks[k](i, j) = saved + fd_step;
        double up = value_of(objective(blocks));
        blocks[k](i, j) = saved - fd_step;
        double down = value_of(objective(blocks));
        blocks[k](i, j) = saved;
        fd(i, j) = (up - down) / (2.0 * fd_step);
      }
    }
    double max_rel = 0.0;
    for (Index j = 0; j < fd.cols(); ++j) {
      for (Index i = 0; i < fd.rows(); ++i) {
        double a = analytic[k](i, j);
        double f = fd(i, j);
        double rel = std::abs(a - f) / std::max(1e-8, std::abs(a) + std::abs(f));
        max_rel = std::max(max_rel, rel);
      }
    }
    reports.push_back({names[k], std::move(analytic[k]), std::move(fd), max_rel});
  }
  return reports;
}

}  // namespace snf::ad

#endif  // SNF_DIFF_HPP
