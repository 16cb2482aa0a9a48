#ifndef SNF_LINALG_HPP
#define SNF_LINALG_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "snf/errors.hpp"
#include "snf/scalar.hpp"

// Dense real linear algebra: structured matrix types, a brute-force
// determinant, Bjorck orthogonalization and Householder products.
// Everything is templated on the scalar so gradients can be recorded
// through these routines (see diff.hpp).

namespace snf {

inline constexpr double kDefaultOrthoTolerance = 1e-6;
inline constexpr int kDefaultBjorckSteps = 30;

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!all_finite(m)) {
    throw NumericalError(std::string("non-finite entries in ") + what, what);
  }
}

// Determinant by Gaussian elimination with partial pivoting. Deliberately
// independent of the analytic log-det paths it serves as the oracle for.
template <class Scalar>
Scalar dense_det(const MatrixX<Scalar>& m) {
  const Index n = m.rows();
  if (n != m.cols()) throw DimensionError("dense_det: matrix not square");
  if (n > 64) throw DimensionError("dense_det: dim > 64");
  if (n == 0) return Scalar(1);

  MatrixX<Scalar> a = m;
  Scalar det(1);
  for (Index k = 0; k < n; ++k) {
    Index pivot = k;
    double best = std::abs(value_of(a(k, k)));
    for (Index i = k + 1; i < n; ++i) {
      double cand = std::abs(value_of(a(i, k)));
      if (cand > best) {
        best = cand;
        pivot = i;
      }
    }
    if (best == 0.0) return Scalar(0);
    if (pivot != k) {
      a.row(pivot).swap(a.row(k));
      det = -det;
    }
    det = det * a(k, k);
    for (Index i = k + 1; i < n; ++i) {
      Scalar f = a(i, k) / a(k, k);
      for (Index j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

// det(I_D + AB) and det(I_M + BA), both through dense_det. Test scaffolding
// for the determinant identity that makes the M-dimensional log-det cheap.
inline std::pair<double, double> sylvester_identity_check(const Matrix& a,
                                                          const Matrix& b) {
  if (a.rows() != b.cols() || a.cols() != b.rows()) {
    throw DimensionError("sylvester_identity_check: shapes do not conform");
  }
  const Index d = a.rows();
  const Index m = a.cols();
  Matrix lhs = Matrix::Identity(d, d) + a * b;
  Matrix rhs = Matrix::Identity(m, m) + b * a;
  return {dense_det<double>(lhs), dense_det<double>(rhs)};
}

// Largest |eigenvalue| of a symmetric matrix. Guards the orthogonalization
// precondition below, where an underestimate would accept a divergent seed,
// so this is exact (direct solve) rather than an iterative estimate.
inline double spectral_norm_sym(const Matrix& s) {
  if (s.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

template <class Scalar>
class OrthonormalColumns;

template <class Scalar>
struct BjorckResult {
  OrthonormalColumns<Scalar> q;
  int steps;
  double residual;
  bool monotone;  // residual never increased across executed iterations
};

// Orthonormal-column matrix, checked at construction.
template <class Scalar>
class OrthonormalColumns {
 public:
  explicit OrthonormalColumns(MatrixX<Scalar> q,
                              double ortho_tolerance = kDefaultOrthoTolerance)
      : q_(std::move(q)) {
    Matrix qv(q_.rows(), q_.cols());
    for (Index j = 0; j < q_.cols(); ++j)
      for (Index i = 0; i < q_.rows(); ++i) qv(i, j) = value_of(q_(i, j));
    require_finite(qv, "OrthonormalColumns");
    residual_ =
        (qv.transpose() * qv - Matrix::Identity(qv.cols(), qv.cols())).norm();
    if (residual_ > ortho_tolerance) {
      throw ConvergenceError("OrthonormalColumns: residual above tolerance",
                             residual_);
    }
  }

  const MatrixX<Scalar>& matrix() const { return q_; }
  Index ambient_dim() const { return q_.rows(); }
  Index num_cols() const { return q_.cols(); }
  double residual() const { return residual_; }

 private:
  MatrixX<Scalar> q_;
  double residual_;
};

// Fixed-point iteration Q <- Q(I + (I - Q^T Q)/2) run until the Frobenius
// residual drops below eps. Differentiation unrolls exactly the iterations
// executed here; there is no implicit-function shortcut.
template <class Scalar>
BjorckResult<Scalar> bjorck_orthogonalize(const MatrixX<Scalar>& q0,
                                          double eps = kDefaultOrthoTolerance,
                                          int max_steps = kDefaultBjorckSteps) {
  const Index d = q0.rows();
  const Index m = q0.cols();
  if (m > d) throw DimensionError("bjorck_orthogonalize: more columns than rows");

  Matrix q0v(d, m);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < d; ++i) q0v(i, j) = value_of(q0(i, j));
  require_finite(q0v, "bjorck seed");

  // Sufficient condition for convergence: ||Q0^T Q0 - I||_2 < 1.
  Matrix e0 = q0v.transpose() * q0v - Matrix::Identity(m, m);
  double sigma = spectral_norm_sym(e0);
  if (sigma >= 1.0) {
    throw SpectralNormError(
        "bjorck_orthogonalize: ||Q0^T Q0 - I||_2 >= 1, iteration may diverge",
        sigma);
  }

  MatrixX<Scalar> q = q0;
  const MatrixX<Scalar> id = MatrixX<Scalar>::Identity(m, m);
  double residual = e0.norm();
  int steps = 0;
  bool monotone = true;
  while (residual > eps) {
    if (steps >= max_steps) {
      throw ConvergenceError("bjorck_orthogonalize: residual above eps after max_steps",
                             residual);
    }
    MatrixX<Scalar> gram = q.transpose() * q;
    q = q * (id + Scalar(0.5) * (id - gram));
    ++steps;
    Matrix qv(d, m);
    for (Index j = 0; j < m; ++j)
      for (Index i = 0; i < d; ++i) qv(i, j) = value_of(q(i, j));
    double next = (qv.transpose() * qv - Matrix::Identity(m, m)).norm();
    if (next > residual) monotone = false;
    residual = next;
  }
  return {OrthonormalColumns<Scalar>(std::move(q), std::max(eps, kDefaultOrthoTolerance)),
          steps, residual, monotone};
}

// One batched pass per iteration over all K matrices; each matrix is held to
// the same residual threshold.
template <class Scalar>
std::vector<BjorckResult<Scalar>> bjorck_orthogonalize_batch(
    const std::vector<MatrixX<Scalar>>& seeds,
    double eps = kDefaultOrthoTolerance, int max_steps = kDefaultBjorckSteps) {
  std::vector<BjorckResult<Scalar>> out;
  out.reserve(seeds.size());
  for (const auto& s : seeds) out.push_back(bjorck_orthogonalize(s, eps, max_steps));
  return out;
}

// Chain of Householder reflection vectors. The product matrix is orthogonal;
// application cost is O(H*D) and never materializes the D x D product.
template <class Scalar>
class HouseholderChain {
 public:
  HouseholderChain(Index ambient_dim, std::vector<VectorX<Scalar>> vectors)
      : dim_(ambient_dim), vs_(std::move(vectors)) {
    for (const auto& v : vs_) {
      if (v.size() != dim_) throw DimensionError("HouseholderChain: vector dim mismatch");
      double norm2 = 0.0;
      for (Index i = 0; i < v.size(); ++i) {
        double x = value_of(v[i]);
        if (!std::isfinite(x)) throw NumericalError("HouseholderChain: non-finite vector");
        norm2 += x * x;
      }
      if (norm2 <= 0.0) throw NonInvertibleError("HouseholderChain: zero reflection vector");
    }
  }

  Index ambient_dim() const { return dim_; }
  Index size() const { return static_cast<Index>(vs_.size()); }
  const std::vector<VectorX<Scalar>>& vectors() const { return vs_; }

 private:
  Index dim_;
  std::vector<VectorX<Scalar>> vs_;
};

// z - 2 v (v^T z) / (v^T v), one reflection.
template <class Scalar>
VectorX<Scalar> householder_reflect(const VectorX<Scalar>& v,
                                    const VectorX<Scalar>& z) {
  Scalar vz = v.dot(z);
  Scalar vv = v.dot(v);
  return z - v * (Scalar(2) * vz / vv);
}

// Applies the chain in order: v_1 first. The implied product matrix is
// P = H_{v_H} ... H_{v_1}.
template <class Scalar>
VectorX<Scalar> householder_apply(const HouseholderChain<Scalar>& chain,
                                  const VectorX<Scalar>& z) {
  if (z.size() != chain.ambient_dim()) {
    throw DimensionError("householder_apply: dimension mismatch");
  }
  VectorX<Scalar> out = z;
  for (const auto& v : chain.vectors()) out = householder_reflect(v, out);
  return out;
}

// P^T z. Reflections are symmetric and involutive, so the transpose applies
// the chain in reverse order.
template <class Scalar>
VectorX<Scalar> householder_apply_transpose(const HouseholderChain<Scalar>& chain,
                                            const VectorX<Scalar>& z) {
  if (z.size() != chain.ambient_dim()) {
    throw DimensionError("householder_apply_transpose: dimension mismatch");
  }
  VectorX<Scalar> out = z;
  const auto& vs = chain.vectors();
  for (auto it = vs.rbegin(); it != vs.rend(); ++it) out = householder_reflect(*it, out);
  return out;
}

// Explicit D x D product, for tests and Jacobian oracles only.
template <class Scalar>
OrthonormalColumns<Scalar> householder_materialize(const HouseholderChain<Scalar>& chain) {
  const Index d = chain.ambient_dim();
  MatrixX<Scalar> p(d, d);
  for (Index j = 0; j < d; ++j) {
    VectorX<Scalar> e = VectorX<Scalar>::Zero(d);
    e[j] = Scalar(1);
    p.col(j) = householder_apply(chain, e);
  }
  return OrthonormalColumns<Scalar>(std::move(p), 1e-10);
}

// Square matrix with exact zeros below the diagonal. Construction keeps the
// upper part of the source and drops the rest.
template <class Scalar>
class UpperTriangular {
 public:
  explicit UpperTriangular(Index dim) : m_(MatrixX<Scalar>::Zero(dim, dim)) {}

  explicit UpperTriangular(const MatrixX<Scalar>& source) {
    if (source.rows() != source.cols()) {
      throw DimensionError("UpperTriangular: matrix not square");
    }
    m_ = MatrixX<Scalar>::Zero(source.rows(), source.cols());
    for (Index j = 0; j < source.cols(); ++j) {
      for (Index i = 0; i <= j; ++i) m_(i, j) = source(i, j);
    }
  }

  Index dim() const { return m_.rows(); }
  const MatrixX<Scalar>& matrix() const { return m_; }
  Scalar diag(Index i) const { return m_(i, i); }
  Scalar& operator()(Index i, Index j) {
    if (i > j) throw DimensionError("UpperTriangular: write below diagonal");
    return m_(i, j);
  }
  Scalar operator()(Index i, Index j) const { return i > j ? Scalar(0) : m_(i, j); }

 private:
  MatrixX<Scalar> m_;
};

}  // namespace snf

#endif  // SNF_LINALG_HPP
