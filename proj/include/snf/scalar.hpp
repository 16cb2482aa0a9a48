#ifndef SNF_SCALAR_HPP
#define SNF_SCALAR_HPP

#include <Eigen/Core>
#include <cmath>

// Scalar-generic building blocks. Everything differentiable in this library
// is templated on the scalar type so the same source runs with plain double
// and with the recording scalar from diff.hpp.

namespace snf {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

inline double value_of(double x) { return x; }

// Numerically stable logistic sigmoid.
inline double logistic(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow for large |x|.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  for (Index j = 0; j < m.cols(); ++j) {
    for (Index i = 0; i < m.rows(); ++i) {
      if (!std::isfinite(value_of(m(i, j)))) return false;
    }
  }
  return true;
}

}  // namespace snf

#endif  // SNF_SCALAR_HPP
