#ifndef SNF_INVERSION_HPP
#define SNF_INVERSION_HPP

#include <cmath>

#include "snf/flows.hpp"

// Numerically exact inverses of planar and Sylvester flows. Training never
// calls these; variational inference needs only the forward direction.
// The algorithms follow the constructive invertibility argument: scalar
// monotone root problems on the diagonal, back-substitution across the
// triangular coupling, a change of variables y = R~ v when R~ is not
// diagonal, and untouched pass-through of the component orthogonal to
// span(q_1..q_M).

namespace snf {

inline constexpr double kDiagonalDispatchTol = 1e-14;  // off-diagonal max for Case-2 routing
inline constexpr double kTildeDiagonalMin = 1e-9;      // |r~_ii| floor for the change of variables

struct ScalarRootProblem {
  double r = 0.0;
  double r_tilde = 0.0;
  double b = 0.0;
  double target = 0.0;
  Activation activation;
};

// Solves f(v) = v + r h(r~ v + b) = target. f is strictly increasing when
// 1 + sup|h'| r r~ > 0, and |f(v) - v| <= |r| brackets the root. Bisection
// narrows the bracket to 1e-6, Newton polishes, and bisection resumes if a
// Newton step ever leaves the bracket.
inline double invert_scalar(const ScalarRootProblem& p, double tol = 1e-12) {
  if (tol <= 0.0) throw DimensionError("invert_scalar: tol must be positive");
  const double bound = p.activation.derivative_bound();
  if (!(1.0 + bound * p.r * p.r_tilde > 0.0)) {
    throw NonInvertibleError("invert_scalar: 1 + sup|h'| r r~ <= 0");
  }
  if (p.r == 0.0) return p.target;

  const auto f = [&](double v) { return v + p.r * p.activation.h(p.r_tilde * v + p.b); };
  const auto fp = [&](double v) {
    return 1.0 + p.r * p.r_tilde * p.activation.h_prime(p.r_tilde * v + p.b);
  };
  // Residual floor once the representable resolution around the root is hit.
  const double goal = std::min(tol, 1e-13) + 16.0 * 1e-16 * std::abs(p.target);

  double lo = p.target - std::abs(p.r);
  double hi = p.target + std::abs(p.r);
  while (hi - lo > 1e-6) {
    double mid = 0.5 * (lo + hi);
    (f(mid) < p.target ? lo : hi) = mid;
  }
  double v = 0.5 * (lo + hi);
  for (int it = 0; it < 100; ++it) {
    double res = f(v) - p.target;
    if (std::abs(res) <= goal) break;
    (res < 0.0 ? lo : hi) = v;
    double step = res / fp(v);
    double next = v - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == v) break;
    v = next;
  }
  if (std::abs(f(v) - p.target) > tol) {
    throw ConvergenceError("invert_scalar: residual above tol", std::abs(f(v) - p.target));
  }
  return v;
}

namespace detail {

// Back-substitution for v' = v + C h(v + b) with C upper triangular, solved
// from index M-1 down to 0. Columns already solved feed the residual target
// of each earlier coordinate.
inline Vector solve_unit_tilde(const Matrix& c, const Vector& bias, const Vector& v_prime,
                               const Activation& act, double tol) {
  const Index m = c.rows();
  Vector v(m);
  for (Index k = m - 1; k >= 0; --k) {
    double g = v_prime[k];
    for (Index j = k + 1; j < m; ++j) g -= c(k, j) * act.h(v[j] + bias[j]);
    v[k] = invert_scalar({c(k, k), 1.0, bias[k], g, act}, tol);
  }
  return v;
}

}  // namespace detail

// Inverse of z' = z + QR h(R~ Q^T z + b). The perpendicular component of z'
// passes through unchanged; the parallel coordinates v = Q^T z solve a
// triangular system of monotone scalar problems.
inline Vector invert_sylvester(const SylvesterParams& p, const Vector& z_prime,
                               const Activation& act, double tol = 1e-12) {
  validate_sylvester(p, act);
  const Index m = p.r.dim();
  if (z_prime.size() != p.ambient_dim()) throw DimensionError("invert_sylvester: dim mismatch");

  const Matrix& rt = p.r_tilde.matrix();
  Vector v_prime = detail::apply_q_transpose(p, z_prime);

  double off_max = 0.0;
  for (Index j = 0; j < m; ++j) {
    for (Index i = 0; i < j; ++i) off_max = std::max(off_max, std::abs(rt(i, j)));
  }

  Vector v(m);
  const double inner_tol = std::min(tol, 1e-13);
  if (off_max < kDiagonalDispatchTol) {
    // R~ diagonal: solve v directly, back-substituting through R.
    for (Index k = m - 1; k >= 0; --k) {
      double g = v_prime[k];
      for (Index j = k + 1; j < m; ++j) {
        g -= p.r(k, j) * act.h(rt(j, j) * v[j] + p.bias[j]);
      }
      v[k] = invert_scalar({p.r(k, k), rt(k, k), p.bias[k], g, act}, inner_tol);
    }
  } else {
    // Change of variables y = R~ v turns the system into one with a unit
    // tilde factor and coupling C = R~ R; needs R~ invertible.
    for (Index i = 0; i < m; ++i) {
      if (std::abs(rt(i, i)) < kTildeDiagonalMin) {
        throw NonInvertibleError("invert_sylvester: R~ diagonal entry below invertibility floor");
      }
    }
    Matrix c = rt * p.r.matrix();
    Vector y_prime = rt * v_prime;
    Vector y = detail::solve_unit_tilde(c, p.bias, y_prime, act, inner_tol);
    // Triangular solve R~ v = y.
    for (Index k = m - 1; k >= 0; --k) {
      double acc = y[k];
      for (Index j = k + 1; j < m; ++j) acc -= rt(k, j) * v[j];
      v[k] = acc / rt(k, k);
    }
  }

  Vector z = detail::apply_q(p, v) + (z_prime - detail::apply_q(p, v_prime));
  double round_trip = (sylvester_forward(p, z, act).z - z_prime).cwiseAbs().maxCoeff();
  if (round_trip > 10.0 * tol) {
    throw ConvergenceError("invert_sylvester: forward residual above 10*tol", round_trip);
  }
  return z;
}

// Inverse of the planar flow through its scalar reduction: alpha = w^T z
// satisfies alpha' = alpha + (w^T u) h(alpha + b), a monotone root problem,
// after which z = z' - u h(alpha + b).
inline Vector invert_planar(const PlanarParams& p, const Vector& z_prime, const Activation& act,
                            double tol = 1e-12) {
  if (p.u.size() != z_prime.size() || p.w.size() != z_prime.size()) {
    throw DimensionError("invert_planar: dim mismatch");
  }
  double wu = p.w.dot(p.u);
  if (wu < -1.0 + 1e-9) {
    throw NonInvertibleError("invert_planar: u^T w at or below the invertibility boundary");
  }
  double alpha = invert_scalar({wu, 1.0, p.b, p.w.dot(z_prime), act}, std::min(tol, 1e-13));
  Vector z = z_prime - p.u * act.h(alpha + p.b);
  double round_trip = (planar_forward(p, z, act).z - z_prime).cwiseAbs().maxCoeff();
  if (round_trip > 10.0 * tol) {
    throw ConvergenceError("invert_planar: forward residual above 10*tol", round_trip);
  }
  return z;
}

}  // namespace snf

#endif  // SNF_INVERSION_HPP
