#ifndef SNF_DISTRIBUTIONS_HPP
#define SNF_DISTRIBUTIONS_HPP

#include <cmath>
#include <optional>

#include "snf/errors.hpp"
#include "snf/scalar.hpp"

namespace snf {

inline constexpr double kLogTwoPi = 1.8378770664093454836;

// Diagonal Gaussian in the non-centered parameterization z = mu + sigma . eps.
template <class Scalar>
struct DiagGaussianT {
  VectorX<Scalar> mu;
  VectorX<Scalar> log_sigma;

  Index dim() const { return mu.size(); }

  template <class S2>
  DiagGaussianT<S2> cast() const {
    return {mu.template cast<S2>(), log_sigma.template cast<S2>()};
  }
};
using DiagGaussian = DiagGaussianT<double>;

template <class Scalar>
VectorX<Scalar> sample_base(const DiagGaussianT<Scalar>& g, const Vector& eps) {
  if (eps.size() != g.dim()) throw DimensionError("sample_base: eps dim mismatch");
  VectorX<Scalar> z(g.dim());
  using std::exp;
  for (Index i = 0; i < g.dim(); ++i) z[i] = g.mu[i] + exp(g.log_sigma[i]) * eps[i];
  return z;
}

// log N(z0; mu, sigma^2) evaluated through the draw that produced z0, which
// avoids re-deriving eps from z0.
template <class Scalar>
Scalar base_log_prob_from_eps(const DiagGaussianT<Scalar>& g, const Vector& eps) {
  Scalar acc(0);
  for (Index i = 0; i < g.dim(); ++i) {
    acc += Scalar(-0.5 * kLogTwoPi) - g.log_sigma[i] + Scalar(-0.5 * eps[i] * eps[i]);
  }
  return acc;
}

template <class Scalar>
Scalar base_log_prob(const DiagGaussianT<Scalar>& g, const VectorX<Scalar>& z) {
  if (z.size() != g.dim()) throw DimensionError("base_log_prob: dim mismatch");
  Scalar acc(0);
  using std::exp;
  for (Index i = 0; i < g.dim(); ++i) {
    Scalar e = (z[i] - g.mu[i]) * exp(-g.log_sigma[i]);
    acc += Scalar(-0.5 * kLogTwoPi) - g.log_sigma[i] - Scalar(0.5) * e * e;
  }
  return acc;
}

template <class Scalar>
Scalar std_normal_log_prob(const VectorX<Scalar>& z) {
  Scalar acc(0);
  for (Index i = 0; i < z.size(); ++i) {
    acc += Scalar(-0.5 * kLogTwoPi) - Scalar(0.5) * z[i] * z[i];
  }
  return acc;
}

// Desk-scale analytic targets for reverse-KL fitting. Densities are
// normalized, so the fitted free energy is the KL divergence itself.
struct TargetDensity {
  enum class Kind { StandardNormal, CorrelatedGaussian2D };

  Kind kind = Kind::StandardNormal;
  Index dim = 2;
  double rho = 0.0;  // CorrelatedGaussian2D only, |rho| < 1
  std::optional<double> log_normalizer = 0.0;

  static TargetDensity standard_normal(Index d) {
    return {Kind::StandardNormal, d, 0.0, 0.0};
  }

  static TargetDensity correlated_gaussian(double rho_in) {
    if (!(std::abs(rho_in) < 1.0)) throw ConfigError("TargetDensity: |rho| must be < 1");
    return {Kind::CorrelatedGaussian2D, 2, rho_in, 0.0};
  }

  template <class Scalar>
  Scalar log_density(const VectorX<Scalar>& z) const {
    if (z.size() != dim) throw DimensionError("TargetDensity: dim mismatch");
    if (kind == Kind::StandardNormal) return std_normal_log_prob(z);
    double c = 1.0 - rho * rho;
    Scalar quad = (z[0] * z[0] - 2.0 * rho * z[0] * z[1] + z[1] * z[1]) * Scalar(1.0 / c);
    return Scalar(-kLogTwoPi - 0.5 * std::log(c)) - Scalar(0.5) * quad;
  }
};

}  // namespace snf

#endif  // SNF_DISTRIBUTIONS_HPP
