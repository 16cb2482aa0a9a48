#ifndef SNF_CHECKS_HPP
#define SNF_CHECKS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "snf/amortize.hpp"
#include "snf/flows.hpp"
#include "snf/random.hpp"

// Property suites over seeded instance grids, plus the numerical oracles
// they compare against (finite-difference Jacobians, stack inversion,
// pushforward quadrature). Suites never throw on a failing property; they
// record it and let the caller decide the exit code.

namespace snf {

// ---------------------------------------------------------------------------
// Oracles.

// Central-difference Jacobian of f at z, entry error O(step^2).
Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& z,
                   double step = 1e-5);

// log |det J| of f at z through the dense-determinant path.
double fd_log_abs_det_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& z,
                               double step = 1e-5);

namespace detail {
// Sequential inverse of the gated autoregressive transform: entry i is
// freed by the strict ordering once entries < i are known. Internal tool
// for density evaluation and tests; the constructive inverses are the
// supported public path.
Vector invert_iaf(const MadeParams& p, const Vector& z_prime, const Vector& context);
}  // namespace detail

// Inverse of a whole stack (undoes the pre-flow input reversal the forward
// pass applies before autoregressive flows past the first).
Vector invert_stack(const FlowStack& stack, const Vector& z_k, double tol = 1e-10);

// log q_K(z) by inverting the stack and replaying the forward log-det.
double pushforward_log_density(const DiagGaussian& base, const FlowStack& stack, const Vector& z,
                               double tol = 1e-10);

// Midpoint-rule integral of exp(log q_K) over [lo, hi]^2; ~1 for a
// normalized 2-D pushforward with negligible mass outside the box.
double integrate_pushforward_2d(const DiagGaussian& base, const FlowStack& stack,
                                Index grid = 400, double lo = -8.0, double hi = 8.0);

// ---------------------------------------------------------------------------
// Seeded instance generation. Raw blocks are drawn N(0, scale^2) and pushed
// through the same raw-to-constrained builders the hypernetwork uses.

struct InstanceSpec {
  FlowVariant variant = FlowVariant::TriangularSylvester;
  Index dim = 2;
  Index bottleneck = 1;   // O
  Index reflections = 1;  // H
  Index made_width = 2;   // IAF
  double ortho_eps = kDefaultOrthoTolerance;
};

FlowParams make_random_flow(const InstanceSpec& spec, Index flow_index, Rng& rng,
                            double scale = 0.5);
FlowStack make_random_stack(const InstanceSpec& spec, Index num_flows, Rng& rng,
                            double scale = 0.5);

// ---------------------------------------------------------------------------
// Suites.

struct CheckCase {
  std::string name;
  std::string variant;
  Index dim = 0;
  double metric = 0.0;     // primary: max error / residual, suite-specific
  double tolerance = 0.0;  // pass iff metric <= tolerance (and flags hold)
  double secondary = 0.0;  // inverse: perpendicular drift; ortho: seed norm
  Index steps = 0;         // ortho: iterations used
  bool monotone = true;    // ortho: residual never increased
  bool pass = false;
  std::string note;        // failure detail (exception text), empty otherwise
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckCase> cases;

  Index failures() const {
    Index n = 0;
    for (const auto& c : cases)
      if (!c.pass) ++n;
    return n;
  }
  bool pass() const { return failures() == 0; }
};

struct CheckOptions {
  std::uint64_t seed = 0;
  Index max_dim = 8;
  Index instances = 5;  // per (variant, dim) cell
};

SuiteResult run_logdet_suite(const CheckOptions& opt);
SuiteResult run_inverse_suite(const CheckOptions& opt);
SuiteResult run_ortho_suite(const CheckOptions& opt);
SuiteResult run_grad_suite(const CheckOptions& opt);
SuiteResult run_made_suite(const CheckOptions& opt);

// name in {logdet, inverse, ortho, grad, made, all}; unknown -> ConfigError.
std::vector<SuiteResult> run_check_suites(const std::string& name, const CheckOptions& opt);

}  // namespace snf

#endif  // SNF_CHECKS_HPP
