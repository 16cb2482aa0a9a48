#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "snf/checks.hpp"
#include "snf/distributions.hpp"
#include "snf/inversion.hpp"
#include "snf/linalg.hpp"
#include "snf/random.hpp"

using namespace snf;

namespace {

// In-test oracle: plain bisection on v + r h(r~ v + b) = target, run to
// bracket exhaustion. No Newton steps, no shared code with invert_scalar.
double bisect_scalar_oracle(double r, double r_tilde, double b, double target) {
  Activation act{};
  auto f = [&](double v) { return v + r * act.h(r_tilde * v + b); };
  double lo = target - std::abs(r) - 1.0;
  double hi = target + std::abs(r) + 1.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (f(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

UpperTriangular<double> random_upper(Index m, Rng& rng, double diag_scale,
                                     bool diagonal_only = false) {
  UpperTriangular<double> t(m);
  for (Index j = 0; j < m; ++j) {
    if (!diagonal_only) {
      for (Index i = 0; i < j; ++i) t(i, j) = 0.5 * rng.normal();
    }
    t(j, j) = diag_scale * std::tanh(rng.normal());
  }
  return t;
}

SylvesterParams random_sylvester(SylvesterVariant variant, Index d, Index m, Rng& rng,
                                 bool diagonal_tilde = false,
                                 PermutationTag tag = PermutationTag::Identity) {
  SylvesterParams p;
  p.variant = variant;
  p.r = random_upper(m, rng, 0.9);
  p.r_tilde = random_upper(m, rng, 0.9, diagonal_tilde);
  p.bias = rng.normal_vector(m);
  if (variant == SylvesterVariant::Orthogonal) {
    Matrix noise = rng.normal_matrix(d, m);
    noise *= 0.3 / std::max(1.0, noise.norm());
    p.q = bjorck_orthogonalize(Matrix(Matrix::Identity(d, m) + noise), 1e-13, 60).q;
  } else if (variant == SylvesterVariant::Householder) {
    std::vector<Vector> vs;
    for (Index k = 0; k < 3; ++k) vs.push_back(rng.normal_vector(d));
    p.q = HouseholderChain<double>(d, vs);
  } else {
    p.q = tag;
  }
  return p;
}

MadeParams random_made(Index d, Index c, Rng& rng, double scale = 0.6) {
  MadeParams p = make_made_params<double>(d, c);
  p.w_in = scale * rng.normal_matrix(c, d);
  p.w_hidden = scale * rng.normal_matrix(c, c);
  p.w_mu = scale * rng.normal_matrix(d, c);
  p.w_s = scale * rng.normal_matrix(d, c);
  p.b_in = 0.1 * rng.normal_vector(c);
  p.b_hidden = 0.1 * rng.normal_vector(c);
  p.b_mu = 0.1 * rng.normal_vector(d);
  p.b_s = 0.1 * rng.normal_vector(d);
  p.context = 0.5 * rng.normal_vector(c);
  return p;
}

}  // namespace

TEST_CASE("scalar inversion agrees with the bisection oracle") {
  Rng rng(601);
  for (int i = 0; i < 40; ++i) {
    double r = 0.95 * std::tanh(rng.normal());
    double r_tilde = 0.95 * std::tanh(rng.normal());
    double b = rng.normal();
    double target = 3.0 * rng.normal();
    double got = invert_scalar({r, r_tilde, b, target, Activation{}});
    CHECK(got == doctest::Approx(bisect_scalar_oracle(r, r_tilde, b, target)).epsilon(1e-9));
  }
}

TEST_CASE("scalar inversion edge cases") {
  Activation act{};
  CHECK(invert_scalar({0.0, 0.7, 0.1, 4.25, act}) == 4.25);  // r = 0 passes through
  CHECK_THROWS_AS(invert_scalar({-1.5, 1.0, 0.0, 0.0, act}), NonInvertibleError);
  CHECK_THROWS_AS(invert_scalar({0.5, 0.5, 0.0, 1.0, act}, 0.0), DimensionError);
  // Monotone but barely: |r r~| just under 1 still solves.
  double got = invert_scalar({0.99, -0.99, 0.3, 1.7, act});
  CHECK(got + 0.99 * std::tanh(-0.99 * got + 0.3) == doctest::Approx(1.7).epsilon(1e-11));
}

TEST_CASE("diagonal tilde inversion round-trips through back-substitution") {
  Rng rng(602);
  const Activation act{};
  for (int i = 0; i < 15; ++i) {
    const Index d = rng.integer(2, 6);
    SylvesterParams p =
        random_sylvester(SylvesterVariant::Triangular, d, d, rng, /*diagonal_tilde=*/true);
    Vector z = rng.normal_vector(d);
    Vector z_prime = sylvester_forward(p, z, act).z;
    Vector z_back = invert_sylvester(p, z_prime, act);
    CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("full tilde inversion round-trips through the change of variables") {
  Rng rng(603);
  const Activation act{};
  for (int i = 0; i < 15; ++i) {
    const Index d = rng.integer(2, 6);
    SylvesterParams p = random_sylvester(SylvesterVariant::Triangular, d, d, rng);
    // Keep the change of variables well-posed: lift tiny tilde diagonals.
    for (Index k = 0; k < d; ++k) {
      if (std::abs(p.r_tilde.diag(k)) < 0.05) p.r_tilde(k, k) = 0.05;
    }
    Vector z = rng.normal_vector(d);
    Vector z_prime = sylvester_forward(p, z, act).z;
    Vector z_back = invert_sylvester(p, z_prime, act);
    CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("coupled system with a zero tilde diagonal is rejected") {
  SylvesterParams p;
  p.variant = SylvesterVariant::Triangular;
  p.r = UpperTriangular<double>(2);
  p.r(0, 0) = 0.5;
  p.r(1, 1) = 0.4;
  p.r_tilde = UpperTriangular<double>(2);
  p.r_tilde(0, 0) = 0.0;  // not invertible once coupling forces y = R~ v
  p.r_tilde(0, 1) = 0.5;
  p.r_tilde(1, 1) = 0.6;
  p.bias = Vector::Zero(2);
  p.q = PermutationTag::Identity;
  CHECK_THROWS_AS(invert_sylvester(p, Vector(Vector::Ones(2)), Activation{}),
                  NonInvertibleError);
}

TEST_CASE("bottlenecked inversion leaves the perpendicular component untouched") {
  Rng rng(604);
  const Activation act{};
  const Index d = 6, m = 2;
  for (int i = 0; i < 10; ++i) {
    SylvesterParams p = random_sylvester(SylvesterVariant::Orthogonal, d, m, rng);
    const Matrix q = std::get<OrthonormalColumns<double>>(p.q).matrix();
    Vector z = rng.normal_vector(d);
    Vector z_prime = sylvester_forward(p, z, act).z;

    // Forward only moves span(q): the perpendicular part is already equal.
    Vector perp = z - q * (q.transpose() * z);
    Vector perp_prime = z_prime - q * (q.transpose() * z_prime);
    CHECK((perp_prime - perp).cwiseAbs().maxCoeff() < 1e-12);

    Vector z_back = invert_sylvester(p, z_prime, act, 1e-9);
    CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-8);
    Vector perp_back = z_back - q * (q.transpose() * z_back);
    CHECK((perp_back - perp).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("reflection-parameterized inversion round-trips") {
  Rng rng(605);
  const Activation act{};
  for (int i = 0; i < 10; ++i) {
    const Index d = rng.integer(3, 6);
    SylvesterParams p = random_sylvester(SylvesterVariant::Householder, d, d, rng);
    Vector z = rng.normal_vector(d);
    Vector z_back = invert_sylvester(p, sylvester_forward(p, z, act).z, act);
    CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("planar inversion round-trips and rejects the boundary") {
  Rng rng(606);
  const Activation act{};
  for (int i = 0; i < 20; ++i) {
    const Index d = rng.integer(1, 6);
    PlanarParams p{0.8 * rng.normal_vector(d), rng.normal_vector(d), rng.normal()};
    p.u = project_planar(p.u, p.w);
    Vector z = rng.normal_vector(d);
    Vector z_back = invert_planar(p, planar_forward(p, z, act).z, act);
    CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-10);
  }

  PlanarParams boundary{-Vector::Unit(3, 0), Vector::Unit(3, 0), 0.0};  // u^T w = -1
  CHECK_THROWS_AS(invert_planar(boundary, Vector(Vector::Ones(3)), act), NonInvertibleError);
}

TEST_CASE("sequential autoregressive inversion round-trips") {
  Rng rng(607);
  for (int i = 0; i < 10; ++i) {
    const Index d = rng.integer(2, 5);
    MadeParams p = random_made(d, d + 3, rng);
    Vector z = rng.normal_vector(d);
    Vector z_prime = iaf_forward(p, z).z;
    Vector z_back = detail::invert_iaf(p, z_prime, p.context);
    CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-11);
  }
}

TEST_CASE("stack inversion undoes a mixed composition including reversals") {
  Rng rng(608);
  const Index d = 4;
  FlowStack stack;
  stack.flows.push_back(random_sylvester(SylvesterVariant::Triangular, d, d, rng, false,
                                         PermutationTag::Identity));
  stack.flows.push_back(random_sylvester(SylvesterVariant::Triangular, d, d, rng, false,
                                         PermutationTag::Reverse));
  PlanarParams planar{0.5 * rng.normal_vector(d), rng.normal_vector(d), 0.1};
  planar.u = project_planar(planar.u, planar.w);
  stack.flows.push_back(planar);
  stack.flows.push_back(random_made(d, d + 2, rng));
  stack.flows.push_back(random_made(d, d + 3, rng));
  validate_stack(stack, d);

  for (int i = 0; i < 10; ++i) {
    Vector z0 = rng.normal_vector(d);
    Vector zk = stack_forward(stack, z0).z;
    Vector back = invert_stack(stack, zk);
    CHECK((back - z0).cwiseAbs().maxCoeff() < 1e-8);
    // And the other composition order: forward of the inverse.
    Vector again = stack_forward(stack, back).z;
    CHECK((again - zk).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("pushforward log-density equals base log-density minus the log-det sum") {
  Rng rng(609);
  const Index d = 3;
  DiagGaussian base{0.3 * rng.normal_vector(d), 0.2 * rng.normal_vector(d)};
  FlowStack stack;
  stack.flows.push_back(random_sylvester(SylvesterVariant::Triangular, d, d, rng));
  stack.flows.push_back(random_made(d, d + 2, rng));
  validate_stack(stack, d);

  for (int i = 0; i < 10; ++i) {
    Vector z0 = rng.normal_vector(d);
    FlowStep<double> step = stack_forward(stack, z0);
    double expected = base_log_prob(base, z0) - step.log_det;
    CHECK(pushforward_log_density(base, stack, step.z) ==
          doctest::Approx(expected).epsilon(1e-8));
  }
}

TEST_CASE("2-D pushforward density integrates to one") {
  Rng rng(610);
  DiagGaussian base{Vector::Zero(2), Vector::Zero(2)};
  FlowStack stack;
  PlanarParams p{0.9 * rng.normal_vector(2), rng.normal_vector(2), 0.2};
  p.u = project_planar(p.u, p.w);
  stack.flows.push_back(p);
  stack.flows.push_back(random_sylvester(SylvesterVariant::Triangular, 2, 2, rng));
  validate_stack(stack, 2);
  CHECK(integrate_pushforward_2d(base, stack, 220) == doctest::Approx(1.0).epsilon(1e-3));
}
