#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "snf/amortize.hpp"
#include "snf/diff.hpp"
#include "snf/flows.hpp"
#include "snf/random.hpp"

using namespace snf;

namespace {

// Central-difference oracle over flat parameter blocks, written against the
// same generic-objective shape as ad::gradients but sharing no code with it.
template <class Objective>
std::vector<Matrix> fd_gradients(Objective&& objective, const std::vector<Matrix>& blocks,
                                 double step = 1e-5) {
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    Matrix g(blocks[k].rows(), blocks[k].cols());
    for (Index i = 0; i < blocks[k].rows(); ++i) {
      for (Index j = 0; j < blocks[k].cols(); ++j) {
        std::vector<Matrix> plus = blocks;
        std::vector<Matrix> minus = blocks;
        plus[k](i, j) += step;
        minus[k](i, j) -= step;
        g(i, j) = (objective(plus) - objective(minus)) / (2.0 * step);
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

double max_abs_diff(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    m = std::max(m, (a[k] - b[k]).cwiseAbs().maxCoeff());
  }
  return m;
}

}  // namespace

TEST_CASE("scalar tape derivatives match hand formulas") {
  // f(x) = tanh(x^2 + 3x) * exp(-x)
  auto f = [](const auto& blocks) { using std::exp; using std::tanh;
    auto x = blocks[0](0, 0);
    return tanh(x * x + 3.0 * x) * exp(-x);
  };
  const double x = 0.7;
  std::vector<Matrix> blocks = {Matrix::Constant(1, 1, x)};
  Matrix g = ad::gradients(f, blocks)[0];

  const double inner = x * x + 3.0 * x;
  const double t = std::tanh(inner);
  const double expected = std::exp(-x) * ((1.0 - t * t) * (2.0 * x + 3.0) - t);
  CHECK(g(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("activation derivatives match closed forms") {
  auto check1 = [](auto fn, auto dfn, double x) {
    auto obj = [&](const auto& blocks) { return fn(blocks[0](0, 0)); };
    std::vector<Matrix> blocks = {Matrix::Constant(1, 1, x)};
    Matrix g = ad::gradients(obj, blocks)[0];
    CHECK(g(0, 0) == doctest::Approx(dfn(x)).epsilon(1e-10));
  };
  for (double x : {-3.0, -0.9, 0.0, 0.4, 2.5}) {
    check1([](auto v) { return logistic(v); },
           [](double v) { double s = 1.0 / (1.0 + std::exp(-v)); return s * (1.0 - s); }, x);
    check1([](auto v) { return softplus(v); },
           [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, x);
    check1([](auto v) { using std::tanh; return tanh(v); },
           [](double v) { double t = std::tanh(v); return 1.0 - t * t; }, x);
  }
  // ELU: identity slope above zero, exp(x) slope below.
  check1([](auto v) { return elu(v); }, [](double v) { return std::exp(v); }, -1.3);
  check1([](auto v) { return elu(v); }, [](double) { return 1.0; }, 0.8);
}

TEST_CASE("constant objectives yield exactly zero gradients") {
  auto obj = [](const auto& blocks) {
    using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
    (void)blocks;
    return S(4.25);
  };
  std::vector<Matrix> blocks = {Matrix::Ones(2, 3), Matrix::Ones(1, 1)};
  std::vector<Matrix> g = ad::gradients(obj, blocks);
  CHECK(g[0].isZero(0.0));
  CHECK(g[1].isZero(0.0));
}

TEST_CASE("quadratic objective gradient is the parameter itself") {
  auto obj = [](const auto& blocks) {
    using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
    S acc(0);
    for (const auto& b : blocks) acc += S(0.5) * b.array().square().sum();
    return acc;
  };
  Rng rng(77);
  std::vector<Matrix> blocks = {rng.normal_matrix(3, 2), rng.normal_matrix(1, 4)};
  std::vector<Matrix> g = ad::gradients(obj, blocks);
  CHECK(max_abs_diff(g, blocks) < 1e-14);

  std::vector<std::string> names = {"a", "b"};
  auto reports = ad::grad_check(obj, blocks, names);
  for (const auto& r : reports) CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("matrix expressions record correctly through Eigen") {
  Rng rng(78);
  auto obj = [](const auto& blocks) {
    const auto& w = blocks[0];
    const auto& v = blocks[1];
    auto y = (w * v).eval();                       // matvec
    auto z = y.cwiseProduct(y).eval();             // elementwise square
    return z.sum() + y.col(0).dot(v.col(0)) * 0.5;
  };
  std::vector<Matrix> blocks = {rng.normal_matrix(3, 3), rng.normal_matrix(3, 1)};
  std::vector<Matrix> analytic = ad::gradients(obj, blocks);
  std::vector<Matrix> fd = fd_gradients(obj, blocks);
  CHECK(max_abs_diff(analytic, fd) < 1e-6);
}

TEST_CASE("mixed double and Var scalars combine coefficient-wise") {
  Matrix fixed = Matrix::Constant(2, 2, 1.5);
  auto obj = [&](const auto& blocks) {
    using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
    auto scaled = fixed.cast<S>().eval().cwiseProduct(blocks[0]).eval();
    return (scaled.array() * 2.0).sum();  // Var array times double scalar
  };
  std::vector<Matrix> blocks = {Matrix::Ones(2, 2)};
  Matrix g = ad::gradients(obj, blocks)[0];
  CHECK((g - Matrix::Constant(2, 2, 3.0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("planar flow with u = 0: gradient of ||z_out||^2 w.r.t. b vanishes") {
  Vector z(3);
  z << 0.3, -0.8, 1.1;
  auto obj = [&](const auto& blocks) {
    using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
    PlanarParamsT<S> p;
    p.u = VectorX<S>::Zero(3);
    p.w = blocks[0].col(0);
    p.b = blocks[1](0, 0);
    FlowStep<S> step = planar_forward(p, z.cast<S>().eval(), Activation{});
    return S(step.z.squaredNorm());
  };
  std::vector<Matrix> blocks = {Matrix::Ones(3, 1), Matrix::Constant(1, 1, 0.4)};
  std::vector<Matrix> g = ad::gradients(obj, blocks);
  CHECK(g[1].cwiseAbs().maxCoeff() == 0.0);  // dz_out/db = u h' = 0
}

TEST_CASE("objective constant on the orthogonal manifold has near-zero gradient") {
  // ||Q(Q0) e_1||^2 is identically 1 after orthogonalization.
  Rng rng(79);
  auto obj = [](const auto& blocks) {
    auto br = bjorck_orthogonalize(blocks[0], 1e-12, 60);
    return br.q.matrix().col(0).squaredNorm();
  };
  Matrix q0 = Matrix::Identity(4, 2) + 0.2 * rng.normal_matrix(4, 2);
  std::vector<Matrix> blocks = {q0};
  std::vector<Matrix> g = ad::gradients(obj, blocks);
  CHECK(g[0].cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("grad_check agrees with the in-test oracle on a flow objective") {
  Rng rng(80);
  Vector z = rng.normal_vector(3);
  auto obj = [&](const auto& blocks) {
    using S = typename std::decay_t<decltype(blocks[0])>::Scalar;
    PlanarParamsT<S> p;
    p.u = blocks[0].col(0);
    p.w = blocks[1].col(0);
    p.b = blocks[2](0, 0);
    FlowStep<S> step = planar_forward(p, z.cast<S>().eval(), Activation{});
    return step.z.sum() + step.log_det;
  };
  std::vector<Matrix> blocks = {rng.normal_matrix(3, 1), rng.normal_matrix(3, 1),
                                Matrix::Constant(1, 1, 0.2)};
  std::vector<std::string> names = {"u", "w", "b"};
  auto reports = ad::grad_check(obj, blocks, names);
  REQUIRE(reports.size() == 3);
  for (const auto& r : reports) {
    CHECK(r.block == names[&r - reports.data()]);
    CHECK(r.max_rel_error < 1e-4);
  }
  std::vector<Matrix> fd = fd_gradients(obj, blocks);
  std::vector<Matrix> analytic = ad::gradients(obj, blocks);
  CHECK(max_abs_diff(analytic, fd) < 1e-6);
}

TEST_CASE("non-finite gradients raise a numerical error naming the block") {
  auto obj = [](const auto& blocks) {
    using std::sqrt;
    return sqrt(blocks[0](0, 0));  // derivative at 0 is infinite
  };
  std::vector<Matrix> blocks = {Matrix::Zero(1, 1)};
  std::vector<std::string> names = {"offender"};
  try {
    ad::gradients(obj, blocks, &names);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.block == "offender");
  }
}

TEST_CASE("gradient reports use |a-f| / max(1e-8, |a|+|f|)") {
  // Force a known discrepancy by comparing against an fd_step so large the
  // truncation error is visible, then recompute the ratio by hand.
  auto obj = [](const auto& blocks) {
    auto x = blocks[0](0, 0);
    return x * x * x;
  };
  std::vector<Matrix> blocks = {Matrix::Constant(1, 1, 0.5)};
  std::vector<std::string> names = {"x"};
  auto reports = ad::grad_check(obj, blocks, names, 0.1);
  REQUIRE(reports.size() == 1);
  const double a = reports[0].analytic(0, 0);
  const double f = reports[0].finite_difference(0, 0);
  const double expected = std::abs(a - f) / std::max(1e-8, std::abs(a) + std::abs(f));
  CHECK(reports[0].max_rel_error == doctest::Approx(expected).epsilon(1e-12));
  // Central differences on x^3 with step h err by exactly h^2 * x'' term: f = 3x^2 + h^2.
  CHECK(f == doctest::Approx(3.0 * 0.25 + 0.01).epsilon(1e-10));
}

TEST_CASE("gradients are deterministic") {
  Rng rng(81);
  Vector z = rng.normal_vector(4);
  auto obj = [&](const auto& blocks) {
    auto y = (blocks[0] * z.cast<typename std::decay_t<decltype(blocks[0])>::Scalar>().eval())
                 .eval();
    return y.array().tanh().sum();
  };
  std::vector<Matrix> blocks = {rng.normal_matrix(4, 4)};
  Matrix g1 = ad::gradients(obj, blocks)[0];
  Matrix g2 = ad::gradients(obj, blocks)[0];
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}
