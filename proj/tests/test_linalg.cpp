#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "snf/linalg.hpp"
#include "snf/random.hpp"

using namespace snf;

namespace {

// Independent determinant oracle: cofactor expansion along the first row.
// Exponential cost, so only usable for the small dims exercised here.
double cofactor_det(const Matrix& m) {
  const Index n = m.rows();
  REQUIRE(m.cols() == n);
  if (n == 0) return 1.0;
  if (n == 1) return m(0, 0);
  double det = 0.0;
  double sign = 1.0;
  for (Index j = 0; j < n; ++j) {
    Matrix minor(n - 1, n - 1);
    for (Index r = 1; r < n; ++r) {
      Index cc = 0;
      for (Index c = 0; c < n; ++c) {
        if (c == j) continue;
        minor(r - 1, cc++) = m(r, c);
      }
    }
    det += sign * m(0, j) * cofactor_det(minor);
    sign = -sign;
  }
  return det;
}

}  // namespace

TEST_CASE("dense_det matches the cofactor oracle on seeded matrices") {
  Rng rng(901);
  for (Index n = 1; n <= 6; ++n) {
    for (int i = 0; i < 20; ++i) {
      Matrix m = rng.normal_matrix(n, n);
      const double expected = cofactor_det(m);
      CHECK(dense_det(m) == doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("dense_det handles structured matrices") {
  CHECK(dense_det(Matrix(Matrix::Identity(4, 4))) == doctest::Approx(1.0));
  CHECK(dense_det(Matrix(Vector::LinSpaced(3, 2.0, 4.0).asDiagonal())) ==
        doctest::Approx(2.0 * 3.0 * 4.0));

  Matrix swap = Matrix::Identity(3, 3);
  swap.row(0).swap(swap.row(1));  // one transposition flips the sign
  CHECK(dense_det(swap) == doctest::Approx(-1.0));

  Matrix singular(2, 2);
  singular << 1.0, 2.0, 2.0, 4.0;
  CHECK(dense_det(singular) == 0.0);

  Matrix big = Matrix::Identity(65, 65);
  CHECK_THROWS_AS(dense_det(big), DimensionError);
}

TEST_CASE("det(I_D + AB) equals det(I_M + BA) for seeded rectangular pairs") {
  Rng rng(902);
  for (int i = 0; i < 60; ++i) {
    const Index d = rng.integer(1, 6);
    const Index m = rng.integer(1, d);
    Matrix a = rng.normal_matrix(d, m);
    Matrix b = rng.normal_matrix(m, d);
    const double lhs = cofactor_det(Matrix::Identity(d, d) + a * b);
    const double rhs = cofactor_det(Matrix::Identity(m, m) + b * a);
    const double scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
    CHECK(std::abs(lhs - rhs) / scale < 1e-9);

    auto [big, small] = sylvester_identity_check(a, b);
    CHECK(big == doctest::Approx(lhs).epsilon(1e-9));
    CHECK(small == doctest::Approx(rhs).epsilon(1e-9));
  }
}

TEST_CASE("spectral_norm_sym matches a power-iteration oracle") {
  Rng rng(903);
  for (int i = 0; i < 15; ++i) {
    const Index n = rng.integer(1, 8);
    Matrix half = rng.normal_matrix(n, n);
    Matrix sym = 0.5 * (half + half.transpose());
    // Iterate on sym^2 (eigenvalues lambda^2 >= 0) so the dominant
    // eigenvalue is unambiguous; long budget, random restart.
    Matrix squared = sym * sym;
    double best = 0.0;
    for (int restart = 0; restart < 3; ++restart) {
      Vector v = rng.normal_vector(n).normalized();
      for (int it = 0; it < 20000; ++it) {
        Vector w = squared * v;
        if (w.norm() == 0.0) break;
        v = w.normalized();
      }
      best = std::max(best, std::sqrt(std::abs(v.dot(squared * v))));
    }
    CHECK(spectral_norm_sym(sym) == doctest::Approx(best).epsilon(1e-8));
  }
}

TEST_CASE("bjorck_orthogonalize reaches the tolerance within the step budget") {
  Rng rng(904);
  for (int i = 0; i < 25; ++i) {
    const Index d = rng.integer(2, 10);
    const Index m = rng.integer(1, d);
    Matrix q0 = rng.normal_matrix(d, m);
    // Rescale so the precondition ||Q0^T Q0 - I||_2 < 1 holds.
    Matrix gram = q0.transpose() * q0;
    const double res = spectral_norm_sym(gram - Matrix::Identity(m, m));
    if (res >= 1.0) q0 *= 0.8 / std::sqrt(res + 1.0);

    BjorckResult r = bjorck_orthogonalize(q0, 1e-6, 30);
    CHECK(r.steps <= 30);
    CHECK(r.monotone);
    Matrix q = r.q.matrix();
    CHECK((q.transpose() * q - Matrix::Identity(m, m)).norm() <= 1e-6);

    // The iteration only mixes columns, so the column space is preserved:
    // the orthogonal projector onto span(Q) is unchanged.
    Matrix p0 = q0 * (q0.transpose() * q0).ldlt().solve(Matrix::Identity(m, m)) * q0.transpose();
    Matrix p1 = q * q.transpose();
    CHECK((p0 - p1).norm() < 1e-5);
  }
}

TEST_CASE("bjorck_orthogonalize rejects seeds that violate the precondition") {
  Matrix q0 = 3.0 * Matrix::Identity(4, 2);  // ||Q0^T Q0 - I||_2 = 8
  CHECK_THROWS_AS(bjorck_orthogonalize(q0, 1e-6, 30), SpectralNormError);
}

TEST_CASE("bjorck_orthogonalize on an already orthonormal matrix is a no-op") {
  Matrix q0 = Matrix::Identity(5, 3);
  BjorckResult r = bjorck_orthogonalize(q0, 1e-6, 30);
  CHECK(r.steps == 0);
  CHECK((r.q.matrix() - q0).norm() == 0.0);
}

TEST_CASE("bjorck_orthogonalize throws past the step budget") {
  Rng rng(905);
  Matrix q0 = rng.normal_matrix(6, 3);
  Matrix gram = q0.transpose() * q0;
  const double res = spectral_norm_sym(gram - Matrix::Identity(3, 3));
  q0 *= 0.999 / std::sqrt(res + 1.0);
  CHECK_THROWS_AS(bjorck_orthogonalize(q0, 1e-15, 1), ConvergenceError);
}

TEST_CASE("householder chains materialize to orthogonal matrices") {
  Rng rng(906);
  for (int i = 0; i < 15; ++i) {
    const Index d = rng.integer(2, 8);
    const Index h = rng.integer(1, 4);
    std::vector<Vector> vs;
    for (Index k = 0; k < h; ++k) vs.push_back(rng.normal_vector(d));
    HouseholderChain<double> chain(d, vs);

    Matrix q = householder_materialize(chain).matrix();
    CHECK((q.transpose() * q - Matrix::Identity(d, d)).norm() < 1e-12);
    // Each reflection has determinant -1.
    const double expected_det = (h % 2 == 0) ? 1.0 : -1.0;
    CHECK(cofactor_det(q) == doctest::Approx(expected_det).epsilon(1e-10));

    Vector z = rng.normal_vector(d);
    Vector via_apply = householder_apply(chain, z);
    CHECK((via_apply - q * z).norm() < 1e-12);
    Vector back = householder_apply_transpose(chain, via_apply);
    CHECK((back - z).norm() < 1e-12);
  }
}

TEST_CASE("a single reflection about v maps v to -v and fixes its complement") {
  Vector v(3);
  v << 1.0, 2.0, -1.0;
  Vector image = householder_reflect(v, v);
  CHECK((image + v).norm() < 1e-14);

  Vector perp(3);
  perp << 2.0, -1.0, 0.0;  // v . perp = 0
  CHECK((householder_reflect(v, perp) - perp).norm() < 1e-14);
}

TEST_CASE("householder chain rejects a zero reflection vector") {
  std::vector<Vector> vs = {Vector::Zero(3)};
  CHECK_THROWS_AS(HouseholderChain<double>(3, vs), NonInvertibleError);
  std::vector<Vector> wrong_dim = {Vector::Ones(2)};
  CHECK_THROWS_AS(HouseholderChain<double>(3, wrong_dim), DimensionError);
}

TEST_CASE("orthonormal columns wrapper validates its residual") {
  Matrix good = Matrix::Identity(4, 2);
  OrthonormalColumns<double> ok(good);
  CHECK(ok.residual() <= 1e-12);

  Matrix bad = Matrix::Identity(4, 2);
  bad(0, 0) = 1.5;
  CHECK_THROWS_AS((OrthonormalColumns<double>(bad)), ConvergenceError);
}

TEST_CASE("upper triangular wrapper rejects below-diagonal writes") {
  UpperTriangular<double> t(Matrix::Identity(3, 3));
  t(0, 2) = 5.0;
  CHECK(t.matrix()(0, 2) == 5.0);
  CHECK(std::as_const(t)(2, 0) == 0.0);  // const read below the diagonal is zero
  CHECK_THROWS_AS(t(2, 0) = 1.0, DimensionError);

  Matrix full(2, 2);
  full << 1.0, 2.0, 3.0, 4.0;
  UpperTriangular<double> projected(full);
  CHECK(projected.matrix()(1, 0) == 0.0);  // ctor drops the lower triangle
  CHECK(projected.diag(1) == 4.0);
}
