#include <qift/operator_space.hpp>
#include <qift/rng.hpp>

#include <doctest.h>

#include <cmath>

using namespace qift;

namespace {

Mat diag2(double a, double b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

}  // namespace

TEST_CASE("deterministic_eig sorts descending and fixes phases") {
  CounterRng rng(1);
  Mat r = random_density(4, rng);
  EigenSystem es = deterministic_eig(r);
  for (int k = 0; k + 1 < es.dim(); ++k)
    CHECK(es.values[k] >= es.values[k + 1]);
  // reconstruction
  Mat rec = es.vectors * es.values.asDiagonal().toDenseMatrix().cast<cxd>() *
            es.vectors.adjoint();
  CHECK((rec - r).norm() < 1e-12);
  // repeated calls agree exactly, eigenvector phases included
  EigenSystem es2 = deterministic_eig(r);
  CHECK((es.vectors - es2.vectors).norm() == 0.0);
  // first sizable component of each eigenvector is real positive
  for (int k = 0; k < es.dim(); ++k) {
    for (int i = 0; i < es.dim(); ++i) {
      cxd v = es.vectors(i, k);
      if (std::abs(v) > 1e-12) {
        CHECK(std::abs(v.imag()) < 1e-14);
        CHECK(v.real() > 0.0);
        break;
      }
    }
  }
}

TEST_CASE("tensor respects the left-slow index convention") {
  Mat A = Mat::Zero(2, 2), B = Mat::Zero(2, 2);
  A(0, 1) = 1.0;
  B(1, 0) = 5.0;
  Mat T = tensor(A, B);
  REQUIRE(T.rows() == 4);
  CHECK(T(1, 2) == cxd(5.0, 0.0));  // row (a=0,b=1), col (a=1,b=0)
  CHECK(T.cwiseAbs().sum() == doctest::Approx(5.0));
}

TEST_CASE("partial trace complements tensor") {
  CounterRng rng(2);
  Mat a = random_density(2, rng);
  Mat b = random_density(3, rng);
  Mat c = random_density(2, rng);
  Mat abc = tensor(tensor(a, b), c);
  CHECK((partial_trace(abc, {2, 3, 2}, {1, 2}) - a).norm() < 1e-13);
  CHECK((partial_trace(abc, {2, 3, 2}, {0, 2}) - b).norm() < 1e-13);
  CHECK((partial_trace(abc, {2, 3, 2}, {0}) - tensor(b, c)).norm() < 1e-13);
  // tracing everything leaves the scalar trace
  Mat s = partial_trace(abc, {2, 3, 2}, {0, 1, 2});
  CHECK(std::abs(s(0, 0).real() - 1.0) < 1e-13);
}

TEST_CASE("hs_inner is the trace pairing") {
  CounterRng rng(3);
  Mat A = random_density(3, rng), B = random_density(3, rng);
  CHECK(std::abs(hs_inner(A, B) - (A.adjoint() * B).trace()) < 1e-15);
  CHECK(std::abs(hs_inner(A, B) - std::conj(hs_inner(B, A))) < 1e-15);
}

TEST_CASE("psd_power matches spectral calculus") {
  CounterRng rng(4);
  Mat r = random_density(3, rng);
  Mat half = psd_power(r, 0.5);
  CHECK((half * half - r).norm() < 1e-12);
  Mat inv = psd_power(r, -1.0);
  CHECK((inv * r - Mat::Identity(3, 3)).norm() < 1e-10);
}

TEST_CASE("negative powers of singular operators are rejected, the support "
          "variant pseudo-inverts") {
  Mat p = diag2(1.0, 0.0);
  CHECK_THROWS_AS(psd_power(p, -0.5), support_error);
  Mat pinv = psd_power_support(p, -0.5);
  CHECK((pinv - p).norm() < 1e-14);  // support slice of the inverse sqrt
}

TEST_CASE("matrix_log_support reports rank and projector") {
  Mat p = diag2(0.5, 0.0);
  LogSupport ls = matrix_log_support(p);
  CHECK(ls.rank == 1);
  CHECK((ls.support - diag2(1.0, 0.0)).norm() < 1e-14);
  CHECK(std::abs(ls.log(0, 0).real() - std::log(0.5)) < 1e-14);
  CHECK(std::abs(ls.log(1, 1)) == 0.0);
}

TEST_CASE("matrix_exp_herm inverts the support log on full rank input") {
  CounterRng rng(5);
  Mat r = random_density(4, rng);
  Mat back = matrix_exp_herm(matrix_log_support(r).log);
  CHECK((back - r).norm() < 1e-11);
}

TEST_CASE("relative entropy of fixed diagonal states") {
  // 0.8 ln(0.8/0.5) + 0.2 ln(0.2/0.5), evaluated independently
  const double expected = 0.192744757021758;
  double v = relative_entropy(diag2(0.8, 0.2), diag2(0.5, 0.5));
  CHECK(std::abs(v - expected) < 1e-14);
}

TEST_CASE("relative entropy is nonnegative and faithful") {
  CounterRng rng(6);
  Mat r = random_density(3, rng), g = random_density(3, rng);
  CHECK(relative_entropy(r, g) > 0.0);
  CHECK(std::abs(relative_entropy(r, r)) < 1e-12);
}

TEST_CASE("support leak outside the reference throws") {
  Mat rho = diag2(0.5, 0.5);
  Mat g = diag2(1.0, 0.0);
  CHECK_THROWS_AS(relative_entropy(rho, g), support_error);
  // contained support is fine even when the reference is singular
  CHECK(std::abs(relative_entropy(diag2(1.0, 0.0), g)) < 1e-13);
}

TEST_CASE("von Neumann entropy endpoints") {
  CHECK(std::abs(von_neumann_entropy(diag2(0.5, 0.5)) - std::log(2.0)) <
        1e-14);
  CHECK(std::abs(von_neumann_entropy(diag2(1.0, 0.0))) < 1e-14);
}
