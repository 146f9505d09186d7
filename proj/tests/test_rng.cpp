#include <qift/rng.hpp>

#include <doctest.h>

using namespace qift;

TEST_CASE("counter rng reproduces a sequence for a fixed seed and stream") {
  CounterRng a(42, 3), b(42, 3);
  for (int k = 0; k < 64; ++k) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("streams of the same seed decorrelate") {
  CounterRng a(42, 0), b(42, 1);
  int same = 0;
  for (int k = 0; k < 64; ++k)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform stays in [0,1)") {
  CounterRng rng(7);
  for (int k = 0; k < 1000; ++k) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("haar unitary is unitary and seed-deterministic") {
  for (int d : {2, 3, 5}) {
    CounterRng rng(11, d);
    Mat U = haar_unitary(d, rng);
    CHECK((U.adjoint() * U - Mat::Identity(d, d)).norm() < 1e-12);
    CounterRng rng2(11, d);
    Mat V = haar_unitary(d, rng2);
    CHECK((U - V).norm() == 0.0);
  }
}

TEST_CASE("random density is a state") {
  CounterRng rng(5);
  for (int d : {2, 4}) {
    Mat r = random_density(d, rng);
    CHECK((r - r.adjoint()).norm() < 1e-14);
    CHECK(std::abs(r.trace().real() - 1.0) < 1e-12);
    EigenSystem es = deterministic_eig(r);
    CHECK(es.values[es.dim() - 1] > -1e-14);
  }
}

TEST_CASE("random simplex points are distributions") {
  CounterRng rng(9);
  RVec w = random_simplex(5, rng);
  double s = 0.0;
  for (int k = 0; k < 5; ++k) {
    CHECK(w[k] > 0.0);
    s += w[k];
  }
  CHECK(std::abs(s - 1.0) < 1e-12);
}
