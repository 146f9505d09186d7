#include <qift/channel.hpp>
#include <qift/rng.hpp>

#include <doctest.h>

#include <cmath>

using namespace qift;

namespace {

// Haar dilation with a full-rank environment; generic CPTP fixture.
KrausChannel random_channel(int d, int de, CounterRng& rng) {
  Mat U = haar_unitary(d * de, rng);
  Mat env = random_density(de, rng);
  return dilation_channel(U, env, d);
}

Mat super_apply(const Mat& sup, const Mat& rho, int dout) {
  Mat v = Mat::Zero(rho.rows() * rho.cols(), 1);
  for (int j = 0; j < rho.cols(); ++j)
    for (int i = 0; i < rho.rows(); ++i) v(j * rho.rows() + i, 0) = rho(i, j);
  Mat w = sup * v;
  Mat out = Mat::Zero(dout, dout);
  for (int j = 0; j < dout; ++j)
    for (int i = 0; i < dout; ++i) out(i, j) = w(j * dout + i, 0);
  return out;
}

}  // namespace

TEST_CASE("apply agrees with the superoperator and Choi routes") {
  CounterRng rng(21);
  for (int d : {2, 3}) {
    KrausChannel ch = random_channel(d, 2, rng);
    Mat rho = random_density(d, rng);
    Mat direct = qift::apply(ch, rho);

    Mat via_super = super_apply(kraus_to_super(ch), rho, ch.dim_out);
    CHECK((direct - via_super).norm() < 1e-12);

    // N(rho) = d_in Tr_A[(rho^T (x) I) C]
    Mat C = kraus_to_choi(ch);
    Mat lifted = tensor(rho.transpose(), Mat::Identity(d, d));
    Mat via_choi =
        double(d) * partial_trace(Mat(lifted * C), {d, d}, {0});
    CHECK((direct - via_choi).norm() < 1e-12);
  }
}

TEST_CASE("superoperator entries are Hilbert-Schmidt matrix elements") {
  CounterRng rng(22);
  KrausChannel ch = random_channel(2, 2, rng);
  Mat sup = kraus_to_super(ch);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      Mat unit = Mat::Zero(2, 2);
      unit(i, j) = 1.0;
      Mat out = qift::apply(ch, unit);
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l)
          CHECK(std::abs(sup(l * 2 + k, j * 2 + i) - out(k, l)) < 1e-13);
    }
}

TEST_CASE("choi matrix is a trace-1 state for CPTP input") {
  CounterRng rng(23);
  KrausChannel ch = random_channel(3, 2, rng);
  Mat C = kraus_to_choi(ch);
  CHECK(std::abs(C.trace().real() - 1.0) < 1e-12);
  CHECK((C - C.adjoint()).norm() < 1e-12);
  EigenSystem es = deterministic_eig(C);
  CHECK(es.values[es.dim() - 1] > -1e-12);
}

TEST_CASE("super and choi conversions are mutually consistent") {
  CounterRng rng(24);
  KrausChannel ch = random_channel(2, 3, rng);
  Mat sup = kraus_to_super(ch);
  CHECK((super_to_choi(sup, ch.dim_in, ch.dim_out) - kraus_to_choi(ch))
            .norm() < 1e-13);
}

TEST_CASE("choi_to_kraus reproduces the channel action") {
  CounterRng rng(25);
  for (int d : {2, 4}) {
    KrausChannel ch = random_channel(d, 2, rng);
    KrausChannel back = choi_to_kraus(kraus_to_choi(ch), d, d);
    CHECK((kraus_to_super(back) - kraus_to_super(ch)).norm() < 1e-10);
    CHECK(is_cptp(back).ok);
  }
}

TEST_CASE("choi_to_kraus rejects non-PSD input") {
  Mat C = max_entangled_state(2);
  C(0, 0) = -0.5;
  CHECK_THROWS_AS(choi_to_kraus(C, 2, 2), validation_error);
}

TEST_CASE("max entangled state is pure with unit trace") {
  Mat phi = max_entangled_state(3);
  CHECK(std::abs(phi.trace().real() - 1.0) < 1e-14);
  CHECK((phi * phi - phi).norm() < 1e-13);  // projector onto the entangled vector
}

TEST_CASE("dilation channel equals the explicit environment trace") {
  CounterRng rng(26);
  const int d = 2, de = 3;
  Mat U = haar_unitary(d * de, rng);
  Mat env = random_density(de, rng);
  KrausChannel ch = dilation_channel(U, env, d);
  CHECK(is_cptp(ch).ok);
  Mat rho = random_density(d, rng);
  Mat full = U * tensor(rho, env) * U.adjoint();
  CHECK((qift::apply(ch, rho) - partial_trace(full, {d, de}, {1})).norm() < 1e-12);
}

TEST_CASE("adjoint of a TP channel is unital") {
  CounterRng rng(27);
  KrausChannel ch = random_channel(3, 2, rng);
  Mat I3 = Mat::Identity(3, 3);
  CHECK((qift::apply(adjoint(ch), I3) - I3).norm() < 1e-12);
}

TEST_CASE("is_cptp flags broken normalization") {
  KrausChannel ch = identity_channel(2);
  ch.ops[0] *= 1.1;
  CptpReport rep = is_cptp(ch);
  CHECK(!rep.ok);
  CHECK(rep.tp_margin > 0.1);
}

TEST_CASE("petz recovery is CPTP and restores the reference") {
  CounterRng rng(28);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 2 + trial % 3;
    KrausChannel ch = random_channel(d, 2, rng);
    Mat gamma = random_density(d, rng);
    KrausChannel rec = petz_recovery(ch, gamma);
    CHECK(is_cptp(rec).ok);
    CHECK((qift::apply(rec, qift::apply(ch, gamma)) - gamma).norm() < 1e-11);
  }
}

TEST_CASE("petz recovery of a unitary channel inverts it") {
  CounterRng rng(29);
  Mat U = haar_unitary(3, rng);
  Mat gamma = random_density(3, rng);
  KrausChannel rec = petz_recovery(unitary_channel(U), gamma);
  Mat expected = kraus_to_super(unitary_channel(Mat(U.adjoint())));
  CHECK((kraus_to_super(rec) - expected).norm() < 1e-11);
}

TEST_CASE("support petz handles singular references on their slice") {
  CounterRng rng(30);
  // rank-2 reference on a 3-level system
  Mat gamma = Mat::Zero(3, 3);
  gamma(0, 0) = 0.75;
  gamma(1, 1) = 0.25;
  KrausChannel plain = unitary_channel(haar_unitary(3, rng));
  CHECK_THROWS_AS(petz_recovery(plain, gamma), support_error);
  KrausChannel rec = petz_recovery_support(plain, gamma);
  CHECK((qift::apply(rec, qift::apply(plain, gamma)) - gamma).norm() < 1e-11);
}

TEST_CASE("rescale applies the sandwich power") {
  CounterRng rng(31);
  Mat base = random_density(2, rng);
  Mat X = random_density(2, rng);
  Mat want = psd_power(base, 0.5) * X * psd_power(base, 0.5);
  CHECK((rescale({base, 0.5}, X) - want).norm() < 1e-13);
}

TEST_CASE("depolarizing channel mixes toward the identity") {
  KrausChannel ch = depolarizing_channel(2, 0.3);
  CHECK(is_cptp(ch).ok);
  Mat rho = Mat::Zero(2, 2);
  rho(0, 0) = 1.0;
  Mat out = qift::apply(ch, rho);
  CHECK(std::abs(out(0, 0).real() - 0.85) < 1e-12);
  CHECK(std::abs(out(1, 1).real() - 0.15) < 1e-12);
}

TEST_CASE("amplitude damping moves excited population down") {
  KrausChannel ch = amplitude_damping(0.4);
  CHECK(is_cptp(ch).ok);
  Mat e = Mat::Zero(2, 2);
  e(1, 1) = 1.0;
  Mat out = qift::apply(ch, e);
  CHECK(std::abs(out(0, 0).real() - 0.4) < 1e-13);
  CHECK(std::abs(out(1, 1).real() - 0.6) < 1e-13);
}

TEST_CASE("dephasing kills coherences, keeps populations") {
  // coherences scale by 1 - 2p, so p = 1/2 removes them entirely
  KrausChannel ch = dephasing_channel(0.5);
  CHECK(is_cptp(ch).ok);
  Mat plus = Mat::Constant(2, 2, cxd(0.5, 0.0));
  Mat out = qift::apply(ch, plus);
  CHECK(std::abs(out(0, 0).real() - 0.5) < 1e-13);
  CHECK(std::abs(out(0, 1)) < 1e-13);
}

TEST_CASE("make_channel validates shapes") {
  std::vector<Mat> ops;
  ops.push_back(Mat::Identity(2, 2));
  ops.push_back(Mat::Identity(3, 3));
  CHECK_THROWS_AS(make_channel(std::move(ops)), dimension_error);
}
