#include <qift/channel.hpp>
#include <qift/ft.hpp>
#include <qift/multitime.hpp>
#include <qift/operator_space.hpp>
#include <qift/rng.hpp>
#include <qift/scenario.hpp>

#include <doctest.h>

#include <cmath>

using namespace qift;

namespace {

MultitimeScenario haar_scenario(int d, int de, int steps, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.generator = "haar";
  spec.dim_s = d;
  spec.dim_e = de;
  spec.steps = steps;
  return generate_scenario(spec, seed);
}

MultitimeScenario named_scenario(const std::string& gen, int steps,
                                 std::uint64_t seed) {
  ScenarioSpec spec;
  spec.generator = gen;
  spec.dim_s = 2;
  spec.dim_e = gen == "collision-ad" ? (1 << steps) : 2;
  spec.steps = steps;
  return generate_scenario(spec, seed);
}

}  // namespace

TEST_CASE("swap gate exchanges the two legs") {
  Mat S = swap_gate(3);
  CounterRng rng(61);
  Mat a = random_density(3, rng), b = random_density(3, rng);
  CHECK((S * tensor(a, b) * S.adjoint() - tensor(b, a)).norm() < 1e-13);
  CHECK((S * S - Mat::Identity(9, 9)).norm() == 0.0);
}

TEST_CASE("amplitude damping unitary dilates the damping channel") {
  const double p = 0.35;
  Mat U = amplitude_damping_unitary(p);
  CHECK((U.adjoint() * U - Mat::Identity(4, 4)).norm() < 1e-14);
  Mat env = Mat::Zero(2, 2);
  env(0, 0) = 1.0;
  KrausChannel dil = dilation_channel(U, env, 2);
  KrausChannel ad = amplitude_damping(p);
  CHECK((kraus_to_super(dil) - kraus_to_super(ad)).norm() < 1e-13);
}

TEST_CASE("scenario generators validate their inputs") {
  ScenarioSpec bad;
  bad.generator = "unknown-gen";
  CHECK_THROWS_AS(generate_scenario(bad, 1), validation_error);

  ScenarioSpec coll;
  coll.generator = "collision-ad";
  coll.dim_s = 3;  // collision model is qubit only
  CHECK_THROWS_AS(generate_scenario(coll, 1), dimension_error);

  ScenarioSpec deep;
  deep.generator = "collision-ad";
  deep.steps = 5;  // environment would outgrow the cap
  CHECK_THROWS_AS(generate_scenario(deep, 1), validation_error);
}

TEST_CASE("make_scenario rejects non-unitary steps and bad environments") {
  std::vector<Mat> us = {Mat::Identity(4, 4)};
  Mat env = Mat::Zero(2, 2);
  env(0, 0) = 1.0;
  CHECK_NOTHROW(make_scenario(us, env, 2, 2));

  std::vector<Mat> scaled = {Mat(0.9 * Mat::Identity(4, 4))};
  CHECK_THROWS_AS(make_scenario(scaled, env, 2, 2), validation_error);

  Mat env_bad = env;
  env_bad(0, 0) = 1.5;  // trace off
  CHECK_THROWS_AS(make_scenario(us, env_bad, 2, 2), validation_error);
}

TEST_CASE("process tensor is a trace-1 state over interleaved legs") {
  MultitimeScenario sc = haar_scenario(2, 2, 2, 71);
  ProcessTensor T = build_process_tensor(sc);
  REQUIRE(T.leg_dims.size() == 4);
  CHECK(std::abs(T.choi.trace().real() - 1.0) < 1e-12);
  EigenSystem es = deterministic_eig(T.choi);
  CHECK(es.values[es.dim() - 1] > -1e-12);
}

TEST_CASE("the literal and channel-Choi routes agree") {
  for (int steps : {2, 3}) {
    MultitimeScenario sc = haar_scenario(2, 2, steps, 72 + steps);
    ProcessTensor T = build_process_tensor(sc);
    Mat grouped = kraus_to_choi(manybody_channel(sc));
    std::vector<int> dims(2 * steps, 2), perm(2 * steps);
    for (int i = 0; i < steps; ++i) {
      perm[2 * i] = i;
      perm[2 * i + 1] = steps + i;
    }
    CHECK((T.choi - permute_legs(grouped, dims, perm)).norm() < 1e-12);
  }
}

TEST_CASE("permute_legs composes to the identity") {
  CounterRng rng(73);
  Mat M = random_density(8, rng);
  std::vector<int> dims = {2, 2, 2};
  Mat cycled = permute_legs(M, dims, {2, 0, 1});
  Mat back = permute_legs(cycled, {2, 2, 2}, {1, 2, 0});
  CHECK((back - M).norm() == 0.0);
}

TEST_CASE("linking the tensor reproduces the composed dilation") {
  MultitimeScenario sc = haar_scenario(2, 2, 2, 74);
  ProcessTensor T = build_process_tensor(sc);
  Mat W = sc.unitaries[1] * sc.unitaries[0];
  Mat expect = kraus_to_choi(dilation_channel(W, sc.env_initial, 2));
  CHECK((link_identity(T) - expect).norm() < 1e-12);
}

TEST_CASE("prefix contractions respect time ordering") {
  MultitimeScenario sc = haar_scenario(2, 2, 3, 75);
  ProcessTensor T = build_process_tensor(sc);
  CounterRng rng(76);
  std::vector<Mat> preps;
  for (int i = 0; i < 3; ++i) preps.push_back(random_density(2, rng));
  CHECK(check_time_ordering(T, preps, sc) < 1e-12);

  // scrambling the raw Choi entries breaks causality detectably
  ProcessTensor bad = T;
  Mat R = haar_unitary(static_cast<int>(T.choi.rows()), rng);
  bad.choi = R * T.choi * R.adjoint();
  CHECK(check_time_ordering(bad, preps, sc) > 1e-3);
}

TEST_CASE("derived channel without inserts is the linked channel") {
  MultitimeScenario sc = haar_scenario(2, 2, 2, 77);
  KrausChannel derived = derived_channel(sc, {});
  Mat W = sc.unitaries[1] * sc.unitaries[0];
  KrausChannel linked = dilation_channel(W, sc.env_initial, 2);
  CHECK((kraus_to_super(derived) - kraus_to_super(linked)).norm() < 1e-12);
}

TEST_CASE("derived channel threads inserted operations between steps") {
  MultitimeScenario sc = haar_scenario(2, 2, 2, 78);
  // inserting the identity changes nothing
  KrausChannel with_id = derived_channel(sc, {identity_channel(2)});
  KrausChannel plain = derived_channel(sc, {});
  CHECK((kraus_to_super(with_id) - kraus_to_super(plain)).norm() < 1e-12);

  // a depolarizing insert acts between the two steps
  KrausChannel dep = depolarizing_channel(2, 1.0);
  KrausChannel with_dep = derived_channel(sc, {dep});
  KrausChannel step1 = dilation_channel(sc.unitaries[0], sc.env_initial, 2);
  CounterRng rng(79);
  Mat rho = random_density(2, rng);
  // full depolarization erases S-E correlation, so step 2 sees a product
  Mat env_mid = partial_trace(
      Mat(sc.unitaries[0] * tensor(rho, sc.env_initial) *
          sc.unitaries[0].adjoint()),
      {2, 2}, {0});
  Mat expect = qift::apply(dilation_channel(sc.unitaries[1], env_mid, 2),
                     qift::apply(dep, qift::apply(step1, rho)));
  CHECK((qift::apply(with_dep, rho) - expect).norm() < 1e-12);
}

TEST_CASE("markov approximation matches leg-pair marginals exactly") {
  MultitimeScenario sc = named_scenario("collision-ad", 2, 80);
  ProcessTensor T = build_process_tensor(sc);
  CHECK((markov_approximation(T).choi - T.choi).norm() < 1e-12);
  CHECK(d_nm(T) < 1e-12);
}

TEST_CASE("swap memory is maximal for pure environments") {
  MultitimeScenario sc = named_scenario("swap", 2, 81);
  const double v = d_nm(build_process_tensor(sc));
  CHECK(std::abs(v - 2.0 * std::log(2.0)) < 1e-10);
}

TEST_CASE("haar scenarios carry visible memory") {
  MultitimeScenario sc = haar_scenario(2, 2, 2, 82);
  CHECK(d_nm(build_process_tensor(sc)) > 0.01);
}

TEST_CASE("product-of-steps scenarios are exactly markovian") {
  CounterRng rng(83);
  std::vector<Mat> us;
  for (int i = 0; i < 2; ++i)
    us.push_back(tensor(haar_unitary(2, rng), haar_unitary(2, rng)));
  MultitimeScenario sc =
      make_scenario(std::move(us), random_density(2, rng), 2, 2);
  CHECK(d_nm(build_process_tensor(sc)) < 1e-12);
}

TEST_CASE("manybody FT closes over product inputs") {
  MultitimeScenario sc = haar_scenario(2, 2, 2, 84);
  CounterRng rng(85);
  Mat rho = tensor(random_density(2, rng), random_density(2, rng));
  Mat gamma = tensor(random_density(2, rng), random_density(2, rng));
  FTReport rep = manybody_ft(sc, rho, gamma);
  CHECK(std::abs(rep.integral_ft - 1.0) < 1e-10);
  CHECK(rep.detailed_ft_max_violation < 1e-10);
  CHECK(std::abs(rep.mean_sigma - rep.relent_formula_value) < 1e-10);
}

TEST_CASE("linked FT splits into its three reported terms") {
  MultitimeScenario sc = haar_scenario(2, 2, 2, 86);
  CounterRng rng(87);
  Mat rho = random_density(2, rng);
  Mat gamma = random_density(2, rng);
  LinkedFtResult lr =
      linked_ft_with_sigma_nm(sc, rho, gamma, default_markov_pair(sc));
  CHECK(std::abs(lr.ft.integral_ft - 1.0) < 1e-10);
  CHECK(lr.ft.detailed_ft_max_violation < 1e-10);
  REQUIRE(lr.nm.decomposition_terms.size() == 3);
  double sum = 0.0;
  for (const auto& t : lr.nm.decomposition_terms) sum += t.second;
  CHECK(std::abs(sum - lr.ft.mean_sigma) < 1e-10);
  CHECK(std::isfinite(lr.nm.d_nm_value));
}

TEST_CASE("three point statistics close every marginal and both theorems") {
  CounterRng rng(88);
  for (int trial = 0; trial < 3; ++trial) {
    KrausChannel N1 = dilation_channel(haar_unitary(4, rng),
                                       random_density(2, rng), 2);
    KrausChannel N2 = dilation_channel(haar_unitary(4, rng),
                                       random_density(2, rng), 2);
    Mat rho = random_density(2, rng);
    Mat gamma = random_density(2, rng);
    Mat gp = random_density(2, rng);
    ThreePointResult tr = three_point_ft_markov(N1, N2, rho, gamma, gp);
    CHECK(tr.marginal_err_max < 1e-11);
    CHECK(tr.backward_marginal_err_max < 1e-11);
    CHECK(std::abs(tr.report.integral_ft - 1.0) < 1e-11);
    CHECK(tr.report.detailed_ft_max_violation < 1e-11);
    CHECK(std::abs(tr.mean_sigma - tr.mtrs_value) < 1e-11);
    CHECK(tr.sigma2_detailed_max < 1e-11);
    CHECK(std::abs(tr.sigma2_mean - tr.sigma2_relent_value) < 1e-11);
    CHECK(tr.record_detail_max < 1e-11);
  }
}

TEST_CASE("choosing gamma_prime as the propagated reference telescopes") {
  CounterRng rng(89);
  KrausChannel N1 = dilation_channel(haar_unitary(4, rng),
                                     random_density(2, rng), 2);
  KrausChannel N2 = dilation_channel(haar_unitary(4, rng),
                                     random_density(2, rng), 2);
  Mat rho = random_density(2, rng);
  Mat gamma = random_density(2, rng);
  Mat gp = qift::apply(N1, gamma);
  ThreePointResult tr = three_point_ft_markov(N1, N2, rho, gamma, gp);
  const double expect = relative_entropy(rho, gamma) -
                        relative_entropy(qift::apply(N2, qift::apply(N1, rho)),
                                         qift::apply(N2, qift::apply(N1, gamma)));
  CHECK(std::abs(tr.mean_sigma - expect) < 1e-10);
}

TEST_CASE("a custom mid basis keeps the joint theorem, sigma2 goes complex") {
  CounterRng rng(90);
  KrausChannel N1 = dilation_channel(haar_unitary(4, rng),
                                     random_density(2, rng), 2);
  KrausChannel N2 = dilation_channel(haar_unitary(4, rng),
                                     random_density(2, rng), 2);
  Mat rho = random_density(2, rng);
  Mat gamma = random_density(2, rng);
  Mat gp = random_density(2, rng);
  Mat basis = haar_unitary(2, rng);
  ThreePointResult tr = three_point_ft_markov(N1, N2, rho, gamma, gp, basis);
  // marginality and the joint theorem never depend on the basis choice
  CHECK(tr.marginal_err_max < 1e-11);
  CHECK(tr.backward_marginal_err_max < 1e-11);
  CHECK(std::abs(tr.report.integral_ft - 1.0) < 1e-11);
  CHECK(tr.report.detailed_ft_max_violation < 1e-11);
  CHECK(std::abs(tr.mean_sigma - tr.mtrs_value) < 1e-10);
  CHECK(tr.record_detail_max < 1e-11);
  // the second-leg bins keep imaginary mass away from the rho_M eigenbasis
  CHECK(tr.sigma2_imag_max > 1e-10);
  CHECK(std::isnan(tr.sigma2_detailed_max));

  Mat eig_basis = deterministic_eig(qift::apply(N1, rho)).vectors;
  ThreePointResult te =
      three_point_ft_markov(N1, N2, rho, gamma, gp, eig_basis);
  CHECK(te.sigma2_imag_max < 1e-12);
  CHECK(te.sigma2_detailed_max < 1e-11);
  CHECK(std::abs(te.sigma2_mean - te.sigma2_relent_value) < 1e-11);
}

TEST_CASE("three point enumeration is capped at dimension 3") {
  CounterRng rng(91);
  KrausChannel big = dilation_channel(haar_unitary(8, rng),
                                      random_density(2, rng), 4);
  Mat rho = random_density(4, rng);
  CHECK_THROWS_AS(three_point_ft_markov(big, big, rho, rho, rho),
                  validation_error);
}

TEST_CASE("the probe separates shared memory from fresh collisions") {
  CounterRng rng(92);
  Mat rho = random_density(2, rng);
  Mat gamma = random_density(2, rng);
  Mat gp = random_density(2, rng);

  MultitimeScenario swap_sc = named_scenario("swap", 2, 93);
  CHECK(marginality_failure_probe(swap_sc, rho, gamma, gp) > 1e-3);

  MultitimeScenario coll = named_scenario("collision-ad", 2, 94);
  CHECK(marginality_failure_probe(coll, rho, gamma, gp) < 1e-11);
}

TEST_CASE("cnot_in_basis copies basis labels unitarily") {
  CounterRng rng(95);
  Mat basis = haar_unitary(3, rng);
  Mat A = cnot_in_basis(basis);
  CHECK((A.adjoint() * A - Mat::Identity(9, 9)).norm() < 1e-12);
  // |b_k> (x) |0> maps to |b_k> (x) |k>
  for (int k = 0; k < 3; ++k) {
    Mat in = Mat::Zero(9, 1);
    for (int s = 0; s < 3; ++s) in(s * 3 + 0, 0) = basis(s, k);
    Mat out = A * in;
    for (int s = 0; s < 3; ++s)
      CHECK(std::abs(out(s * 3 + k, 0) - basis(s, k)) < 1e-13);
  }
}

TEST_CASE("ancilla record statistics close the fluctuation theorem") {
  for (const char* gen : {"haar", "swap", "collision-ad"}) {
    MultitimeScenario sc = named_scenario(gen, 2, 96);
    CounterRng rng(97);
    Mat rho = random_density(2, rng);
    Mat gamma = random_density(2, rng);
    auto mp = default_markov_pair(sc);
    Mat meas = deterministic_eig(qift::apply(mp.first, rho)).vectors;
    AncillaFtResult ar = ancilla_ft(sc, rho, gamma, meas, mp);
    CAPTURE(gen);
    CHECK(ar.support_leak < 1e-11);
    CHECK(ar.marginal_err_max < 1e-11);
    CHECK(std::abs(ar.ft.integral_ft - 1.0) < 1e-11);
    CHECK(ar.ft.detailed_ft_max_violation < 1e-11);
    CHECK(std::abs(ar.mean_sigma - ar.tpsig_value) < 1e-11);
    CHECK(ar.record_detail_max < 1e-11);
    CHECK(ar.nm.sigma_nm > -1e-10);
  }
}

TEST_CASE("ancilla sigma_nm detects swap memory and clears fresh baths") {
  CounterRng rng(98);
  Mat rho = random_density(2, rng);
  Mat gamma = random_density(2, rng);

  MultitimeScenario swap_sc = named_scenario("swap", 2, 99);
  auto mp_swap = default_markov_pair(swap_sc);
  Mat meas_swap = deterministic_eig(qift::apply(mp_swap.first, rho)).vectors;
  AncillaFtResult a_swap = ancilla_ft(swap_sc, rho, gamma, meas_swap, mp_swap);
  CHECK(a_swap.nm.sigma_nm > 1e-3);

  MultitimeScenario coll = named_scenario("collision-ad", 2, 100);
  auto mp_coll = default_markov_pair(coll);
  Mat meas_coll = deterministic_eig(qift::apply(mp_coll.first, rho)).vectors;
  AncillaFtResult a_coll = ancilla_ft(coll, rho, gamma, meas_coll, mp_coll);
  CHECK(std::abs(a_coll.nm.sigma_nm) < 1e-10);
}
