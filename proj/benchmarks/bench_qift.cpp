#include <qift/channel.hpp>
#include <qift/ft.hpp>
#include <qift/multitime.hpp>
#include <qift/rng.hpp>
#include <qift/scenario.hpp>

#include <benchmark/benchmark.h>

using namespace qift;

namespace {

KrausChannel fixture_channel(int d) {
  CounterRng rng(500 + d);
  Mat U = haar_unitary(d * 2, rng);
  Mat env = random_density(2, rng);
  return dilation_channel(U, env, d);
}

MultitimeScenario fixture_scenario(int steps) {
  ScenarioSpec spec;
  spec.generator = "haar";
  spec.dim_s = 2;
  spec.dim_e = 2;
  spec.steps = steps;
  return generate_scenario(spec, 600 + steps);
}

void bm_kraus_to_choi(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  KrausChannel ch = fixture_channel(d);
  for (auto _ : state) benchmark::DoNotOptimize(kraus_to_choi(ch));
}
BENCHMARK(bm_kraus_to_choi)->Arg(2)->Arg(4)->Arg(8);

void bm_choi_to_kraus(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Mat C = kraus_to_choi(fixture_channel(d));
  for (auto _ : state) benchmark::DoNotOptimize(choi_to_kraus(C, d, d));
}
BENCHMARK(bm_choi_to_kraus)->Arg(2)->Arg(4)->Arg(8);

void bm_petz_recovery(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  KrausChannel ch = fixture_channel(d);
  CounterRng rng(42);
  Mat gamma = random_density(d, rng);
  for (auto _ : state) benchmark::DoNotOptimize(petz_recovery(ch, gamma));
}
BENCHMARK(bm_petz_recovery)->Arg(2)->Arg(4)->Arg(8);

void bm_tpm_forward(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  KrausChannel ch = fixture_channel(d);
  CounterRng rng(43);
  Mat rho = random_density(d, rng);
  Mat gamma = random_density(d, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(tpm_forward(rho, ch, gamma));
}
BENCHMARK(bm_tpm_forward)->Arg(2)->Arg(3)->Arg(4);

void bm_sigma_distribution(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  KrausChannel ch = fixture_channel(d);
  CounterRng rng(44);
  Mat rho = random_density(d, rng);
  Mat gamma = random_density(d, rng);
  TpmForwardResult fwd = tpm_forward(rho, ch, gamma);
  for (auto _ : state)
    benchmark::DoNotOptimize(sigma_distribution(fwd.records));
}
BENCHMARK(bm_sigma_distribution)->Arg(2)->Arg(4);

void bm_build_process_tensor(benchmark::State& state) {
  MultitimeScenario sc = fixture_scenario(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(build_process_tensor(sc));
}
BENCHMARK(bm_build_process_tensor)->Arg(2)->Arg(3);

void bm_d_nm(benchmark::State& state) {
  MultitimeScenario sc = fixture_scenario(static_cast<int>(state.range(0)));
  ProcessTensor T = build_process_tensor(sc);
  for (auto _ : state) benchmark::DoNotOptimize(d_nm(T));
}
BENCHMARK(bm_d_nm)->Arg(2)->Arg(3);

void bm_three_point(benchmark::State& state) {
  KrausChannel N1 = fixture_channel(2);
  KrausChannel N2 = fixture_channel(2);
  CounterRng rng(45);
  Mat rho = random_density(2, rng);
  Mat gamma = random_density(2, rng);
  Mat gp = random_density(2, rng);
  for (auto _ : state)
    benchmark::DoNotOptimize(three_point_ft_markov(N1, N2, rho, gamma, gp));
}
BENCHMARK(bm_three_point);

void bm_ancilla_ft(benchmark::State& state) {
  MultitimeScenario sc = fixture_scenario(2);
  CounterRng rng(46);
  Mat rho = random_density(2, rng);
  Mat gamma = random_density(2, rng);
  auto mp = default_markov_pair(sc);
  Mat meas = deterministic_eig(qift::apply(mp.first, rho)).vectors;
  for (auto _ : state)
    benchmark::DoNotOptimize(ancilla_ft(sc, rho, gamma, meas, mp));
}
BENCHMARK(bm_ancilla_ft);

}  // namespace

BENCHMARK_MAIN();
