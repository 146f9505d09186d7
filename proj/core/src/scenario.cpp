#include "qift/scenario.hpp"

#include <cmath>
#include <utility>

namespace qift {

Mat swap_gate(int dim) {
  Mat S = Mat::Zero(dim * dim, dim * dim);
  for (int a = 0; a < dim; ++a)
    for (int b = 0; b < dim; ++b) S(b * dim + a, a * dim + b) = 1.0;
  return S;
}

Mat amplitude_damping_unitary(double p) {
  if (p < 0.0 || p > 1.0)
    throw validation_error("amplitude_damping_unitary: p in [0,1]");
  const double c = std::sqrt(1.0 - p), s = std::sqrt(p);
  Mat U = Mat::Zero(4, 4);
  U(0, 0) = 1.0;
  U(3, 3) = 1.0;
  U(1, 1) = c;
  U(1, 2) = s;
  U(2, 1) = -s;
  U(2, 2) = c;
  return U;
}

Mat dephase_unitary(int dim_s, int dim_e, CounterRng& rng) {
  const int D = dim_s * dim_e;
  Mat U = Mat::Zero(D, D);
  for (int x = 0; x < D; ++x) {
    const double theta = 2.0 * M_PI * rng.uniform();
    U(x, x) = cxd(std::cos(theta), std::sin(theta));
  }
  return U;
}

Mat embed_on_env_leg(const Mat& U, int dim_s, int env_leg_dim, int n_legs,
                     int which) {
  if (which < 0 || which >= n_legs)
    throw dimension_error("embed_on_env_leg: leg index");
  std::vector<int> dims{dim_s};
  for (int k = 0; k < n_legs; ++k) dims.push_back(env_leg_dim);
  return embed_two_legs(U, dims, 0, 1 + which);
}

MultitimeScenario generate_scenario(const ScenarioSpec& spec,
                                    std::uint64_t seed) {
  if (spec.steps < 1)
    throw validation_error("generate_scenario: steps must be positive");
  CounterRng rng(seed);

  if (spec.generator == "haar") {
    if (spec.dim_s < 2 || spec.dim_e < 2)
      throw dimension_error("generate_scenario: haar needs dims >= 2");
    std::vector<Mat> us;
    us.reserve(spec.steps);
    for (int i = 0; i < spec.steps; ++i)
      us.push_back(haar_unitary(spec.dim_s * spec.dim_e, rng));
    Mat env = random_density(spec.dim_e, rng);
    return make_scenario(std::move(us), std::move(env), spec.dim_s,
                         spec.dim_e);
  }

  if (spec.generator == "swap") {
    // pure shared environment; the canonical memory-carrying fixture
    const int d = spec.dim_s;
    Mat env = Mat::Zero(d, d);
    env(0, 0) = 1.0;
    std::vector<Mat> us(spec.steps, swap_gate(d));
    return make_scenario(std::move(us), std::move(env), d, d);
  }

  if (spec.generator == "collision-ad") {
    // one fresh qubit per step; Markov by construction
    if (spec.dim_s != 2)
      throw dimension_error("generate_scenario: collision-ad is a qubit fixture");
    const int n = spec.steps;
    if (n > 4)
      throw validation_error("generate_scenario: collision-ad capped at 4 steps");
    const int de = 1 << n;
    std::vector<double> p = spec.damping;
    for (int i = static_cast<int>(p.size()); i < n; ++i)
      p.push_back(0.3 + 0.15 * i);
    for (double x : p)
      if (x < 0.0 || x > 1.0)
        throw validation_error("generate_scenario: damping in [0,1]");
    std::vector<Mat> us;
    us.reserve(n);
    for (int i = 0; i < n; ++i)
      us.push_back(
          embed_on_env_leg(amplitude_damping_unitary(p[i]), 2, 2, n, i));
    Mat env = Mat::Zero(de, de);
    env(0, 0) = 1.0;
    return make_scenario(std::move(us), std::move(env), 2, de);
  }

  if (spec.generator == "dephase") {
    std::vector<Mat> us;
    us.reserve(spec.steps);
    for (int i = 0; i < spec.steps; ++i)
      us.push_back(dephase_unitary(spec.dim_s, spec.dim_e, rng));
    Mat env = random_density(spec.dim_e, rng);
    return make_scenario(std::move(us), std::move(env), spec.dim_s,
                         spec.dim_e);
  }

  throw validation_error("generate_scenario: unknown generator '" +
                         spec.generator + "'");
}

}  // namespace qift
