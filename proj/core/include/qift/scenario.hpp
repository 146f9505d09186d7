#pragma once

#include "qift/multitime.hpp"
#include "qift/rng.hpp"
#include "qift/types.hpp"

#include <string>
#include <vector>

namespace qift {

Mat swap_gate(int dim);

// Qubit-qubit amplitude damping interaction in the |s e> product basis:
// |10> -> c|10> + s|01>, |01> -> -s|10> + c|01>, c = sqrt(1-p).
Mat amplitude_damping_unitary(double p);

// Controlled-phase coupling diag(e^{i theta_se}) with seeded phases.
Mat dephase_unitary(int dim_s, int dim_e, CounterRng& rng);

// Embeds U acting on (S, E_which) into (S, E_1 ... E_m) where the full
// environment is a product of m legs of dimension env_leg_dim.
Mat embed_on_env_leg(const Mat& U, int dim_s, int env_leg_dim, int n_legs,
                     int which);

struct ScenarioSpec {
  std::string generator;  // haar | swap | collision-ad | dephase
  int dim_s = 2;
  int dim_e = 2;
  int steps = 2;
  std::vector<double> damping;  // collision-ad decay per step
};

// Deterministic for a fixed seed. swap ignores dims other than dim_s =
// dim_e; collision-ad uses one fresh qubit per step (dim_e = 2^steps).
MultitimeScenario generate_scenario(const ScenarioSpec& spec,
                                    std::uint64_t seed);

}  // namespace qift
