#pragma once

#include "qift/types.hpp"

#include <cstdint>

namespace qift {

// Counter-based generator: splitmix64 finalizer applied to seed + k*golden.
// State is (seed, counter) only, so any draw is addressable and runs are
// reproducible regardless of call interleaving across suites.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  double uniform();        // [0, 1)
  double gaussian();       // standard normal, Box-Muller
  cxd complex_gaussian();  // mean 0, E|z|^2 = 1

 private:
  std::uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Haar-distributed unitary via QR of a complex Ginibre matrix with the
// R-diagonal phase fix.
Mat haar_unitary(int dim, CounterRng& rng);

// Hilbert-Schmidt random density matrix G G^dag / Tr.
Mat random_density(int dim, CounterRng& rng);

// Random point on the probability simplex (normalized exponentials).
RVec random_simplex(int n, CounterRng& rng);

}  // namespace qift
