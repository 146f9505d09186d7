#include "qift/rng.hpp"

#include <cmath>

namespace qift {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

}  // namespace

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : state_(splitmix64(seed ^ splitmix64(stream * kGolden + 1))) {}

std::uint64_t CounterRng::next_u64() {
  state_ += kGolden;
  return splitmix64(state_);
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::gaussian() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 shifted away from zero so the log is finite.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  have_cached_ = true;
  return r * std::cos(a);
}

cxd CounterRng::complex_gaussian() {
  return cxd(gaussian(), gaussian()) / std::sqrt(2.0);
}

Mat haar_unitary(int dim, CounterRng& rng) {
  Mat G(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) G(i, j) = rng.complex_gaussian();
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ();
  Mat R = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix the phase ambiguity of QR so the distribution is exactly Haar.
  for (int k = 0; k < dim; ++k) {
    cxd d = R(k, k);
    Q.col(k) *= (std::abs(d) > 0 ? d / std::abs(d) : cxd(1, 0));
  }
  return Q;
}

Mat random_density(int dim, CounterRng& rng) {
  Mat G(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) G(i, j) = rng.complex_gaussian();
  Mat rho = G * G.adjoint();
  rho /= rho.trace().real();
  return rho;
}

RVec random_simplex(int n, CounterRng& rng) {
  RVec p(n);
  double s = 0;
  for (int i = 0; i < n; ++i) {
    p[i] = -std::log(1.0 - rng.uniform());
    s += p[i];
  }
  return p / s;
}

}  // namespace qift
