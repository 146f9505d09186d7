#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace qift {

using cxd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

// Default tolerances used across the library.
inline constexpr double kRankTol = 1e-10;     // relative to the largest eigenvalue
inline constexpr double kGroupingTol = 1e-9;  // absolute, sigma values are O(1)-O(10)
inline constexpr double kHermTol = 1e-12;
inline constexpr double kBinImagTol = 1e-10;  // sigma bins must be real past this

struct dimension_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct support_error : std::domain_error {
  using std::domain_error::domain_error;
};

struct validation_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Eigendecomposition of a Hermitian matrix with a reproducible convention:
// eigenvalues descending, each eigenvector's first component of magnitude
// > 1e-12 rotated to be real and positive.
struct EigenSystem {
  RVec values;
  Mat vectors;
  int dim() const { return static_cast<int>(values.size()); }
};

EigenSystem deterministic_eig(const Mat& H);

// |i><j| in the basis given by the columns of V.
inline Mat matrix_unit(const Mat& V, int i, int j) {
  return V.col(i) * V.col(j).adjoint();
}

inline bool is_hermitian(const Mat& M, double tol = kHermTol) {
  double scale = std::max(1.0, M.norm());
  return (M - M.adjoint()).norm() <= tol * scale;
}

}  // namespace qift
