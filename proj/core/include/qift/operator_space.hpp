#pragma once

#include "qift/types.hpp"

#include <vector>

namespace qift {

// Hilbert-Schmidt inner product (A|B) = Tr(A^dag B).
cxd hs_inner(const Mat& A, const Mat& B);

// Kronecker product, left factor owns the slow index.
Mat tensor(const Mat& A, const Mat& B);
Mat tensor(const std::vector<Mat>& factors);

// Partial trace over the legs listed in traced_legs; remaining legs keep
// their relative order. prod(leg_dims) must equal the matrix dimension.
Mat partial_trace(const Mat& M, const std::vector<int>& leg_dims,
                  const std::vector<int>& traced_legs);

// V diag(lambda^alpha) V^dag. Eigenvalues below rank_tol * lambda_max are
// treated as exactly zero; they are rejected for alpha < 0.
Mat psd_power(const Mat& P, double alpha, double rank_tol = kRankTol);

// Same, but negative powers pseudo-invert on the support instead of
// rejecting rank deficiency. Used where a reference state is singular by
// construction and the formulas live on its support slice.
Mat psd_power_support(const Mat& P, double alpha, double rank_tol = kRankTol);

struct LogSupport {
  Mat log;      // logarithm on the support, zero elsewhere
  Mat support;  // projector onto the support
  int rank = 0;
};

LogSupport matrix_log_support(const Mat& P, double rank_tol = kRankTol);

Mat matrix_exp_herm(const Mat& H);

// Tr rho (ln rho - ln gamma), natural log. Throws support_error when
// support(rho) leaks outside support(gamma) by more than rank_tol.
double relative_entropy(const Mat& rho, const Mat& gamma,
                        double rank_tol = kRankTol);

double von_neumann_entropy(const Mat& rho, double rank_tol = kRankTol);

}  // namespace qift
