#include "qift/operator_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qift {

EigenSystem deterministic_eig(const Mat& H) {
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  const int n = static_cast<int>(H.rows());
  EigenSystem sys;
  sys.values.resize(n);
  sys.vectors.resize(n, n);
  // Eigen returns ascending order; flip to descending.
  for (int k = 0; k < n; ++k) {
    sys.values[k] = es.eigenvalues()[n - 1 - k];
    sys.vectors.col(k) = es.eigenvectors().col(n - 1 - k);
  }
  // Phase convention: first component with |v_i| > 1e-12 made real positive.
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      cxd v = sys.vectors(i, k);
      if (std::abs(v) > 1e-12) {
        sys.vectors.col(k) *= std::conj(v) / std::abs(v);
        break;
      }
    }
  }
  return sys;
}

cxd hs_inner(const Mat& A, const Mat& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols())
    throw dimension_error("hs_inner: shape mismatch");
  return (A.adjoint() * B).trace();
}

Mat tensor(const Mat& A, const Mat& B) {
  Mat out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

Mat tensor(const std::vector<Mat>& factors) {
  if (factors.empty()) throw dimension_error("tensor: empty factor list");
  Mat out = factors[0];
  for (std::size_t k = 1; k < factors.size(); ++k) out = tensor(out, factors[k]);
  return out;
}

Mat partial_trace(const Mat& M, const std::vector<int>& leg_dims,
                  const std::vector<int>& traced_legs) {
  const int n = static_cast<int>(leg_dims.size());
  long total = 1;
  for (int d : leg_dims) total *= d;
  if (total != M.rows() || M.rows() != M.cols())
    throw dimension_error("partial_trace: leg dims inconsistent with matrix");

  std::vector<bool> traced(n, false);
  for (int t : traced_legs) {
    if (t < 0 || t >= n) throw dimension_error("partial_trace: bad leg index");
    traced[t] = true;
  }
  std::vector<int> kept;
  for (int k = 0; k < n; ++k)
    if (!traced[k]) kept.push_back(k);

  long dk = 1, dt = 1;
  for (int k = 0; k < n; ++k) (traced[k] ? dt : dk) *= leg_dims[k];

  // strides of each leg in the flat index
  std::vector<long> stride(n, 1);
  for (int k = n - 2; k >= 0; --k) stride[k] = stride[k + 1] * leg_dims[k + 1];

  auto flat = [&](const std::vector<int>& kept_idx,
                  const std::vector<int>& tr_idx) {
    long f = 0;
    int a = 0, b = 0;
    for (int k = 0; k < n; ++k)
      f += stride[k] * (traced[k] ? tr_idx[b++] : kept_idx[a++]);
    return f;
  };

  auto unrank = [](long r, const std::vector<int>& dims) {
    std::vector<int> idx(dims.size());
    for (int k = static_cast<int>(dims.size()) - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(r % dims[k]);
      r /= dims[k];
    }
    return idx;
  };

  std::vector<int> kdims, tdims;
  for (int k = 0; k < n; ++k) (traced[k] ? tdims : kdims).push_back(leg_dims[k]);
  if (tdims.empty()) return M;

  Mat out = Mat::Zero(dk, dk);
  for (long r = 0; r < dk; ++r) {
    auto ri = unrank(r, kdims);
    for (long c = 0; c < dk; ++c) {
      auto ci = unrank(c, kdims);
      cxd s = 0;
      for (long t = 0; t < dt; ++t) {
        auto ti = unrank(t, tdims);
        s += M(flat(ri, ti), flat(ci, ti));
      }
      out(r, c) = s;
    }
  }
  return out;
}

namespace {

Mat power_impl(const Mat& P, double alpha, double rank_tol, bool support_mode) {
  if (!is_hermitian(P)) throw validation_error("psd_power: not Hermitian");
  EigenSystem sys = deterministic_eig(P);
  const double lmax = sys.values.size() ? std::max(sys.values[0], 0.0) : 0.0;
  const double cut = rank_tol * std::max(lmax, 1e-300);
  RVec powered(sys.values.size());
  for (int k = 0; k < sys.values.size(); ++k) {
    double lam = sys.values[k];
    if (lam < -cut)
      throw validation_error("psd_power: negative eigenvalue beyond tolerance");
    if (lam <= cut) {
      if (alpha < 0 && !support_mode)
        throw support_error("psd_power: rank-deficient input with negative power");
      powered[k] = 0.0;
    } else {
      powered[k] = std::pow(lam, alpha);
    }
  }
  return sys.vectors * powered.asDiagonal() * sys.vectors.adjoint();
}

}  // namespace

Mat psd_power(const Mat& P, double alpha, double rank_tol) {
  return power_impl(P, alpha, rank_tol, false);
}

Mat psd_power_support(const Mat& P, double alpha, double rank_tol) {
  return power_impl(P, alpha, rank_tol, true);
}

LogSupport matrix_log_support(const Mat& P, double rank_tol) {
  if (!is_hermitian(P)) throw validation_error("matrix_log_support: not Hermitian");
  EigenSystem sys = deterministic_eig(P);
  const double lmax = sys.values.size() ? std::max(sys.values[0], 0.0) : 0.0;
  const double cut = rank_tol * std::max(lmax, 1e-300);
  LogSupport out;
  RVec logs = RVec::Zero(sys.values.size());
  Mat proj = Mat::Zero(P.rows(), P.cols());
  for (int k = 0; k < sys.values.size(); ++k) {
    double lam = sys.values[k];
    if (lam < -cut)
      throw validation_error("matrix_log_support: negative eigenvalue");
    if (lam > cut) {
      logs[k] = std::log(lam);
      proj += sys.vectors.col(k) * sys.vectors.col(k).adjoint();
      ++out.rank;
    }
  }
  out.log = sys.vectors * logs.asDiagonal() * sys.vectors.adjoint();
  out.support = proj;
  return out;
}

Mat matrix_exp_herm(const Mat& H) {
  if (!is_hermitian(H)) throw validation_error("matrix_exp_herm: not Hermitian");
  EigenSystem sys = deterministic_eig(H);
  RVec e(sys.values.size());
  for (int k = 0; k < sys.values.size(); ++k) e[k] = std::exp(sys.values[k]);
  return sys.vectors * e.asDiagonal() * sys.vectors.adjoint();
}

double relative_entropy(const Mat& rho, const Mat& gamma, double rank_tol) {
  if (rho.rows() != gamma.rows())
    throw dimension_error("relative_entropy: dimension mismatch");
  LogSupport lg = matrix_log_support(gamma, rank_tol);
  // support(rho) must sit inside support(gamma)
  Mat off = (Mat::Identity(gamma.rows(), gamma.cols()) - lg.support);
  double leak = std::real((off * rho * off).trace());
  if (leak > rank_tol * std::max(1.0, std::real(rho.trace())))
    throw support_error("relative_entropy: support violation (value infinite)");
  LogSupport lr = matrix_log_support(rho, rank_tol);
  return std::real((rho * (lr.log - lg.log)).trace());
}

double von_neumann_entropy(const Mat& rho, double rank_tol) {
  LogSupport lr = matrix_log_support(rho, rank_tol);
  return -std::real((rho * lr.log).trace());
}

}  // namespace qift
