#include "qift/channel.hpp"

#include <cmath>

namespace qift {

KrausChannel make_channel(std::vector<Mat> ops) {
  if (ops.empty()) throw validation_error("channel needs at least one Kraus operator");
  const int out = static_cast<int>(ops[0].rows());
  const int in = static_cast<int>(ops[0].cols());
  for (const Mat& M : ops) {
    if (M.rows() != out || M.cols() != in)
      throw dimension_error("Kraus operators must share one shape");
  }
  return KrausChannel{std::move(ops), in, out};
}

Mat apply(const KrausChannel& ch, const Mat& rho) {
  if (rho.rows() != ch.dim_in || rho.cols() != ch.dim_in)
    throw dimension_error("apply: state dimension does not match channel input");
  Mat out = Mat::Zero(ch.dim_out, ch.dim_out);
  for (const Mat& M : ch.ops) out += M * rho * M.adjoint();
  return out;
}

KrausChannel adjoint(const KrausChannel& ch) {
  std::vector<Mat> ops;
  ops.reserve(ch.ops.size());
  for (const Mat& M : ch.ops) ops.push_back(M.adjoint());
  return KrausChannel{std::move(ops), ch.dim_out, ch.dim_in};
}

Mat kraus_to_super(const KrausChannel& ch) {
  const int din = ch.dim_in, dout = ch.dim_out;
  Mat S = Mat::Zero(dout * dout, din * din);
  for (const Mat& M : ch.ops) {
    // conj(M) (x) M under column stacking
    for (int lp = 0; lp < dout; ++lp)
      for (int j = 0; j < din; ++j) {
        const cxd mc = std::conj(M(lp, j));
        if (mc == cxd(0, 0)) continue;
        for (int kp = 0; kp < dout; ++kp)
          for (int i = 0; i < din; ++i)
            S(lp * dout + kp, j * din + i) += mc * M(kp, i);
      }
  }
  return S;
}

Mat kraus_to_choi(const KrausChannel& ch) {
  const int din = ch.dim_in, dout = ch.dim_out;
  Mat C = Mat::Zero(din * dout, din * dout);
  for (const Mat& M : ch.ops)
    for (int i = 0; i < din; ++i)
      for (int j = 0; j < din; ++j)
        for (int k = 0; k < dout; ++k)
          for (int l = 0; l < dout; ++l)
            C(i * dout + k, j * dout + l) += M(k, i) * std::conj(M(l, j));
  return C / static_cast<double>(din);
}

Mat super_to_choi(const Mat& sup, int dim_in, int dim_out) {
  if (sup.rows() != dim_out * dim_out || sup.cols() != dim_in * dim_in)
    throw dimension_error("super_to_choi: size mismatch");
  Mat C(dim_in * dim_out, dim_in * dim_out);
  for (int i = 0; i < dim_in; ++i)
    for (int j = 0; j < dim_in; ++j)
      for (int k = 0; k < dim_out; ++k)
        for (int l = 0; l < dim_out; ++l)
          // N(Pi_ij)[k,l] = sup((l,k),(j,i)) under column stacking
          C(i * dim_out + k, j * dim_out + l) =
              sup(l * dim_out + k, j * dim_in + i);
  return C / static_cast<double>(dim_in);
}

KrausChannel choi_to_kraus(const Mat& choi, int dim_in, int dim_out,
                           double cutoff) {
  if (choi.rows() != dim_in * dim_out || choi.cols() != dim_in * dim_out)
    throw dimension_error("choi_to_kraus: size mismatch");
  EigenSystem es = deterministic_eig(choi);
  const double lmax = es.values.size() ? std::max(es.values[0], 0.0) : 0.0;
  std::vector<Mat> ops;
  for (int a = 0; a < es.dim(); ++a) {
    const double lam = es.values[a];
    if (lam < -1e-10 * std::max(lmax, 1.0))
      throw validation_error("choi_to_kraus: Choi matrix is not PSD");
    if (lam <= cutoff) continue;
    const double scale = std::sqrt(lam * dim_in);
    Mat K(dim_out, dim_in);
    for (int i = 0; i < dim_in; ++i)
      for (int k = 0; k < dim_out; ++k)
        K(k, i) = scale * es.vectors(i * dim_out + k, a);
    ops.push_back(std::move(K));
  }
  if (ops.empty()) ops.push_back(Mat::Zero(dim_out, dim_in));
  return KrausChannel{std::move(ops), dim_in, dim_out};
}

Mat max_entangled_state(int dim) {
  Vec omega = Vec::Zero(dim * dim);
  for (int i = 0; i < dim; ++i) omega(i * dim + i) = 1.0;
  return (omega * omega.adjoint()) / static_cast<double>(dim);
}

CptpReport is_cptp(const KrausChannel& ch, double tol) {
  Mat acc = Mat::Zero(ch.dim_in, ch.dim_in);
  for (const Mat& M : ch.ops) acc += M.adjoint() * M;
  CptpReport rep;
  rep.tp_margin = (acc - Mat::Identity(ch.dim_in, ch.dim_in)).norm();
  Eigen::SelfAdjointEigenSolver<Mat> solver(kraus_to_choi(ch),
                                            Eigen::EigenvaluesOnly);
  rep.min_choi_eig = solver.eigenvalues().minCoeff();
  rep.ok = rep.tp_margin <= tol && rep.min_choi_eig >= -tol;
  return rep;
}

KrausChannel dilation_channel(const Mat& U_SE, const Mat& rho_E, int dim_s) {
  const int de = static_cast<int>(rho_E.rows());
  if (U_SE.rows() != dim_s * de || U_SE.cols() != dim_s * de)
    throw dimension_error("dilation_channel: U size is not dim_s * dim_e");
  const double umargin =
      (U_SE.adjoint() * U_SE - Mat::Identity(U_SE.rows(), U_SE.cols())).norm();
  if (umargin > 1e-10)
    throw validation_error("dilation_channel: U is not unitary");
  if (!is_hermitian(rho_E))
    throw validation_error("dilation_channel: rho_E is not Hermitian");
  EigenSystem env = deterministic_eig(rho_E);
  std::vector<Mat> ops;
  for (int b = 0; b < de; ++b) {
    const double eb = env.values[b];
    if (eb < 1e-14) continue;
    const double sb = std::sqrt(eb);
    // U |., v_b>_E resolved on the E output index a
    for (int a = 0; a < de; ++a) {
      Mat M = Mat::Zero(dim_s, dim_s);
      for (int s1 = 0; s1 < dim_s; ++s1)
        for (int s2 = 0; s2 < dim_s; ++s2) {
          cxd acc(0, 0);
          for (int e2 = 0; e2 < de; ++e2)
            acc += U_SE(s1 * de + a, s2 * de + e2) * env.vectors(e2, b);
          M(s1, s2) = sb * acc;
        }
      ops.push_back(std::move(M));
    }
  }
  return KrausChannel{std::move(ops), dim_s, dim_s};
}

namespace {

KrausChannel petz_impl(const KrausChannel& ch, const Mat& gamma,
                       double rank_tol, bool support_mode) {
  if (gamma.rows() != ch.dim_in)
    throw dimension_error("petz_recovery: gamma dimension mismatch");
  Mat ngamma = qift::apply(ch, gamma);
  Mat gh = support_mode ? psd_power_support(gamma, 0.5, rank_tol)
                        : psd_power(gamma, 0.5, rank_tol);
  Mat nmh = support_mode ? psd_power_support(ngamma, -0.5, rank_tol)
                         : psd_power(ngamma, -0.5, rank_tol);
  std::vector<Mat> ops;
  ops.reserve(ch.ops.size());
  for (const Mat& M : ch.ops) ops.push_back(gh * M.adjoint() * nmh);
  return KrausChannel{std::move(ops), ch.dim_out, ch.dim_in};
}

}  // namespace

KrausChannel petz_recovery(const KrausChannel& ch, const Mat& gamma,
                           double rank_tol) {
  return petz_impl(ch, gamma, rank_tol, false);
}

KrausChannel petz_recovery_support(const KrausChannel& ch, const Mat& gamma,
                                   double rank_tol) {
  return petz_impl(ch, gamma, rank_tol, true);
}

Mat rescale(const RescalingMap& m, const Mat& X, double rank_tol) {
  Mat Oa = psd_power(m.base, m.alpha, rank_tol);
  return Oa * X * Oa.adjoint();
}

KrausChannel unitary_channel(const Mat& U) {
  return make_channel({U});
}

KrausChannel identity_channel(int dim) {
  return make_channel({Mat::Identity(dim, dim)});
}

KrausChannel depolarizing_channel(int dim, double p) {
  if (p < 0 || p > 1) throw validation_error("depolarizing: p outside [0,1]");
  std::vector<Mat> ops;
  ops.push_back(std::sqrt(1.0 - p) * Mat::Identity(dim, dim));
  // p * I/dim via the complete matrix-unit decomposition
  const double w = std::sqrt(p / dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      Mat E = Mat::Zero(dim, dim);
      E(i, j) = w;
      ops.push_back(std::move(E));
    }
  return KrausChannel{std::move(ops), dim, dim};
}

KrausChannel amplitude_damping(double p) {
  if (p < 0 || p > 1) throw validation_error("amplitude_damping: p outside [0,1]");
  Mat K0 = Mat::Zero(2, 2), K1 = Mat::Zero(2, 2);
  K0(0, 0) = 1.0;
  K0(1, 1) = std::sqrt(1.0 - p);
  K1(0, 1) = std::sqrt(p);
  return KrausChannel{{K0, K1}, 2, 2};
}

KrausChannel dephasing_channel(double p) {
  if (p < 0 || p > 1) throw validation_error("dephasing: p outside [0,1]");
  Mat K0 = std::sqrt(1.0 - p) * Mat::Identity(2, 2);
  Mat K1 = Mat::Zero(2, 2);
  K1(0, 0) = std::sqrt(p);
  K1(1, 1) = -std::sqrt(p);
  return KrausChannel{{K0, K1}, 2, 2};
}

}  // namespace qift
