#include "qift/ft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qift {

namespace {

constexpr double kZeroEig = 1e-15;    // density eigenvalues below this are 0
constexpr double kFactorDrop = 1e-16; // negligible record factors

void require_full_rank(const EigenSystem& es, const char* what,
                       double rank_tol) {
  const double lmax = std::max(es.values[0], 0.0);
  if (es.values[es.dim() - 1] <= rank_tol * std::max(lmax, 1e-300))
    throw support_error(std::string(what) + " is rank deficient");
}

ZFactors z_from_eigs(const EigenSystem& g, const EigenSystem& ng) {
  ZFactors z;
  z.z_in.resize(g.dim(), g.dim());
  for (int i = 0; i < g.dim(); ++i)
    for (int j = 0; j < g.dim(); ++j)
      z.z_in(i, j) = 1.0 / std::sqrt(g.values[i] * g.values[j]);
  z.z_out.resize(ng.dim(), ng.dim());
  for (int k = 0; k < ng.dim(); ++k)
    for (int l = 0; l < ng.dim(); ++l)
      z.z_out(k, l) = std::sqrt(ng.values[k] * ng.values[l]);
  return z;
}

}  // namespace

ZFactors z_factors(const Mat& gamma, const KrausChannel& ch, double rank_tol) {
  EigenSystem g = deterministic_eig(gamma);
  EigenSystem ng = deterministic_eig(qift::apply(ch, gamma));
  require_full_rank(g, "gamma", rank_tol);
  require_full_rank(ng, "N(gamma)", rank_tol);
  return z_from_eigs(g, ng);
}

TpmForwardResult tpm_forward(const Mat& rho, const KrausChannel& ch,
                             const Mat& gamma, double rank_tol) {
  const int din = ch.dim_in, dout = ch.dim_out;
  if (rho.rows() != din || gamma.rows() != din)
    throw dimension_error("tpm_forward: dimension mismatch");
  TpmForwardResult res;
  res.bases.gamma = deterministic_eig(gamma);
  res.bases.ngamma = deterministic_eig(qift::apply(ch, gamma));
  res.bases.rho = deterministic_eig(rho);
  res.bases.rho_out = deterministic_eig(qift::apply(ch, rho));
  require_full_rank(res.bases.gamma, "gamma", rank_tol);
  require_full_rank(res.bases.ngamma, "N(gamma)", rank_tol);
  res.z = z_from_eigs(res.bases.gamma, res.bases.ngamma);

  const Mat& gv = res.bases.gamma.vectors;
  const Mat& lv = res.bases.ngamma.vectors;
  const Mat& psis = res.bases.rho.vectors;
  const Mat& phis = res.bases.rho_out.vectors;
  const RVec& p = res.bases.rho.values;
  const RVec& pp = res.bases.rho_out.values;

  // psi_c(i,u) = <i|psi_u> in the gamma eigenbasis; phi_c on the output side
  Mat psi_c = gv.adjoint() * psis;
  Mat phi_c = lv.adjoint() * phis;

  for (int i = 0; i < din; ++i) {
    for (int j = 0; j < din; ++j) {
      Mat NP = lv.adjoint() * qift::apply(ch, matrix_unit(gv, i, j)) * lv;
      for (int u = 0; u < din; ++u) {
        if (p[u] < kZeroEig) continue;  // no records for null eigenvalues
        const cxd ov_in = psi_c(i, u) * std::conj(psi_c(j, u));
        if (std::abs(ov_in) < kFactorDrop) continue;
        for (int k = 0; k < dout; ++k)
          for (int l = 0; l < dout; ++l) {
            const cxd t = NP(k, l);
            if (std::abs(t) < kFactorDrop) continue;
            for (int v = 0; v < dout; ++v) {
              const cxd ov_out = std::conj(phi_c(k, v)) * phi_c(l, v);
              if (std::abs(ov_out) < kFactorDrop) continue;
              TPMRecord rec;
              rec.u = u; rec.v = v; rec.i = i; rec.j = j; rec.k = k; rec.l = l;
              rec.quasiprob = p[u] * ov_out * t * ov_in;
              rec.sigma = pp[v] < kZeroEig
                              ? std::numeric_limits<double>::infinity()
                              : std::log(p[u]) - std::log(pp[v]) +
                                    std::log(res.z.z_in(i, j) *
                                             res.z.z_out(k, l));
              res.records.push_back(rec);
            }
          }
      }
    }
  }
  return res;
}

std::vector<TPMRecord> tpm_backward(const Mat& rho_prime,
                                    const KrausChannel& petz,
                                    const ZFactors& z, const TpmBases& bases) {
  const int din = bases.gamma.dim();
  const int dout = bases.ngamma.dim();
  if (rho_prime.rows() != dout)
    throw dimension_error("tpm_backward: dimension mismatch");
  const Mat& gv = bases.gamma.vectors;
  const Mat& lv = bases.ngamma.vectors;

  // The recovered state labels reuse the forward output decomposition so
  // records key identically in both directions.
  EigenSystem out = deterministic_eig(rho_prime);
  Mat phi_c = lv.adjoint() * out.vectors;
  Mat psi_c = gv.adjoint() * bases.rho.vectors;

  std::vector<TPMRecord> recs;
  for (int k = 0; k < dout; ++k) {
    for (int l = 0; l < dout; ++l) {
      Mat RP = gv.adjoint() * qift::apply(petz, matrix_unit(lv, k, l)) * gv;
      for (int v = 0; v < dout; ++v) {
        if (out.values[v] < kZeroEig) continue;
        const cxd ov_out = phi_c(k, v) * std::conj(phi_c(l, v));
        if (std::abs(ov_out) < kFactorDrop) continue;
        for (int i = 0; i < din; ++i)
          for (int j = 0; j < din; ++j) {
            const cxd t = RP(i, j);
            if (std::abs(t) < kFactorDrop) continue;
            for (int u = 0; u < din; ++u) {
              const cxd ov_in = std::conj(psi_c(i, u)) * psi_c(j, u);
              if (std::abs(ov_in) < kFactorDrop) continue;
              TPMRecord rec;
              rec.u = u; rec.v = v; rec.i = i; rec.j = j; rec.k = k; rec.l = l;
              rec.quasiprob = out.values[v] * ov_in * t * ov_out;
              const double pu = bases.rho.values[u];
              rec.sigma = pu < kZeroEig
                              ? -std::numeric_limits<double>::infinity()
                              : std::log(pu) - std::log(out.values[v]) +
                                    std::log(z.z_in(i, j) * z.z_out(k, l));
              recs.push_back(rec);
            }
          }
      }
    }
  }
  return recs;
}

std::vector<std::pair<double, cxd>> sigma_weight_pairs(
    const std::vector<TPMRecord>& records) {
  std::vector<std::pair<double, cxd>> out;
  out.reserve(records.size());
  for (const TPMRecord& r : records) out.push_back({r.sigma, r.quasiprob});
  return out;
}

SigmaDistribution sigma_distribution(
    const std::vector<std::pair<double, cxd>>& records, double grouping_tol) {
  SigmaDistribution dist;
  dist.grouping_tol = grouping_tol;
  std::vector<std::pair<double, cxd>> finite;
  cxd inf_w(0, 0), ninf_w(0, 0);
  for (const auto& [s, w] : records) {
    if (std::isinf(s)) {
      (s > 0 ? inf_w : ninf_w) += w;
    } else {
      finite.push_back({s, w});
    }
  }
  std::sort(finite.begin(), finite.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double center = 0.0;
  cxd acc(0, 0);
  bool open = false;
  auto flush = [&] {
    if (!open) return;
    if (std::abs(acc.imag()) > kBinImagTol)
      throw validation_error("sigma bin carries imaginary weight");
    dist.imag_residual_max = std::max(dist.imag_residual_max,
                                      std::abs(acc.imag()));
    dist.bins.push_back({center, acc.real()});
  };
  for (const auto& [s, w] : finite) {
    if (!open || s - center > grouping_tol) {
      flush();
      center = s;
      acc = w;
      open = true;
    } else {
      acc += w;
    }
  }
  flush();
  if (std::abs(inf_w.imag()) > kBinImagTol ||
      std::abs(ninf_w.imag()) > kBinImagTol)
    throw validation_error("infinite sigma bin carries imaginary weight");
  dist.inf_weight = inf_w.real();
  // Negative-infinity mass only appears in backward bookkeeping (time
  // reversal into the kernel of rho); folded into inf_weight's counterpart.
  if (ninf_w != cxd(0, 0))
    dist.bins.insert(dist.bins.begin(),
                     {-std::numeric_limits<double>::infinity(),
                      ninf_w.real()});
  return dist;
}

SigmaDistribution sigma_distribution(const std::vector<TPMRecord>& records,
                                     double grouping_tol) {
  return sigma_distribution(sigma_weight_pairs(records), grouping_tol);
}

FTReport verify_ft(const SigmaDistribution& fwd, const SigmaDistribution& bwd,
                   const std::vector<std::pair<double, cxd>>& raw_records,
                   double relent_value) {
  FTReport rep;
  rep.relent_formula_value = relent_value;

  cxd integral(0, 0);
  for (const auto& [s, w] : raw_records) {
    if (std::isinf(s) && s > 0) continue;  // e^{-inf} = 0
    integral += w * std::exp(-s);
  }
  rep.integral_ft = integral.real();
  rep.imag_residual_max = std::max(
      {fwd.imag_residual_max, bwd.imag_residual_max,
       std::abs(integral.imag())});

  const double match_tol = std::max(fwd.grouping_tol, bwd.grouping_tol);
  for (const auto& [s, w] : fwd.bins) {
    if (!std::isfinite(s)) continue;
    if (std::abs(w) <= 1e-12) continue;
    rep.mean_sigma += w * s;
    // the backward bin stored at the forward center holds P_<-(-sigma)
    bool found = false;
    for (const auto& [sb, wb] : bwd.bins) {
      if (std::isfinite(sb) && std::abs(sb - s) <= match_tol) {
        rep.detailed_ft_max_violation =
            std::max(rep.detailed_ft_max_violation,
                     std::abs(w - std::exp(s) * wb));
        found = true;
        break;
      }
    }
    if (!found)
      rep.missing_partner_weight =
          std::max(rep.missing_partner_weight, std::abs(w));
  }
  return rep;
}

BridgeState bridge_state(const Mat& rho_prime_S, const Mat& gamma_prime_SE,
                         const Mat& gamma_prime_S, double rank_tol) {
  const int ds = static_cast<int>(rho_prime_S.rows());
  const int dse = static_cast<int>(gamma_prime_SE.rows());
  if (dse % ds != 0 || gamma_prime_S.rows() != ds)
    throw dimension_error("bridge_state: dimension mismatch");
  const int de = dse / ds;
  EigenSystem gse = deterministic_eig(gamma_prime_SE);
  EigenSystem gs = deterministic_eig(gamma_prime_S);
  require_full_rank(gse, "gamma'_SE", rank_tol);
  require_full_rank(gs, "gamma'_S", rank_tol);

  LogSupport lr = matrix_log_support(rho_prime_S, rank_tol);
  Mat IE = Mat::Identity(de, de);
  Mat L = tensor(lr.log, IE) +
          matrix_log_support(gamma_prime_SE, rank_tol).log -
          tensor(matrix_log_support(gamma_prime_S, rank_tol).log, IE);
  Mat expo = matrix_exp_herm(L);
  if (lr.rank < ds) {
    Mat P = tensor(lr.support, IE);
    expo = P * expo * P;
  }
  BridgeState out;
  out.op = expo;
  out.trace = expo.trace().real();
  return out;
}

Mat renyi_bridge(double alpha, const Mat& rho_prime_S,
                 const Mat& gamma_prime_SE, const Mat& gamma_prime_S,
                 double rank_tol) {
  if (alpha <= 0 || alpha == 1.0)
    throw validation_error("renyi_bridge: alpha must be positive and != 1");
  const int ds = static_cast<int>(rho_prime_S.rows());
  const int de = static_cast<int>(gamma_prime_SE.rows()) / ds;
  const double beta = (1.0 - alpha) / (2.0 * alpha);
  Mat gb = psd_power(gamma_prime_SE, -beta, rank_tol);
  Mat gSb = psd_power(gamma_prime_S, beta, rank_tol);
  Mat inner =
      gSb * psd_power(gSb * rho_prime_S * gSb, alpha - 1.0, rank_tol) * gSb;
  Mat mid = gb * tensor(inner, Mat::Identity(de, de)) * gb;
  return gb * psd_power(mid, 1.0 / (alpha - 1.0), rank_tol) * gb;
}

ThermoResult thermo_decomposition(const Mat& rho, const Mat& rho_prime,
                                  const std::vector<ThermoObservable>& obs,
                                  double F_initial, double F_final,
                                  double beta) {
  const int d = static_cast<int>(rho.rows());
  ThermoResult res;
  Mat exp0 = Mat::Zero(d, d), expt = Mat::Zero(d, d);
  for (const ThermoObservable& o : obs) {
    if (!is_hermitian(o.initial) || !is_hermitian(o.final_))
      throw validation_error("thermo: observables must be Hermitian");
    exp0 -= o.beta_i * o.initial;
    expt -= o.beta_i * o.final_;
    res.beta_work += o.beta_i * ((o.final_ * rho_prime).trace().real() -
                                 (o.initial * rho).trace().real());
  }
  exp0 += beta * F_initial * Mat::Identity(d, d);
  expt += beta * F_final * Mat::Identity(d, d);
  res.consistency_initial =
      std::abs(matrix_exp_herm(exp0).trace().real() - 1.0);
  res.consistency_final =
      std::abs(matrix_exp_herm(expt).trace().real() - 1.0);
  if (res.consistency_initial > 1e-8 || res.consistency_final > 1e-8)
    throw validation_error("thermo: references are not of Gibbs form");
  res.delta_S = von_neumann_entropy(rho_prime) - von_neumann_entropy(rho);
  res.beta_delta_F = beta * (F_final - F_initial);
  res.slack = res.beta_delta_F - res.beta_work + res.delta_S;
  return res;
}

HolevoResult holevo_decomposition(
    const std::vector<std::pair<double, Mat>>& ensemble,
    const KrausChannel& ch, const Mat& gamma, double rank_tol) {
  if (ensemble.empty()) throw validation_error("holevo: empty ensemble");
  double psum = 0.0;
  for (const auto& [pa, ra] : ensemble) psum += pa;
  if (std::abs(psum - 1.0) > 1e-10)
    throw validation_error("holevo: ensemble weights must sum to 1");

  Mat ngamma = qift::apply(ch, gamma);
  Mat rbar = Mat::Zero(gamma.rows(), gamma.cols());
  for (const auto& [pa, ra] : ensemble) rbar += pa * ra;
  Mat rbar_out = qift::apply(ch, rbar);

  HolevoResult res;
  double chi_I = von_neumann_entropy(rbar, rank_tol);
  double chi_F = von_neumann_entropy(rbar_out, rank_tol);
  for (const auto& [pa, ra] : ensemble) {
    Mat ra_out = qift::apply(ch, ra);
    res.mean_sigma_components.push_back(
        relative_entropy(ra, gamma, rank_tol) -
        relative_entropy(ra_out, ngamma, rank_tol));
    chi_I -= pa * von_neumann_entropy(ra, rank_tol);
    chi_F -= pa * von_neumann_entropy(ra_out, rank_tol);
  }
  res.mean_sigma_total = relative_entropy(rbar, gamma, rank_tol) -
                         relative_entropy(rbar_out, ngamma, rank_tol);
  res.delta_chi = chi_F - chi_I;
  return res;
}

}  // namespace qift
