#pragma once

#include "qift/channel.hpp"
#include "qift/operator_space.hpp"
#include "qift/types.hpp"

#include <utility>
#include <vector>

namespace qift {

// Reference-rescaled operator norms in the deterministic eigenbases of
// gamma and N(gamma): z_in[i][j] = (g_i g_j)^{-1/2}, z_out[k][l] =
// (l_k l_l)^{1/2}. Strictly positive; rank deficiency is rejected upstream.
struct ZFactors {
  RMat z_in;
  RMat z_out;
};

struct TpmBases {
  EigenSystem gamma;    // {|i>}, indices i,j
  EigenSystem ngamma;   // {|k'>}, indices k',l'
  EigenSystem rho;      // p_u, psi_u
  EigenSystem rho_out;  // p'_v', phi_v'
};

// One term of the TPM quasiprobability. sigma carries the forward sign
// convention in both directions; backward weights live at -sigma.
struct TPMRecord {
  int u, v;
  int i, j;   // input matrix unit, gamma eigenbasis
  int k, l;   // output matrix unit, N(gamma) eigenbasis
  cxd quasiprob;
  double sigma;
};

struct TpmForwardResult {
  std::vector<TPMRecord> records;
  TpmBases bases;
  ZFactors z;
};

ZFactors z_factors(const Mat& gamma, const KrausChannel& ch,
                   double rank_tol = kRankTol);

// Forward TPM quasiprobability: p_u (Pi_phi'|Pi_k'l') T_(ij->k'l')
// (Pi_ij|Pi_psi) with sigma = ln p_u - ln p'_v' + ln(Z_ij Z'_k'l').
// Eigenvalues p_u = 0 yield no records; p'_v' = 0 yields sigma = +inf
// records whose net bin weight vanishes.
TpmForwardResult tpm_forward(const Mat& rho, const KrausChannel& ch,
                             const Mat& gamma, double rank_tol = kRankTol);

// Backward route, computed independently through the Petz channel. The
// reference-rescaled units coincide with plain matrix units in these bases,
// so no Z factors enter the weights; sigma is bookkept with the forward
// convention for binning.
std::vector<TPMRecord> tpm_backward(const Mat& rho_prime,
                                    const KrausChannel& petz,
                                    const ZFactors& z, const TpmBases& bases);

struct SigmaDistribution {
  std::vector<std::pair<double, double>> bins;  // (sigma, weight), ascending
  double grouping_tol = kGroupingTol;
  double inf_weight = 0.0;  // net weight of sigma = +inf records
  double imag_residual_max = 0.0;
};

std::vector<std::pair<double, cxd>> sigma_weight_pairs(
    const std::vector<TPMRecord>& records);

// Groups sigma values within grouping_tol (absolute) and collapses each
// bin to its real part. A bin imaginary residue above 1e-10 is a bug in
// the caller's records and throws.
SigmaDistribution sigma_distribution(
    const std::vector<std::pair<double, cxd>>& records,
    double grouping_tol = kGroupingTol);
SigmaDistribution sigma_distribution(const std::vector<TPMRecord>& records,
                                     double grouping_tol = kGroupingTol);

struct FTReport {
  double integral_ft = 0.0;   // <e^{-sigma}> over raw records
  double mean_sigma = 0.0;
  double relent_formula_value = 0.0;
  double detailed_ft_max_violation = 0.0;
  double imag_residual_max = 0.0;
  // Largest forward bin weight without a -sigma partner; reported, not fatal.
  double missing_partner_weight = 0.0;
};

// Detailed check reads the backward bin stored at the same forward-sigma
// center, which holds P_<-(-sigma). Bins at or below 1e-12 forward weight
// are skipped. relent_value is the caller's S(rho||gamma)-S(N rho||N gamma).
FTReport verify_ft(const SigmaDistribution& fwd, const SigmaDistribution& bwd,
                   const std::vector<std::pair<double, cxd>>& raw_records,
                   double relent_value);

struct BridgeState {
  Mat op;
  double trace = 0.0;  // reported; not asserted to be 1
};

// exp(ln rho'_S (x) I + ln gamma'_SE - ln gamma'_S (x) I), support logs.
BridgeState bridge_state(const Mat& rho_prime_S, const Mat& gamma_prime_SE,
                         const Mat& gamma_prime_S, double rank_tol = kRankTol);

// Literal evaluation of the alpha-Renyi recovery composition with
// beta = (1-alpha)/(2alpha). alpha > 0, alpha != 1.
Mat renyi_bridge(double alpha, const Mat& rho_prime_S,
                 const Mat& gamma_prime_SE, const Mat& gamma_prime_S,
                 double rank_tol = kRankTol);

struct ThermoObservable {
  Mat initial;   // O_i(0)
  Mat final_;    // O_i(t)
  double beta_i;
};

struct ThermoResult {
  double beta_work = 0.0;       // sum_i beta_i (Tr O_i(t) rho' - Tr O_i(0) rho)
  double delta_S = 0.0;         // S(rho') - S(rho)
  double beta_delta_F = 0.0;    // beta (F(t) - F(0))
  double slack = 0.0;           // beta dF - beta<w> + dS
  double consistency_initial = 0.0;  // |Tr exp(-sum beta_i O_i + beta F) - 1|
  double consistency_final = 0.0;
};

// Gibbs-form references ln gamma = -sum_i beta_i O_i + beta F are required
// at both endpoints; the consistency margins must stay below 1e-8.
ThermoResult thermo_decomposition(const Mat& rho, const Mat& rho_prime,
                                  const std::vector<ThermoObservable>& obs,
                                  double F_initial, double F_final,
                                  double beta);

struct HolevoResult {
  double mean_sigma_total = 0.0;
  std::vector<double> mean_sigma_components;
  double delta_chi = 0.0;  // chi_F - chi_I; the sign that closes the identity
};

// <sigma> for the average state decomposes as sum_a p_a <sigma_a> + delta_chi.
HolevoResult holevo_decomposition(
    const std::vector<std::pair<double, Mat>>& ensemble,
    const KrausChannel& ch, const Mat& gamma, double rank_tol = kRankTol);

}  // namespace qift
