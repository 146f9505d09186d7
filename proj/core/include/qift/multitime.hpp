#pragma once

#include "qift/channel.hpp"
#include "qift/ft.hpp"
#include "qift/types.hpp"

#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace qift {

// n-step system-environment evolution; U^i acts on (S, E) at step i with a
// shared environment carried through.
struct MultitimeScenario {
  std::vector<Mat> unitaries;
  Mat env_initial;
  int dim_s = 0;
  int dim_e = 0;
  int n_steps() const { return static_cast<int>(unitaries.size()); }
};

// Validates dimensions and unitarity (margin 1e-10).
MultitimeScenario make_scenario(std::vector<Mat> unitaries, Mat env_initial,
                                int dim_s, int dim_e);

// Trace-1 PSD Choi over interleaved legs (A1,S1,...,An,Sn).
struct ProcessTensor {
  Mat choi;
  std::vector<int> leg_dims;
  int n_steps = 0;
};

// Embeds U acting on legs (leg_a, leg_b) of a multi-leg space, identity on
// the rest. U rows are indexed a * dims[leg_b] + b.
Mat embed_two_legs(const Mat& U, const std::vector<int>& dims, int leg_a,
                   int leg_b);

// Embeds U acting on (S_step, E) into (S_1..S_n, E) with the other system
// legs as spectators. Index order: ((s_1 d + s_2) d + ...) d_e + e.
Mat embed_step_unitary(const Mat& U_SE, int dim_s, int dim_e, int n, int step);

// Embeds U acting on (S, E) into (S, S', E); used once an ancilla leg has
// been spliced between the system and the environment.
Mat op_on_s_sp_e(const Mat& U_SE, int dim_s, int dim_sp, int dim_e);

// Literal route: evolve (x)_i Phi^{AiSi} (x) rho_E step by step, trace E.
ProcessTensor build_process_tensor(const MultitimeScenario& sc);

// Kraus form of Tr_E U^n ... U^1 ((.) (x) rho_E) on S1 (x) ... (x) Sn. Its
// Choi reproduces build_process_tensor; the two routes stay independent.
KrausChannel manybody_channel(const MultitimeScenario& sc);

// Permute the square legs of M (given as dims on each side) by perm, where
// perm[new_position] = old_leg.
Mat permute_legs(const Mat& M, const std::vector<int>& dims,
                 const std::vector<int>& perm);

// Max deviation over prefixes k between (a) the tensor contracted with
// preparations on A1..Ak and traced over everything later and (b) the
// k-step prefix channel of sc applied to those preparations. Causality
// makes this vanish for tensors built from a scenario.
double check_time_ordering(const ProcessTensor& T,
                           const std::vector<Mat>& preparations,
                           const MultitimeScenario& sc);

// Contract each (S^i, A^{i+1}) pair of legs; returns the trace-1 Choi of
// the sequentially linked single-leg channel.
Mat link_identity(const ProcessTensor& T);

// Tr_E U^n (A_{n-1} (x) I_E) U^{n-1} ... (A_1 (x) I_E) U^1 ((.) (x) rho_E).
// Inserts act on the accumulated system legs and may grow them (dim_out a
// multiple of dim_in); an empty insert list means plain linking.
KrausChannel derived_channel(const MultitimeScenario& sc,
                             const std::vector<KrausChannel>& inserted_ops);

// Product of single-step leg-pair marginals; the canonical Markov point.
ProcessTensor markov_approximation(const ProcessTensor& T);

// S(T || markov_approximation(T)); an upper bound on the minimum over all
// Markov tensors. +inf on support violation.
double d_nm(const ProcessTensor& T);

FTReport manybody_ft(const MultitimeScenario& sc, const Mat& product_rho_I,
                     const Mat& product_gamma, double rank_tol = kRankTol);

// Fields a given operation does not compute stay NaN.
struct NonMarkovReport {
  double sigma_nm = std::numeric_limits<double>::quiet_NaN();
  double d_nm_value = std::numeric_limits<double>::quiet_NaN();
  double marginality_violation = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> decomposition_terms;
};

struct LinkedFtResult {
  FTReport ft;
  NonMarkovReport nm;
};

// FT of the linked (shared-environment) channel, plus sigma_NM against the
// supplied Markov pair: S(rho_F||gamma_F) - S(N2 rho_M||N2 gamma_M). The
// three-term split of <sigma> is reported. sigma_NM of this variant can be
// negative for generic scenarios and is not asserted nonnegative here.
LinkedFtResult linked_ft_with_sigma_nm(
    const MultitimeScenario& sc, const Mat& rho_I, const Mat& gamma,
    const std::pair<KrausChannel, KrausChannel>& markov_pair,
    double rank_tol = kRankTol);

// Default comparison pair: the scenario's step maps with the environment
// reset to rho_E^0 between steps.
std::pair<KrausChannel, KrausChannel> default_markov_pair(
    const MultitimeScenario& sc);

struct ThreePointRecord {
  int u, mu, w;
  int i, j;    // first input unit, gamma eigenbasis
  int kp, lp;  // first output unit, N1(gamma) eigenbasis
  int k, l;    // second input unit, gamma' eigenbasis
  int mp, np;  // second output unit, N2(gamma') eigenbasis
  cxd quasiprob;
  double sigma1, sigma2;
};

struct ThreePointResult {
  std::vector<ThreePointRecord> forward;
  std::vector<ThreePointRecord> backward;  // weights at -(sigma1+sigma2)
  SigmaDistribution forward_dist;   // total sigma
  SigmaDistribution backward_dist;  // binned on the forward sigma values
  FTReport report;                 // total sigma FT
  double marginal_err_max = 0.0;   // worst of the eight forward identities
  double backward_marginal_err_max = 0.0;  // the three backward identities
  double mean_sigma = 0.0;
  double mtrs_value = 0.0;         // four-term relative-entropy formula
  double sigma2_mean = 0.0;        // real part of the raw second-leg mean
  double sigma2_relent_value = 0.0;
  // NaN when sigma2_imag_max exceeds kBinImagTol: the second-leg bins are
  // only real when the mid basis diagonalizes rho_M
  double sigma2_detailed_max = 0.0;
  double sigma2_imag_max = 0.0;
  double record_detail_max = 0.0;  // |P' - e^{-sigma} conj(P)| over records
};

// Three-point forward/backward quasiprobabilities for a Markov pair
// (N1, N2) with intermediate reference gamma_prime and a mid measurement
// basis (columns; empty selects the eigenbasis of rho_M = N1(rho_I)).
ThreePointResult three_point_ft_markov(const KrausChannel& N1,
                                       const KrausChannel& N2,
                                       const Mat& rho_I, const Mat& gamma,
                                       const Mat& gamma_prime,
                                       const Mat& mid_basis = Mat(),
                                       double rank_tol = kRankTol);

// Backward marginals of the joint (non-divisible) Petz construction,
// compared against the Markov backward targets <mu|R2 rho_F|mu> and
// <psi_u|R1 R2 rho_F|psi_u>. Markov scenarios return ~0; memory makes the
// construction ill-defined and the deviation strictly positive.
double marginality_failure_probe(const MultitimeScenario& sc,
                                 const Mat& rho_I, const Mat& gamma,
                                 const Mat& gamma_prime,
                                 const Mat& mid_basis = Mat(),
                                 double rank_tol = kRankTol);

// CNOT-style copy in meas_basis: A = sum_k Pi_k^meas (x) shift_k on S (x) S'.
Mat cnot_in_basis(const Mat& basis_vecs);

// N_SS' = Tr_E U^2 (A_SS' (x) I_E) U^1 ((.) (x) rho_E) restricted to inputs
// X (x) Pi_0 by the caller; built through derived_channel with the isometry
// slice of A as the inserted operation.
KrausChannel ancilla_measurement_channel(const MultitimeScenario& sc,
                                         const Mat& meas_basis);

struct AncillaFtResult {
  FTReport ft;
  NonMarkovReport nm;
  SigmaDistribution forward_dist;
  SigmaDistribution backward_dist;
  double marginal_err_max = 0.0;
  double mean_sigma = 0.0;
  double tpsig_value = 0.0;   // S(rho_I||gamma) - S(rho_F^SS'||gamma_F^SS')
  double record_detail_max = 0.0;
  double support_leak = 0.0;  // off-support image of the transition units
  int support_rank = 0;
};

// Ancilla-recorded two-step FT on the support slice of gamma_F^SS'. The
// reference gamma (x) Pi_0 is singular on S'; the recovery map uses
// pseudo-inverse square roots and all identities hold on the slice.
// sigma_NM here is asserted nonnegative (the decomposition's data
// processing step applies to this variant).
AncillaFtResult ancilla_ft(const MultitimeScenario& sc, const Mat& rho_I,
                           const Mat& gamma, const Mat& meas_basis,
                           const std::pair<KrausChannel, KrausChannel>&
                               markov_pair,
                           double rank_tol = kRankTol);

}  // namespace qift
