#pragma once

#include "qift/operator_space.hpp"
#include "qift/types.hpp"

#include <vector>

namespace qift {

// CPTP map in Kraus form, ops are dim_out x dim_in. The struct itself does
// not enforce trace preservation; is_cptp reports the margins.
struct KrausChannel {
  std::vector<Mat> ops;
  int dim_in = 0;
  int dim_out = 0;
};

KrausChannel make_channel(std::vector<Mat> ops);

Mat apply(const KrausChannel& ch, const Mat& rho);

// {M_i^dag}; unital iff ch is trace preserving, not CPTP in general.
KrausChannel adjoint(const KrausChannel& ch);

// Column-stacking vectorization: vec(Pi_kl) sits at index l*d + k, so the
// superoperator is sum_m conj(M_m) (x) M_m and the entry at
// (row (k',l'), col (i,j)) equals hs_inner(Pi_k'l', N(Pi_ij)).
Mat kraus_to_super(const KrausChannel& ch);

// Trace-1 Choi on A (x) S built from the unit-trace maximally entangled
// state: C[(i,k),(j,l)] = N(Pi_ij)[k,l] / dim_in.
Mat kraus_to_choi(const KrausChannel& ch);
Mat super_to_choi(const Mat& sup, int dim_in, int dim_out);
KrausChannel choi_to_kraus(const Mat& choi, int dim_in, int dim_out,
                           double cutoff = 1e-12);

// (1/N) sum_ij Pi_ij (x) Pi_ij, the trace-1 maximally entangled state.
Mat max_entangled_state(int dim);

struct CptpReport {
  double tp_margin = 0.0;      // ||sum M^dag M - I||
  double min_choi_eig = 0.0;   // complete positivity margin
  bool ok = false;
};

CptpReport is_cptp(const KrausChannel& ch, double tol = 1e-10);

// Tr_E U (rho (x) rho_E) U^dag with ordering S (x) E. Kraus operators are
// sqrt(e_b) <a|U|v_b> over the eigenpairs of rho_E; zero eigenvalues of
// rho_E contribute nothing and are skipped.
KrausChannel dilation_channel(const Mat& U_SE, const Mat& rho_E, int dim_s);

// Petz recovery {gamma^{1/2} M_i^dag N(gamma)^{-1/2}}; CPTP by construction
// and recovers gamma from N(gamma). Requires gamma and N(gamma) full rank.
KrausChannel petz_recovery(const KrausChannel& ch, const Mat& gamma,
                           double rank_tol = kRankTol);

// Same construction with pseudo-inverse square roots, for references that
// are singular by design. All identities then live on the support slice.
KrausChannel petz_recovery_support(const KrausChannel& ch, const Mat& gamma,
                                   double rank_tol = kRankTol);

struct RescalingMap {
  Mat base;        // Hermitian PSD
  double alpha;
};

// O^alpha X (O^alpha)^dag.
Mat rescale(const RescalingMap& m, const Mat& X,
            double rank_tol = kRankTol);

KrausChannel unitary_channel(const Mat& U);
KrausChannel identity_channel(int dim);

// rho -> (1-p) rho + p I/dim.
KrausChannel depolarizing_channel(int dim, double p);

// Qubit amplitude damping with decay probability p.
KrausChannel amplitude_damping(double p);

KrausChannel dephasing_channel(double p);

}  // namespace qift
