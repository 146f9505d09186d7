// Configuration-driven runner: builds a scenario, executes the selected
// FT suites against it, writes per-suite sigma CSV tables and a JSON report.
//
// Exit codes: 0 all assertions pass, 1 assertion failure, 2 config error.

#include <qift/channel.hpp>
#include <qift/ft.hpp>
#include <qift/multitime.hpp>
#include <qift/operator_space.hpp>
#include <qift/rng.hpp>
#include <qift/scenario.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

using nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace qift;

namespace {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr std::array<const char*, 8> kSuites = {
    "tpm",    "manybody", "threepoint",      "ancilla",
    "bridge", "holevo",   "nonmarkov-probe", "dnm"};

int suite_index(const std::string& name) {
  for (int i = 0; i < static_cast<int>(kSuites.size()); ++i)
    if (name == kSuites[i]) return i;
  return -1;
}

struct Assertion {
  std::string name;
  double margin = 0.0;
  double tol = 0.0;
  bool pass = false;
};

struct SuiteOutput {
  std::string name;
  ordered_json metrics = ordered_json::object();
  std::vector<Assertion> assertions;
  std::vector<std::array<double, 4>> table;
  bool has_table = false;
  bool skipped = false;
  std::string skip_reason;
  double wall_ms = 0.0;
};

struct RunContext {
  MultitimeScenario sc;
  std::string generator;  // "explicit" when matrices were supplied
  std::uint64_t seed = 0;
  bool has_seed = false;
  double rank_tol = kRankTol;
  double grouping_tol = kGroupingTol;
  double assert_tol = 1e-9;
  Mat rho, gamma, gamma_prime;  // optional explicit overrides
};

// per-suite streams: the scenario itself uses stream 0 of the seed, suite
// states draw from stream suite*8 + role so runs are order-independent
enum StateRole { kRoleRho = 1, kRoleGamma = 2, kRoleGammaPrime = 3,
                 kRoleEnsemble = 4 };

CounterRng state_rng(const RunContext& c, int suite, int role) {
  return CounterRng(c.seed,
                    static_cast<std::uint64_t>(suite) * 8 + role);
}

Mat suite_state(const RunContext& c, int suite, int role, int dim,
                const Mat& explicit_state, const char* what) {
  if (explicit_state.size() > 0) {
    if (explicit_state.rows() != dim)
      throw config_error(std::string(what) + ": expected dimension " +
                         std::to_string(dim));
    return explicit_state;
  }
  CounterRng rng = state_rng(c, suite, role);
  return random_density(dim, rng);
}

Mat suite_product_state(const RunContext& c, int suite, int role, int legs,
                        const Mat& explicit_state, const char* what) {
  const int d = c.sc.dim_s;
  int dim = 1;
  for (int k = 0; k < legs; ++k) dim *= d;
  if (explicit_state.size() > 0) {
    if (explicit_state.rows() != dim)
      throw config_error(std::string(what) + ": expected dimension " +
                         std::to_string(dim));
    return explicit_state;
  }
  CounterRng rng = state_rng(c, suite, role);
  Mat out = random_density(d, rng);
  for (int k = 1; k < legs; ++k) out = tensor(out, random_density(d, rng));
  return out;
}

double trace_distance(const Mat& A, const Mat& B) {
  EigenSystem es = deterministic_eig(Mat(A - B));
  return 0.5 * es.values.cwiseAbs().sum();
}

void push(std::vector<Assertion>& v, const std::string& name, double margin,
          double tol) {
  v.push_back({name, margin, tol, std::isfinite(margin) && margin <= tol});
}

void push_gt(std::vector<Assertion>& v, const std::string& name,
             double value, double floor_) {
  v.push_back({name, value, floor_, std::isfinite(value) && value > floor_});
}

SigmaDistribution rebin(const SigmaDistribution& d, double tol) {
  if (tol <= d.grouping_tol) return d;
  std::vector<std::pair<double, cxd>> pairs;
  pairs.reserve(d.bins.size());
  for (const auto& b : d.bins) pairs.push_back({b.first, cxd(b.second, 0.0)});
  SigmaDistribution out = sigma_distribution(pairs, tol);
  out.inf_weight += d.inf_weight;
  return out;
}

// union of the finite forward and backward bins, matched by sigma; the
// residual column is the detailed-FT defect |wf - e^sigma wb|
std::vector<std::array<double, 4>> sigma_table(const SigmaDistribution& f,
                                               const SigmaDistribution& b) {
  const double match = std::max(f.grouping_tol, b.grouping_tol);
  std::vector<std::array<double, 4>> rows;
  std::size_t i = 0, j = 0;
  auto fin = [](const std::vector<std::pair<double, double>>& bins,
                std::size_t& k) {
    while (k < bins.size() && !std::isfinite(bins[k].first)) ++k;
  };
  fin(f.bins, i);
  fin(b.bins, j);
  while (i < f.bins.size() || j < b.bins.size()) {
    const bool has_f = i < f.bins.size();
    const bool has_b = j < b.bins.size();
    double s, wf = 0.0, wb = 0.0;
    if (has_f && has_b && std::abs(f.bins[i].first - b.bins[j].first) <= match) {
      s = f.bins[i].first;
      wf = f.bins[i].second;
      wb = b.bins[j].second;
      ++i;
      ++j;
    } else if (has_f && (!has_b || f.bins[i].first < b.bins[j].first)) {
      s = f.bins[i].first;
      wf = f.bins[i].second;
      ++i;
    } else {
      s = b.bins[j].first;
      wb = b.bins[j].second;
      ++j;
    }
    rows.push_back({s, wf, wb, std::abs(wf - std::exp(s) * wb)});
    fin(f.bins, i);
    fin(b.bins, j);
  }
  return rows;
}

void add_ft_metrics(ordered_json& m, const FTReport& rep) {
  m["integral_ft"] = rep.integral_ft;
  m["mean_sigma"] = rep.mean_sigma;
  m["relent_formula_value"] = rep.relent_formula_value;
  m["detailed_ft_max_violation"] = rep.detailed_ft_max_violation;
  m["imag_residual_max"] = rep.imag_residual_max;
  m["missing_partner_weight"] = rep.missing_partner_weight;
}

void add_dist_metrics(ordered_json& m, const SigmaDistribution& f,
                      const SigmaDistribution& b) {
  m["forward_bins"] = f.bins.size();
  m["backward_bins"] = b.bins.size();
  m["forward_inf_weight"] = f.inf_weight;
  m["backward_inf_weight"] = b.inf_weight;
}

void common_ft_assertions(std::vector<Assertion>& as, const FTReport& rep,
                          double at) {
  push(as, "integral_ft_unit", std::abs(rep.integral_ft - 1.0), at);
  push(as, "detailed_ft", rep.detailed_ft_max_violation, at);
  push(as, "mean_matches_relent",
       std::abs(rep.mean_sigma - rep.relent_formula_value), at);
  push(as, "missing_partner_weight", rep.missing_partner_weight, at);
  as.push_back({"mean_nonnegative", rep.mean_sigma, at,
                std::isfinite(rep.mean_sigma) && rep.mean_sigma >= -at});
}

SuiteOutput run_single_step_ft(const RunContext& c, int idx,
                               const KrausChannel& ch, const Mat& rho,
                               const Mat& gamma) {
  SuiteOutput out;
  out.name = kSuites[idx];
  TpmForwardResult fwd = tpm_forward(rho, ch, gamma, c.rank_tol);
  KrausChannel pz = petz_recovery(ch, gamma, c.rank_tol);
  std::vector<TPMRecord> bwd =
      tpm_backward(qift::apply(ch, rho), pz, fwd.z, fwd.bases);
  SigmaDistribution fd = sigma_distribution(fwd.records, c.grouping_tol);
  SigmaDistribution bd = sigma_distribution(bwd, c.grouping_tol);
  const double relent =
      relative_entropy(rho, gamma, c.rank_tol) -
      relative_entropy(qift::apply(ch, rho), qift::apply(ch, gamma),
                       c.rank_tol);
  FTReport rep =
      verify_ft(fd, bd, sigma_weight_pairs(fwd.records), relent);
  add_ft_metrics(out.metrics, rep);
  add_dist_metrics(out.metrics, fd, bd);
  out.metrics["record_count_forward"] = fwd.records.size();
  common_ft_assertions(out.assertions, rep, c.assert_tol);
  out.table = sigma_table(fd, bd);
  out.has_table = true;
  return out;
}

SuiteOutput run_tpm(const RunContext& c) {
  const int d = c.sc.dim_s;
  KrausChannel ch =
      dilation_channel(c.sc.unitaries[0], c.sc.env_initial, d);
  Mat rho = suite_state(c, 0, kRoleRho, d, c.rho, "rho");
  Mat gamma = suite_state(c, 0, kRoleGamma, d, c.gamma, "gamma");
  return run_single_step_ft(c, 0, ch, rho, gamma);
}

SuiteOutput run_manybody(const RunContext& c) {
  const int n = c.sc.n_steps();
  KrausChannel ch = manybody_channel(c.sc);
  Mat rho = suite_product_state(c, 1, kRoleRho, n, c.rho, "rho");
  Mat gamma = suite_product_state(c, 1, kRoleGamma, n, c.gamma, "gamma");
  return run_single_step_ft(c, 1, ch, rho, gamma);
}

SuiteOutput run_threepoint(const RunContext& c) {
  SuiteOutput out;
  out.name = kSuites[2];
  const int d = c.sc.dim_s;
  auto mp = default_markov_pair(c.sc);
  Mat rho = suite_state(c, 2, kRoleRho, d, c.rho, "rho");
  Mat gamma = suite_state(c, 2, kRoleGamma, d, c.gamma, "gamma");
  Mat gp = suite_state(c, 2, kRoleGammaPrime, d, c.gamma_prime, "gamma_prime");
  ThreePointResult tr = three_point_ft_markov(mp.first, mp.second, rho,
                                              gamma, gp, Mat(), c.rank_tol);
  SigmaDistribution fd = rebin(tr.forward_dist, c.grouping_tol);
  SigmaDistribution bd = rebin(tr.backward_dist, c.grouping_tol);
  add_ft_metrics(out.metrics, tr.report);
  add_dist_metrics(out.metrics, fd, bd);
  out.metrics["marginal_err_max"] = tr.marginal_err_max;
  out.metrics["backward_marginal_err_max"] = tr.backward_marginal_err_max;
  out.metrics["mtrs_value"] = tr.mtrs_value;
  out.metrics["sigma2_mean"] = tr.sigma2_mean;
  out.metrics["sigma2_relent_value"] = tr.sigma2_relent_value;
  out.metrics["sigma2_detailed_max"] = tr.sigma2_detailed_max;
  out.metrics["record_detail_max"] = tr.record_detail_max;
  out.metrics["record_count_forward"] = tr.forward.size();
  auto& as = out.assertions;
  push(as, "forward_marginals", tr.marginal_err_max, c.assert_tol);
  push(as, "backward_marginals", tr.backward_marginal_err_max, c.assert_tol);
  push(as, "integral_ft_unit", std::abs(tr.report.integral_ft - 1.0),
       c.assert_tol);
  push(as, "detailed_ft", tr.report.detailed_ft_max_violation, c.assert_tol);
  push(as, "mean_matches_mtrs", std::abs(tr.mean_sigma - tr.mtrs_value),
       c.assert_tol);
  push(as, "sigma2_detailed_ft", tr.sigma2_detailed_max, c.assert_tol);
  push(as, "sigma2_mean_matches",
       std::abs(tr.sigma2_mean - tr.sigma2_relent_value), c.assert_tol);
  push(as, "record_reversal", tr.record_detail_max, c.assert_tol);
  out.table = sigma_table(fd, bd);
  out.has_table = true;
  return out;
}

SuiteOutput run_ancilla(const RunContext& c) {
  SuiteOutput out;
  out.name = kSuites[3];
  const int d = c.sc.dim_s;
  auto mp = default_markov_pair(c.sc);
  Mat rho = suite_state(c, 3, kRoleRho, d, c.rho, "rho");
  Mat gamma = suite_state(c, 3, kRoleGamma, d, c.gamma, "gamma");
  Mat meas = deterministic_eig(qift::apply(mp.first, rho)).vectors;
  AncillaFtResult ar = ancilla_ft(c.sc, rho, gamma, meas, mp, c.rank_tol);
  SigmaDistribution fd = rebin(ar.forward_dist, c.grouping_tol);
  SigmaDistribution bd = rebin(ar.backward_dist, c.grouping_tol);
  add_ft_metrics(out.metrics, ar.ft);
  add_dist_metrics(out.metrics, fd, bd);
  out.metrics["marginal_err_max"] = ar.marginal_err_max;
  out.metrics["tpsig_value"] = ar.tpsig_value;
  out.metrics["record_detail_max"] = ar.record_detail_max;
  out.metrics["support_leak"] = ar.support_leak;
  out.metrics["support_rank"] = ar.support_rank;
  out.metrics["sigma_nm"] = ar.nm.sigma_nm;
  ordered_json terms = ordered_json::object();
  for (const auto& t : ar.nm.decomposition_terms) terms[t.first] = t.second;
  out.metrics["decomposition_terms"] = terms;
  auto& as = out.assertions;
  push(as, "support_leak", ar.support_leak, c.assert_tol);
  push(as, "marginals", ar.marginal_err_max, c.assert_tol);
  push(as, "integral_ft_unit", std::abs(ar.ft.integral_ft - 1.0),
       c.assert_tol);
  push(as, "detailed_ft", ar.ft.detailed_ft_max_violation, c.assert_tol);
  push(as, "mean_matches_tpsig", std::abs(ar.mean_sigma - ar.tpsig_value),
       c.assert_tol);
  push(as, "record_reversal", ar.record_detail_max, c.assert_tol);
  as.push_back({"sigma_nm_nonnegative", ar.nm.sigma_nm, 1e-10,
                std::isfinite(ar.nm.sigma_nm) && ar.nm.sigma_nm >= -1e-10});
  if (c.generator == "swap")
    push_gt(as, "sigma_nm_positive_swap", ar.nm.sigma_nm, 1e-3);
  if (c.generator == "collision-ad")
    push(as, "sigma_nm_zero_markov", std::abs(ar.nm.sigma_nm),
         std::max(c.assert_tol, 1e-9));
  out.table = sigma_table(fd, bd);
  out.has_table = true;
  return out;
}

SuiteOutput run_bridge(const RunContext& c) {
  SuiteOutput out;
  out.name = kSuites[4];
  const int d = c.sc.dim_s, de = c.sc.dim_e;
  Mat rho = suite_state(c, 4, kRoleRho, d, c.rho, "rho");
  Mat gamma = suite_state(c, 4, kRoleGamma, d, c.gamma, "gamma");
  const Mat& U = c.sc.unitaries[0];
  Mat rSE = U * tensor(rho, c.sc.env_initial) * U.adjoint();
  Mat gSE = U * tensor(gamma, c.sc.env_initial) * U.adjoint();
  Mat rS = partial_trace(rSE, {d, de}, {1});
  Mat gS = partial_trace(gSE, {d, de}, {1});
  BridgeState bs = bridge_state(rS, gSE, gS, c.rank_tol);
  const double lhs = relative_entropy(rSE, bs.op, c.rank_tol);
  const double rhs = relative_entropy(rho, gamma, c.rank_tol) -
                     relative_entropy(rS, gS, c.rank_tol);
  Mat rp = renyi_bridge(1.0 + 1e-3, rS, gSE, gS, c.rank_tol);
  Mat rm = renyi_bridge(1.0 - 1e-3, rS, gSE, gS, c.rank_tol);
  const double dp = trace_distance(rp, bs.op);
  const double dm = trace_distance(rm, bs.op);
  out.metrics["bridge_trace"] = bs.trace;
  out.metrics["relent_to_bridge"] = lhs;
  out.metrics["mean_sigma"] = rhs;
  out.metrics["renyi_plus_trace_dist"] = dp;
  out.metrics["renyi_minus_trace_dist"] = dm;
  auto& as = out.assertions;
  push(as, "bridge_relent_identity", std::abs(lhs - rhs),
       std::max(c.assert_tol, 1e-8));
  push(as, "renyi_limit_plus", dp, 1e-3);
  push(as, "renyi_limit_minus", dm, 1e-3);
  return out;
}

SuiteOutput run_holevo(const RunContext& c) {
  SuiteOutput out;
  out.name = kSuites[5];
  const int d = c.sc.dim_s;
  KrausChannel ch =
      dilation_channel(c.sc.unitaries[0], c.sc.env_initial, d);
  Mat gamma = suite_state(c, 5, kRoleGamma, d, c.gamma, "gamma");
  CounterRng rng = state_rng(c, 5, kRoleEnsemble);
  RVec w = random_simplex(3, rng);
  std::vector<std::pair<double, Mat>> ens;
  for (int a = 0; a < 3; ++a) ens.push_back({w[a], random_density(d, rng)});
  HolevoResult hr = holevo_decomposition(ens, ch, gamma, c.rank_tol);
  double comp = hr.delta_chi;
  for (int a = 0; a < 3; ++a)
    comp += ens[a].first * hr.mean_sigma_components[a];
  out.metrics["mean_sigma_total"] = hr.mean_sigma_total;
  out.metrics["delta_chi"] = hr.delta_chi;
  out.metrics["mean_sigma_components"] = hr.mean_sigma_components;
  push(out.assertions, "holevo_identity",
       std::abs(hr.mean_sigma_total - comp), c.assert_tol);
  return out;
}

SuiteOutput run_probe(const RunContext& c) {
  SuiteOutput out;
  out.name = kSuites[6];
  const int d = c.sc.dim_s;
  Mat rho = suite_state(c, 6, kRoleRho, d, c.rho, "rho");
  Mat gamma = suite_state(c, 6, kRoleGamma, d, c.gamma, "gamma");
  Mat gp = suite_state(c, 6, kRoleGammaPrime, d, c.gamma_prime, "gamma_prime");
  const double viol =
      marginality_failure_probe(c.sc, rho, gamma, gp, Mat(), c.rank_tol);
  out.metrics["marginality_violation"] = viol;
  if (c.generator == "swap")
    push_gt(out.assertions, "probe_detects_memory", viol, 1e-3);
  else if (c.generator == "collision-ad")
    push(out.assertions, "probe_silent_on_markov", viol,
         std::max(c.assert_tol, 1e-9));
  else
    out.metrics["note"] = "violation reported; no assertion for this generator";
  return out;
}

SuiteOutput run_dnm(const RunContext& c) {
  SuiteOutput out;
  out.name = kSuites[7];
  const int d = c.sc.dim_s, n = c.sc.n_steps();
  ProcessTensor T = build_process_tensor(c.sc);
  // independent route: Choi of the many-body channel with grouped legs
  Mat c2 = kraus_to_choi(manybody_channel(c.sc));
  std::vector<int> dims(2 * n, d), perm(2 * n);
  for (int i = 0; i < n; ++i) {
    perm[2 * i] = i;
    perm[2 * i + 1] = n + i;
  }
  const double dual = (T.choi - permute_legs(c2, dims, perm)).norm();
  Mat W = Mat::Identity(d * c.sc.dim_e, d * c.sc.dim_e);
  for (int i = 0; i < n; ++i) W = c.sc.unitaries[i] * W;
  Mat linked = kraus_to_choi(dilation_channel(W, c.sc.env_initial, d));
  const double link = (link_identity(T) - linked).norm();
  CounterRng rng = state_rng(c, 7, kRoleRho);
  std::vector<Mat> preps;
  for (int i = 0; i < n; ++i) preps.push_back(random_density(d, rng));
  const double ordering = check_time_ordering(T, preps, c.sc);
  const double val = d_nm(T);
  out.metrics["d_nm"] = std::isfinite(val) ? ordered_json(val)
                                           : ordered_json("inf");
  out.metrics["dual_route_diff"] = dual;
  out.metrics["link_identity_diff"] = link;
  out.metrics["time_ordering_margin"] = ordering;
  auto& as = out.assertions;
  push(as, "dual_route_match", dual, c.assert_tol);
  push(as, "link_identity_match", link, c.assert_tol);
  push(as, "time_ordering", ordering, c.assert_tol);
  if (c.generator == "swap")
    push_gt(as, "dnm_positive_swap", val, 0.01);
  if (c.generator == "collision-ad")
    push(as, "dnm_zero_markov", std::abs(val), std::max(c.assert_tol, 1e-10));
  return out;
}

SuiteOutput run_suite(const RunContext& c, int idx) {
  switch (idx) {
    case 0: return run_tpm(c);
    case 1: return run_manybody(c);
    case 2: return run_threepoint(c);
    case 3: return run_ancilla(c);
    case 4: return run_bridge(c);
    case 5: return run_holevo(c);
    case 6: return run_probe(c);
    default: return run_dnm(c);
  }
}

// ---- config loading ------------------------------------------------------

Mat parse_matrix(const ordered_json& a, const std::string& field) {
  if (!a.is_array() || a.empty())
    throw config_error(field + ": expected a non-empty array of rows");
  const int rows = static_cast<int>(a.size());
  int cols = -1;
  Mat M;
  for (int r = 0; r < rows; ++r) {
    const auto& row = a[r];
    if (!row.is_array())
      throw config_error(field + ": row " + std::to_string(r) +
                         " is not an array");
    if (cols < 0) {
      cols = static_cast<int>(row.size());
      M = Mat::Zero(rows, cols);
    }
    if (static_cast<int>(row.size()) != cols)
      throw config_error(field + ": ragged rows");
    for (int cc = 0; cc < cols; ++cc) {
      const auto& e = row[cc];
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() ||
          !e[1].is_number())
        throw config_error(field + ": entries must be [re, im] pairs");
      M(r, cc) = cxd(e[0].get<double>(), e[1].get<double>());
    }
  }
  return M;
}

Mat parse_density(const ordered_json& a, const std::string& field) {
  Mat M = parse_matrix(a, field);
  if (M.rows() != M.cols()) throw config_error(field + ": not square");
  if (!is_hermitian(M, 1e-10))
    throw config_error(field + ": not Hermitian within 1e-10");
  EigenSystem es = deterministic_eig(M);
  if (es.values[es.dim() - 1] < -1e-12)
    throw config_error(field + ": not positive semidefinite");
  if (std::abs(M.trace().real() - 1.0) > 1e-10)
    throw config_error(field + ": trace differs from 1 by more than 1e-10");
  return M;
}

void reject_unknown_keys(const ordered_json& obj,
                         const std::vector<std::string>& known,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const auto& k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw config_error(where + ": unknown key '" + it.key() + "'");
  }
}

struct LoadedConfig {
  RunContext ctx;
  std::vector<int> suites;
  bool explicit_selection = false;
  std::string out_dir = "qift-out";
  bool from_generator = false;
  ScenarioSpec spec;  // kept so --seed can regenerate
};

std::vector<int> parse_suites(const ordered_json& j, bool& explicit_sel) {
  std::vector<int> out;
  auto add = [&out](const std::string& name) {
    const int idx = suite_index(name);
    if (idx < 0) throw config_error("suite: unknown suite '" + name + "'");
    for (int x : out)
      if (x == idx) return;
    out.push_back(idx);
  };
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "all") {
      for (int i = 0; i < 8; ++i) out.push_back(i);
      explicit_sel = false;
      return out;
    }
    add(s);
    explicit_sel = true;
    return out;
  }
  if (j.is_array()) {
    for (const auto& e : j) {
      if (!e.is_string()) throw config_error("suite: entries must be strings");
      add(e.get<std::string>());
    }
    if (out.empty()) throw config_error("suite: empty selection");
    explicit_sel = true;
    return out;
  }
  throw config_error("suite: expected a name, an array of names, or \"all\"");
}

LoadedConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw config_error("config root must be an object");
  reject_unknown_keys(j,
                      {"suite", "scenario", "rho", "gamma", "gamma_prime",
                       "tolerances", "out_dir"},
                      "config");

  LoadedConfig lc;
  if (!j.contains("suite")) throw config_error("config: missing 'suite'");
  lc.suites = parse_suites(j["suite"], lc.explicit_selection);

  if (!j.contains("scenario") || !j["scenario"].is_object())
    throw config_error("config: missing 'scenario' object");
  const ordered_json& sj = j["scenario"];
  reject_unknown_keys(sj,
                      {"generator", "d_s", "d_e", "steps", "seed", "damping",
                       "unitaries", "env_initial"},
                      "scenario");

  RunContext& c = lc.ctx;
  if (sj.contains("seed")) {
    if (!sj["seed"].is_number_unsigned() && !sj["seed"].is_number_integer())
      throw config_error("scenario.seed: expected an integer");
    c.seed = sj["seed"].get<std::uint64_t>();
    c.has_seed = true;
  }

  if (sj.contains("generator")) {
    if (sj.contains("unitaries") || sj.contains("env_initial"))
      throw config_error(
          "scenario: give either a generator or explicit matrices, not both");
    ScenarioSpec spec;
    spec.generator = sj["generator"].get<std::string>();
    if (sj.contains("d_s")) spec.dim_s = sj["d_s"].get<int>();
    if (sj.contains("d_e")) spec.dim_e = sj["d_e"].get<int>();
    if (sj.contains("steps")) spec.steps = sj["steps"].get<int>();
    if (sj.contains("damping"))
      spec.damping = sj["damping"].get<std::vector<double>>();
    if (!c.has_seed)
      throw config_error("scenario.seed: required when a generator is named");
    c.sc = generate_scenario(spec, c.seed);
    c.generator = spec.generator;
    lc.from_generator = true;
    lc.spec = spec;
  } else {
    if (!sj.contains("unitaries") || !sj.contains("env_initial") ||
        !sj.contains("d_s") || !sj.contains("d_e"))
      throw config_error(
          "scenario: explicit form needs unitaries, env_initial, d_s, d_e");
    const int ds = sj["d_s"].get<int>();
    const int de = sj["d_e"].get<int>();
    if (!sj["unitaries"].is_array() || sj["unitaries"].empty())
      throw config_error("scenario.unitaries: expected a non-empty array");
    std::vector<Mat> us;
    for (std::size_t k = 0; k < sj["unitaries"].size(); ++k)
      us.push_back(parse_matrix(sj["unitaries"][k],
                                "scenario.unitaries[" + std::to_string(k) +
                                    "]"));
    Mat env = parse_density(sj["env_initial"], "scenario.env_initial");
    c.sc = make_scenario(std::move(us), std::move(env), ds, de);
    c.generator = "explicit";
  }

  if (j.contains("rho")) c.rho = parse_density(j["rho"], "rho");
  if (j.contains("gamma")) c.gamma = parse_density(j["gamma"], "gamma");
  if (j.contains("gamma_prime"))
    c.gamma_prime = parse_density(j["gamma_prime"], "gamma_prime");

  if (j.contains("tolerances")) {
    const ordered_json& t = j["tolerances"];
    reject_unknown_keys(t, {"rank_tol", "grouping_tol", "assert_tol"},
                        "tolerances");
    if (t.contains("rank_tol")) c.rank_tol = t["rank_tol"].get<double>();
    if (t.contains("grouping_tol"))
      c.grouping_tol = t["grouping_tol"].get<double>();
    if (t.contains("assert_tol")) c.assert_tol = t["assert_tol"].get<double>();
    if (c.rank_tol <= 0 || c.grouping_tol <= 0)
      throw config_error("tolerances: rank_tol and grouping_tol must be positive");
    if (c.assert_tol < 0)
      throw config_error("tolerances: assert_tol must be nonnegative");
  }
  if (j.contains("out_dir")) lc.out_dir = j["out_dir"].get<std::string>();
  return lc;
}

// holevo and dnm always draw; the rest only when a state is left implicit
void check_seed_requirement(const LoadedConfig& lc) {
  if (lc.ctx.has_seed) return;
  const RunContext& c = lc.ctx;
  for (int idx : lc.suites) {
    bool draws = false;
    switch (idx) {
      case 5:
      case 7: draws = true; break;
      case 2:
      case 6:
        draws = c.rho.size() == 0 || c.gamma.size() == 0 ||
                c.gamma_prime.size() == 0;
        break;
      default:
        draws = c.rho.size() == 0 || c.gamma.size() == 0;
    }
    if (draws)
      throw config_error(std::string("scenario.seed: required, suite '") +
                         kSuites[idx] + "' draws random states");
  }
}

// ---- output --------------------------------------------------------------

void atomic_write(const fs::path& target, const std::string& content) {
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, target);
}

std::string csv_of(const std::vector<std::array<double, 4>>& rows) {
  std::string s = "sigma,weight_forward,weight_backward,detailed_ft_residual\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", r[0], r[1],
                  r[2], r[3]);
    s += buf;
  }
  return s;
}

ordered_json json_num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

int thread_count() {
  const char* env = std::getenv("QIFT_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantum-channel fluctuation theorem runner"};
  app.require_subcommand(1);
  CLI::App* run = app.add_subcommand("run", "execute suites from a config");
  std::string config_path, out_override, suite_override;
  std::uint64_t seed_override = 0;
  bool has_seed_override = false, has_assert_override = false;
  double assert_override = 0.0;
  run->add_option("config", config_path, "JSON config file")->required();
  run->add_option("--out", out_override, "output directory override");
  run->add_option("--seed", seed_override, "seed override")
      ->each([&](const std::string&) { has_seed_override = true; });
  run->add_option("--suite", suite_override,
                  "suite override (name, comma list, or 'all')");
  run->add_option("--assert-tol", assert_override, "assert_tol override")
      ->each([&](const std::string&) { has_assert_override = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  LoadedConfig lc;
  try {
    lc = load_config(config_path);
    if (has_seed_override) {
      lc.ctx.seed = seed_override;
      lc.ctx.has_seed = true;
      if (lc.from_generator)
        lc.ctx.sc = generate_scenario(lc.spec, seed_override);
    }
    if (!suite_override.empty()) {
      ordered_json sel;
      if (suite_override.find(',') != std::string::npos) {
        sel = ordered_json::array();
        std::string cur;
        for (char ch : suite_override + ",") {
          if (ch == ',') {
            if (!cur.empty()) sel.push_back(cur);
            cur.clear();
          } else {
            cur += ch;
          }
        }
      } else {
        sel = suite_override;
      }
      lc.suites = parse_suites(sel, lc.explicit_selection);
    }
    if (has_assert_override) {
      if (assert_override < 0) throw config_error("--assert-tol: nonnegative");
      lc.ctx.assert_tol = assert_override;
    }
    if (!out_override.empty()) lc.out_dir = out_override;

    check_seed_requirement(lc);

    // two-step-only suites: skip under "all", reject if named explicitly
    const bool two_step = lc.ctx.sc.n_steps() == 2;
    for (int idx : lc.suites) {
      const bool needs_two = idx == 2 || idx == 3 || idx == 6;
      if (needs_two && !two_step && lc.explicit_selection)
        throw config_error(std::string("suite '") + kSuites[idx] +
                           "' needs a two-step scenario");
    }
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }

  const RunContext& ctx = lc.ctx;
  std::vector<SuiteOutput> results(lc.suites.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= lc.suites.size()) return;
      const int idx = lc.suites[k];
      const auto t0 = std::chrono::steady_clock::now();
      SuiteOutput& slot = results[k];
      const bool needs_two = idx == 2 || idx == 3 || idx == 6;
      try {
        if (needs_two && ctx.sc.n_steps() != 2) {
          slot.name = kSuites[idx];
          slot.skipped = true;
          slot.skip_reason = "needs a two-step scenario";
        } else {
          slot = run_suite(ctx, idx);
        }
      } catch (const support_error& e) {
        // singular references make the construction inapplicable; under
        // "all" that is a skip, an explicit request still fails loudly
        slot = SuiteOutput{};
        slot.name = kSuites[idx];
        if (!lc.explicit_selection) {
          slot.skipped = true;
          slot.skip_reason = e.what();
        } else {
          slot.metrics["error"] = e.what();
          slot.assertions.push_back({"suite_completed", 1.0, 0.0, false});
        }
      } catch (const std::exception& e) {
        slot = SuiteOutput{};
        slot.name = kSuites[idx];
        slot.metrics["error"] = e.what();
        slot.assertions.push_back({"suite_completed", 1.0, 0.0, false});
      }
      slot.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    }
  };
  const int nthreads =
      std::min<int>(thread_count(), static_cast<int>(lc.suites.size()));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // report assembly: deterministic order, atomic writes
  bool all_pass = true;
  std::vector<std::string> failed;
  ordered_json suites = ordered_json::object();
  std::error_code ec;
  fs::create_directories(lc.out_dir, ec);
  if (ec) {
    std::fprintf(stderr, "config error: cannot create output dir %s\n",
                 lc.out_dir.c_str());
    return 2;
  }
  for (const SuiteOutput& so : results) {
    ordered_json s = ordered_json::object();
    if (so.skipped) {
      s["skipped"] = so.skip_reason;
      suites[so.name] = s;
      continue;
    }
    for (auto it = so.metrics.begin(); it != so.metrics.end(); ++it)
      s[it.key()] = it.value();
    ordered_json as = ordered_json::array();
    for (const Assertion& a : so.assertions) {
      as.push_back({{"name", a.name},
                    {"pass", a.pass},
                    {"margin", json_num(a.margin)},
                    {"tol", a.tol}});
      if (!a.pass) {
        all_pass = false;
        failed.push_back(so.name + "." + a.name);
      }
    }
    s["assertions"] = as;
    s["wall_ms"] = so.wall_ms;
    if (so.has_table) {
      const std::string csv_name = so.name + "_sigma.csv";
      atomic_write(fs::path(lc.out_dir) / csv_name, csv_of(so.table));
      s["sigma_csv"] = csv_name;
      ordered_json table = ordered_json::array();
      for (const auto& r : so.table)
        table.push_back({r[0], r[1], r[2], r[3]});
      s["sigma_table"] = table;
    }
    suites[so.name] = s;
  }

  ordered_json report;
  ordered_json cfg = ordered_json::object();
  {
    ordered_json names = ordered_json::array();
    for (int idx : lc.suites) names.push_back(kSuites[idx]);
    cfg["suites"] = names;
    ordered_json sj = ordered_json::object();
    sj["generator"] = ctx.generator;
    sj["d_s"] = ctx.sc.dim_s;
    sj["d_e"] = ctx.sc.dim_e;
    sj["steps"] = ctx.sc.n_steps();
    if (ctx.has_seed) sj["seed"] = ctx.seed;
    cfg["scenario"] = sj;
    cfg["tolerances"] = {{"rank_tol", ctx.rank_tol},
                         {"grouping_tol", ctx.grouping_tol},
                         {"assert_tol", ctx.assert_tol}};
    cfg["out_dir"] = lc.out_dir;
  }
  report["config"] = cfg;
  report["suites"] = suites;
  report["all_pass"] = all_pass;
  report["failed_assertions"] = failed;
  atomic_write(fs::path(lc.out_dir) / "report.json", report.dump(2) + "\n");

  if (!all_pass) {
    std::fprintf(stderr, "assertion failures:\n");
    for (const auto& f : failed) std::fprintf(stderr, "  %s\n", f.c_str());
    return 1;
  }
  std::printf("all assertions passed (%zu suites); report in %s\n",
              results.size(), lc.out_dir.c_str());
  return 0;
}
