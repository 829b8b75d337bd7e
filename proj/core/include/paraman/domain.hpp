#pragma once

// Cone domains V_rho, the contraction constants a_p, b_p, A_p, B_p, B_q,
// hypothesis checks H1-H3 / H1'-H2' / Hlambda, regularity diagnostics and
// the orbit decomposition of V_rho into rings.

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "paraman/polyalg.hpp"

namespace paraman::domain {

using polyalg::GradedMapJet;
using polyalg::Mat;
using polyalg::Vec;

enum class Norm { sup, euclid };

double vec_norm(const Vec& v, Norm n);
// Operator norm of A : (R^k, from) -> (R^l, to).
double op_norm(const Mat& A, Norm from, Norm to);

struct Halfspace {
  Vec a;
  double nu = 0.0;  // membership: <a,x> >= nu * |x|
};

struct ConeSpec {
  int n = 1;
  std::vector<Halfspace> halfspaces;
  std::function<bool(const Vec&)> rule;  // user rule, used when set
  Norm norm_x = Norm::sup;
  Norm norm_y = Norm::sup;

  bool contains(const Vec& x) const;
  bool in_Vrho(const Vec& x, double rho) const;
  // Deterministic low-discrepancy sample of V_rho (Halton points in the
  // rho-cube, filtered by membership). Exactly `budget` points.
  std::vector<Vec> sample(double rho, int budget) const;
  // Distance from z to the complement of V_rho in norm_x; exact for
  // halfspace-described cones, ray bisection otherwise.
  double dist_to_complement(const Vec& z, double rho) const;
  bool star_shaped_ok(double rho, int budget = 200) const;
  bool origin_not_interior(double eps = 1e-6, int budget = 200) const;
};

struct DomainConstants {
  double rho = 0.0;
  int n = 0, m = 0;
  int N = 2, M = 2, L = 2;
  double eta = 1.0, alpha = 1.0;
  double a_p = 0, b_p = 0, A_p = 0, B_p = 0;
  double B_q = std::numeric_limits<double>::infinity();  // +inf when m == 0
  double c_p = 0, d_p = 0;
  double C1 = 0;  // H3 margin, filled by check_hypotheses
  int sample_budget = 0;
  double sampling_error = 0;  // polish improvement over raw sampling
};

struct HypothesisReport {
  bool q_vanishes_on_x_axis = true;
  bool H1 = false, H2 = false, H3 = false;
  bool H1p = false, H2p = false, Hlambda = false;
  bool analytic_flag = false;  // A_p > b_p
  double H1_margin = 0, H2_margin = 0, H3_margin = 0;
  double H1p_margin = 0, H2p_margin = 0;
  double C1 = 0;
  bool all_basic() const { return H1 && H2 && H3; }
};

struct RegularityReport {
  double r0 = 0;          // minimum differentiability requirement
  double ell0 = 0;        // same quantity for the chosen kappa_a, kappa_b, B_hat
  int case_id = 0;        // regularity case (1)/(2)/(3)
  double sigma_max = std::numeric_limits<double>::infinity();
  double sigma_formal = std::numeric_limits<double>::infinity();
  int min_ell = 0;        // minimal admissible integer ell with r0 < ell <= r
  bool ell_exists = false;
};

struct OrbitDecomposition {
  int N = 2;
  double alpha = 1, rho = 0;
  double kappa_a = 0, kappa_b = 0;
  double u = 0, a0 = 0, b0 = 0;
  std::vector<double> a_seq, b_seq;      // a_k, b_k
  std::vector<double> abar_seq, bbar_seq;  // a_k/(u+k)^alpha etc.
  double beta_a = 0, beta_b = 0;  // fitted convergence exponents
  bool interleaved = true;        // akbkcond holds for all computed k
  bool envelope_ok = true;
  double worst_violation = 0;
  Vec worst_point;

  // Ring index k with |x| in [bbar_{k+1}, abar_k]; -1 if outside all rings.
  int ring_index(double xnorm) const;
  double lower(int k) const { return bbar_seq[k + 1]; }
  double upper(int k) const { return abar_seq[k]; }
};

// The system data needed by the constants: p and q as jets in the joint
// variables (x, y) (n_in = n + m), homogeneous of degree N and M.
struct SystemJets {
  int n = 1, m = 0;
  int N = 2, M = 2;
  GradedMapJet p;  // (x,y) -> R^n
  GradedMapJet q;  // (x,y) -> R^m, may be empty when m == 0
};

DomainConstants compute_constants(const SystemJets& sys, const ConeSpec& cone,
                                  double rho, int budget);

HypothesisReport check_hypotheses(const DomainConstants& consts,
                                  const SystemJets& sys, const ConeSpec& cone,
                                  int budget = 2000);

// inf/sup combination over a lambda sample set.
struct ParameterFamily {
  std::function<SystemJets(double)> system;
  std::vector<double> lambdas;
};
struct FamilyConstants {
  DomainConstants combined;
  std::vector<DomainConstants> per_lambda;
  bool r0_dominates = true;  // r0^lambda <= r0 for every sample
};
FamilyConstants constants_over_parameters(const ParameterFamily& family,
                                          const ConeSpec& cone, double rho,
                                          int budget);

RegularityReport regularity_report(const DomainConstants& consts, double r,
                                   double kappa_a, double kappa_b,
                                   double B_hat);

OrbitDecomposition orbit_decomposition(
    const std::function<Vec(const Vec&)>& R, const DomainConstants& consts,
    const ConeSpec& cone, double kappa_a, double kappa_b, int k_max,
    const std::vector<Vec>& orbit_seeds = {}, int j_max = 10000,
    const std::function<Vec(const Vec&)>& p_x0 = {});

// Shared helpers.
std::vector<double> halton_point(int index, int dim);
double nelder_mead_max(const std::function<double(const Vec&)>& f, Vec x0,
                       double step, int max_iter = 200);
// Least-squares slope of log|err| against log r.
double loglog_slope(const std::vector<double>& r,
                    const std::vector<double>& err);

}  // namespace paraman::domain
