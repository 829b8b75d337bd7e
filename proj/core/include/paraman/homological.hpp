#pragma once

// Order-by-order solver for the approximate invariance equation: the
// map-case homological equations and the flow-case mean/oscillatory
// splitting, together with the improper-integral machinery they need.

#include <functional>
#include <stdexcept>

#include "paraman/domain.hpp"
#include "paraman/polyalg.hpp"

namespace paraman::homological {

using domain::ConeSpec;
using domain::SystemJets;
using polyalg::GradedMapJet;
using polyalg::HomogeneousComponent;
using polyalg::Mat;
using polyalg::PeriodicGradedJet;
using polyalg::Vec;

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConvergenceThresholdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Adaptive evaluation of int_inf^0 fn(t) dt for integrands decaying like
// t^{-gamma}; the substitution s = t*scale is applied first. gamma <= 1 is
// rejected, and non-decaying dyadic contributions raise DivergenceError.
Vec improper_quadrature(const std::function<Vec(double)>& fn, double gamma,
                        double scale = 1.0, double abs_tol = 1e-11);

// Provider of the flow of xdot = p(x,0) and the fundamental matrices of its
// variational equations (M1 for D_x p, M2 for D_y q).
struct FlowOracle {
  enum class Mode { closed, numeric };
  Mode mode = Mode::numeric;
  int n = 1, m = 0, N = 2;
  double tol = 1e-12;

  // closed-form rules
  std::function<Vec(double, const Vec&)> phi_rule;
  std::function<Mat(double, const Vec&)> M1_rule, M2_rule;
  std::function<Mat(double, const Vec&)> M1inv_rule, M2inv_rule;

  // numeric mode data: x-only field and D_y q(x,0) as an m*m-flattened jet
  GradedMapJet p_x;    // R^n -> R^n, homogeneous of degree N
  GradedMapJet Dxp;    // Jacobian jet of p_x
  GradedMapJet Dyq_x;  // R^n -> R^{m*m} (row-major), may be empty

  static FlowOracle closed(int n, int m, int N,
                           std::function<Vec(double, const Vec&)> phi,
                           std::function<Mat(double, const Vec&)> M1,
                           std::function<Mat(double, const Vec&)> M2,
                           std::function<Mat(double, const Vec&)> M1inv = {},
                           std::function<Mat(double, const Vec&)> M2inv = {});
  static FlowOracle numeric(const GradedMapJet& p_x, const GradedMapJet& Dyq_x,
                            int m, int N, double tol = 1e-12);

  Vec phi(double t, const Vec& x) const;
  Mat M1(double t, const Vec& x) const;
  Mat M2(double t, const Vec& x) const;
  Mat M1inv(double t, const Vec& x) const;
  Mat M2inv(double t, const Vec& x) const;

  // int_0^inf g(t, phi(t,x), M1inv(t,x), M2inv(t,x)) dt with power-law
  // decay exponent gamma > 1.
  using Integrand =
      std::function<Vec(double, const Vec&, const Mat&, const Mat&)>;
  Vec flow_integral(const Vec& x, int out_dim, const Integrand& g,
                    double gamma, double abs_tol = 1e-11) const;
};

// Numeric oracle for the x-only field p(x,0) and D_y q(x,0) taken from the
// joint-variable system jets.
FlowOracle numeric_oracle(const domain::SystemJets& sys, double tol = 1e-12);

enum class YCase { NltM, NeqM, NgtM };
enum class Policy { R_simplest, K_x_zero };

// Graded matrix-vector product helpers (A stored row-major flattened).
HomogeneousComponent matvec(const HomogeneousComponent& A, int rows, int cols,
                            const HomogeneousComponent& v);
GradedMapJet matvec_graded(const GradedMapJet& A, int rows, int cols,
                           const GradedMapJet& v, int cutoff);

// Solution of the degree-j y-equation. Result is polynomial when the sampled
// integral values fit the degree-j polynomial space to fit_tol.
HomogeneousComponent solve_Ky(const HomogeneousComponent& E_y,
                              const FlowOracle& oracle, YCase ycase,
                              const SystemJets& sys, const ConeSpec& cone,
                              double rho, double fit_tol = 1e-10);

// Free choice of K_x (default 0): returns the R-term of the x-equation.
HomogeneousComponent solve_Kx_free(const HomogeneousComponent& E_x,
                                   const HomogeneousComponent& Kx_choice,
                                   const SystemJets& sys,
                                   const HomogeneousComponent& K_y);

// Integral-mode K_x with an arbitrary (default zero) R-term.
HomogeneousComponent solve_Kx_integral(const HomogeneousComponent& E_x,
                                       const HomogeneousComponent* R_term,
                                       const FlowOracle& oracle,
                                       const SystemJets& sys,
                                       const HomogeneousComponent& K_y, int j,
                                       int ell_star, const ConeSpec& cone,
                                       double rho, double fit_tol = 1e-10);

struct HomologicalStep {
  int j = 0;
  YCase ycase = YCase::NeqM;
  bool kx_integral = false;
  bool Ky_polynomial = true;
  bool Kx_polynomial = true;
  HomogeneousComponent Kx, Ky;   // degree j
  HomogeneousComponent R_term;   // degree j+N-1 (Y-term for flows)
  double slope_x = 0, slope_y = 0;
};

struct MapState {
  SystemJets sys;
  GradedMapJet P;  // truncated map, identity included
  GradedMapJet K;  // n -> n+m
  GradedMapJet R;  // n -> n
  int j_done = 0;
  bool polynomial_state = true;
};

MapState seed_map_state(const SystemJets& sys, const GradedMapJet& P);
HomologicalStep step_map(MapState& state, const FlowOracle& oracle,
                         const ConeSpec& cone, double rho, Policy policy,
                         int ell_star);

// Residual slopes of P∘K - K∘R on radial scans.
void residual_slopes(const GradedMapJet& P, const GradedMapJet& K,
                     const GradedMapJet& R, const ConeSpec& cone, double rho,
                     int n_rows_x, double* slope_x, double* slope_y);

std::pair<GradedMapJet, PeriodicGradedJet> split_mean(
    const PeriodicGradedJet& h);

struct FlowState {
  SystemJets sys;
  PeriodicGradedJet X;  // periodic field, polynomial through the cutoff
  PeriodicGradedJet K;  // n -> n+m
  GradedMapJet Y;       // n -> n
  int j_done = 0;
};

FlowState seed_flow_state(const SystemJets& sys, const PeriodicGradedJet& X);
HomologicalStep step_flow(FlowState& state, const FlowOracle& oracle,
                          const ConeSpec& cone, double rho, Policy policy,
                          int ell_star);

// Differential residual X(K) - DK Y - dK/dt per time sample, as jets.
std::vector<GradedMapJet> flow_error_jets(const FlowState& state, int cutoff);

// Same residual with the composition X(K(x,t),t) supplied externally; the
// composer receives the sample jet of K, the sample index and the truncation
// degree. Lets a caller plug in an exact field whose joint-variable Taylor
// expansion is impractical to store.
using XComposer = std::function<GradedMapJet(const GradedMapJet& K_sample,
                                             int sample, int cutoff)>;
std::vector<GradedMapJet> flow_error_jets_with(const FlowState& state,
                                               int cutoff,
                                               const XComposer& compose_X);

// One order of the flow stepper with the error jets already computed (at
// truncation degree j_done + N - 1). Does not evaluate residual slopes.
HomologicalStep step_flow_given_errors(FlowState& state,
                                       const std::vector<GradedMapJet>& E,
                                       const FlowOracle& oracle,
                                       const ConeSpec& cone, double rho,
                                       Policy policy, int ell_star);

// Spectral d/dt of a periodic jet, sample-wise.
PeriodicGradedJet periodic_time_derivative(const PeriodicGradedJet& K);
void flow_residual_slopes(const FlowState& state, const ConeSpec& cone,
                          double rho, double* slope_x, double* slope_y);

// Adaptive Dormand-Prince integration of dz/dt = f(t,z) from t0 to t1.
Vec integrate_ode(const std::function<Vec(double, const Vec&)>& f, double t0,
                  double t1, Vec z0, double rel_tol = 1e-12,
                  double abs_tol = 1e-14);

}  // namespace paraman::homological
