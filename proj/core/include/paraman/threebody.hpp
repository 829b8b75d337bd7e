#pragma once

// Elliptic spatial restricted three-body problem near parabolic infinity:
// the spherical/McGehee/local coordinate chain down to the variables
// (u, Theta^, v, alpha^, A^, theta^), the closed-form flow oracle of the
// leading field, the order-by-order parametrization jets and the u-power
// structure checks of the invariant-manifold expansion.

#include <array>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "paraman/domain.hpp"
#include "paraman/homological.hpp"
#include "paraman/polyalg.hpp"

namespace paraman::threebody {

using domain::SystemJets;
using polyalg::GradedMapJet;
using polyalg::Mat;
using polyalg::PeriodicGradedJet;
using polyalg::Vec;

// Evaluation left the coordinate chart (z <= 0 or theta near +-pi/2).
struct ChartError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// An order-j solution failed polynomial detection.
struct StructureError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct R3BPParams {
  double mu = 0.01;   // mass ratio, [0, 1)
  double e = 0.0;     // eccentricity, [0, 1)
  double alpha0 = 0.0;
  double A0 = 1.0;
  int order = 8;      // jet order ell; K-tilde and Y reach degree ell
  int n_samples = 32; // time samples per 2*pi period
  // Optional perturbation V^(r, alpha, theta, t); the potential gains
  // V = V^ / r^3.  Must leave the plane theta = Theta = 0 invariant.
  std::function<double(double, double, double, double)> perturbation;

  void validate() const;  // throws std::invalid_argument
};

// Maximum supported jet order.
inline constexpr int kMaxOrder = 12;

struct R3BPField {
  R3BPParams params;
  SystemJets sys;      // leading p (2 rows) and q (4 rows), degree-4 joint jets
  PeriodicGradedJet X4;  // the same leading field as a (static) periodic jet
  // Full local field, state (u, Theta^, v, alpha^, A^, theta^) in R^6.
  std::function<Vec(const Vec&, double)> eval;
  std::function<Vec(const Vec&, double)> remainder;  // eval minus (p, q)
  std::function<double(double)> true_anomaly;        // f(t), f(0) = 0
  // Two-center potential U^(r, alpha, theta, t) and its quadrupole
  // truncation 1/r - (mu(1-mu)/2)(1 - 3cos^2(alpha-f)cos^2(theta)) rho^2/r^3.
  std::function<double(double, double, double, double)> Uhat;
  std::function<double(double, double, double, double)> Uhat_quadrupole;
  // X(K(x,t), t) in exact truncated polynomial arithmetic for a 2-variable
  // jet K (x = (u, Theta^)); the optional perturbation is not expanded.
  std::function<GradedMapJet(const GradedMapJet&, double, int)> compose;
};

R3BPField build_field(const R3BPParams& params);

// phi1, M1^{-1}, M2 of the flow of p(x,0) = (-u^4/4, -u^3 Theta^/4).
homological::FlowOracle closed_oracle();

struct R3BPJets {
  R3BPParams params;
  int order = 0;        // highest jet degree present (= j_done + 3)
  GradedMapJet K_mean;  // sum of the mean parts K^j, 2 -> 6
  PeriodicGradedJet K_osc;  // oscillatory parts K~^{j+3}
  PeriodicGradedJet K;      // K_mean + K_osc
  GradedMapJet Y;           // reduced field, 2 -> 2, degrees 4..7
  PeriodicGradedJet E_next;  // first unresolved error component, degree order+1
  std::vector<homological::HomologicalStep> steps;
};

// Runs the flow-case homological recursion with the section-5 policy:
// K_x^j = 0 and free-mode Y^{j+3} for j <= 4, Y^{j+3} = 0 and integral-mode
// K_x^j for j >= 5.  order = 0 takes field.params.order.
R3BPJets compute_jets(const R3BPField& field,
                      const homological::FlowOracle& oracle, int order = 0);

struct StructureReport {
  bool pass = true;
  double max_stray = 0.0;  // largest forbidden coefficient seen
  std::vector<std::string> failures;
};

// Coefficient-exact u-power divisibility checks of the Claim structure.
StructureReport structure_check(const R3BPJets& jets);

struct ResidualScan {
  std::vector<double> radii;
  std::vector<double> residuals;  // max over directions and time samples
  double slope = 0.0;
};

// Differential residual X(K(x,t),t) - DK(x,t) Y(x) - dK/dt(x,t) of the
// computed jets against the full (non-truncated) field, on radial scans.
ResidualScan invariance_residual(const R3BPJets& jets, const R3BPField& field,
                                 double r_max = 0.1);

}  // namespace paraman::threebody
