#pragma once

// Fixed-point refinement of the manifold: the operators F-cal and S0, grid
// evaluation of the correction K^>, weighted-norm diagnostics, the S_delta
// scaling and Poincare-map reduction for periodic flows.

#include <functional>
#include <stdexcept>

#include "paraman/domain.hpp"
#include "paraman/polyalg.hpp"

namespace paraman::refine {

using domain::ConeSpec;
using polyalg::GradedMapJet;
using polyalg::Mat;
using polyalg::Vec;

struct NonContractionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct HypothesisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Field known on a finite grid of R-orbit points in V_rho. Values scale like
// |x|^weight_exponent; off-grid queries use the exact evaluator when present
// and ring-wise inverse-distance interpolation of the weighted values
// otherwise.
struct GridField {
  int n = 1;
  int dim_out = 1;
  double weight_exponent = 0.0;
  std::vector<Vec> points;
  std::vector<Vec> values;
  std::vector<int> next;  // index of R(point) in the grid, -1 at orbit end
  std::vector<int> ring;  // ring index counted along the stored orbit
  std::function<Vec(const Vec&)> evaluator;

  double weighted_norm() const;
  double value_slope() const;  // log-log fit of |value| against |x|
  Vec eval(const Vec& x) const;
  Vec interpolate(const Vec& x) const;
  GridField like_zero(int dim, double weight) const;
};

// Orbit-aligned grid: n_dirs ray seeds at radius 0.95*rho iterated under R
// until |x| < inner_radius or max_len points.
GridField build_grid(const std::function<Vec(const Vec&)>& R,
                     const ConeSpec& cone, double rho, int n_dirs = 8,
                     int max_len = 2000, double inner_radius = 1e-3);

struct SolverConfig {
  double delta = 0.0;  // 0 selects the default 0.1 * rho^(1/2)
  double tol = 1e-10;  // weighted-norm stopping tolerance
  int max_iter = 80;
  int ell = 0;
  int N = 2, L = 2;
  double alpha = 1.0;
  double kappa_a = 1.0;
  double B_hat = 0.0;
  int i_cap = 200000;  // hard cap on the S0 series length
  double rho = 0.1;
};

// Everything the operators need about the (already scaled) map.
struct MapData {
  std::function<Vec(const Vec&)> F;  // full map, R^{n+m} -> R^{n+m}
  GradedMapJet P;                    // Taylor part of F through degree ell-1
  GradedMapJet K_le;                 // n -> n+m
  GradedMapJet R;                    // n -> n
  int n = 1, m = 0;

  // Approximation defect T_ell = P(K_le(x)) - K_le(R(x)).
  Vec T_ell(const Vec& x) const;
};

// F-cal(K) = -T_ell - F_{>ell}(K_le + K) - P(K_le + K) + P(K_le)
//            + (DP(K_le)) K, evaluated on the grid of Kgt.
GridField operator_F(const GridField& Kgt, const MapData& map, int ell);

// Truncated Neumann-type series S0(T) = sum_i [prod_m (DP)^{-1}(K_le(R^m))]
// T(R^i) with a per-point power-law tail bound below tol/10.
GridField operator_S0(const GridField& T, const MapData& map,
                      const SolverConfig& config);

struct ResidualReport {
  std::vector<double> residuals;  // per grid point, unweighted
  double weighted_residual = 0.0;
  double slope = 0.0;
  bool det_DKx_positive = true;
  std::vector<double> history;  // weighted step norms per iteration
  double contraction = 0.0;     // late-iteration step ratio
  bool converged = false;
  int iterations = 0;
};

std::pair<GridField, ResidualReport> solve_fixed_point(
    const MapData& map, const GridField& grid_skeleton,
    const SolverConfig& config, const GridField* init = nullptr);

// Residual of F(K_le + K^>) - (K_le + K^>) o R on the grid.
ResidualReport verify_invariance(const MapData& map, const GridField& Kgt,
                                 int ell);

// S_delta(x, y) = (x, delta y) conjugations.
GradedMapJet scale_map_jet(const GradedMapJet& P, int n, int m, double delta);
GradedMapJet scale_K_jet(const GradedMapJet& K, int n, int m, double delta);
std::function<Vec(const Vec&)> scale_map_fn(std::function<Vec(const Vec&)> F,
                                            int n, int m, double delta);

struct PoincareMap {
  std::function<Vec(const Vec&)> F;
  double T = 1.0;
};
// Time-T flow map of the periodic field X from section t0.
PoincareMap poincare_map(const std::function<Vec(double, const Vec&)>& X,
                         int dim, double T, double t0 = 0.0,
                         double rel_tol = 1e-12);

void export_csv(const std::string& path, const GridField& field,
                const std::vector<double>& residuals = {});

}  // namespace paraman::refine
