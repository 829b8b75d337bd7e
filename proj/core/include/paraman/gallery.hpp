#pragma once

// Counterexample gallery: the toy map violating H3 with no stable invariant
// manifold, and the degree-5 planar field whose stable manifold is only
// finitely differentiable.  Everything is driven by closed-form flows; the
// improper quadrature serves as the independent cross-check.

#include <stdexcept>
#include <vector>

#include "paraman/polyalg.hpp"

namespace paraman::gallery {

using polyalg::Vec;

// Time-1 map of x1' = -x1^2, x2' = -a x1 x2, y' = b x1 y + x2^3.
struct ToyModelParams {
  double a = 0.2, b = 0.3;
  double bound = 1e3;  // divergence threshold for orbit verdicts
  long long n_max = 10000;

  void validate() const;  // a, b > 0
};

struct ToyOrbit {
  std::vector<Vec> x;      // closed-form x-orbit, entries 0..n
  std::vector<double> y;   // matching y-orbit
  bool diverged = false;
  long long diverged_at = -1;
};

// n-th iterate in closed form (n need not be integral; the flow is explicit).
Vec toy_x_iterate(const ToyModelParams& par, const Vec& x0, double n);
double toy_y_iterate(const ToyModelParams& par, const Vec& x0, double y0,
                     double n);
// Orbit up to n_max with the divergence verdict |y_n| > bound.
ToyOrbit toy_iterate(const ToyModelParams& par, const Vec& x0, double y0);
// The unique candidate for a bounded y-orbit,
// y*(x) = x2^3 int_inf^0 (1+s x1)^{-(b+3a)} ds; DivergenceError when
// b + 3a <= 1 (the integral diverges: no stable manifold).
double toy_candidate(const ToyModelParams& par, const Vec& x);

// Planar field: polar form rdot = -a r^5, thetadot = r^4 sin(4 theta),
// with y' = q1(x) y + g(x), q1 = b r^4, g = r^6 sin(4 theta),
// a = 2n and b = 4(2m - n - 1).
struct LossDiffParams {
  int n = 3, m = 4;
  double nu = 0.5;  // cone V = { nu |x1| <= x2 }

  double a() const { return 2.0 * n; }
  double b() const { return 4.0 * (2.0 * m - n - 1.0); }
  void validate() const;  // n, m >= 1, 2m > n+1, nu in (0, 1)
};

struct ManifoldValues {
  double quadrature = 0.0;  // int_inf^0 M^{-1} g(phi) dt by improper quadrature
  double closed = 0.0;      // -(r^2 c / 4) sum_k (-1)^k c^{2k} / (m+k) form
};

double lossdiff_h_closed(const LossDiffParams& par, const Vec& x);
ManifoldValues lossdiff_manifold(const LossDiffParams& par, const Vec& x);

// Derivative estimates of the auxiliary function
//   h~(x1) = x1^{2m-1} (sum_{j=2}^m (-1)^j x1^{-2(m-j+1)}/(m-j+1)
//            + (-1)^{m+1} log(1/x1^2 + 1))
// at geometrically shrinking x1, from truncated Taylor-series arithmetic of
// the closed form.  Order 2m-2 stays bounded and Cauchy; order 2m-1 grows
// like |log x1|.  drop_log_term keeps only the polynomial part (control).
struct ProbeReport {
  int order = 0;
  std::vector<double> x1;
  std::vector<double> estimate;
  bool bounded = false;
  double log_slope = 0.0;  // least-squares slope of estimate vs |log x1|
};

ProbeReport differentiability_probe(const LossDiffParams& par, double x2_fixed,
                                    int derivative_order,
                                    bool drop_log_term = false);

}  // namespace paraman::gallery
