#include "paraman/gallery.hpp"

#include <algorithm>
#include <cmath>

#include "paraman/homological.hpp"

namespace paraman::gallery {

namespace {

// int_0^n (1 + s x1)^{-c} ds, x1 > 0.
double toy_resolvent(double x1, double c, double n) {
  if (std::abs(c - 1.0) < 1e-14) return std::log1p(n * x1) / x1;
  return (std::pow(1.0 + n * x1, 1.0 - c) - 1.0) / (x1 * (1.0 - c));
}

void require_x1_positive(const Vec& x) {
  if (x.size() != 2) throw std::invalid_argument("toy model: x must be in R^2");
  if (!(x[0] > 0.0))
    throw std::domain_error("toy model: closed-form orbit needs x1 > 0");
}

}  // namespace

void ToyModelParams::validate() const {
  if (!(a > 0.0) || !(b > 0.0))
    throw std::invalid_argument("ToyModelParams: a, b must be positive");
  if (!(bound > 0.0) || n_max < 1)
    throw std::invalid_argument("ToyModelParams: bad divergence budget");
}

Vec toy_x_iterate(const ToyModelParams& par, const Vec& x0, double n) {
  par.validate();
  require_x1_positive(x0);
  Vec x(2);
  double d = 1.0 + n * x0[0];
  x[0] = x0[0] / d;
  x[1] = x0[1] / std::pow(d, par.a);
  return x;
}

double toy_y_iterate(const ToyModelParams& par, const Vec& x0, double y0,
                     double n) {
  par.validate();
  require_x1_positive(x0);
  double c = par.b + 3.0 * par.a;
  return std::pow(1.0 + n * x0[0], par.b) *
         (y0 + x0[1] * x0[1] * x0[1] * toy_resolvent(x0[0], c, n));
}

ToyOrbit toy_iterate(const ToyModelParams& par, const Vec& x0, double y0) {
  par.validate();
  require_x1_positive(x0);
  ToyOrbit orbit;
  orbit.x.reserve(par.n_max + 1);
  orbit.y.reserve(par.n_max + 1);
  for (long long n = 0; n <= par.n_max; ++n) {
    orbit.x.push_back(toy_x_iterate(par, x0, static_cast<double>(n)));
    orbit.y.push_back(toy_y_iterate(par, x0, y0, static_cast<double>(n)));
    if (!orbit.diverged && std::abs(orbit.y.back()) > par.bound) {
      orbit.diverged = true;
      orbit.diverged_at = n;
      break;
    }
  }
  return orbit;
}

double toy_candidate(const ToyModelParams& par, const Vec& x) {
  par.validate();
  require_x1_positive(x);
  double c = par.b + 3.0 * par.a;
  if (c <= 1.0)
    throw homological::DivergenceError(
        "toy model: int_inf^0 (1+s x1)^{-(b+3a)} ds diverges for b+3a <= 1; "
        "no stable manifold");
  return -x[1] * x[1] * x[1] / (x[0] * (c - 1.0));
}

// ---------------------------------------------------------------------------

void LossDiffParams::validate() const {
  if (n < 1 || m < 1 || 2 * m <= n + 1)
    throw std::invalid_argument(
        "LossDiffParams: need integers n, m >= 1 with 2m > n+1");
  if (!(nu > 0.0 && nu < 1.0))
    throw std::invalid_argument("LossDiffParams: nu must be in (0, 1)");
}

namespace {

void require_in_cone(const LossDiffParams& par, const Vec& x) {
  if (x.size() != 2)
    throw std::invalid_argument("lossdiff: x must be in R^2");
  double r = x.norm();
  if (r == 0.0 || x[1] < par.nu * std::abs(x[0]) - 1e-14 * r)
    throw std::domain_error("lossdiff: x outside the cone nu|x1| <= x2");
}

// c_x = (x1^2 - x2^2) / (2 x1 x2); infinite on the x2-axis.
double c_of(const Vec& x) {
  return (x[0] * x[0] - x[1] * x[1]) / (2.0 * x[0] * x[1]);
}

}  // namespace

double lossdiff_h_closed(const LossDiffParams& par, const Vec& x) {
  par.validate();
  require_in_cone(par, x);
  if (x[0] == 0.0) return 0.0;  // theta = pi/2 invariant line
  double c = c_of(x), r2 = x.squaredNorm();
  int m = par.m;
  double c2 = c * c;
  // bracket = sum_{j=2}^m (-1)^j c^{2(m-j+1)}/(m-j+1) + (-1)^{m+1} log(c^2+1)
  //         = c^{2m} sum_{k>=0} (-1)^k c^{2k}/(m+k),
  // and h = -(r^2/(4 c^{2m-1})) * bracket = -(r^2 c / 4) sum_k ...
  double sum;
  if (c2 < 0.5) {
    sum = 0.0;
    double term = 1.0;
    for (int k = 0;; ++k) {
      double add = term / (m + k);
      sum += (k % 2 == 0 ? add : -add);
      term *= c2;
      if (term / (m + k + 1) < 1e-17) break;
    }
  } else {
    double bracket = (m % 2 == 0 ? -1.0 : 1.0) * std::log1p(c2);
    double cpow = c2;  // c^{2(m-j+1)} at j = m
    double sign = (m % 2 == 0 ? 1.0 : -1.0);
    for (int j = m; j >= 2; --j) {
      bracket += sign * cpow / (m - j + 1);
      cpow *= c2;
      sign = -sign;
    }
    sum = bracket / std::pow(c2, m);
  }
  return -0.25 * r2 * c * sum;
}

ManifoldValues lossdiff_manifold(const LossDiffParams& par, const Vec& x) {
  par.validate();
  require_in_cone(par, x);
  ManifoldValues out;
  out.closed = lossdiff_h_closed(par, x);
  if (x[0] == 0.0) return out;  // sin(4 theta) = 0 along the whole orbit
  double a = par.a(), b = par.b();
  double c = c_of(x), r = x.norm();
  double r4 = r * r * r * r;
  // h = -2 r^6 c int_0^inf tau^{-e1} / (c^2 + tau^{2/a}) dt,
  // tau = 1 + 4 a t r^4, e1 = b/(4a) + 3/2 - 1/a  (M^{-1} phi_r^6 sin(4
  // phi_theta) with the explicit polar flow).
  double e1 = b / (4.0 * a) + 1.5 - 1.0 / a;
  double pref = 2.0 * std::pow(r, 6) * c;
  auto fn = [=](double t) {
    double tau = 1.0 + 4.0 * a * t * r4;
    Vec v(1);
    v[0] = pref / (std::pow(tau, e1) * (c * c + std::pow(tau, 2.0 / a)));
    return v;
  };
  double gamma = e1 + 2.0 / a;
  out.quadrature =
      homological::improper_quadrature(fn, gamma, 4.0 * a * r4, 1e-12)[0];
  return out;
}

// ---------------------------------------------------------------------------
// Truncated univariate Taylor jets for the differentiability probe.

namespace {

struct Jet1 {
  std::vector<double> c;
  explicit Jet1(int len) : c(len, 0.0) {}
};

Jet1 mul(const Jet1& a, const Jet1& b) {
  Jet1 out(a.c.size());
  int K = static_cast<int>(a.c.size());
  for (int i = 0; i < K; ++i) {
    if (a.c[i] == 0.0) continue;
    for (int j = 0; i + j < K; ++j) out.c[i + j] += a.c[i] * b.c[j];
  }
  return out;
}

Jet1 powi(const Jet1& a, int p) {
  Jet1 out(a.c.size());
  out.c[0] = 1.0;
  for (int i = 0; i < p; ++i) out = mul(out, a);
  return out;
}

// log of a jet with positive constant term.
Jet1 log_jet(const Jet1& a) {
  int K = static_cast<int>(a.c.size());
  Jet1 w(K);
  for (int i = 1; i < K; ++i) w.c[i] = a.c[i] / a.c[0];
  // log(1+w) = sum_{k>=1} (-1)^{k+1} w^k / k by Horner
  Jet1 acc(K);
  acc.c[0] = ((K - 1) % 2 == 1 ? 1.0 : -1.0) / (K - 1);
  for (int k = K - 2; k >= 1; --k) {
    acc = mul(acc, w);
    acc.c[0] += (k % 2 == 1 ? 1.0 : -1.0) / k;
  }
  Jet1 out = mul(acc, w);
  out.c[0] += std::log(a.c[0]);
  return out;
}

}  // namespace

ProbeReport differentiability_probe(const LossDiffParams& par, double x2_fixed,
                                    int derivative_order, bool drop_log_term) {
  par.validate();
  if (x2_fixed == 0.0)
    throw std::invalid_argument(
        "differentiability_probe: base point (0, x2) needs x2 != 0");
  int m = par.m;
  if (derivative_order < 1 || derivative_order > 2 * m + 2)
    throw std::invalid_argument(
        "differentiability_probe: derivative order out of range");

  ProbeReport rep;
  rep.order = derivative_order;
  const int K = derivative_order + 2;
  double dfact = 1.0;
  for (int i = 2; i <= derivative_order; ++i) dfact *= i;

  for (int k = 0; k < 17; ++k) {
    double x1 = 1e-2 * std::pow(10.0, -0.25 * k);
    Jet1 X(K);
    X.c[0] = x1;
    X.c[1] = 1.0;
    // polynomial part: sum_{j=2}^m (-1)^j x1^{2j-3} / (m-j+1)
    Jet1 h(K);
    for (int j = 2; j <= m; ++j) {
      Jet1 t = powi(X, 2 * j - 3);
      double s = (j % 2 == 0 ? 1.0 : -1.0) / (m - j + 1);
      for (int i = 0; i < K; ++i) h.c[i] += s * t.c[i];
    }
    if (!drop_log_term) {
      // (-1)^{m+1} x1^{2m-1} log(1/x1^2 + 1)
      Jet1 x2p1 = mul(X, X);
      x2p1.c[0] += 1.0;
      Jet1 lg = log_jet(x2p1);               // log(x1^2 + 1)
      Jet1 lx = log_jet(X);                  // log(x1)
      for (int i = 0; i < K; ++i) lg.c[i] -= 2.0 * lx.c[i];
      Jet1 t = mul(powi(X, 2 * m - 1), lg);
      double s = (m % 2 == 0 ? -1.0 : 1.0);
      for (int i = 0; i < K; ++i) h.c[i] += s * t.c[i];
    }
    rep.x1.push_back(x1);
    rep.estimate.push_back(dfact * h.c[derivative_order]);
  }

  // Cauchy/boundedness verdict along the scan and the |log x1| growth fit.
  size_t nsc = rep.estimate.size();
  double first_diff = std::abs(rep.estimate[1] - rep.estimate[0]);
  double last_diff = std::abs(rep.estimate[nsc - 1] - rep.estimate[nsc - 2]);
  rep.bounded = last_diff <= 0.2 * first_diff + 1e-9 &&
                std::abs(rep.estimate.back()) <=
                    2.0 * std::abs(rep.estimate.front()) + 1e-9;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < nsc; ++i) {
    double xi = std::abs(std::log(rep.x1[i]));
    sx += xi;
    sy += rep.estimate[i];
    sxx += xi * xi;
    sxy += xi * rep.estimate[i];
  }
  rep.log_slope = (nsc * sxy - sx * sy) / (nsc * sxx - sx * sx);
  return rep;
}

}  // namespace paraman::gallery
