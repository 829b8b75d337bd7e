#include "paraman/domain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace paraman::domain {

namespace {

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19};

double radical_inverse(int index, int base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * (index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

double dual_norm(const Vec& a, Norm primal) {
  // Dual of sup is the 1-norm; euclid is self-dual.
  return primal == Norm::sup ? a.lpNorm<1>() : a.norm();
}

}  // namespace

std::vector<double> halton_point(int index, int dim) {
  std::vector<double> p(dim);
  for (int d = 0; d < dim; ++d)
    p[d] = radical_inverse(index + 1, kPrimes[d % 8]);
  return p;
}

double vec_norm(const Vec& v, Norm n) {
  if (v.size() == 0) return 0.0;
  return n == Norm::sup ? v.cwiseAbs().maxCoeff() : v.norm();
}

double op_norm(const Mat& A, Norm from, Norm to) {
  if (A.rows() == 0 || A.cols() == 0) return 0.0;
  if (from == Norm::sup && to == Norm::sup)
    return A.cwiseAbs().rowwise().sum().maxCoeff();
  if (from == Norm::euclid && to == Norm::euclid)
    return A.jacobiSvd().singularValues()(0);
  throw std::invalid_argument("op_norm: mixed norms unsupported");
}

bool ConeSpec::contains(const Vec& x) const {
  if (rule) return rule(x);
  double nx = vec_norm(x, norm_x);
  for (const auto& h : halfspaces)
    if (h.a.dot(x) < h.nu * nx) return false;
  return true;
}

bool ConeSpec::in_Vrho(const Vec& x, double rho) const {
  double nx = vec_norm(x, norm_x);
  return nx > 0.0 && nx <= rho && contains(x);
}

std::vector<Vec> ConeSpec::sample(double rho, int budget) const {
  std::vector<Vec> pts;
  pts.reserve(budget);
  int index = 0;
  int limit = 100000 * std::max(budget, 1);
  while (static_cast<int>(pts.size()) < budget && index < limit) {
    auto h = halton_point(index++, n);
    Vec x(n);
    for (int d = 0; d < n; ++d) x[d] = rho * (2.0 * h[d] - 1.0);
    if (in_Vrho(x, rho)) pts.push_back(x);
  }
  if (static_cast<int>(pts.size()) < budget)
    throw std::runtime_error("ConeSpec::sample: cone appears degenerate");
  return pts;
}

double ConeSpec::dist_to_complement(const Vec& z, double rho) const {
  if (!in_Vrho(z, rho)) return 0.0;
  double d = rho - vec_norm(z, norm_x);
  bool exact = !rule;
  for (const auto& h : halfspaces) {
    if (h.nu == 0.0)
      d = std::min(d, h.a.dot(z) / dual_norm(h.a, norm_x));
    else
      exact = false;
  }
  if (exact) return std::max(d, 0.0);
  // Ray bisection toward low-discrepancy directions.
  const int n_dirs = 64;
  for (int i = 0; i < n_dirs; ++i) {
    auto hp = halton_point(i, n);
    Vec dir(n);
    for (int k = 0; k < n; ++k) dir[k] = 2.0 * hp[k] - 1.0;
    double dn = vec_norm(dir, norm_x);
    if (dn == 0.0) continue;
    dir /= dn;
    double lo = 0.0, hi = 2.0 * rho;  // the ball guarantees exit by 2 rho
    if (in_Vrho(z + hi * dir, rho)) continue;
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (lo + hi);
      (in_Vrho(z + mid * dir, rho) ? lo : hi) = mid;
    }
    d = std::min(d, hi);
  }
  return std::max(d, 0.0);
}

bool ConeSpec::star_shaped_ok(double rho, int budget) const {
  auto pts = sample(rho, budget);
  for (const auto& x : pts)
    for (double lam : {0.9, 0.5, 0.1, 0.01})
      if (!contains(lam * x)) return false;
  return true;
}

bool ConeSpec::origin_not_interior(double eps, int budget) const {
  for (int i = 0; i < budget; ++i) {
    auto h = halton_point(i, n);
    Vec x(n);
    for (int d = 0; d < n; ++d) x[d] = eps * (2.0 * h[d] - 1.0);
    if (vec_norm(x, norm_x) > 0 && !contains(x)) return true;
  }
  return false;
}

double nelder_mead_max(const std::function<double(const Vec&)>& f, Vec x0,
                       double step, int max_iter) {
  const int n = static_cast<int>(x0.size());
  std::vector<Vec> simplex;
  std::vector<double> val;
  simplex.push_back(x0);
  val.push_back(f(x0));
  for (int i = 0; i < n; ++i) {
    Vec x = x0;
    x[i] += step;
    simplex.push_back(x);
    val.push_back(f(x));
  }
  auto order = [&] {
    std::vector<int> idx(n + 1);
    for (int i = 0; i <= n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return val[a] > val[b]; });
    std::vector<Vec> s2;
    std::vector<double> v2;
    for (int i : idx) {
      s2.push_back(simplex[i]);
      v2.push_back(val[i]);
    }
    simplex = s2;
    val = v2;
  };
  for (int it = 0; it < max_iter; ++it) {
    order();
    Vec centroid = Vec::Zero(n);
    for (int i = 0; i < n; ++i) centroid += simplex[i];
    centroid /= n;
    Vec xr = centroid + (centroid - simplex[n]);
    double fr = f(xr);
    if (fr > val[0]) {
      Vec xe = centroid + 2.0 * (centroid - simplex[n]);
      double fe = f(xe);
      if (fe > fr) {
        simplex[n] = xe;
        val[n] = fe;
      } else {
        simplex[n] = xr;
        val[n] = fr;
      }
    } else if (fr > val[n - 1]) {
      simplex[n] = xr;
      val[n] = fr;
    } else {
      Vec xc = centroid + 0.5 * (simplex[n] - centroid);
      double fc = f(xc);
      if (fc > val[n]) {
        simplex[n] = xc;
        val[n] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
          val[i] = f(simplex[i]);
        }
      }
    }
  }
  order();
  return val[0];
}

double loglog_slope(const std::vector<double>& r,
                    const std::vector<double>& err) {
  std::vector<double> lx, ly;
  for (size_t i = 0; i < r.size(); ++i) {
    if (err[i] <= 0 || r[i] <= 0) continue;
    lx.push_back(std::log(r[i]));
    ly.push_back(std::log(err[i]));
  }
  if (lx.size() < 2) return 0.0;
  double mx = 0, my = 0;
  for (size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= lx.size();
  my /= ly.size();
  double num = 0, den = 0;
  for (size_t i = 0; i < lx.size(); ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  return den == 0 ? 0.0 : num / den;
}

namespace {

struct SysEval {
  const SystemJets& sys;
  polyalg::GradedMapJet dp, dq;
  bool has_q;

  explicit SysEval(const SystemJets& s)
      : sys(s), has_q(s.m > 0 && !s.q.components.empty()) {
    dp = polyalg::differentiate(s.p);
    if (has_q) dq = polyalg::differentiate(s.q);
  }

  Vec embed(const Vec& x) const {
    Vec xy = Vec::Zero(sys.n + sys.m);
    xy.head(sys.n) = x;
    return xy;
  }
  Vec p_x0(const Vec& x) const { return sys.p.eval(embed(x)); }
  Mat Dxp(const Vec& x) const {
    Mat J = sys.p.jacobian_at(embed(x));
    return J.leftCols(sys.n);
  }
  Mat Dyq(const Vec& x) const {
    Mat J = sys.q.jacobian_at(embed(x));
    return J.rightCols(sys.m);
  }
};

// sup over V_rho of fn, by low-discrepancy sampling plus Nelder-Mead polish.
// With radial=true, points are projected to the outer sphere |x| = rho before
// evaluation: the defining difference quotients of the constants are
// nondecreasing in the radius (convexity of the norm), so their sup over
// V_rho is attained there, and evaluating at radius rho avoids the
// cancellation the quotients suffer as x -> 0.
double polished_sup(const std::function<double(const Vec&)>& fn,
                    const ConeSpec& cone, double rho, int budget,
                    double* polish_gain, bool radial = false) {
  auto project = [&](const Vec& x) -> Vec {
    if (!radial) return x;
    double r = vec_norm(x, cone.norm_x);
    return Vec(rho / r * x);
  };
  auto pts = cone.sample(rho, budget);
  double best = -std::numeric_limits<double>::infinity();
  Vec best_x = pts[0];
  for (const auto& x : pts) {
    Vec z = project(x);
    if (!cone.in_Vrho(z, rho)) continue;
    double v = fn(z);
    if (v > best) {
      best = v;
      best_x = x;
    }
  }
  auto penalized = [&](const Vec& x) {
    double r = vec_norm(x, cone.norm_x);
    if (r == 0.0) return -1e100;
    Vec z = project(x);
    if (!cone.in_Vrho(z, rho)) return -1e100;
    return fn(z);
  };
  double polished = nelder_mead_max(penalized, best_x, 0.05 * rho);
  if (polish_gain) *polish_gain = std::max(*polish_gain, polished - best);
  return std::max(best, polished);
}

}  // namespace

DomainConstants compute_constants(const SystemJets& sys, const ConeSpec& cone,
                                  double rho, int budget) {
  if (rho <= 0) throw std::invalid_argument("compute_constants: rho <= 0");
  SysEval ev(sys);
  DomainConstants c;
  c.rho = rho;
  c.n = sys.n;
  c.m = sys.m;
  c.N = sys.N;
  c.M = sys.M;
  c.L = std::min(sys.N, sys.M);
  c.eta = 1 + sys.N - c.L;
  c.alpha = 1.0 / (sys.N - 1);
  c.sample_budget = budget;

  Norm nx = cone.norm_x;
  Norm ny = cone.norm_y;
  double gain = 0.0;
  const int n = sys.n;
  Mat Id = Mat::Identity(n, n);

  c.a_p = -polished_sup(
      [&](const Vec& x) {
        double r = vec_norm(x, nx);
        return (vec_norm(x + ev.p_x0(x), nx) - r) / std::pow(r, sys.N);
      },
      cone, rho, budget, &gain, true);
  c.b_p = polished_sup(
      [&](const Vec& x) {
        double r = vec_norm(x, nx);
        return vec_norm(ev.p_x0(x), nx) / std::pow(r, sys.N);
      },
      cone, rho, budget, &gain, true);
  c.A_p = -polished_sup(
      [&](const Vec& x) {
        double r = vec_norm(x, nx);
        return (op_norm(Id + ev.Dxp(x), nx, nx) - 1) / std::pow(r, sys.N - 1);
      },
      cone, rho, budget, &gain, true);
  c.B_p = polished_sup(
      [&](const Vec& x) {
        double r = vec_norm(x, nx);
        return (op_norm(Id - ev.Dxp(x), nx, nx) - 1) / std::pow(r, sys.N - 1);
      },
      cone, rho, budget, &gain, true);
  if (ev.has_q) {
    Mat Idm = Mat::Identity(sys.m, sys.m);
    c.B_q = -polished_sup(
        [&](const Vec& x) {
          double r = vec_norm(x, nx);
          return (op_norm(Idm - ev.Dyq(x), ny, ny) - 1) /
                 std::pow(r, sys.M - 1);
        },
        cone, rho, budget, &gain, true);
  }
  c.c_p = (c.B_q <= 0) ? c.a_p : c.b_p;
  c.d_p = (c.A_p <= 0) ? c.a_p : c.b_p;
  c.sampling_error = gain;
  return c;
}

namespace {

double r0_formula(const DomainConstants& c) {
  return c.N - 1 + c.B_p / c.a_p +
         std::max(c.eta - c.A_p / c.d_p, 0.0);
}

}  // namespace

HypothesisReport check_hypotheses(const DomainConstants& consts,
                                  const SystemJets& sys, const ConeSpec& cone,
                                  int budget) {
  HypothesisReport rep;
  const int N = consts.N, M = consts.M;

  // q(x,0) = 0, verified on the coefficient table.
  if (sys.m > 0 && !sys.q.components.empty()) {
    for (const auto& [d, comp] : sys.q.components) {
      if (comp.basis != polyalg::HomogeneousComponent::Basis::polynomial)
        continue;
      for (const auto& [e, v] : comp.coeffs) {
        bool pure_x = true;
        for (int i = sys.n; i < sys.n + sys.m; ++i)
          if (e[i] != 0) pure_x = false;
        if (pure_x && v.cwiseAbs().maxCoeff() > 1e-14)
          rep.q_vanishes_on_x_axis = false;
      }
    }
  }

  rep.H1_margin = consts.a_p;
  rep.H1 = consts.a_p > 0;

  if (M < N)
    rep.H2_margin = consts.B_q;
  else if (M == N)
    rep.H2_margin = consts.B_q + N * consts.a_p;
  else
    rep.H2_margin = std::numeric_limits<double>::infinity();
  rep.H2 = rep.q_vanishes_on_x_axis && rep.H2_margin > 0;

  // H3: C1 = inf over V_rho of dist(x + p(x,0), complement)/|x|^N.
  SysEval ev(sys);
  double neg_c1 = polished_sup(
      [&](const Vec& x) {
        double r = vec_norm(x, cone.norm_x);
        return -cone.dist_to_complement(x + ev.p_x0(x), consts.rho) /
               std::pow(r, N);
      },
      cone, consts.rho, budget, nullptr);
  rep.C1 = -neg_c1;
  rep.H3_margin = rep.C1;
  rep.H3 = rep.C1 > 0;

  rep.H1p_margin = (M > N) ? consts.A_p / consts.d_p + 1 : consts.a_p;
  rep.H1p = consts.a_p > 0 && (M <= N || consts.A_p / consts.d_p > -1);

  if (M < N)
    rep.H2p_margin = consts.B_q;
  else if (M == N)
    rep.H2p_margin = 2 + consts.B_q / consts.c_p -
                     std::max(1 - consts.A_p / consts.d_p, 0.0);
  else
    rep.H2p_margin = std::numeric_limits<double>::infinity();
  rep.H2p = rep.q_vanishes_on_x_axis && rep.H2p_margin > 0;

  bool bq_cond = (M > N)   ? consts.B_q > 0
                 : (M == N) ? consts.B_q > -N * consts.a_p
                            : true;
  rep.Hlambda =
      consts.a_p > 0 && rep.C1 > 0 && rep.q_vanishes_on_x_axis && bq_cond;

  rep.analytic_flag = consts.A_p > consts.b_p;
  return rep;
}

FamilyConstants constants_over_parameters(const ParameterFamily& family,
                                          const ConeSpec& cone, double rho,
                                          int budget) {
  if (family.lambdas.empty())
    throw std::invalid_argument("constants_over_parameters: empty Lambda");
  FamilyConstants out;
  for (double lam : family.lambdas) {
    SystemJets sys = family.system(lam);
    DomainConstants c = compute_constants(sys, cone, rho, budget);
    c.C1 = check_hypotheses(c, sys, cone, std::min(budget, 500)).C1;
    out.per_lambda.push_back(c);
  }
  DomainConstants c = out.per_lambda.front();
  for (const auto& cl : out.per_lambda) {
    c.A_p = std::min(c.A_p, cl.A_p);
    c.a_p = std::min(c.a_p, cl.a_p);
    c.B_q = std::min(c.B_q, cl.B_q);
    c.B_p = std::max(c.B_p, cl.B_p);
    c.C1 = std::min(c.C1, cl.C1);
  }
  // b_p as written in the parameter-family redefinition: inf over lambda of
  // the per-lambda a_p.
  c.b_p = c.a_p;
  for (const auto& cl : out.per_lambda) c.b_p = std::min(c.b_p, cl.a_p);
  c.c_p = (c.B_q <= 0) ? c.a_p : c.b_p;
  c.d_p = (c.A_p <= 0) ? c.a_p : c.b_p;
  out.combined = c;
  double r0 = r0_formula(c);
  for (const auto& cl : out.per_lambda)
    if (r0_formula(cl) > r0 + 1e-12) out.r0_dominates = false;
  return out;
}

RegularityReport regularity_report(const DomainConstants& c, double r,
                                   double kappa_a, double kappa_b,
                                   double B_hat) {
  if (!(kappa_a < c.a_p) || !(kappa_b > c.b_p) || !(B_hat > c.B_p))
    throw std::invalid_argument(
        "regularity_report: need kappa_a < a_p, kappa_b > b_p, B_hat > B_p");
  RegularityReport rep;
  rep.r0 = r0_formula(c);
  double kappa_d = (c.A_p <= 0) ? kappa_a : kappa_b;
  rep.ell0 = c.N - 1 + B_hat / kappa_a +
             std::max(c.eta - c.A_p / kappa_d, 0.0);

  bool r_finite = std::isfinite(r);
  double gap = c.eta - c.A_p / c.d_p;
  if (!r_finite) {
    rep.case_id = 3;
  } else if (gap <= 0) {
    rep.case_id = 1;
  } else {
    rep.case_id = 2;
    double bound = r - c.B_p / c.a_p - c.N + 1;
    rep.sigma_max =
        bound <= 0 ? 0 : std::ceil(bound / gap) - 1;  // largest k: k*gap < bound
  }

  double gap2 = 1 - c.A_p / c.d_p;
  if (gap2 > 0 && c.M >= c.N) {
    double lim = (c.M == c.N) ? 2 + c.B_q / c.c_p : 2.0;
    rep.sigma_formal = lim <= 0 ? 0 : std::ceil(lim / gap2) - 1;
  }

  rep.min_ell = static_cast<int>(std::floor(rep.r0)) + 1;
  rep.ell_exists = !r_finite || rep.min_ell <= r;
  return rep;
}

int OrbitDecomposition::ring_index(double xnorm) const {
  for (size_t k = 0; k + 1 < bbar_seq.size(); ++k)
    if (xnorm >= bbar_seq[k + 1] && xnorm <= abar_seq[k])
      return static_cast<int>(k);
  return -1;
}

OrbitDecomposition orbit_decomposition(
    const std::function<Vec(const Vec&)>& R, const DomainConstants& consts,
    const ConeSpec& cone, double kappa_a, double kappa_b, int k_max,
    const std::vector<Vec>& orbit_seeds, int j_max,
    const std::function<Vec(const Vec&)>& p_x0) {
  if (!(kappa_a < consts.a_p) || !(kappa_b > consts.b_p))
    throw std::invalid_argument(
        "orbit_decomposition: need kappa_a < a_p, kappa_b > b_p");
  OrbitDecomposition od;
  od.N = consts.N;
  od.alpha = consts.alpha;
  od.rho = consts.rho;
  od.kappa_a = kappa_a;
  od.kappa_b = kappa_b;
  od.a0 = std::pow(od.alpha / kappa_a, od.alpha);
  od.b0 = std::pow(od.alpha / kappa_b, od.alpha);
  od.u = std::pow(od.a0 / consts.rho, 1.0 / od.alpha);

  if (p_x0) {
    // R(x) - x - p(x,0) = O(|x|^{N+1}) on a radial scan.
    Vec dir = cone.sample(consts.rho, 1)[0];
    dir /= vec_norm(dir, cone.norm_x);
    std::vector<double> rs, errs;
    for (int i = 0; i < 20; ++i) {
      double r = consts.rho * std::pow(10.0, -2.0 * i / 19.0);
      Vec x = r * dir;
      double e = vec_norm(R(x) - x - p_x0(x), cone.norm_x);
      rs.push_back(r);
      errs.push_back(e);
    }
    double slope = loglog_slope(rs, errs);
    bool all_zero = true;
    for (double e : errs)
      if (e > 1e-14) all_zero = false;
    if (!all_zero && slope < consts.N + 1 - 0.5)
      throw std::invalid_argument(
          "orbit_decomposition: R - id - p has wrong leading order");
  }

  auto Rk = [&](double kap, double v) { return v - kap * std::pow(v, od.N); };
  od.abar_seq.resize(k_max + 2);
  od.bbar_seq.resize(k_max + 2);
  od.a_seq.resize(k_max + 2);
  od.b_seq.resize(k_max + 2);
  od.abar_seq[0] = od.a0 * std::pow(od.u, -od.alpha);
  od.bbar_seq[0] = od.b0 * std::pow(od.u, -od.alpha);
  for (int k = 0; k <= k_max; ++k) {
    od.abar_seq[k + 1] = Rk(kappa_a, od.abar_seq[k]);
    od.bbar_seq[k + 1] = Rk(kappa_b, od.bbar_seq[k]);
  }
  for (int k = 0; k <= k_max + 1; ++k) {
    double w = std::pow(od.u + k, od.alpha);
    od.a_seq[k] = od.abar_seq[k] * w;
    od.b_seq[k] = od.bbar_seq[k] * w;
    if (k >= 1 && !(od.bbar_seq[k] < od.abar_seq[k - 1]))
      od.interleaved = false;
  }

  // Fitted convergence exponents of a_k -> a0, b_k -> b0.
  auto fit_beta = [&](const std::vector<double>& seq, double limit) {
    std::vector<double> ks, errs;
    for (int k = std::max(2, k_max / 10); k <= k_max; k += std::max(1, k_max / 200)) {
      double e = std::abs(seq[k] - limit);
      if (e > 1e-15) {
        ks.push_back(k);
        errs.push_back(e);
      }
    }
    return -loglog_slope(ks, errs);
  };
  od.beta_a = fit_beta(od.a_seq, od.a0);
  od.beta_b = fit_beta(od.b_seq, od.b0);

  std::vector<Vec> seeds = orbit_seeds;
  if (seeds.empty()) seeds = cone.sample(consts.rho, 20);
  for (const auto& seed : seeds) {
    int k = od.ring_index(vec_norm(seed, cone.norm_x));
    if (k < 0) continue;
    Vec x = seed;
    for (int j = 0; j + k + 1 <= k_max && j <= j_max; ++j) {
      double nx = vec_norm(x, cone.norm_x);
      double lo = od.bbar_seq[k + j + 1], hi = od.abar_seq[k + j];
      double viol = std::max(lo - nx, nx - hi) / std::max(nx, 1e-300);
      if (viol > od.worst_violation) {
        od.worst_violation = viol;
        od.worst_point = seed;
      }
      if (viol > 1e-12) od.envelope_ok = false;
      x = R(x);
    }
  }
  return od;
}

}  // namespace paraman::domain
