#include "paraman/homological.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace paraman::homological {

namespace {

using HC = HomogeneousComponent;

constexpr double kTiny = 1e-300;

HC zero_comp(int degree, int n_in, int n_out) {
  return HC(degree, n_in, n_out);
}

// Rows [r0, r0+cnt) of a component.
HC rows_of(const HC& c, int r0, int cnt) {
  if (c.basis == HC::Basis::sampled) {
    auto base = c;
    return HC::sampled(c.degree, c.n_in, cnt, [base, r0, cnt](const Vec& u) {
      return Vec(base.rule(u).segment(r0, cnt));
    });
  }
  HC out(c.degree, c.n_in, cnt);
  for (const auto& [e, v] : c.coeffs) {
    Vec seg = v.segment(r0, cnt);
    if (seg.cwiseAbs().maxCoeff() > 0.0) out.add_term(e, seg);
  }
  return out;
}

// Vertical stack: top has n rows, bottom m rows, same degree and variables.
HC stack_rows(const HC& top, const HC& bottom) {
  const int n = top.n_out, m = bottom.n_out;
  if (top.basis == HC::Basis::sampled || bottom.basis == HC::Basis::sampled) {
    auto a = top, b = bottom;
    return HC::sampled(top.degree, top.n_in, n + m, [a, b, n, m](const Vec& u) {
      Vec out(n + m);
      out.head(n) = a.eval(u);
      out.tail(m) = m > 0 ? b.eval(u) : Vec(0);
      return out;
    });
  }
  HC out(top.degree, top.n_in, n + m);
  for (const auto& [e, v] : top.coeffs) {
    Vec w = Vec::Zero(n + m);
    w.head(n) = v;
    out.add_term(e, w);
  }
  for (const auto& [e, v] : bottom.coeffs) {
    Vec w = Vec::Zero(n + m);
    w.tail(m) = v;
    out.add_term(e, w);
  }
  return out;
}

HC add_comps(const HC& a, const HC& b) {
  GradedMapJet tmp(a.n_in, a.n_out, a.degree);
  tmp.set(a);
  tmp.add(b);
  return tmp.at(a.degree);
}

// Drop terms with nonzero y-exponents and re-index to the first n variables.
HC restrict_to_x(const HC& c, int n) {
  if (c.basis == HC::Basis::sampled)
    throw std::invalid_argument("restrict_to_x: sampled component");
  HC out(c.degree, n, c.n_out);
  for (const auto& [e, v] : c.coeffs) {
    bool pure = true;
    for (int i = n; i < static_cast<int>(e.size()); ++i)
      if (e[i] != 0) pure = false;
    if (!pure) continue;
    out.add_term(polyalg::MultiIndex(e.begin(), e.begin() + n), v);
  }
  return out;
}

// Split a row-major (rows x (n+m))-flattened Jacobian component in x-variables
// into its x-columns (rows x n) and y-columns (rows x m).
void split_jacobian(const HC& J, int rows, int n, int m, HC* Jx, HC* Jy) {
  *Jx = HC(J.degree, n, rows * n);
  if (m > 0) *Jy = HC(J.degree, n, rows * m);
  for (const auto& [e, v] : J.coeffs) {
    Vec vx = Vec::Zero(rows * n), vy = Vec::Zero(rows * m);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < n; ++c) vx[r * n + c] = v[r * (n + m) + c];
      for (int c = 0; c < m; ++c) vy[r * m + c] = v[r * (n + m) + n + c];
    }
    if (vx.size() && vx.cwiseAbs().maxCoeff() > 0.0) Jx->add_term(e, vx);
    if (m > 0 && vy.cwiseAbs().maxCoeff() > 0.0) Jy->add_term(e, vy);
  }
}

// The x-axis restrictions of the leading parts of the system, in n variables.
struct SysOps {
  int n = 1, m = 0, N = 2, M = 2, L = 2;
  HC p_x0;       // degree N, n out
  HC Dxp, Dyp;   // degree N-1; n*n and n*m flattened
  HC Dyq;        // degree M-1, m*m flattened (m > 0 only)
  bool has_q = false;
};

SysOps make_ops(const domain::SystemJets& sys) {
  SysOps o;
  o.n = sys.n;
  o.m = sys.m;
  o.N = sys.N;
  o.M = sys.M;
  o.L = std::min(sys.N, sys.M);
  const HC& pj = sys.p.at(sys.N);
  o.p_x0 = restrict_to_x(pj, sys.n);
  HC Jp = restrict_to_x(pj.jacobian(), sys.n);
  split_jacobian(Jp, sys.n, sys.n, sys.m, &o.Dxp, &o.Dyp);
  if (sys.m > 0 && sys.q.components.count(sys.M)) {
    o.has_q = true;
    HC Jq = restrict_to_x(sys.q.at(sys.M).jacobian(), sys.n);
    HC Jqx;
    split_jacobian(Jq, sys.m, sys.n, sys.m, &Jqx, &o.Dyq);
  }
  return o;
}

Vec adaptive_simpson(const std::function<Vec(double)>& f, double a, double b,
                     const Vec& fa, const Vec& fm, const Vec& fb, const Vec& S,
                     double tol, int depth) {
  double m = 0.5 * (a + b);
  Vec fl = f(0.5 * (a + m)), fr = f(0.5 * (m + b));
  Vec Sl = (m - a) / 6.0 * (fa + 4.0 * fl + fm);
  Vec Sr = (b - m) / 6.0 * (fm + 4.0 * fr + fb);
  Vec err = Sl + Sr - S;
  if (depth <= 0 || err.cwiseAbs().maxCoeff() < 15.0 * tol)
    return Sl + Sr + err / 15.0;
  return adaptive_simpson(f, a, m, fa, fl, fm, Sl, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, fr, fb, Sr, 0.5 * tol, depth - 1);
}

Vec integrate_interval(const std::function<Vec(double)>& f, double a, double b,
                       double tol) {
  Vec fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  Vec S = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, S, tol, 28);
}

// int_0^inf f(t) dt over dyadic s-intervals, s = t * scale, with a power-law
// tail estimate from the measured interval-contribution ratio.
Vec dyadic_improper(const std::function<Vec(double)>& f, int dim, double scale,
                    double gamma, double abs_tol) {
  if (gamma <= 1.0)
    throw DivergenceError(
        "improper integral: decay exponent gamma <= 1, integral diverges");
  Vec total = Vec::Zero(dim);
  double prev_norm = -1.0;
  double s_lo = 0.0, s_hi = 1.0;
  int slow = 0, stable = 0;
  Vec accel;  // total plus geometric tail estimate, previous octave
  for (int k = 0; k < 64; ++k) {
    Vec c = integrate_interval(f, s_lo / scale, s_hi / scale, abs_tol / 8.0);
    total += c;
    double cn = c.size() ? c.cwiseAbs().maxCoeff() : 0.0;
    if (k >= 1 && prev_norm > kTiny) {
      double r = cn / prev_norm;
      if (r >= 0.98) {
        if (++slow >= 8)
          throw DivergenceError(
              "improper integral: dyadic contributions are not decaying");
      } else {
        slow = 0;
      }
      if (r < 0.95) {
        // A t^{-gamma} tail contributes a geometric octave series, so the
        // measured-ratio tail estimate converges long before the raw sum;
        // accept it once it is stationary across two octaves.
        Vec s = total + c * (r / (1.0 - r));
        if (accel.size() &&
            (s - accel).cwiseAbs().maxCoeff() < abs_tol / 2.0) {
          if (++stable >= 2) return s;
        } else {
          stable = 0;
        }
        accel = s;
        if (cn < abs_tol / 4.0 && cn * r / (1.0 - r) < abs_tol / 2.0) return s;
      } else {
        accel = Vec();
        stable = 0;
      }
    } else if (k >= 1 && cn <= kTiny) {
      return total;
    }
    prev_norm = std::max(cn, kTiny);
    s_lo = s_hi;
    s_hi *= 2.0;
  }
  throw DivergenceError("improper integral: no convergence in 64 octaves");
}

Mat reshape_rowmajor(const Vec& v, int rows, int cols) {
  Mat A(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) A(r, c) = v[r * cols + c];
  return A;
}

Mat safe_inverse(const Mat& A, const char* what) {
  if (A.size() == 0) return A;
  Eigen::FullPivLU<Mat> lu(A);
  if (!lu.isInvertible())
    throw SingularityError(std::string(what) + ": matrix not invertible");
  return lu.inverse();
}

// Least-squares polynomial detection over cone sphere samples; falls back to
// a sampled-mode rule when the residual exceeds tol.
HC detect_or_sample(const std::function<Vec(const Vec&)>& solve_at, int degree,
                    int n, int n_out, const ConeSpec& cone, double rho,
                    double fit_tol, bool* polynomial) {
  const double r0 = 0.5 * rho;
  int nb = static_cast<int>(polyalg::exponents_of_degree(n, degree).size());
  int npts = nb + nb / 2 + 8;
  std::vector<Vec> pts, vals;
  for (const Vec& z : cone.sample(rho, npts)) {
    double zn = z.norm();
    if (zn < 1e-12 * rho) continue;
    pts.push_back(Vec(r0 / zn * z));
  }
  while (static_cast<int>(pts.size()) < nb)  // degenerate cones
    pts.push_back(pts.empty() ? Vec(Vec::Constant(n, r0 / std::sqrt(double(n))))
                              : pts.back());
  double maxval = 0.0;
  for (const Vec& z : pts) {
    vals.push_back(solve_at(z));
    maxval = std::max(maxval, vals.back().cwiseAbs().maxCoeff());
  }
  HC out;
  if (maxval <= kTiny) {
    if (polynomial) *polynomial = true;
    return zero_comp(degree, n, n_out);
  }
  if (polyalg::fit_polynomial(pts, vals, degree, n, n_out, fit_tol * maxval,
                              &out)) {
    if (polynomial) *polynomial = true;
    return out;
  }
  if (polynomial) *polynomial = false;
  double scale = std::pow(r0, degree);
  return HC::sampled(degree, n, n_out, [solve_at, r0, scale](const Vec& u) {
    return Vec(solve_at(Vec(r0 * u)) / scale);
  });
}

}  // namespace

Vec improper_quadrature(const std::function<Vec(double)>& fn, double gamma,
                        double scale, double abs_tol) {
  Vec probe = fn(0.0);
  return -dyadic_improper(fn, static_cast<int>(probe.size()), scale, gamma,
                          abs_tol);
}

// ---------------------------------------------------------------------------
// FlowOracle

FlowOracle FlowOracle::closed(int n, int m, int N,
                              std::function<Vec(double, const Vec&)> phi,
                              std::function<Mat(double, const Vec&)> M1,
                              std::function<Mat(double, const Vec&)> M2,
                              std::function<Mat(double, const Vec&)> M1inv,
                              std::function<Mat(double, const Vec&)> M2inv) {
  FlowOracle o;
  o.mode = Mode::closed;
  o.n = n;
  o.m = m;
  o.N = N;
  o.phi_rule = std::move(phi);
  o.M1_rule = std::move(M1);
  o.M2_rule = std::move(M2);
  o.M1inv_rule = std::move(M1inv);
  o.M2inv_rule = std::move(M2inv);
  return o;
}

FlowOracle FlowOracle::numeric(const GradedMapJet& p_x,
                               const GradedMapJet& Dyq_x, int m, int N,
                               double tol) {
  FlowOracle o;
  o.mode = Mode::numeric;
  o.n = p_x.n_in;
  o.m = m;
  o.N = N;
  o.tol = tol;
  o.p_x = p_x;
  o.Dxp = polyalg::differentiate(p_x);
  o.Dyq_x = Dyq_x;
  return o;
}

FlowOracle numeric_oracle(const domain::SystemJets& sys, double tol) {
  SysOps ops = make_ops(sys);
  GradedMapJet p(sys.n, sys.n, sys.N);
  p.set(ops.p_x0);
  GradedMapJet dq(sys.n, sys.m * sys.m, std::max(sys.M - 1, 0));
  if (ops.has_q) dq.set(ops.Dyq);
  return FlowOracle::numeric(p, dq, sys.m, sys.N, tol);
}

namespace {

// Joint state layout for the numeric oracle: [x, M1 flat, M2 flat, extra].
struct NumericField {
  const FlowOracle* o;
  bool with_m2;
  FlowOracle::Integrand extra;  // optional integrand accumulator
  int extra_dim = 0;

  int dim() const {
    return o->n + o->n * o->n + (with_m2 ? o->m * o->m : 0) + extra_dim;
  }
  Vec init(const Vec& x) const {
    Vec z = Vec::Zero(dim());
    z.head(o->n) = x;
    Mat I1 = Mat::Identity(o->n, o->n);
    for (int r = 0; r < o->n; ++r)
      for (int c = 0; c < o->n; ++c) z[o->n + r * o->n + c] = I1(r, c);
    if (with_m2) {
      int off = o->n + o->n * o->n;
      for (int r = 0; r < o->m; ++r) z[off + r * o->m + r] = 1.0;
    }
    return z;
  }
  void unpack(const Vec& z, Vec* x, Mat* M1, Mat* M2) const {
    *x = z.head(o->n);
    *M1 = reshape_rowmajor(z.segment(o->n, o->n * o->n), o->n, o->n);
    if (with_m2)
      *M2 = reshape_rowmajor(z.segment(o->n + o->n * o->n, o->m * o->m), o->m,
                             o->m);
    else
      *M2 = Mat();
  }
  Vec operator()(double t, const Vec& z) const {
    Vec x;
    Mat M1, M2;
    unpack(z, &x, &M1, &M2);
    Vec dz = Vec::Zero(dim());
    dz.head(o->n) = o->p_x.eval(x);
    Mat A = reshape_rowmajor(o->Dxp.eval(x), o->n, o->n);
    Mat dM1 = A * M1;
    for (int r = 0; r < o->n; ++r)
      for (int c = 0; c < o->n; ++c) dz[o->n + r * o->n + c] = dM1(r, c);
    if (with_m2) {
      Mat B = reshape_rowmajor(o->Dyq_x.eval(x), o->m, o->m);
      Mat dM2 = B * M2;
      int off = o->n + o->n * o->n;
      for (int r = 0; r < o->m; ++r)
        for (int c = 0; c < o->m; ++c) dz[off + r * o->m + c] = dM2(r, c);
    }
    if (extra_dim > 0) {
      Mat M1i = safe_inverse(M1, "M1");
      Mat M2i = with_m2 ? safe_inverse(M2, "M2") : Mat();
      dz.tail(extra_dim) = extra(t, x, M1i, M2i);
    }
    return dz;
  }
};

}  // namespace

Vec FlowOracle::phi(double t, const Vec& x) const {
  if (mode == Mode::closed) return phi_rule(t, x);
  NumericField f{this, false, {}, 0};
  Vec z = integrate_ode([&f](double s, const Vec& w) { return f(s, w); }, 0.0,
                        t, f.init(x), tol, tol * 1e-2);
  return z.head(n);
}

Mat FlowOracle::M1(double t, const Vec& x) const {
  if (mode == Mode::closed) return M1_rule(t, x);
  NumericField f{this, false, {}, 0};
  Vec z = integrate_ode([&f](double s, const Vec& w) { return f(s, w); }, 0.0,
                        t, f.init(x), tol, tol * 1e-2);
  return reshape_rowmajor(z.segment(n, n * n), n, n);
}

Mat FlowOracle::M2(double t, const Vec& x) const {
  if (mode == Mode::closed) return M2_rule(t, x);
  NumericField f{this, true, {}, 0};
  Vec z = integrate_ode([&f](double s, const Vec& w) { return f(s, w); }, 0.0,
                        t, f.init(x), tol, tol * 1e-2);
  return reshape_rowmajor(z.segment(n + n * n, m * m), m, m);
}

Mat FlowOracle::M1inv(double t, const Vec& x) const {
  if (mode == Mode::closed && M1inv_rule) return M1inv_rule(t, x);
  return safe_inverse(M1(t, x), "M1");
}

Mat FlowOracle::M2inv(double t, const Vec& x) const {
  if (mode == Mode::closed && M2inv_rule) return M2inv_rule(t, x);
  return safe_inverse(M2(t, x), "M2");
}

Vec FlowOracle::flow_integral(const Vec& x, int out_dim, const Integrand& g,
                              double gamma, double abs_tol) const {
  if (gamma <= 1.0)
    throw DivergenceError(
        "flow_integral: decay exponent gamma <= 1, integral diverges");
  double w = std::pow(std::max(x.norm(), 1e-300), N - 1);
  if (mode == Mode::closed) {
    auto fn = [&](double t) {
      Vec ph = phi_rule(t, x);
      Mat M1i = M1inv_rule ? M1inv_rule(t, x)
                           : (M1_rule ? safe_inverse(M1_rule(t, x), "M1")
                                      : Mat());
      Mat M2i = M2inv_rule ? M2inv_rule(t, x)
                           : (M2_rule ? safe_inverse(M2_rule(t, x), "M2")
                                      : Mat());
      return g(t, ph, M1i, M2i);
    };
    return dyadic_improper(fn, out_dim, w, gamma, abs_tol);
  }
  // Numeric mode: co-integrate the flow, the variational matrices and the
  // integral over doubling time chunks.
  bool with_m2 = m > 0 && Dyq_x.components.size() > 0;
  NumericField f{this, with_m2, g, out_dim};
  Vec z = f.init(x);
  double t_lo = 0.0, t_hi = 1.0 / w;
  double prev_norm = -1.0;
  int slow = 0, stable = 0;
  Vec accel;  // running sum plus geometric tail estimate, previous chunk
  for (int k = 0; k < 64; ++k) {
    Vec prev_tail = z.tail(out_dim);
    z = integrate_ode([&f](double s, const Vec& wv) { return f(s, wv); }, t_lo,
                      t_hi, z, tol, tol * 1e-2);
    Vec c = z.tail(out_dim) - prev_tail;
    double cn = c.size() ? c.cwiseAbs().maxCoeff() : 0.0;
    if (k >= 1 && prev_norm > kTiny) {
      double r = cn / prev_norm;
      if (r >= 0.98) {
        if (++slow >= 8)
          throw DivergenceError(
              "flow_integral: chunk contributions are not decaying");
      } else {
        slow = 0;
      }
      if (r < 0.95) {
        // Doubling-chunk contributions of a power-law tail are geometric;
        // stop on a stationary measured-ratio tail estimate (see
        // dyadic_improper).
        Vec s = z.tail(out_dim) + c * (r / (1.0 - r));
        if (accel.size() &&
            (s - accel).cwiseAbs().maxCoeff() < abs_tol / 2.0) {
          if (++stable >= 2) return s;
        } else {
          stable = 0;
        }
        accel = s;
        if (cn < abs_tol / 4.0 && cn * r / (1.0 - r) < abs_tol / 2.0) return s;
      } else {
        accel = Vec();
        stable = 0;
      }
    } else if (k >= 1 && cn <= kTiny) {
      return z.tail(out_dim);
    }
    prev_norm = std::max(cn, kTiny);
    t_lo = t_hi;
    t_hi *= 2.0;
  }
  throw DivergenceError("flow_integral: no convergence in 64 chunks");
}

// ---------------------------------------------------------------------------
// Graded matrix-vector products

HC matvec(const HC& A, int rows, int cols, const HC& v) {
  if (v.n_out != cols || A.n_out != rows * cols)
    throw std::invalid_argument("matvec: dimension mismatch");
  if (A.basis == HC::Basis::sampled || v.basis == HC::Basis::sampled) {
    auto a = A, b = v;
    return HC::sampled(A.degree + v.degree, A.n_in, rows,
                       [a, b, rows, cols](const Vec& u) {
                         return Vec(reshape_rowmajor(a.eval(u), rows, cols) *
                                    b.eval(u));
                       });
  }
  HC out(A.degree + v.degree, A.n_in, rows);
  for (const auto& [ea, va] : A.coeffs) {
    Mat Am = reshape_rowmajor(va, rows, cols);
    for (const auto& [ev, vv] : v.coeffs) {
      polyalg::MultiIndex e(ea.size());
      for (size_t i = 0; i < e.size(); ++i) e[i] = ea[i] + ev[i];
      out.add_term(e, Vec(Am * vv));
    }
  }
  out.prune();
  return out;
}

GradedMapJet matvec_graded(const GradedMapJet& A, int rows, int cols,
                           const GradedMapJet& v, int cutoff) {
  GradedMapJet out(A.n_in, rows, cutoff);
  for (const auto& [da, ca] : A.components)
    for (const auto& [dv, cv] : v.components) {
      if (da + dv > cutoff) continue;
      out.add(matvec(ca, rows, cols, cv));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Order-j solvers

HC solve_Ky(const HC& E_y, const FlowOracle& oracle, YCase ycase,
            const domain::SystemJets& sys, const ConeSpec& cone, double rho,
            double fit_tol) {
  const int L = std::min(sys.N, sys.M);
  const int jj = E_y.degree - L + 1;  // order of the unknown
  if (sys.m == 0 || E_y.is_zero()) return zero_comp(jj, sys.n, sys.m);
  SysOps ops = make_ops(sys);
  const double alpha = 1.0 / (sys.N - 1);
  const double gamma = alpha * E_y.degree;

  std::function<Vec(const Vec&)> solve_at;
  if (ycase == YCase::NgtM) {
    if (!ops.has_q)
      throw std::invalid_argument("solve_Ky: N > M requires a q jet");
    HC Dyq = ops.Dyq;
    HC Ey = E_y;
    int m = sys.m;
    solve_at = [Dyq, Ey, m](const Vec& z) {
      Mat Q = reshape_rowmajor(Dyq.eval(z), m, m);
      Eigen::FullPivLU<Mat> lu(Q);
      if (!lu.isInvertible())
        throw SingularityError("solve_Ky: D_y q(x,0) not invertible");
      return Vec(-lu.solve(Ey.eval(z)));
    };
  } else {
    HC Ey = E_y;
    bool need_m2 = (ycase == YCase::NeqM);
    int m = sys.m;
    const FlowOracle* orc = &oracle;
    double w_tol = 1e-11;
    solve_at = [Ey, need_m2, m, orc, gamma, w_tol](const Vec& z) {
      double scale = std::max(Ey.eval(z).cwiseAbs().maxCoeff(), kTiny);
      double w = std::pow(std::max(z.norm(), 1e-300), orc->N - 1);
      auto g = [&Ey, need_m2](double, const Vec& ph, const Mat&,
                              const Mat& M2i) {
        Vec e = Ey.eval(ph);
        return need_m2 ? Vec(M2i * e) : e;
      };
      // int_inf^0 = -int_0^inf
      return Vec(-orc->flow_integral(z, m, g, gamma, w_tol * scale / w));
    };
  }
  bool poly = true;
  return detect_or_sample(solve_at, jj, sys.n, sys.m, cone, rho, fit_tol,
                          &poly);
}

HC solve_Kx_free(const HC& E_x, const HC& Kx_choice,
                 const domain::SystemJets& sys, const HC& K_y) {
  SysOps ops = make_ops(sys);
  HC R = E_x;
  if (K_y.n_out == sys.m && sys.m > 0 && !K_y.is_zero())
    R = add_comps(R, matvec(ops.Dyp, sys.n, sys.m, K_y));
  if (!Kx_choice.is_zero()) {
    R = add_comps(R, matvec(ops.Dxp, sys.n, sys.n, Kx_choice));
    HC t = matvec(Kx_choice.jacobian(), sys.n, sys.n, ops.p_x0);
    GradedMapJet s(t.n_in, t.n_out, t.degree);
    s.set(t);
    R = add_comps(R, s.scaled(-1.0).at(t.degree));
  }
  if (R.basis == HC::Basis::polynomial) R.prune(0.0);
  return R;
}

HC solve_Kx_integral(const HC& E_x, const HC* R_term, const FlowOracle& oracle,
                     const domain::SystemJets& sys, const HC& K_y, int j,
                     int ell_star, const ConeSpec& cone, double rho,
                     double fit_tol) {
  if (j < ell_star - sys.N + 2)
    throw ConvergenceThresholdError(
        "solve_Kx_integral: order " + std::to_string(j) +
        " is below the convergence threshold ell_star - N + 2 = " +
        std::to_string(ell_star - sys.N + 2));
  SysOps ops = make_ops(sys);
  // h = E_x + D_y p(x,0) K_y - R, then K_x = int_inf^0 M1^{-1} h(phi) dt.
  HC h = E_x;
  if (K_y.n_out == sys.m && sys.m > 0 && !K_y.is_zero())
    h = add_comps(h, matvec(ops.Dyp, sys.n, sys.m, K_y));
  if (R_term && !R_term->is_zero()) {
    GradedMapJet s(R_term->n_in, R_term->n_out, R_term->degree);
    s.set(*R_term);
    h = add_comps(h, s.scaled(-1.0).at(R_term->degree));
  }
  const double alpha = 1.0 / (sys.N - 1);
  const double gamma = alpha * h.degree;
  const FlowOracle* orc = &oracle;
  const int n = sys.n;
  auto solve_at = [h, orc, gamma, n](const Vec& z) {
    double scale = std::max(h.eval(z).cwiseAbs().maxCoeff(), kTiny);
    double w = std::pow(std::max(z.norm(), 1e-300), orc->N - 1);
    auto g = [&h](double, const Vec& ph, const Mat& M1i, const Mat&) {
      return Vec(M1i * h.eval(ph));
    };
    return Vec(-orc->flow_integral(z, n, g, gamma, 1e-11 * scale / w));
  };
  bool poly = true;
  return detect_or_sample(solve_at, j, sys.n, sys.n, cone, rho, fit_tol,
                          &poly);
}

// ---------------------------------------------------------------------------
// Map stepper

MapState seed_map_state(const domain::SystemJets& sys, const GradedMapJet& P) {
  MapState st;
  st.sys = sys;
  st.P = P;
  SysOps ops = make_ops(sys);
  if (sys.m > 0 && ops.has_q && sys.M <= sys.N) {
    HC q_x0 = restrict_to_x(sys.q.at(sys.M), sys.n);
    if (q_x0.max_abs_coeff() > 1e-12)
      throw std::invalid_argument(
          "seed_map_state: q(x,0) != 0 with M <= N is not supported");
  }
  // K^1 = (x, 0)
  GradedMapJet K(sys.n, sys.n + sys.m, 1);
  HC id1(1, sys.n, sys.n + sys.m);
  for (int i = 0; i < sys.n; ++i) {
    polyalg::MultiIndex e(sys.n, 0);
    e[i] = 1;
    Vec v = Vec::Zero(sys.n + sys.m);
    v[i] = 1.0;
    id1.add_term(e, v);
  }
  K.set(id1);
  st.K = K;
  // R = x + p(x,0)
  GradedMapJet R = GradedMapJet::identity(sys.n, sys.N);
  R.add(ops.p_x0);
  st.R = R;
  st.j_done = 1;
  return st;
}

void residual_slopes(const GradedMapJet& P, const GradedMapJet& K,
                     const GradedMapJet& R, const ConeSpec& cone, double rho,
                     int n_rows_x, double* slope_x, double* slope_y) {
  (void)rho;
  const int n = K.n_in, ntot = K.n_out;
  const int m = ntot - n_rows_x;
  std::vector<Vec> dirs;
  for (const Vec& z : cone.sample(1.0, 24)) {
    if (z.norm() < 1e-9) continue;
    dirs.push_back(Vec(z / z.norm()));
    if (dirs.size() >= 5) break;
  }
  if (dirs.empty()) dirs.push_back(Vec(Vec::Constant(n, 1.0 / std::sqrt(n))));
  std::vector<double> rs, ex, ey;
  for (int i = 0; i < 12; ++i) {
    double r = std::pow(10.0, -3.0 + 2.0 * i / 11.0);
    double mx = 0, my = 0;
    for (const Vec& d : dirs) {
      Vec x = r * d;
      Vec E = P.eval(K.eval(x)) - K.eval(R.eval(x));
      mx = std::max(mx, E.head(n_rows_x).cwiseAbs().maxCoeff());
      if (m > 0) my = std::max(my, E.tail(m).cwiseAbs().maxCoeff());
    }
    rs.push_back(r);
    ex.push_back(mx);
    ey.push_back(my);
  }
  auto fit = [&rs](const std::vector<double>& e) {
    // Discard scan points that fall onto the numerical noise floor of the
    // solved coefficients; they flatten the fitted slope.
    double top = *std::max_element(e.begin(), e.end());
    std::vector<double> r2, e2;
    for (size_t i = 0; i < e.size(); ++i)
      if (e[i] > std::max(kTiny, 1e-9 * top)) {
        r2.push_back(rs[i]);
        e2.push_back(e[i]);
      }
    if (r2.size() < 3) return std::numeric_limits<double>::infinity();
    return domain::loglog_slope(r2, e2);
  };
  if (slope_x) *slope_x = fit(ex);
  if (slope_y)
    *slope_y = m > 0 ? fit(ey) : std::numeric_limits<double>::infinity();
}

HomologicalStep step_map(MapState& state, const FlowOracle& oracle,
                         const ConeSpec& cone, double rho, Policy policy,
                         int ell_star) {
  if (!state.polynomial_state)
    throw ConvergenceThresholdError(
        "step_map: state has non-polynomial components; further graded "
        "composition is not supported");
  const auto& sys = state.sys;
  const int n = sys.n, m = sys.m, N = sys.N, L = std::min(sys.N, sys.M);
  const int j = state.j_done + 1;
  const int cutoff = j + N - 1;

  GradedMapJet E = polyalg::compose_truncated(state.P, state.K, cutoff);
  E.add(polyalg::compose_truncated(state.K, state.R, cutoff).scaled(-1.0));

  HC Ex = E.has(j + N - 1) ? rows_of(E.at(j + N - 1), 0, n)
                           : zero_comp(j + N - 1, n, n);
  HC Ey = (m > 0 && E.has(j + L - 1)) ? rows_of(E.at(j + L - 1), n, m)
                                      : zero_comp(j + L - 1, n, m);

  HomologicalStep step;
  step.j = j;
  step.ycase = sys.N < sys.M   ? YCase::NltM
               : sys.N > sys.M ? YCase::NgtM
                               : YCase::NeqM;
  step.Ky = m > 0 ? solve_Ky(Ey, oracle, step.ycase, sys, cone, rho)
                  : zero_comp(j, n, 0);
  step.Ky_polynomial = step.Ky.basis == HC::Basis::polynomial;

  bool integral_mode =
      policy == Policy::R_simplest && j >= ell_star - N + 2;
  if (integral_mode) {
    step.kx_integral = true;
    step.Kx = solve_Kx_integral(Ex, nullptr, oracle, sys, step.Ky, j, ell_star,
                                cone, rho);
    step.R_term = zero_comp(j + N - 1, n, n);
  } else {
    step.Kx = zero_comp(j, n, n);
    step.R_term = solve_Kx_free(Ex, step.Kx, sys, step.Ky);
  }
  step.Kx_polynomial = step.Kx.basis == HC::Basis::polynomial;

  HC Kj = stack_rows(step.Kx, step.Ky);
  if (!Kj.is_zero()) state.K.add(Kj);
  state.K.max_degree = std::max(state.K.max_degree, j);
  if (!step.R_term.is_zero()) state.R.add(step.R_term);
  state.j_done = j;
  state.polynomial_state = step.Ky_polynomial && step.Kx_polynomial;

  residual_slopes(state.P, state.K, state.R, cone, rho, n, &step.slope_x,
                  &step.slope_y);
  return step;
}

// ---------------------------------------------------------------------------
// Flow stepper

std::pair<GradedMapJet, PeriodicGradedJet> split_mean(
    const PeriodicGradedJet& h) {
  return {polyalg::time_mean(h), polyalg::oscillatory_part(h)};
}

namespace {

// Spectral time derivative / antiderivative of one degree's sample set.
std::vector<HC> spectral_time_op(const std::vector<HC>& comps, double period,
                                 bool antiderivative) {
  const int ns = static_cast<int>(comps.size());
  const int n_in = comps[0].n_in, n_out = comps[0].n_out,
            deg = comps[0].degree;
  std::map<polyalg::MultiIndex, int> index;
  for (const HC& c : comps) {
    if (c.basis == HC::Basis::sampled)
      throw std::invalid_argument("spectral_time_op: sampled component");
    for (const auto& [e, v] : c.coeffs)
      if (!index.count(e)) index.emplace(e, static_cast<int>(index.size()));
  }
  const int nt = static_cast<int>(index.size());
  std::vector<Vec> series(ns, Vec::Zero(nt * n_out));
  for (int s = 0; s < ns; ++s)
    for (const auto& [e, v] : comps[s].coeffs)
      series[s].segment(index[e] * n_out, n_out) = v;
  std::vector<Vec> out_series =
      antiderivative ? polyalg::periodic_antiderivative(series, period)
                     : polyalg::periodic_derivative(series, period);
  // Suppress DFT roundoff relative to the input scale (a constant series must
  // differentiate to exactly zero).
  double in_scale = 0.0;
  for (const Vec& s : series)
    if (s.size()) in_scale = std::max(in_scale, s.cwiseAbs().maxCoeff());
  // The derivative amplifies DFT roundoff by up to the Nyquist frequency.
  double floor = (antiderivative ? 1e-13 : 1e-11) * in_scale;
  std::vector<HC> out(ns, HC(deg, n_in, n_out));
  for (int s = 0; s < ns; ++s)
    for (const auto& [e, idx] : index) {
      Vec v = out_series[s].segment(idx * n_out, n_out);
      if (v.cwiseAbs().maxCoeff() > floor) out[s].add_term(e, v);
    }
  return out;
}

void add_periodic(PeriodicGradedJet& K, int degree,
                  const std::vector<HC>& samples) {
  if (!K.has(degree)) {
    K.set(degree, samples);
    return;
  }
  auto cur = K.at(degree);
  for (int s = 0; s < K.n_samples; ++s) cur[s] = add_comps(cur[s], samples[s]);
  K.set(degree, std::move(cur));
}

std::vector<HC> component_rows(const std::vector<GradedMapJet>& jets,
                               int degree, int r0, int cnt, int n_in) {
  std::vector<HC> out;
  out.reserve(jets.size());
  for (const auto& J : jets)
    out.push_back(J.has(degree) ? rows_of(J.at(degree), r0, cnt)
                                : zero_comp(degree, n_in, cnt));
  return out;
}

HC mean_comp(const std::vector<HC>& comps) {
  GradedMapJet acc(comps[0].n_in, comps[0].n_out, comps[0].degree);
  acc.set(comps[0]);
  for (size_t s = 1; s < comps.size(); ++s) acc.add(comps[s]);
  return acc.scaled(1.0 / static_cast<double>(comps.size()))
      .at(comps[0].degree);
}

std::vector<HC> subtract_mean(const std::vector<HC>& comps, const HC& mean) {
  GradedMapJet neg(mean.n_in, mean.n_out, mean.degree);
  neg.set(mean);
  HC negc = neg.scaled(-1.0).at(mean.degree);
  std::vector<HC> out;
  out.reserve(comps.size());
  for (const HC& c : comps) out.push_back(add_comps(c, negc));
  return out;
}

}  // namespace

std::vector<GradedMapJet> flow_error_jets_with(const FlowState& state,
                                               int cutoff,
                                               const XComposer& compose_X) {
  const int n = state.sys.n, m = state.sys.m;
  const int ns = state.K.n_samples;
  // Spectral d/dt of every stored degree of K.
  std::map<int, std::vector<HC>> dKdt;
  for (const auto& [d, samples] : state.K.components)
    dKdt[d] = spectral_time_op(samples, state.K.period, false);
  std::vector<GradedMapJet> out;
  out.reserve(ns);
  for (int s = 0; s < ns; ++s) {
    GradedMapJet Ks = state.K.sample_jet(s);
    GradedMapJet Es = compose_X(Ks, s, cutoff);
    Es.add(matvec_graded(polyalg::differentiate(Ks), n + m, n, state.Y, cutoff)
               .scaled(-1.0));
    for (const auto& [d, samples] : dKdt) {
      if (d > cutoff) continue;
      GradedMapJet neg(n, n + m, d);
      neg.set(samples[s]);
      Es.add(neg.scaled(-1.0));
    }
    out.push_back(std::move(Es));
  }
  return out;
}

std::vector<GradedMapJet> flow_error_jets(const FlowState& state, int cutoff) {
  const PeriodicGradedJet* X = &state.X;
  return flow_error_jets_with(
      state, cutoff, [X](const GradedMapJet& Ks, int s, int cut) {
        return polyalg::compose_truncated(X->sample_jet(s), Ks, cut);
      });
}

PeriodicGradedJet periodic_time_derivative(const PeriodicGradedJet& K) {
  PeriodicGradedJet out(K.n_in, K.n_out, K.max_degree, K.period, K.n_samples);
  for (const auto& [d, samples] : K.components)
    out.set(d, spectral_time_op(samples, K.period, false));
  return out;
}

FlowState seed_flow_state(const domain::SystemJets& sys,
                          const PeriodicGradedJet& X) {
  FlowState st;
  st.sys = sys;
  st.X = X;
  SysOps ops = make_ops(sys);
  const int n = sys.n, m = sys.m, N = sys.N, L = std::min(sys.N, sys.M);
  if (m > 0 && ops.has_q && sys.M <= sys.N) {
    HC q_x0 = restrict_to_x(sys.q.at(sys.M), n);
    if (q_x0.max_abs_coeff() > 1e-12)
      throw std::invalid_argument(
          "seed_flow_state: q(x,0) != 0 with M <= N is not supported");
  }
  PeriodicGradedJet K(n, n + m, 1, X.period, X.n_samples);
  HC id1(1, n, n + m);
  for (int i = 0; i < n; ++i) {
    polyalg::MultiIndex e(n, 0);
    e[i] = 1;
    Vec v = Vec::Zero(n + m);
    v[i] = 1.0;
    id1.add_term(e, v);
  }
  K.set_static(id1);
  st.K = K;
  GradedMapJet Y(n, n, N);
  Y.set(ops.p_x0);
  st.Y = Y;
  st.j_done = 1;
  // Oscillatory fix at order 1: absorb time dependence of the leading parts.
  auto E = flow_error_jets(st, N);
  std::vector<HC> ExS = component_rows(E, N, 0, n, n);
  HC Ex_mean = mean_comp(ExS);
  if (Ex_mean.max_abs_coeff() > 1e-10)
    throw std::invalid_argument(
        "seed_flow_state: mean degree-N part of X_x differs from p(x,0)");
  std::vector<HC> ExO = subtract_mean(ExS, Ex_mean);
  bool x_osc = false;
  for (const HC& c : ExO)
    if (c.max_abs_coeff() > 1e-14) x_osc = true;
  if (x_osc) {
    auto Kt = spectral_time_op(ExO, X.period, true);
    std::vector<HC> stacked;
    for (const HC& c : Kt) stacked.push_back(stack_rows(c, zero_comp(N, n, m)));
    add_periodic(st.K, N, stacked);
  }
  if (m > 0) {
    std::vector<HC> EyS = component_rows(E, L, n, m, n);
    HC Ey_mean = mean_comp(EyS);
    if (Ey_mean.max_abs_coeff() > 1e-10)
      throw std::invalid_argument(
          "seed_flow_state: mean degree-L part of X_y does not vanish on the "
          "x-axis");
    std::vector<HC> EyO = subtract_mean(EyS, Ey_mean);
    bool y_osc = false;
    for (const HC& c : EyO)
      if (c.max_abs_coeff() > 1e-14) y_osc = true;
    if (y_osc) {
      auto Kt = spectral_time_op(EyO, X.period, true);
      std::vector<HC> stacked;
      for (const HC& c : Kt)
        stacked.push_back(stack_rows(zero_comp(L, n, n), c));
      add_periodic(st.K, L, stacked);
    }
  }
  return st;
}

HomologicalStep step_flow_given_errors(FlowState& state,
                                       const std::vector<GradedMapJet>& E,
                                       const FlowOracle& oracle,
                                       const ConeSpec& cone, double rho,
                                       Policy policy, int ell_star) {
  const auto& sys = state.sys;
  const int n = sys.n, m = sys.m, N = sys.N, L = std::min(sys.N, sys.M);
  const int j = state.j_done + 1;

  auto comp_scale = [](const std::vector<HC>& cs) {
    double sc = 0.0;
    for (const HC& c : cs) sc = std::max(sc, c.max_abs_coeff());
    return sc;
  };
  std::vector<HC> ExS = component_rows(E, j + N - 1, 0, n, n);
  double scale_x = comp_scale(ExS);
  HC Ex = mean_comp(ExS);
  Ex.prune(1e-13 * scale_x);
  std::vector<HC> ExO = subtract_mean(ExS, Ex);
  HC Ey = zero_comp(j + L - 1, n, m);
  std::vector<HC> EyO;
  double scale_y = 0.0;
  if (m > 0) {
    std::vector<HC> EyS = component_rows(E, j + L - 1, n, m, n);
    scale_y = comp_scale(EyS);
    Ey = mean_comp(EyS);
    Ey.prune(1e-13 * scale_y);
    EyO = subtract_mean(EyS, Ey);
  }

  HomologicalStep step;
  step.j = j;
  step.ycase = sys.N < sys.M   ? YCase::NltM
               : sys.N > sys.M ? YCase::NgtM
                               : YCase::NeqM;
  step.Ky = m > 0 ? solve_Ky(Ey, oracle, step.ycase, sys, cone, rho)
                  : zero_comp(j, n, 0);
  step.Ky_polynomial = step.Ky.basis == HC::Basis::polynomial;

  bool integral_mode = policy == Policy::R_simplest && j >= ell_star - N + 2;
  if (integral_mode) {
    step.kx_integral = true;
    step.Kx = solve_Kx_integral(Ex, nullptr, oracle, sys, step.Ky, j, ell_star,
                                cone, rho);
    step.R_term = zero_comp(j + N - 1, n, n);
  } else {
    step.Kx = zero_comp(j, n, n);
    step.R_term = solve_Kx_free(Ex, step.Kx, sys, step.Ky);
  }
  step.Kx_polynomial = step.Kx.basis == HC::Basis::polynomial;
  if (!step.Kx_polynomial || !step.Ky_polynomial)
    throw ConvergenceThresholdError(
        "step_flow: non-polynomial order-" + std::to_string(j) +
        " solution; the flow stepper requires polynomial components");

  // Mean update.
  HC Kj = stack_rows(step.Kx, step.Ky);
  if (!Kj.is_zero())
    add_periodic(state.K, j, std::vector<HC>(state.K.n_samples, Kj));
  if (!step.R_term.is_zero()) state.Y.add(step.R_term);

  // Oscillatory update: dK~/dt = (E~_x, E~_y).
  bool x_osc = false;
  for (const HC& c : ExO)
    if (c.max_abs_coeff() > 1e-13 * std::max(scale_x, kTiny)) x_osc = true;
  if (x_osc) {
    auto Kt = spectral_time_op(ExO, state.X.period, true);
    std::vector<HC> stacked;
    for (const HC& c : Kt)
      stacked.push_back(stack_rows(c, zero_comp(j + N - 1, n, m)));
    add_periodic(state.K, j + N - 1, stacked);
  }
  if (m > 0) {
    bool y_osc = false;
    for (const HC& c : EyO)
      if (c.max_abs_coeff() > 1e-13 * std::max(scale_y, kTiny)) y_osc = true;
    if (y_osc) {
      auto Kt = spectral_time_op(EyO, state.X.period, true);
      std::vector<HC> stacked;
      for (const HC& c : Kt)
        stacked.push_back(stack_rows(zero_comp(j + L - 1, n, n), c));
      add_periodic(state.K, j + L - 1, stacked);
    }
  }
  state.j_done = j;
  return step;
}

HomologicalStep step_flow(FlowState& state, const FlowOracle& oracle,
                          const ConeSpec& cone, double rho, Policy policy,
                          int ell_star) {
  const int cutoff = state.j_done + state.sys.N;
  auto E = flow_error_jets(state, cutoff);
  HomologicalStep step =
      step_flow_given_errors(state, E, oracle, cone, rho, policy, ell_star);
  flow_residual_slopes(state, cone, rho, &step.slope_x, &step.slope_y);
  return step;
}

void flow_residual_slopes(const FlowState& state, const ConeSpec& cone,
                          double rho, double* slope_x, double* slope_y) {
  (void)rho;
  const int n = state.sys.n, m = state.sys.m, N = state.sys.N;
  auto E = flow_error_jets(state, state.j_done + N + 3);
  std::vector<Vec> dirs;
  for (const Vec& z : cone.sample(1.0, 24)) {
    if (z.norm() < 1e-9) continue;
    dirs.push_back(Vec(z / z.norm()));
    if (dirs.size() >= 4) break;
  }
  if (dirs.empty()) dirs.push_back(Vec(Vec::Constant(n, 1.0 / std::sqrt(n))));
  // Probe a few time samples only; the max over samples sets the slope.
  std::vector<int> probes = {0, state.K.n_samples / 3,
                             2 * state.K.n_samples / 3};
  std::vector<double> rs, ex, ey;
  for (int i = 0; i < 12; ++i) {
    double r = std::pow(10.0, -3.0 + 2.0 * i / 11.0);
    double mx = 0, my = 0;
    for (const Vec& d : dirs)
      for (int s : probes) {
        Vec e = E[s].eval(Vec(r * d));
        mx = std::max(mx, e.head(n).cwiseAbs().maxCoeff());
        if (m > 0) my = std::max(my, e.tail(m).cwiseAbs().maxCoeff());
      }
    rs.push_back(r);
    ex.push_back(mx);
    ey.push_back(my);
  }
  auto fit = [&rs](const std::vector<double>& e) {
    double top = *std::max_element(e.begin(), e.end());
    std::vector<double> r2, e2;
    for (size_t i = 0; i < e.size(); ++i)
      if (e[i] > std::max(kTiny, 1e-9 * top)) {
        r2.push_back(rs[i]);
        e2.push_back(e[i]);
      }
    if (r2.size() < 3) return std::numeric_limits<double>::infinity();
    return domain::loglog_slope(r2, e2);
  };
  if (slope_x) *slope_x = fit(ex);
  if (slope_y)
    *slope_y = m > 0 ? fit(ey) : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

Vec integrate_ode(const std::function<Vec(double, const Vec&)>& f, double t0,
                  double t1, Vec z0, double rel_tol, double abs_tol) {
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                      a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                      a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                      a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  if (t1 == t0) return z0;
  double dir = t1 > t0 ? 1.0 : -1.0;
  double t = t0;
  double h = dir * std::min(std::abs(t1 - t0), 0.1 * (1.0 + std::abs(t0)));
  Vec z = std::move(z0);
  int max_steps = 20000000;
  while (dir * (t1 - t) > 0) {
    if (--max_steps <= 0)
      throw std::runtime_error("integrate_ode: step limit exceeded");
    if (dir * (t + h - t1) > 0) h = t1 - t;
    Vec k1 = f(t, z);
    Vec k2 = f(t + c2 * h, z + h * (a21 * k1));
    Vec k3 = f(t + c3 * h, z + h * (a31 * k1 + a32 * k2));
    Vec k4 = f(t + c4 * h, z + h * (a41 * k1 + a42 * k2 + a43 * k3));
    Vec k5 = f(t + c5 * h, z + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Vec k6 = f(t + h,
               z + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vec znew = z + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    Vec k7 = f(t + h, znew);
    Vec errv =
        h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double sc = 0.0;
    for (int i = 0; i < z.size(); ++i) {
      double tol = abs_tol + rel_tol * std::max(std::abs(z[i]),
                                                std::abs(znew[i]));
      sc = std::max(sc, std::abs(errv[i]) / tol);
    }
    if (sc <= 1.0) {
      t += h;
      z = std::move(znew);
    }
    double fac = sc > 0 ? 0.9 * std::pow(sc, -0.2) : 5.0;
    h *= std::clamp(fac, 0.2, 5.0);
    if (std::abs(h) < 1e-14 * (1.0 + std::abs(t)))
      throw std::runtime_error("integrate_ode: step size underflow");
  }
  return z;
}

}  // namespace paraman::homological
