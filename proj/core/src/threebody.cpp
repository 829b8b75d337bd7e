#include "paraman/threebody.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numbers>

namespace paraman::threebody {

namespace {

using HC = polyalg::HomogeneousComponent;
using polyalg::MultiIndex;
using homological::FlowOracle;
using homological::FlowState;
using homological::Policy;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Dense truncated multivariate polynomials. Coefficients live on the exponent
// box {0..cutoff}^nv packed in base (cutoff+1); packed indices add like
// exponent vectors as long as total degrees stay within the cutoff, which
// every product below guarantees.

struct Box {
  int nv = 0, cutoff = 0, size = 0;
  std::vector<int> degree;
  std::vector<MultiIndex> expo;

  Box(int nv_, int cutoff_) : nv(nv_), cutoff(cutoff_) {
    size = 1;
    for (int i = 0; i < nv; ++i) size *= cutoff + 1;
    degree.resize(size);
    expo.assign(size, MultiIndex(nv, 0));
    for (int idx = 0; idx < size; ++idx) {
      int r = idx, d = 0;
      for (int i = 0; i < nv; ++i) {
        int e = r % (cutoff + 1);
        r /= cutoff + 1;
        expo[idx][i] = e;
        d += e;
      }
      degree[idx] = d;
    }
  }

  int pack(const MultiIndex& e) const {
    int idx = 0, stride = 1;
    for (int i = 0; i < nv; ++i) {
      idx += e[i] * stride;
      stride *= cutoff + 1;
    }
    return idx;
  }
};

const Box& box_for(int nv, int cutoff) {
  static std::map<std::pair<int, int>, std::unique_ptr<Box>> cache;
  auto key = std::make_pair(nv, cutoff);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, std::make_unique<Box>(nv, cutoff)).first;
  return *it->second;
}

struct TPoly {
  const Box* box = nullptr;
  std::vector<double> c;

  TPoly() = default;
  explicit TPoly(const Box* b) : box(b), c(b->size, 0.0) {}

  double constant() const { return c[0]; }
  int min_degree() const {
    int md = box->cutoff + 1;
    for (int i = 0; i < box->size; ++i)
      if (c[i] != 0.0) md = std::min(md, box->degree[i]);
    return md;
  }
};

TPoly operator+(const TPoly& a, const TPoly& b) {
  TPoly out = a;
  for (int i = 0; i < out.box->size; ++i) out.c[i] += b.c[i];
  return out;
}
TPoly operator-(const TPoly& a, const TPoly& b) {
  TPoly out = a;
  for (int i = 0; i < out.box->size; ++i) out.c[i] -= b.c[i];
  return out;
}
TPoly operator-(const TPoly& a) {
  TPoly out = a;
  for (double& x : out.c) x = -x;
  return out;
}
TPoly operator*(double s, const TPoly& a) {
  TPoly out = a;
  for (double& x : out.c) x *= s;
  return out;
}
TPoly operator*(const TPoly& a, double s) { return s * a; }
TPoly operator+(const TPoly& a, double s) {
  TPoly out = a;
  out.c[0] += s;
  return out;
}
TPoly operator+(double s, const TPoly& a) { return a + s; }
TPoly operator-(const TPoly& a, double s) { return a + (-s); }

TPoly operator*(const TPoly& a, const TPoly& b) {
  const Box& box = *a.box;
  TPoly out(&box);
  std::vector<int> nb;
  for (int i = 0; i < box.size; ++i)
    if (b.c[i] != 0.0) nb.push_back(i);
  for (int ia = 0; ia < box.size; ++ia) {
    double va = a.c[ia];
    if (va == 0.0) continue;
    int da = box.degree[ia];
    for (int ib : nb) {
      if (da + box.degree[ib] > box.cutoff) continue;
      out.c[ia + ib] += va * b.c[ib];
    }
  }
  return out;
}

// Horner evaluation of sum_k a_k w^k for an argument with no constant term.
TPoly compose_series(const TPoly& w, const std::vector<double>& a) {
  if (std::abs(w.constant()) > 1e-12)
    throw std::logic_error("compose_series: argument has a constant term");
  int md = w.min_degree();
  int K = md > w.box->cutoff ? 0 : w.box->cutoff / std::max(md, 1);
  K = std::min<int>(K, static_cast<int>(a.size()) - 1);
  TPoly r(w.box);
  r.c[0] = a[K];
  for (int k = K - 1; k >= 0; --k) {
    r = r * w;
    r.c[0] += a[k];
  }
  return r;
}

std::vector<double> binom_series(double alpha, int K) {
  std::vector<double> a(K + 1);
  a[0] = 1.0;
  for (int k = 1; k <= K; ++k) a[k] = a[k - 1] * (alpha - k + 1) / k;
  return a;
}

// (1 + w)^alpha, sin, cos and sin(w)/w for both scalar and series arguments.
double pow1p(double w, double alpha) { return std::pow(1.0 + w, alpha); }
TPoly pow1p(const TPoly& w, double alpha) {
  return compose_series(w, binom_series(alpha, w.box->cutoff + 1));
}
double sin_of(double x) { return std::sin(x); }
double cos_of(double x) { return std::cos(x); }
double sinc_of(double x) {
  return std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x;
}
TPoly sin_of(const TPoly& w) {
  std::vector<double> a(w.box->cutoff + 2, 0.0);
  double fact = 1.0;
  for (int k = 1; k < static_cast<int>(a.size()); ++k) {
    fact *= k;
    if (k % 2 == 1) a[k] = ((k / 2) % 2 == 0 ? 1.0 : -1.0) / fact;
  }
  return compose_series(w, a);
}
TPoly cos_of(const TPoly& w) {
  std::vector<double> a(w.box->cutoff + 2, 0.0);
  a[0] = 1.0;
  double fact = 1.0;
  for (int k = 1; k < static_cast<int>(a.size()); ++k) {
    fact *= k;
    if (k % 2 == 0) a[k] = ((k / 2) % 2 == 0 ? 1.0 : -1.0) / fact;
  }
  return compose_series(w, a);
}
TPoly sinc_of(const TPoly& w) {
  std::vector<double> a(w.box->cutoff + 2, 0.0);
  a[0] = 1.0;
  double fact = 1.0;  // (k+1)!
  for (int k = 1; k < static_cast<int>(a.size()); ++k) {
    fact *= k + 1;
    if (k % 2 == 0) a[k] = ((k / 2) % 2 == 0 ? 1.0 : -1.0) / fact;
  }
  return compose_series(w, a);
}

// ---------------------------------------------------------------------------
// The coordinate chain, written once for scalars and truncated series.
//
// State order (u, Theta^, v, alpha^, A^, theta^) with z = u+v, R = u-v,
// A = A0 + z A^, theta = z theta^, Theta = theta^ Theta^, alpha - alpha0 =
// z alpha^ - A R.  Every division by z or theta is eliminated by factoring
// the known powers out of the Hamiltonian right-hand sides:
//   dU/dr            = z^4 * GR,
//   dU/dalpha        = z^4 * GA,
//   dU/dtheta        = sin(theta) * z^4 * GT,
// with GR, GA, GT assembled from the two-center Legendre-type factors
// (1 + w_i)^{-3/2}, w_i = -2 s_i ctil/r + s_i^2/r^2, s_1 = mu rho(f),
// s_2 = -(1-mu) rho(f), ctil = cos(alpha - f) cos(theta).

template <class S>
std::array<S, 6> chain_rhs(const std::array<S, 6>& st, double f, double rho_f,
                           const R3BPParams& par) {
  const S& u = st[0];
  const S& Th = st[1];
  const S& v = st[2];
  const S& ah = st[3];
  const S& Ah = st[4];
  const S& th = st[5];

  S z = u + v, R = u - v;
  S A = par.A0 + z * Ah;
  S theta = z * th;
  S dalpha = z * ah - A * R;

  const double cf = std::cos(par.alpha0 - f);
  const double sf = std::sin(par.alpha0 - f);
  S cos_da = cos_of(dalpha), sin_da = sin_of(dalpha);
  S cos_th = cos_of(theta), sinc_th = sinc_of(theta);
  S cos_af = cf * cos_da - sf * sin_da;  // cos(alpha - f)
  S sin_af = sf * cos_da + cf * sin_da;
  S sec2 = pow1p(cos_th * cos_th - 1.0, -1.0);
  S sec3 = pow1p(cos_th * cos_th - 1.0, -1.5);
  S ctil = cos_af * cos_th;

  S z2 = z * z, z3 = z2 * z, z4 = z2 * z2, z5 = z3 * z2, z6 = z3 * z3;
  S ir = 0.5 * z2;  // 1/r

  const double sig[2] = {par.mu * rho_f, -(1.0 - par.mu) * rho_f};
  const double cc[2] = {1.0 - par.mu, par.mu};
  S GR = 0.0 * u, GA = 0.0 * u, GT = 0.0 * u;
  for (int i = 0; i < 2; ++i) {
    S wi = (-2.0 * sig[i]) * (ctil * ir) + (sig[i] * sig[i]) * (ir * ir);
    S pm32 = pow1p(wi, -1.5);
    GR = GR + cc[i] * (((sig[i] / 8.0) * (ctil * z2) - 0.25) * pm32);
    GA = GA + (cc[i] * sig[i] * (-0.25)) * (sin_af * cos_th * pm32);
    GT = GT + (cc[i] * sig[i] * (-0.25)) * (cos_af * pm32);
  }

  S kin = 0.125 * (A * A * sec2 + (th * Th) * (th * Th));  // Theta = th*Th
  S zz = -0.25 * (z2 * R);                                 // zdot / z
  S Rdot = z6 * kin + z4 * GR;
  S zdot = z * zz;

  std::array<S, 6> out = {
      0.5 * (zdot + Rdot),
      Th * zz - 0.25 * (z3 * (Th * Th)) -
          0.25 * (A * A) * (z5 * (sinc_th * sec3)) + z5 * (sinc_th * GT),
      0.5 * (zdot - Rdot),
      A * (z3 * (0.25 * sec2 + GR)) + A * (z5 * kin) + z3 * (GA * R) - ah * zz,
      z3 * GA - Ah * zz,
      0.25 * ((th * Th) * z3) - th * zz,
  };
  return out;
}

// ---------------------------------------------------------------------------
// Jet <-> TPoly conversion.

std::array<TPoly, 6> jet_to_tpolys(const GradedMapJet& K, const Box& box) {
  std::array<TPoly, 6> out;
  for (auto& p : out) p = TPoly(&box);
  for (const auto& [d, comp] : K.components) {
    if (d > box.cutoff) continue;
    if (comp.basis != HC::Basis::polynomial)
      throw std::invalid_argument("threebody: sampled K component");
    for (const auto& [e, val] : comp.coeffs) {
      int idx = box.pack(e);
      for (int r = 0; r < 6; ++r) out[r].c[idx] += val[r];
    }
  }
  return out;
}

GradedMapJet tpolys_to_jet(const std::array<TPoly, 6>& rows, int n_in,
                           int n_out) {
  const Box& box = *rows[0].box;
  GradedMapJet out(n_in, n_out, box.cutoff);
  std::map<int, HC> comps;
  for (int idx = 0; idx < box.size; ++idx) {
    Vec val = Vec::Zero(n_out);
    bool nz = false;
    for (int r = 0; r < n_out; ++r) {
      val[r] = rows[r].c[idx];
      nz = nz || val[r] != 0.0;
    }
    if (!nz || box.degree[idx] > box.cutoff) continue;
    int d = box.degree[idx];
    auto it = comps.find(d);
    if (it == comps.end()) it = comps.emplace(d, HC(d, n_in, n_out)).first;
    it->second.add_term(box.expo[idx], val);
  }
  for (auto& [d, c] : comps) out.set(std::move(c));
  return out;
}

double rho_of_f(double e, double f) {
  return (1.0 - e * e) / (1.0 + e * std::cos(f));
}

}  // namespace

// ---------------------------------------------------------------------------

void R3BPParams::validate() const {
  if (!(mu >= 0.0 && mu < 1.0))
    throw std::invalid_argument("R3BPParams: mu must be in [0, 1)");
  if (!(e >= 0.0 && e < 1.0))
    throw std::invalid_argument("R3BPParams: e must be in [0, 1)");
  if (order < 4 || order > kMaxOrder)
    throw std::invalid_argument("R3BPParams: order must be in [4, 12]");
  if (n_samples < 4 || n_samples % 2 != 0)
    throw std::invalid_argument("R3BPParams: n_samples must be even and >= 4");
  if (perturbation) {
    // Invariant-plane condition d(V)/d(theta) = 0 at theta = 0, sampled.
    const double h = 1e-2;
    for (double r : {5.0, 20.0, 100.0})
      for (double alpha : {0.0, 0.9, 2.3, 4.4})
        for (double t : {0.0, 1.3, 3.9}) {
          auto V = [&](double th) { return perturbation(r, alpha, th, t) /
                                           (r * r * r); };
          auto central = [&](double hh) {
            return (V(hh) - V(-hh)) / (2.0 * hh);
          };
          double d = (4.0 * central(h / 2.0) - central(h)) / 3.0;
          if (std::abs(d) > 1e-10)
            throw std::invalid_argument(
                "R3BPParams: perturbation does not leave theta = 0 invariant");
        }
  }
}

R3BPField build_field(const R3BPParams& params) {
  params.validate();
  R3BPField F;
  F.params = params;

  // True anomaly on a fine grid over one period, then short integrations from
  // the nearest grid node below.
  const int Nf = 512;
  const double h = kTwoPi / Nf;
  auto fdot = [e = params.e](double, const Vec& y) {
    Vec r(1);
    r[0] = std::pow(1.0 + e * std::cos(y[0]), 2) / std::pow(1.0 - e * e, 1.5);
    return r;
  };
  auto fgrid = std::make_shared<std::vector<double>>(Nf + 1, 0.0);
  {
    Vec y = Vec::Zero(1);
    for (int k = 1; k <= Nf; ++k) {
      y = homological::integrate_ode(fdot, (k - 1) * h, k * h, y);
      (*fgrid)[k] = y[0];
    }
  }
  F.true_anomaly = [fgrid, h, fdot](double t) {
    double wraps = std::floor(t / kTwoPi);
    double tm = t - wraps * kTwoPi;
    int k = std::clamp(static_cast<int>(tm / h), 0, Nf - 1);
    Vec y(1);
    y[0] = (*fgrid)[k];
    if (tm > k * h)
      y = homological::integrate_ode(fdot, k * h, tm, y);
    return y[0] + wraps * kTwoPi;
  };

  // Leading degree-4 jets from the series chain on the 6-variable identity.
  {
    const Box& box6 = box_for(6, 4);
    std::array<TPoly, 6> id;
    for (int i = 0; i < 6; ++i) {
      id[i] = TPoly(&box6);
      MultiIndex e(6, 0);
      e[i] = 1;
      id[i].c[box6.pack(e)] = 1.0;
    }
    auto lead = [&](double t) {
      double f = F.true_anomaly(t);
      return chain_rhs<TPoly>(id, f, rho_of_f(params.e, f), params);
    };
    auto X0 = lead(0.0), X1 = lead(1.7);
    double offlead = 0.0;
    for (int r = 0; r < 6; ++r)
      for (int idx = 0; idx < box6.size; ++idx) {
        if (box6.degree[idx] == 4)
          offlead = std::max(offlead, std::abs(X0[r].c[idx] - X1[r].c[idx]));
        else
          offlead = std::max(offlead, std::abs(X0[r].c[idx]));
      }
    if (offlead > 1e-12)
      throw std::logic_error(
          "build_field: leading degree-4 terms are not autonomous");
    GradedMapJet X4jet = tpolys_to_jet(X0, 6, 6);
    HC lead4 = X4jet.at(4);
    lead4.prune(1e-13);

    F.sys.n = 2;
    F.sys.m = 4;
    F.sys.N = 4;
    F.sys.M = 4;
    GradedMapJet p(6, 2, 4), q(6, 4, 4);
    HC pc(4, 6, 2), qc(4, 6, 4);
    for (const auto& [e, val] : lead4.coeffs) {
      pc.add_term(e, Vec(val.head(2)));
      qc.add_term(e, Vec(val.tail(4)));
    }
    pc.prune();
    qc.prune();
    p.set(pc);
    q.set(qc);
    F.sys.p = p;
    F.sys.q = q;

    F.X4 = PeriodicGradedJet(6, 6, 4, kTwoPi, params.n_samples);
    F.X4.set_static(lead4);
  }

  auto fa = F.true_anomaly;
  auto pjet = F.sys.p, qjet = F.sys.q;

  F.eval = [params, fa](const Vec& w, double t) {
    if (w.size() != 6)
      throw std::invalid_argument("R3BPField::eval: state must be in R^6");
    double z = w[0] + w[2];
    double theta = z * w[5];
    if (z <= 0.0)
      throw ChartError("R3BPField::eval: z = u + v <= 0 is off the chart");
    if (std::abs(theta) >= 1.45)
      throw ChartError("R3BPField::eval: theta too close to +-pi/2");
    double f = fa(t), rho_f = rho_of_f(params.e, f);
    std::array<double, 6> st = {w[0], w[1], w[2], w[3], w[4], w[5]};
    auto out = chain_rhs<double>(st, f, rho_f, params);
    Vec r(6);
    for (int i = 0; i < 6; ++i) r[i] = out[i];
    if (params.perturbation) {
      double rad = 2.0 / (z * z);
      double A = params.A0 + z * w[4];
      double R = w[0] - w[2];
      double alpha = params.alpha0 + z * w[3] - A * R;
      auto V = [&](double rr, double aa, double th) {
        return params.perturbation(rr, aa, th, t) / (rr * rr * rr);
      };
      double hr = 1e-6 * rad, ha = 1e-6, hth = 1e-6;
      double dVr = (V(rad + hr, alpha, theta) - V(rad - hr, alpha, theta)) /
                   (2.0 * hr);
      double dVa = (V(rad, alpha + ha, theta) - V(rad, alpha - ha, theta)) /
                   (2.0 * ha);
      double dVth_over_theta;
      if (std::abs(theta) > 1e-4) {
        dVth_over_theta = (V(rad, alpha, theta + hth) -
                           V(rad, alpha, theta - hth)) /
                          (2.0 * hth) / theta;
      } else {
        double h2 = 1e-3;  // dV/dtheta / theta -> d2V/dtheta2 at theta = 0
        dVth_over_theta = (V(rad, alpha, theta + h2) + V(rad, alpha, theta - h2)
                           - 2.0 * V(rad, alpha, theta)) / (h2 * h2);
      }
      r[0] += 0.5 * dVr;
      r[2] -= 0.5 * dVr;
      r[3] += (dVa * R + A * dVr) / z;
      r[4] += dVa / z;
      r[1] += z * dVth_over_theta;
    }
    return r;
  };

  auto eval = F.eval;
  F.remainder = [eval, pjet, qjet](const Vec& w, double t) {
    Vec r = eval(w, t);
    Vec lead(6);
    lead.head(2) = pjet.eval(w);
    lead.tail(4) = qjet.eval(w);
    return Vec(r - lead);
  };

  F.Uhat = [params, fa](double r, double alpha, double theta, double t) {
    double f = fa(t), rho_f = rho_of_f(params.e, f);
    double ct = std::cos(alpha - f) * std::cos(theta);
    double mu = params.mu;
    double d1 = std::sqrt(r * r - 2.0 * mu * rho_f * r * ct +
                          mu * mu * rho_f * rho_f);
    double d2 = std::sqrt(r * r + 2.0 * (1.0 - mu) * rho_f * r * ct +
                          (1.0 - mu) * (1.0 - mu) * rho_f * rho_f);
    return (1.0 - mu) / d1 + mu / d2;
  };
  F.Uhat_quadrupole = [params, fa](double r, double alpha, double theta,
                                   double t) {
    double f = fa(t), rho_f = rho_of_f(params.e, f);
    double c = std::cos(alpha - f) * std::cos(theta);
    double mu = params.mu;
    return 1.0 / r -
           0.5 * mu * (1.0 - mu) * (1.0 - 3.0 * c * c) * rho_f * rho_f /
               (r * r * r);
  };

  F.compose = [params, fa](const GradedMapJet& K, double t, int cutoff) {
    const Box& box2 = box_for(K.n_in, cutoff);
    if (K.n_in != 2 || K.n_out != 6)
      throw std::invalid_argument("R3BPField::compose: K must map R^2 -> R^6");
    auto rows = jet_to_tpolys(K, box2);
    double f = fa(t);
    auto out = chain_rhs<TPoly>(rows, f, rho_of_f(params.e, f), params);
    return tpolys_to_jet(out, 2, 6);
  };

  return F;
}

homological::FlowOracle closed_oracle() {
  auto c_of = [](double t, const Vec& x) {
    return 1.0 + 0.75 * t * x[0] * x[0] * x[0];
  };
  auto phi = [c_of](double t, const Vec& x) {
    double s = std::cbrt(c_of(t, x));
    return Vec(x / s);
  };
  auto M1inv = [c_of](double t, const Vec& x) {
    double c = c_of(t, x);
    Mat m = Mat::Zero(2, 2);
    m(0, 0) = std::pow(c, 4.0 / 3.0);
    m(1, 0) = 0.75 * t * x[0] * x[0] * x[1] * std::cbrt(c);
    m(1, 1) = std::cbrt(c);
    return m;
  };
  auto M1 = [c_of](double t, const Vec& x) {
    double s = 1.0 / std::cbrt(c_of(t, x));
    Mat m = Mat::Zero(2, 2);
    double s4 = s * s * s * s;
    m(0, 0) = s4;
    m(1, 0) = -0.75 * t * x[0] * x[0] * x[1] * s4;
    m(1, 1) = s;
    return m;
  };
  auto M2 = [c_of](double t, const Vec& x) {
    return Mat(std::cbrt(c_of(t, x)) * Mat::Identity(4, 4));
  };
  auto M2inv = [c_of](double t, const Vec& x) {
    return Mat(Mat::Identity(4, 4) / std::cbrt(c_of(t, x)));
  };
  return FlowOracle::closed(2, 4, 4, phi, M1, M2, M1inv, M2inv);
}

R3BPJets compute_jets(const R3BPField& field,
                      const homological::FlowOracle& oracle, int order) {
  const R3BPParams& par = field.params;
  if (order == 0) order = par.order;
  if (order < 4 || order > kMaxOrder)
    throw std::invalid_argument("compute_jets: order must be in [4, 12]");

  domain::ConeSpec cone;
  cone.n = 2;
  cone.halfspaces.push_back({Vec(Vec::Unit(2, 0)), 0.5});
  const double rho = 0.1;
  const int ell_star = 7;

  FlowState st = homological::seed_flow_state(field.sys, field.X4);
  auto composer = [&field, &par](const GradedMapJet& Ks, int s, int cutoff) {
    double t_s = kTwoPi * s / par.n_samples;
    return field.compose(Ks, t_s, cutoff);
  };

  R3BPJets jets;
  jets.params = par;
  for (int j = 2; j + 3 <= order; ++j) {
    auto E = homological::flow_error_jets_with(st, j + 3, composer);
    Policy pol = j <= 4 ? Policy::K_x_zero : Policy::R_simplest;
    try {
      jets.steps.push_back(homological::step_flow_given_errors(
          st, E, oracle, cone, rho, pol, ell_star));
    } catch (const homological::ConvergenceThresholdError& err) {
      throw StructureError(std::string("compute_jets: order ") +
                           std::to_string(j) + ": " + err.what());
    }
  }

  jets.order = st.j_done + 3;
  jets.K = st.K;
  jets.K_mean = polyalg::time_mean(st.K);
  jets.K_osc = polyalg::oscillatory_part(st.K);
  jets.Y = st.Y;

  // First unresolved error component, degree order+1 = j_done+4.
  auto E = homological::flow_error_jets_with(st, jets.order + 1, composer);
  std::vector<HC> samples;
  for (const auto& Es : E)
    samples.push_back(Es.has(jets.order + 1) ? Es.at(jets.order + 1)
                                             : HC(jets.order + 1, 2, 6));
  jets.E_next = PeriodicGradedJet(2, 6, jets.order + 1, kTwoPi, par.n_samples);
  jets.E_next.set(jets.order + 1, std::move(samples));
  return jets;
}

namespace {

// Record coefficients of monomials with u-power below min_u on the given
// rows; with min_u = infinity every nonzero coefficient of the row is stray.
void check_rows(const HC& c, std::initializer_list<int> rows, int min_u,
                const std::string& what, StructureReport* rep) {
  if (c.basis != HC::Basis::polynomial) {
    rep->pass = false;
    rep->failures.push_back(what + ": non-polynomial component");
    return;
  }
  double worst = 0.0;
  for (const auto& [e, val] : c.coeffs) {
    if (e[0] >= min_u) continue;
    for (int r : rows) worst = std::max(worst, std::abs(val[r]));
  }
  rep->max_stray = std::max(rep->max_stray, worst);
  if (worst > 1e-10) {
    rep->pass = false;
    rep->failures.push_back(what + ": stray coefficient " +
                            std::to_string(worst));
  }
}

}  // namespace

StructureReport structure_check(const R3BPJets& jets) {
  StructureReport rep;
  const int big = std::numeric_limits<int>::max();

  // Mean parts K^j: all rows u^2, rows (u, v) u^3.  K_x^j = 0 on the free
  // range 2 <= j <= 4 where the x-component is chosen zero; from j = 5 on
  // the integral-mode K_x^j is a nonzero (u^3 O, u^2 O) pair.
  for (const auto& [j, c] : jets.K_mean.components) {
    if (j < 2) continue;
    std::string tag = "K^" + std::to_string(j);
    check_rows(c, {0, 1, 2, 3, 4, 5}, 2, tag + " = u^2 O", &rep);
    check_rows(c, {0, 2}, 3, tag + "_{u,v} = u^3 O", &rep);
    if (j <= 4) check_rows(c, {0, 1}, big, tag + "_x = 0", &rep);
  }

  // Oscillatory parts K~^{j+3}: all rows u^5, rows (u, v) u^6.
  for (const auto& [d, samples] : jets.K_osc.components) {
    if (d < 5) {
      for (const HC& c : samples)
        check_rows(c, {0, 1, 2, 3, 4, 5}, big,
                   "K~^" + std::to_string(d) + " below degree 5", &rep);
      continue;
    }
    for (const HC& c : samples) {
      std::string tag = "K~^" + std::to_string(d);
      check_rows(c, {0, 1, 2, 3, 4, 5}, 5, tag + " = u^5 O", &rep);
      check_rows(c, {0, 2}, 6, tag + "_{u,v} = u^6 O", &rep);
    }
  }

  // Y: degree 5 of the stated shape, degrees 6-7 with (u^6, u^5) factors,
  // nothing beyond degree 7.
  for (const auto& [d, c] : jets.Y.components) {
    std::string tag = "Y^" + std::to_string(d);
    if (d == 4) continue;  // p(x,0) by construction
    if (d == 5) {
      double worst = 0.0;
      for (const auto& [e, val] : c.coeffs) {
        if (!(e[0] == 5 && e[1] == 0)) worst = std::max(worst, std::abs(val[0]));
        bool ok1 = (e[0] == 3 && e[1] == 2) || (e[0] == 5 && e[1] == 0);
        if (!ok1) worst = std::max(worst, std::abs(val[1]));
      }
      rep.max_stray = std::max(rep.max_stray, worst);
      if (worst > 1e-10) {
        rep.pass = false;
        rep.failures.push_back(tag + " shape: stray coefficient " +
                               std::to_string(worst));
      }
    } else if (d <= 7) {
      check_rows(c, {0}, 6, tag + "_1 = u^6 O", &rep);
      check_rows(c, {1}, 5, tag + "_2 = u^5 O", &rep);
    } else {
      check_rows(c, {0, 1}, big, tag + " = 0", &rep);
    }
  }

  // First unresolved error component E^{j+4}.
  for (const auto& [d, samples] : jets.E_next.components)
    for (const HC& c : samples) {
      std::string tag = "E^" + std::to_string(d);
      check_rows(c, {0, 1, 2, 3, 4, 5}, 5, tag + " = u^5 O", &rep);
      check_rows(c, {0, 2}, 6, tag + "_{u,v} = u^6 O", &rep);
    }
  return rep;
}

ResidualScan invariance_residual(const R3BPJets& jets, const R3BPField& field,
                                 double r_max) {
  PeriodicGradedJet dKdt = homological::periodic_time_derivative(jets.K);
  const int ns = jets.K.n_samples;
  std::vector<int> probes = {0, ns / 3, 2 * ns / 3};
  std::vector<Vec> dirs;
  for (double phi : {0.15, 0.6, 1.0, 1.35}) {
    Vec d(2);
    d << std::cos(phi), std::sin(phi);
    dirs.push_back(d);
  }

  ResidualScan scan;
  for (int i = 0; i < 12; ++i) {
    double r = r_max * std::pow(1e-2, 1.0 - i / 11.0);
    double worst = 0.0;
    for (const Vec& d : dirs)
      for (int s : probes) {
        double t_s = kTwoPi * s / ns;
        Vec x = r * d;
        GradedMapJet Ks = jets.K.sample_jet(s);
        Vec Kx = Ks.eval(x);
        Vec res = field.eval(Kx, t_s) - Ks.jacobian_at(x) * jets.Y.eval(x) -
                  dKdt.eval_at_sample(x, s);
        worst = std::max(worst, res.cwiseAbs().maxCoeff());
      }
    scan.radii.push_back(r);
    scan.residuals.push_back(worst);
  }
  double top = *std::max_element(scan.residuals.begin(), scan.residuals.end());
  std::vector<double> r2, e2;
  for (size_t i = 0; i < scan.residuals.size(); ++i)
    if (scan.residuals[i] > 1e-9 * top) {
      r2.push_back(scan.radii[i]);
      e2.push_back(scan.residuals[i]);
    }
  scan.slope = r2.size() >= 3 ? domain::loglog_slope(r2, e2)
                              : std::numeric_limits<double>::infinity();
  return scan;
}

}  // namespace paraman::threebody
