#include "paraman/polyalg.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace paraman::polyalg {

int multi_degree(const MultiIndex& e) {
  return std::accumulate(e.begin(), e.end(), 0);
}

double monomial(const Vec& x, const MultiIndex& e) {
  double v = 1.0;
  for (size_t i = 0; i < e.size(); ++i)
    for (int k = 0; k < e[i]; ++k) v *= x[static_cast<Eigen::Index>(i)];
  return v;
}

static void enumerate_exps(int n_vars, int degree, MultiIndex& cur,
                           std::vector<MultiIndex>& out) {
  if (static_cast<int>(cur.size()) == n_vars - 1) {
    cur.push_back(degree);
    out.push_back(cur);
    cur.pop_back();
    return;
  }
  for (int d = degree; d >= 0; --d) {
    cur.push_back(d);
    enumerate_exps(n_vars, degree - d, cur, out);
    cur.pop_back();
  }
}

std::vector<MultiIndex> exponents_of_degree(int n_vars, int degree) {
  std::vector<MultiIndex> out;
  if (n_vars <= 0) return out;
  MultiIndex cur;
  enumerate_exps(n_vars, degree, cur, out);
  return out;
}

HomogeneousComponent HomogeneousComponent::sampled(
    int deg, int nin, int nout, std::function<Vec(const Vec&)> r) {
  HomogeneousComponent c(deg, nin, nout);
  c.basis = Basis::sampled;
  c.rule = std::move(r);
  return c;
}

bool HomogeneousComponent::is_zero(double tol) const {
  if (basis == Basis::sampled) return false;
  for (const auto& [e, v] : coeffs)
    if (v.cwiseAbs().maxCoeff() > tol) return false;
  return true;
}

void HomogeneousComponent::add_term(const MultiIndex& exps, const Vec& value) {
  if (static_cast<int>(exps.size()) != n_in)
    throw std::invalid_argument("add_term: exponent length != n_in");
  if (multi_degree(exps) != degree)
    throw std::invalid_argument("add_term: exponent degree mismatch");
  if (value.size() != n_out)
    throw std::invalid_argument("add_term: value size != n_out");
  auto it = coeffs.find(exps);
  if (it == coeffs.end())
    coeffs.emplace(exps, value);
  else
    it->second += value;
}

void HomogeneousComponent::add_term(const MultiIndex& exps, double value) {
  Vec v(1);
  v << value;
  add_term(exps, v);
}

Vec HomogeneousComponent::eval(const Vec& x) const {
  if (x.size() != n_in)
    throw std::invalid_argument("HomogeneousComponent::eval: dim mismatch");
  if (basis == Basis::sampled) {
    double r = x.norm();
    if (r == 0.0) return Vec::Zero(n_out);
    return std::pow(r, degree) * rule(x / r);
  }
  Vec acc = Vec::Zero(n_out);
  for (const auto& [e, v] : coeffs) acc += monomial(x, e) * v;
  return acc;
}

HomogeneousComponent HomogeneousComponent::jacobian() const {
  if (basis == Basis::sampled)
    throw std::runtime_error(
        "differentiate: sampled-mode component has no analytic rule");
  if (degree < 1)
    throw std::invalid_argument("jacobian: degree must be >= 1");
  HomogeneousComponent d(degree - 1, n_in, n_out * n_in);
  for (const auto& [e, v] : coeffs) {
    for (int i = 0; i < n_in; ++i) {
      if (e[i] == 0) continue;
      MultiIndex de = e;
      de[i] -= 1;
      Vec dv = Vec::Zero(n_out * n_in);
      for (int o = 0; o < n_out; ++o) dv[o * n_in + i] = e[i] * v[o];
      d.add_term(de, dv);
    }
  }
  return d;
}

Mat HomogeneousComponent::jacobian_at(const Vec& x) const {
  if (basis == Basis::polynomial) {
    Vec flat = degree >= 1 ? jacobian().eval(x)
                           : Vec(Vec::Zero(n_out * n_in));
    Mat J(n_out, n_in);
    for (int o = 0; o < n_out; ++o)
      for (int i = 0; i < n_in; ++i) J(o, i) = flat[o * n_in + i];
    return J;
  }
  Mat J(n_out, n_in);
  double h = 1e-5 * std::max(1.0, x.norm());
  for (int i = 0; i < n_in; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (eval(xp) - eval(xm)) / (2 * h);
  }
  return J;
}

double HomogeneousComponent::max_abs_coeff() const {
  double m = 0.0;
  for (const auto& [e, v] : coeffs) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m;
}

void HomogeneousComponent::prune(double tol) {
  for (auto it = coeffs.begin(); it != coeffs.end();) {
    if (it->second.cwiseAbs().maxCoeff() <= tol)
      it = coeffs.erase(it);
    else
      ++it;
  }
}

GradedMapJet GradedMapJet::identity(int n, int maxdeg) {
  GradedMapJet jet(n, n, maxdeg);
  HomogeneousComponent id(1, n, n);
  for (int i = 0; i < n; ++i) {
    MultiIndex e(n, 0);
    e[i] = 1;
    Vec v = Vec::Zero(n);
    v[i] = 1.0;
    id.add_term(e, v);
  }
  jet.set(id);
  return jet;
}

const HomogeneousComponent& GradedMapJet::at(int degree) const {
  auto it = components.find(degree);
  if (it == components.end())
    throw std::out_of_range("GradedMapJet: no component of degree " +
                            std::to_string(degree));
  return it->second;
}

void GradedMapJet::set(HomogeneousComponent c) {
  if (c.n_in != n_in || c.n_out != n_out)
    throw std::invalid_argument("GradedMapJet::set: dimension mismatch");
  if (c.degree > max_degree) max_degree = c.degree;
  components[c.degree] = std::move(c);
}

void GradedMapJet::add(const HomogeneousComponent& c) {
  if (!has(c.degree)) {
    set(c);
    return;
  }
  auto& dst = components[c.degree];
  if (dst.basis == HomogeneousComponent::Basis::sampled ||
      c.basis == HomogeneousComponent::Basis::sampled) {
    auto a = dst, b = c;
    dst = HomogeneousComponent::sampled(
        c.degree, n_in, n_out,
        [a, b](const Vec& u) { return a.eval(u) + b.eval(u); });
    return;
  }
  for (const auto& [e, v] : c.coeffs) dst.add_term(e, v);
}

void GradedMapJet::add(const GradedMapJet& other) {
  for (const auto& [d, c] : other.components) add(c);
}

GradedMapJet GradedMapJet::truncated(int cutoff) const {
  GradedMapJet out(n_in, n_out, std::min(cutoff, max_degree));
  for (const auto& [d, c] : components)
    if (d <= cutoff) out.components[d] = c;
  return out;
}

GradedMapJet GradedMapJet::scaled(double factor) const {
  GradedMapJet out(n_in, n_out, max_degree);
  for (const auto& [d, c] : components) {
    if (c.basis == HomogeneousComponent::Basis::sampled) {
      auto base = c;
      out.components[d] = HomogeneousComponent::sampled(
          d, n_in, n_out,
          [base, factor](const Vec& u) { return factor * base.eval(u); });
    } else {
      auto sc = c;
      for (auto& [e, v] : sc.coeffs) v *= factor;
      out.components[d] = sc;
    }
  }
  return out;
}

bool GradedMapJet::polynomial() const {
  for (const auto& [d, c] : components)
    if (c.basis == HomogeneousComponent::Basis::sampled) return false;
  return true;
}

Vec GradedMapJet::eval(const Vec& x) const {
  if (x.size() != n_in)
    throw std::invalid_argument("GradedMapJet::eval: dim mismatch");
  Vec acc = Vec::Zero(n_out);
  for (const auto& [d, c] : components) acc += c.eval(x);
  return acc;
}

Mat GradedMapJet::jacobian_at(const Vec& x) const {
  Mat J = Mat::Zero(n_out, n_in);
  for (const auto& [d, c] : components) J += c.jacobian_at(x);
  return J;
}

Vec evaluate(const GradedMapJet& jet, const Vec& x) { return jet.eval(x); }

GradedMapJet differentiate(const GradedMapJet& jet) {
  if (jet.max_degree < 1)
    throw std::invalid_argument("differentiate: max_degree must be >= 1");
  GradedMapJet out(jet.n_in, jet.n_out * jet.n_in,
                   std::max(jet.max_degree - 1, 0));
  for (const auto& [d, c] : jet.components) {
    if (d == 0) continue;
    out.set(c.jacobian());
  }
  return out;
}

namespace {

using Poly = std::map<MultiIndex, double>;  // scalar polynomial

Poly poly_mul_trunc(const Poly& a, const Poly& b, int cutoff) {
  Poly out;
  for (const auto& [ea, va] : a) {
    int da = multi_degree(ea);
    for (const auto& [eb, vb] : b) {
      if (da + multi_degree(eb) > cutoff) continue;
      MultiIndex e(ea.size());
      for (size_t i = 0; i < e.size(); ++i) e[i] = ea[i] + eb[i];
      out[e] += va * vb;
    }
  }
  return out;
}

}  // namespace

GradedMapJet compose_truncated(const GradedMapJet& outer,
                               const GradedMapJet& inner, int cutoff) {
  if (cutoff < 1) throw std::invalid_argument("compose_truncated: cutoff < 1");
  if (outer.n_in != inner.n_out)
    throw std::invalid_argument("compose_truncated: dimension mismatch");
  if (inner.has(0))
    throw std::invalid_argument(
        "compose_truncated: inner has a degree-0 component");
  if (!outer.polynomial() || !inner.polynomial())
    throw std::runtime_error(
        "compose_truncated: sampled-mode components unsupported");

  // Scalar polynomial per inner output coordinate.
  std::vector<Poly> inner_coord(outer.n_in);
  for (const auto& [d, c] : inner.components)
    for (const auto& [e, v] : c.coeffs)
      for (int o = 0; o < inner.n_out; ++o)
        if (v[o] != 0.0) inner_coord[o][e] += v[o];

  // Cached powers inner_coord[i]^k.
  std::vector<std::vector<Poly>> powers(outer.n_in);
  MultiIndex zero(inner.n_in, 0);
  for (int i = 0; i < outer.n_in; ++i) powers[i].push_back(Poly{{zero, 1.0}});
  auto power = [&](int i, int k) -> const Poly& {
    while (static_cast<int>(powers[i].size()) <= k)
      powers[i].push_back(
          poly_mul_trunc(powers[i].back(), inner_coord[i], cutoff));
    return powers[i][k];
  };

  std::vector<Poly> result(outer.n_out);
  for (const auto& [d, c] : outer.components) {
    for (const auto& [e, v] : c.coeffs) {
      Poly term{{zero, 1.0}};
      for (int i = 0; i < outer.n_in && !term.empty(); ++i)
        if (e[i] > 0) term = poly_mul_trunc(term, power(i, e[i]), cutoff);
      for (const auto& [te, tv] : term)
        for (int o = 0; o < outer.n_out; ++o)
          if (v[o] != 0.0) result[o][te] += tv * v[o];
    }
  }

  GradedMapJet out(inner.n_in, outer.n_out, cutoff);
  for (int o = 0; o < outer.n_out; ++o) {
    for (const auto& [e, val] : result[o]) {
      if (val == 0.0) continue;
      int d = multi_degree(e);
      if (!out.has(d)) out.set(HomogeneousComponent(d, inner.n_in, outer.n_out));
      Vec v = Vec::Zero(outer.n_out);
      v[o] = val;
      out.components[d].add_term(e, v);
    }
  }
  return out;
}

GradedMapJet grade(const TaylorTable& table) {
  GradedMapJet out(table.n_in, table.n_out, 0);
  for (const auto& [e, v] : table.terms) {
    if (static_cast<int>(e.size()) != table.n_in)
      throw std::invalid_argument("grade: malformed exponent tuple");
    if (v.cwiseAbs().maxCoeff() == 0.0) continue;
    int d = multi_degree(e);
    if (!out.has(d)) out.set(HomogeneousComponent(d, table.n_in, table.n_out));
    out.components[d].add_term(e, v);
  }
  return out;
}

TaylorTable flatten(const GradedMapJet& jet) {
  TaylorTable t;
  t.n_in = jet.n_in;
  t.n_out = jet.n_out;
  for (const auto& [d, c] : jet.components)
    for (const auto& [e, v] : c.coeffs) t.terms.emplace_back(e, v);
  return t;
}

nlohmann::json to_json(const HomogeneousComponent& c) {
  if (c.basis == HomogeneousComponent::Basis::sampled)
    throw std::runtime_error("to_json: sampled-mode component");
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& [e, v] : c.coeffs) {
    nlohmann::json val = nlohmann::json::array();
    for (int o = 0; o < c.n_out; ++o) val.push_back(v[o]);
    terms.push_back({{"exps", e}, {"value", val}});
  }
  return {{"degree", c.degree}, {"terms", terms}};
}

nlohmann::json to_json(const GradedMapJet& jet) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& [d, c] : jet.components) comps.push_back(to_json(c));
  return {{"n_in", jet.n_in}, {"n_out", jet.n_out}, {"components", comps}};
}

HomogeneousComponent component_from_json(const nlohmann::json& j) {
  throw std::runtime_error("component_from_json requires enclosing jet dims");
}

GradedMapJet jet_from_json(const nlohmann::json& j) {
  GradedMapJet jet(j.at("n_in").get<int>(), j.at("n_out").get<int>(), 0);
  for (const auto& cj : j.at("components")) {
    HomogeneousComponent c(cj.at("degree").get<int>(), jet.n_in, jet.n_out);
    for (const auto& tj : cj.at("terms")) {
      MultiIndex e = tj.at("exps").get<MultiIndex>();
      auto vals = tj.at("value").get<std::vector<double>>();
      Vec v = Eigen::Map<const Vec>(vals.data(),
                                    static_cast<Eigen::Index>(vals.size()));
      c.add_term(e, v);
    }
    jet.set(std::move(c));
  }
  return jet;
}

bool fit_polynomial(const std::vector<Vec>& points,
                    const std::vector<Vec>& values, int degree, int n_in,
                    int n_out, double tol, HomogeneousComponent* out) {
  auto basis = exponents_of_degree(n_in, degree);
  const int np = static_cast<int>(points.size());
  const int nb = static_cast<int>(basis.size());
  if (np < nb) throw std::invalid_argument("fit_polynomial: too few points");
  Mat A(np, nb);
  for (int r = 0; r < np; ++r)
    for (int c = 0; c < nb; ++c) A(r, c) = monomial(points[r], basis[c]);
  Mat B(np, n_out);
  for (int r = 0; r < np; ++r) B.row(r) = values[r].transpose();
  Mat C = A.colPivHouseholderQr().solve(B);
  double resid = (A * C - B).cwiseAbs().maxCoeff();
  if (resid >= tol) return false;
  if (out) {
    HomogeneousComponent comp(degree, n_in, n_out);
    for (int c = 0; c < nb; ++c) {
      Vec v = C.row(c).transpose();
      if (v.cwiseAbs().maxCoeff() > 0.0) comp.add_term(basis[c], v);
    }
    *out = std::move(comp);
  }
  return true;
}

void PeriodicGradedJet::set(int degree,
                            std::vector<HomogeneousComponent> samples) {
  if (static_cast<int>(samples.size()) != n_samples)
    throw std::invalid_argument("PeriodicGradedJet::set: sample count");
  if (degree > max_degree) max_degree = degree;
  components[degree] = std::move(samples);
}

void PeriodicGradedJet::set_static(const HomogeneousComponent& c) {
  set(c.degree, std::vector<HomogeneousComponent>(n_samples, c));
}

const std::vector<HomogeneousComponent>& PeriodicGradedJet::at(
    int degree) const {
  auto it = components.find(degree);
  if (it == components.end())
    throw std::out_of_range("PeriodicGradedJet: no degree " +
                            std::to_string(degree));
  return it->second;
}

Vec PeriodicGradedJet::eval_at_sample(const Vec& x, int sample) const {
  int s = ((sample % n_samples) + n_samples) % n_samples;
  Vec acc = Vec::Zero(n_out);
  for (const auto& [d, cs] : components) acc += cs[s].eval(x);
  return acc;
}

GradedMapJet PeriodicGradedJet::sample_jet(int sample) const {
  int s = ((sample % n_samples) + n_samples) % n_samples;
  GradedMapJet jet(n_in, n_out, max_degree);
  for (const auto& [d, cs] : components) jet.set(cs[s]);
  return jet;
}

namespace {

using Cx = std::complex<double>;

std::vector<Cx> dft(const std::vector<double>& f) {
  const int n = static_cast<int>(f.size());
  std::vector<Cx> c(n);
  for (int k = 0; k < n; ++k) {
    Cx acc = 0;
    for (int s = 0; s < n; ++s)
      acc += f[s] * std::polar(1.0, -2.0 * M_PI * k * s / n);
    c[k] = acc / static_cast<double>(n);
  }
  return c;
}

std::vector<double> idft(const std::vector<Cx>& c) {
  const int n = static_cast<int>(c.size());
  std::vector<double> f(n);
  for (int s = 0; s < n; ++s) {
    Cx acc = 0;
    for (int k = 0; k < n; ++k)
      acc += c[k] * std::polar(1.0, 2.0 * M_PI * k * s / n);
    f[s] = acc.real();
  }
  return f;
}

// Signed frequency for DFT bin k of an n-point grid.
int signed_freq(int k, int n) { return k <= n / 2 ? k : k - n; }

std::vector<double> spectral_op(const std::vector<double>& f, double period,
                                bool antiderivative) {
  const int n = static_cast<int>(f.size());
  auto c = dft(f);
  double omega = 2.0 * M_PI / period;
  for (int k = 0; k < n; ++k) {
    int m = signed_freq(k, n);
    if (m == 0 || (antiderivative && 2 * k == n)) {
      c[k] = 0;
      continue;
    }
    Cx im(0.0, m * omega);
    c[k] = antiderivative ? c[k] / im : c[k] * im;
  }
  return idft(c);
}

std::vector<Vec> spectral_vec(const std::vector<Vec>& samples, double period,
                              bool antiderivative) {
  const int n = static_cast<int>(samples.size());
  const Eigen::Index dim = samples[0].size();
  std::vector<Vec> out(n, Vec::Zero(dim));
  std::vector<double> f(n);
  for (Eigen::Index d = 0; d < dim; ++d) {
    for (int s = 0; s < n; ++s) f[s] = samples[s][d];
    auto g = spectral_op(f, period, antiderivative);
    for (int s = 0; s < n; ++s) out[s][d] = g[s];
  }
  return out;
}

}  // namespace

std::vector<Vec> periodic_antiderivative(const std::vector<Vec>& samples,
                                         double period) {
  return spectral_vec(samples, period, true);
}

std::vector<Vec> periodic_derivative(const std::vector<Vec>& samples,
                                     double period) {
  return spectral_vec(samples, period, false);
}

Vec PeriodicGradedJet::eval(const Vec& x, double t) const {
  // Trigonometric interpolation of the per-sample values.
  std::vector<Vec> vals(n_samples);
  for (int s = 0; s < n_samples; ++s) vals[s] = eval_at_sample(x, s);
  Vec acc = Vec::Zero(n_out);
  double omega = 2.0 * M_PI / period;
  for (Eigen::Index d = 0; d < n_out; ++d) {
    std::vector<double> f(n_samples);
    for (int s = 0; s < n_samples; ++s) f[s] = vals[s][d];
    auto c = dft(f);
    Cx v = 0;
    for (int k = 0; k < n_samples; ++k) {
      int m = signed_freq(k, n_samples);
      if (2 * k == n_samples) {
        v += c[k] * std::cos(m * omega * t);
      } else {
        v += c[k] * std::polar(1.0, m * omega * t);
      }
    }
    acc[d] = v.real();
  }
  return acc;
}

GradedMapJet time_mean(const PeriodicGradedJet& h) {
  GradedMapJet mean(h.n_in, h.n_out, h.max_degree);
  for (const auto& [d, cs] : h.components) {
    bool poly = true;
    for (const auto& c : cs)
      if (c.basis == HomogeneousComponent::Basis::sampled) poly = false;
    if (poly) {
      HomogeneousComponent m(d, h.n_in, h.n_out);
      double w = 1.0 / h.n_samples;
      for (const auto& c : cs)
        for (const auto& [e, v] : c.coeffs) m.add_term(e, w * v);
      m.prune(0.0);
      if (!m.coeffs.empty()) mean.set(std::move(m));
    } else {
      auto copy = cs;
      int ns = h.n_samples;
      int nout = h.n_out;
      mean.set(HomogeneousComponent::sampled(
          d, h.n_in, h.n_out, [copy, ns, nout](const Vec& u) {
            Vec acc = Vec::Zero(nout);
            for (const auto& c : copy) acc += c.eval(u);
            return Vec(acc / ns);
          }));
    }
  }
  return mean;
}

PeriodicGradedJet oscillatory_part(const PeriodicGradedJet& h) {
  GradedMapJet mean = time_mean(h);
  PeriodicGradedJet osc(h.n_in, h.n_out, h.max_degree, h.period, h.n_samples);
  for (const auto& [d, cs] : h.components) {
    std::vector<HomogeneousComponent> out = cs;
    if (mean.has(d)) {
      const auto& m = mean.at(d);
      for (auto& c : out) {
        if (c.basis == HomogeneousComponent::Basis::sampled ||
            m.basis == HomogeneousComponent::Basis::sampled) {
          auto base = c;
          c = HomogeneousComponent::sampled(
              d, h.n_in, h.n_out,
              [base, m](const Vec& u) { return base.eval(u) - m.eval(u); });
        } else {
          for (const auto& [e, v] : m.coeffs) c.add_term(e, -v);
          c.prune(0.0);
        }
      }
    }
    osc.set(d, std::move(out));
  }
  return osc;
}

}  // namespace paraman::polyalg
