#include <doctest.h>

#include <cmath>
#include <random>

#include "paraman/polyalg.hpp"

using namespace paraman::polyalg;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

HomogeneousComponent random_component(int degree, int n_in, int n_out,
                                      std::mt19937& rng) {
  HomogeneousComponent c(degree, n_in, n_out);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& e : exponents_of_degree(n_in, degree)) {
    Vec v(n_out);
    for (int o = 0; o < n_out; ++o) v[o] = u(rng);
    c.add_term(e, v);
  }
  return c;
}

Vec random_point(int n, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec x(n);
  for (int i = 0; i < n; ++i) x[i] = u(rng);
  return x;
}

// Slope of log|err| vs log r over a radial scan.
double fitted_slope(const std::function<double(double)>& err, double r_lo,
                    double r_hi, int n_pts) {
  std::vector<double> lx, ly;
  for (int i = 0; i < n_pts; ++i) {
    double r = r_lo * std::pow(r_hi / r_lo, double(i) / (n_pts - 1));
    double e = err(r);
    if (e <= 0) continue;
    lx.push_back(std::log(r));
    ly.push_back(std::log(e));
  }
  double mx = 0, my = 0;
  for (size_t i = 0; i < lx.size(); ++i) mx += lx[i], my += ly[i];
  mx /= lx.size();
  my /= ly.size();
  double num = 0, den = 0;
  for (size_t i = 0; i < lx.size(); ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  return num / den;
}

}  // namespace

TEST_CASE("identity jet evaluates to its argument") {
  auto id = GradedMapJet::identity(2, 1);
  Vec x = vec({2.0, 3.0});
  CHECK((id.eval(x) - x).norm() == 0.0);
}

TEST_CASE("restricted quartic field evaluates by hand at (u,Theta)=(1,1), v=0") {
  // p(x,y) = (-1/4 (u+v)^3 u, -1/4 (u+v)^2 (u-v) Theta) restricted to v=0.
  HomogeneousComponent p(4, 2, 2);
  p.add_term({4, 0}, vec({-0.25, 0.0}));
  p.add_term({3, 1}, vec({0.0, -0.25}));
  Vec out = p.eval(vec({1.0, 1.0}));
  CHECK(out[0] == doctest::Approx(-0.25).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("homogeneity h(2x) = 2^d h(x) for random degree-3 components") {
  std::mt19937 rng(7);
  auto h = random_component(3, 3, 2, rng);
  for (int i = 0; i < 100; ++i) {
    Vec x = random_point(3, rng);
    Vec a = h.eval(2.0 * x), b = 8.0 * h.eval(x);
    CHECK((a - b).norm() <= 1e-12 * std::max(1.0, b.norm()));
  }
}

TEST_CASE("sampled-mode homogeneity to 1e-12 relative for lambda in (0,1]") {
  auto h = HomogeneousComponent::sampled(3, 2, 1, [](const Vec& u) {
    return vec({u[0] * u[0] * u[1] / (1.0 + u[1] * u[1])});
  });
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> lam(0.01, 1.0);
  for (int i = 0; i < 100; ++i) {
    Vec x = random_point(2, rng);
    double l = lam(rng);
    Vec a = h.eval(l * x);
    Vec b = std::pow(l, 3) * h.eval(x);
    CHECK((a - b).norm() <= 1e-12 * std::max(1e-12, b.norm()));
  }
}

TEST_CASE("derivative of 1D -x^2 is -2x") {
  GradedMapJet jet(1, 1, 2);
  HomogeneousComponent p(2, 1, 1);
  p.add_term({2}, -1.0);
  jet.set(p);
  auto d = differentiate(jet);
  CHECK(d.eval(vec({3.0}))[0] == doctest::Approx(-6.0).epsilon(1e-15));
}

TEST_CASE("D_y p(x,0) of the restricted quartic field") {
  // Full p(x,y) in variables (u, Theta, v): p homogeneous degree 4.
  // p1 = -1/4 (u+v)^3 u, p2 = -1/4 (u+v)^2 (u-v) Theta.
  GradedMapJet p(3, 2, 4);
  HomogeneousComponent c(4, 3, 2);
  // expand -1/4 (u+v)^3 u = -1/4 (u^4 + 3u^3 v + 3u^2 v^2 + u v^3)
  c.add_term({4, 0, 0}, vec({-0.25, 0.0}));
  c.add_term({3, 0, 1}, vec({-0.75, 0.0}));
  c.add_term({2, 0, 2}, vec({-0.75, 0.0}));
  c.add_term({1, 0, 3}, vec({-0.25, 0.0}));
  // expand -1/4 (u+v)^2 (u-v) Theta = -1/4 (u^3 + u^2 v - u v^2 - v^3) Theta
  c.add_term({3, 1, 0}, vec({0.0, -0.25}));
  c.add_term({2, 1, 1}, vec({0.0, -0.25}));
  c.add_term({1, 1, 2}, vec({0.0, 0.25}));
  c.add_term({0, 1, 3}, vec({0.0, 0.25}));
  p.set(c);
  double u = 0.7, Th = -0.3;
  Mat J = p.jacobian_at(vec({u, Th, 0.0}));
  CHECK(J(0, 2) == doctest::Approx(-0.75 * u * u * u).epsilon(1e-13));
  CHECK(J(1, 2) == doctest::Approx(-0.25 * u * u * Th).epsilon(1e-13));
}

TEST_CASE("Euler identity Dh(x) x = d h(x) on random homogeneous components") {
  std::mt19937 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    int deg = 1 + rep % 5;
    auto h = random_component(deg, 2, 2, rng);
    Vec x = random_point(2, rng);
    Vec lhs = h.jacobian_at(x) * x;
    Vec rhs = double(deg) * h.eval(x);
    CHECK((lhs - rhs).norm() <= 1e-10 * std::max(1.0, rhs.norm()));
  }
}

TEST_CASE("compose with identity truncates the inner jet") {
  std::mt19937 rng(5);
  GradedMapJet inner(2, 2, 3);
  inner.set(random_component(1, 2, 2, rng));
  inner.set(random_component(3, 2, 2, rng));
  auto id = GradedMapJet::identity(2, 1);
  auto c = compose_truncated(id, inner, 2);
  CHECK(c.has(1));
  CHECK_FALSE(c.has(3));
  Vec x = vec({0.3, -0.2});
  CHECK((c.eval(x) - inner.at(1).eval(x)).norm() <= 1e-14);
}

TEST_CASE("outer x^2 composed with x + x^2 at cutoff 4") {
  GradedMapJet outer(1, 1, 2), inner(1, 1, 2);
  HomogeneousComponent o2(2, 1, 1);
  o2.add_term({2}, 1.0);
  outer.set(o2);
  HomogeneousComponent i1(1, 1, 1), i2(2, 1, 1);
  i1.add_term({1}, 1.0);
  i2.add_term({2}, 1.0);
  inner.set(i1);
  inner.set(i2);
  auto c = compose_truncated(outer, inner, 4);
  CHECK(c.at(2).coeffs.at({2})[0] == doctest::Approx(1.0));
  CHECK(c.at(3).coeffs.at({3})[0] == doctest::Approx(2.0));
  CHECK(c.at(4).coeffs.at({4})[0] == doctest::Approx(1.0));
}

TEST_CASE("1D x - x^N self-composition truncated at 2N-1") {
  for (int N : {2, 3, 4}) {
    GradedMapJet F(1, 1, N);
    HomogeneousComponent l(1, 1, 1), h(N, 1, 1);
    l.add_term({1}, 1.0);
    h.add_term({N}, -1.0);
    F.set(l);
    F.set(h);
    auto c = compose_truncated(F, F, 2 * N - 1);
    CHECK(c.at(1).coeffs.at({1})[0] == doctest::Approx(1.0));
    CHECK(c.at(N).coeffs.at({N})[0] == doctest::Approx(-2.0));
    CHECK(c.at(2 * N - 1).coeffs.at({2 * N - 1})[0] ==
          doctest::Approx(double(N)));
  }
}

TEST_CASE("composition truncation error has slope >= cutoff+1-0.3") {
  std::mt19937 rng(17);
  GradedMapJet f(2, 2, 3), g(2, 2, 3);
  f.set(random_component(1, 2, 2, rng));
  f.set(random_component(2, 2, 2, rng));
  f.set(random_component(3, 2, 2, rng));
  g.set(random_component(1, 2, 2, rng));
  g.set(random_component(2, 2, 2, rng));
  for (int cutoff : {3, 4, 5}) {
    auto c = compose_truncated(f, g, cutoff);
    Vec dir = vec({0.6, 0.8});
    double slope = fitted_slope(
        [&](double r) {
          Vec x = r * dir;
          return (c.eval(x) - f.eval(g.eval(x))).norm();
        },
        1e-3, 1e-1, 25);
    CHECK(slope >= cutoff + 1 - 0.3);
  }
}

TEST_CASE("grade of empty table is the empty jet") {
  TaylorTable t;
  t.n_in = 2;
  t.n_out = 1;
  t.terms.push_back({{1, 0}, Vec::Zero(1)});
  auto jet = grade(t);
  CHECK(jet.components.empty());
}

TEST_CASE("grade groups by total degree and flatten round-trips") {
  std::mt19937 rng(23);
  TaylorTable t;
  t.n_in = 3;
  t.n_out = 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int d = 1; d <= 4; ++d)
    for (const auto& e : exponents_of_degree(3, d)) {
      Vec v(2);
      v << u(rng), u(rng);
      t.terms.push_back({e, v});
    }
  auto jet = grade(t);
  for (int d = 1; d <= 4; ++d) CHECK(jet.has(d));
  auto t2 = flatten(jet);
  auto jet2 = grade(t2);
  Vec x = random_point(3, rng);
  CHECK((jet.eval(x) - jet2.eval(x)).norm() == 0.0);
}

TEST_CASE("JSON round-trip is bit-exact for polynomial jets") {
  std::mt19937 rng(29);
  GradedMapJet jet(2, 3, 4);
  jet.set(random_component(2, 2, 3, rng));
  jet.set(random_component(4, 2, 3, rng));
  auto j = to_json(jet);
  std::string s = j.dump();
  auto jet2 = jet_from_json(nlohmann::json::parse(s));
  CHECK(jet2.n_in == jet.n_in);
  CHECK(jet2.n_out == jet.n_out);
  for (const auto& [d, c] : jet.components) {
    const auto& c2 = jet2.at(d);
    for (const auto& [e, v] : c.coeffs) {
      const Vec& v2 = c2.coeffs.at(e);
      for (int o = 0; o < c.n_out; ++o) CHECK(v[o] == v2[o]);
    }
  }
  CHECK(nlohmann::json::parse(s).dump() == s);
}

TEST_CASE("polynomial detection recovers exact coefficients") {
  std::mt19937 rng(31);
  auto h = random_component(3, 2, 2, rng);
  std::vector<Vec> pts, vals;
  for (int i = 0; i < 40; ++i) {
    Vec x = random_point(2, rng);
    pts.push_back(x);
    vals.push_back(h.eval(x));
  }
  HomogeneousComponent fit;
  CHECK(fit_polynomial(pts, vals, 3, 2, 2, 1e-10, &fit));
  Vec x = random_point(2, rng);
  CHECK((fit.eval(x) - h.eval(x)).norm() <= 1e-10);

  // Non-polynomial homogeneous data must be rejected.
  std::vector<Vec> vals2;
  for (const auto& p : pts) {
    double r = p.norm();
    vals2.push_back(vec({r * r * r, p[0] * p[0] * r}));
  }
  CHECK_FALSE(fit_polynomial(pts, vals2, 3, 2, 2, 1e-10, nullptr));
}

TEST_CASE("periodic jet: mean/oscillatory split") {
  const double T = 2.0;
  PeriodicGradedJet h(1, 1, 2, T);
  std::vector<HomogeneousComponent> cs;
  for (int s = 0; s < h.n_samples; ++s) {
    double t = T * s / h.n_samples;
    HomogeneousComponent c(2, 1, 1);
    c.add_term({2}, 1.5 + std::cos(2 * M_PI * t / T));
    cs.push_back(c);
  }
  h.set(2, cs);
  auto mean = time_mean(h);
  CHECK(mean.at(2).coeffs.at({2})[0] == doctest::Approx(1.5).epsilon(1e-13));
  auto osc = oscillatory_part(h);
  auto osc_mean = time_mean(osc);
  double m = osc_mean.has(2) ? osc_mean.at(2).max_abs_coeff() : 0.0;
  CHECK(m <= 1e-12);
}

TEST_CASE("periodic jet: mean of trigonometric polynomial matches Fourier") {
  const double T = 1.0;
  const int S = 64;
  PeriodicGradedJet h(1, 1, 1, T, S);
  std::vector<HomogeneousComponent> cs;
  // f(t) = 0.7 + 0.3 cos(2 pi t) - 0.2 sin(6 pi t): constant term 0.7.
  for (int s = 0; s < S; ++s) {
    double t = T * s / S;
    HomogeneousComponent c(1, 1, 1);
    c.add_term({1}, 0.7 + 0.3 * std::cos(2 * M_PI * t) -
                        0.2 * std::sin(6 * M_PI * t));
    cs.push_back(c);
  }
  h.set(1, cs);
  CHECK(time_mean(h).at(1).coeffs.at({1})[0] ==
        doctest::Approx(0.7).epsilon(1e-13));
}

TEST_CASE("spectral antiderivative and derivative invert each other") {
  const double T = 3.0;
  const int S = 64;
  std::vector<Vec> f(S);
  for (int s = 0; s < S; ++s) {
    double t = T * s / S;
    f[s] = vec({std::sin(2 * M_PI * t / T) + 0.5 * std::cos(4 * M_PI * t / T)});
  }
  auto F = periodic_antiderivative(f, T);
  auto df = periodic_derivative(F, T);
  for (int s = 0; s < S; ++s) CHECK((df[s] - f[s]).norm() <= 1e-11);
  double mean = 0;
  for (const auto& v : F) mean += v[0];
  CHECK(std::abs(mean / S) <= 1e-12);
}

TEST_CASE("periodicity: sample at t and t+T agree bit-exactly") {
  PeriodicGradedJet h(1, 1, 2, 1.0);
  HomogeneousComponent c(2, 1, 1);
  c.add_term({2}, 0.37);
  h.set_static(c);
  Vec x = vec({0.5});
  CHECK(h.eval_at_sample(x, 5)[0] == h.eval_at_sample(x, 5 + h.n_samples)[0]);
}
