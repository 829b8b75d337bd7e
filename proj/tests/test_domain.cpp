#include <doctest.h>

#include <cmath>

#include "paraman/domain.hpp"

using namespace paraman;
using namespace paraman::domain;
using polyalg::GradedMapJet;
using polyalg::HomogeneousComponent;
using polyalg::Vec;

namespace {

// 1D p(x) = -x^N on V = (0, inf), no y-variables.
SystemJets one_d_system(int N) {
  SystemJets sys;
  sys.n = 1;
  sys.m = 0;
  sys.N = N;
  sys.M = N;
  sys.p = GradedMapJet(1, 1, N);
  HomogeneousComponent p(N, 1, 1);
  p.add_term(std::vector<int>{N}, -1.0);
  sys.p.set(p);
  return sys;
}

ConeSpec half_line() {
  ConeSpec cone;
  cone.n = 1;
  Vec a(1);
  a << 1.0;
  cone.halfspaces.push_back({a, 0.0});
  return cone;
}

// Leading quartic x-field of the restricted problem at v = 0:
// p(u, Theta) = (-1/4 u^4, -1/4 u^3 Theta), on {0 < Theta <= kappa u}.
SystemJets quartic_system() {
  SystemJets sys;
  sys.n = 2;
  sys.m = 0;
  sys.N = 4;
  sys.M = 4;
  sys.p = GradedMapJet(2, 2, 4);
  HomogeneousComponent p(4, 2, 2);
  Vec c1(2), c2(2);
  c1 << -0.25, 0.0;
  c2 << 0.0, -0.25;
  p.add_term({4, 0}, c1);
  p.add_term({3, 1}, c2);
  sys.p.set(p);
  return sys;
}

ConeSpec quartic_cone() {
  ConeSpec cone;
  cone.n = 2;
  Vec e1(2), e2(2), slope(2);
  e1 << 1.0, 0.0;
  e2 << 0.0, 1.0;
  slope << 0.8, -1.0;  // Theta <= 0.8 u
  cone.halfspaces.push_back({e1, 0.0});
  cone.halfspaces.push_back({e2, 0.0});
  cone.halfspaces.push_back({slope, 0.0});
  return cone;
}

// Section 6.1-style toy map data: p = (-x1^2, -a x1 x2), q = b x1 y.
SystemJets toy_system(double a, double b) {
  SystemJets sys;
  sys.n = 2;
  sys.m = 1;
  sys.N = 2;
  sys.M = 2;
  sys.p = GradedMapJet(3, 2, 2);
  HomogeneousComponent p(2, 3, 2);
  Vec c1(2), c2(2);
  c1 << -1.0, 0.0;
  c2 << 0.0, -a;
  p.add_term({2, 0, 0}, c1);
  p.add_term({1, 1, 0}, c2);
  sys.p.set(p);
  sys.q = GradedMapJet(3, 1, 2);
  HomogeneousComponent q(2, 3, 1);
  q.add_term({1, 0, 1}, b);
  sys.q.set(q);
  return sys;
}

ConeSpec toy_cone(double a) {
  // |x2| < (1 - a) x1.
  ConeSpec cone;
  cone.n = 2;
  Vec up(2), dn(2);
  up << 1.0 - a, -1.0;
  dn << 1.0 - a, 1.0;
  cone.halfspaces.push_back({up, 0.0});
  cone.halfspaces.push_back({dn, 0.0});
  return cone;
}

DomainConstants synthetic(int N, int M, double a_p, double b_p, double A_p,
                          double B_p, double B_q) {
  DomainConstants c;
  c.N = N;
  c.M = M;
  c.L = std::min(N, M);
  c.eta = 1 + N - c.L;
  c.alpha = 1.0 / (N - 1);
  c.rho = 0.1;
  c.a_p = a_p;
  c.b_p = b_p;
  c.A_p = A_p;
  c.B_p = B_p;
  c.B_q = B_q;
  c.c_p = (B_q <= 0) ? a_p : b_p;
  c.d_p = (A_p <= 0) ? a_p : b_p;
  return c;
}

void check_kapwell(const DomainConstants& c) {
  CHECK(std::abs(c.a_p) <= c.b_p + 1e-9);
  CHECK(c.B_p >= c.A_p - 1e-9);
  CHECK(c.a_p >= c.A_p / c.N - 1e-9);
  if (c.a_p > 0) CHECK(c.B_p >= c.N * c.a_p - 1e-9);
}

}  // namespace

TEST_CASE("1D p = -x^N constants: a_p = b_p = 1, A_p = B_p = N") {
  for (int N : {2, 3, 5}) {
    auto consts = compute_constants(one_d_system(N), half_line(), 0.1, 400);
    CHECK(consts.a_p == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(consts.b_p == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(consts.A_p == doctest::Approx(double(N)).epsilon(1e-6));
    CHECK(consts.B_p == doctest::Approx(double(N)).epsilon(1e-6));
    check_kapwell(consts);
  }
}

TEST_CASE("quartic cone constants finite with a_p > 0") {
  auto consts = compute_constants(quartic_system(), quartic_cone(), 0.1, 2000);
  CHECK(consts.a_p > 0);
  CHECK(std::isfinite(consts.b_p));
  CHECK(std::isfinite(consts.A_p));
  CHECK(std::isfinite(consts.B_p));
  check_kapwell(consts);
  // Regression baselines from the sampling oracle (sup norm, kappa = 0.8).
  CHECK(consts.a_p == doctest::Approx(0.25).epsilon(1e-4));
  CHECK(consts.b_p == doctest::Approx(0.25).epsilon(1e-4));
}

TEST_CASE("scaled input 2p doubles all constants") {
  auto sys = quartic_system();
  auto c1 = compute_constants(sys, quartic_cone(), 0.1, 1000);
  SystemJets sys2 = sys;
  sys2.p = sys.p.scaled(2.0);
  auto c2 = compute_constants(sys2, quartic_cone(), 0.1, 1000);
  CHECK(c2.a_p == doctest::Approx(2 * c1.a_p).epsilon(1e-9));
  CHECK(c2.b_p == doctest::Approx(2 * c1.b_p).epsilon(1e-9));
  CHECK(c2.A_p == doctest::Approx(2 * c1.A_p).epsilon(1e-9));
  CHECK(c2.B_p == doctest::Approx(2 * c1.B_p).epsilon(1e-9));
}

TEST_CASE("constants are monotone when rho shrinks") {
  auto sys = toy_system(0.2, 0.3);
  auto cone = toy_cone(0.2);
  auto big = compute_constants(sys, cone, 0.1, 1500);
  auto small = compute_constants(sys, cone, 0.05, 1500);
  CHECK(small.A_p >= big.A_p - 1e-9);
  CHECK(small.B_p <= big.B_p + 1e-9);
  CHECK(small.B_q >= big.B_q - 1e-9);
  CHECK(small.a_p >= big.a_p - 1e-9);
  CHECK(small.b_p == doctest::Approx(big.b_p).epsilon(1e-6));
  check_kapwell(big);
  check_kapwell(small);
}

TEST_CASE("1D p = -x^2: H1 and H3 pass with C1 near 1") {
  auto sys = one_d_system(2);
  auto cone = half_line();
  auto consts = compute_constants(sys, cone, 0.05, 400);
  auto rep = check_hypotheses(consts, sys, cone, 800);
  CHECK(rep.H1);
  CHECK(rep.H2);
  CHECK(rep.H3);
  CHECK(rep.C1 == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("toy model: H1 and H2 pass, H3 fails") {
  double a = 0.2, b = 0.3;
  auto sys = toy_system(a, b);
  auto cone = toy_cone(a);
  auto consts = compute_constants(sys, cone, 0.08, 2000);
  auto rep = check_hypotheses(consts, sys, cone, 2000);
  CHECK(rep.H1);
  CHECK(rep.H2);
  CHECK_FALSE(rep.H3);
}

TEST_CASE("hypothesis monotonicity in rho for a passing system") {
  auto sys = one_d_system(2);
  auto cone = half_line();
  for (double rho : {0.05, 0.02}) {
    auto consts = compute_constants(sys, cone, rho, 400);
    auto rep = check_hypotheses(consts, sys, cone, 400);
    CHECK(rep.H1);
    CHECK(rep.H2);
    CHECK(rep.H3);
  }
}

TEST_CASE("parameter family: single lambda equals plain constants") {
  ParameterFamily fam;
  fam.system = [](double) { return one_d_system(2); };
  fam.lambdas = {0.0};
  auto fc = constants_over_parameters(fam, half_line(), 0.05, 400);
  auto plain = compute_constants(one_d_system(2), half_line(), 0.05, 400);
  CHECK(fc.combined.a_p == doctest::Approx(plain.a_p).epsilon(1e-12));
  CHECK(fc.combined.A_p == doctest::Approx(plain.A_p).epsilon(1e-12));
  CHECK(fc.r0_dominates);
}

TEST_CASE("parameter family p_lambda = -(1+lambda) x^2") {
  ParameterFamily fam;
  fam.system = [](double lam) {
    auto sys = one_d_system(2);
    sys.p = sys.p.scaled(1.0 + lam);
    return sys;
  };
  fam.lambdas = {0.0, 0.25, 0.5, 0.75, 1.0};
  auto fc = constants_over_parameters(fam, half_line(), 0.05, 400);
  CHECK(fc.combined.a_p == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fc.combined.A_p == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(fc.combined.B_p == doctest::Approx(4.0).epsilon(1e-6));
  // b_p follows the parameter-family redefinition: inf over lambda of a_p.
  CHECK(fc.combined.b_p == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fc.r0_dominates);
}

TEST_CASE("regularity: 1D N=2 lands in case (1)") {
  auto consts = compute_constants(one_d_system(2), half_line(), 0.05, 400);
  auto rep = regularity_report(consts, 12.0, 0.9 * consts.a_p,
                               1.1 * consts.b_p, 1.1 * consts.B_p);
  CHECK(rep.case_id == 1);
  CHECK(rep.r0 >= 2 * consts.N - 1 - 1e-9);
  CHECK(rep.ell0 > rep.r0 - 1e-12);
  CHECK(rep.ell_exists);
}

TEST_CASE("regularity: sigma_max formula instantiation") {
  // A_p < eta*d_p with r = 10, B_p/a_p = 2, N = 2, eta = 1.
  auto c = synthetic(2, 2, 1.0, 1.0, 0.5, 2.0, 0.5);
  CHECK(c.d_p == 1.0);
  auto rep = regularity_report(c, 10.0, 0.9, 1.1, 2.1);
  CHECK(rep.case_id == 2);
  // max{k : k*(1 - 0.5) < 10 - 2 - 2 + 1 = 7} = 13.
  CHECK(rep.sigma_max == doctest::Approx(13.0));
}

TEST_CASE("regularity: infinite r selects case (3)") {
  auto c = synthetic(2, 2, 1.0, 1.0, 0.5, 2.0, 0.5);
  auto rep = regularity_report(
      c, std::numeric_limits<double>::infinity(), 0.9, 1.1, 2.1);
  CHECK(rep.case_id == 3);
}

TEST_CASE("regularity rejects bad kappa ordering") {
  auto c = synthetic(2, 2, 1.0, 1.0, 0.5, 2.0, 0.5);
  CHECK_THROWS_AS(regularity_report(c, 10.0, 1.5, 1.1, 2.1),
                  std::invalid_argument);
}

TEST_CASE("orbit decomposition for R(x) = x - x^2") {
  auto sys = one_d_system(2);
  auto cone = half_line();
  auto consts = compute_constants(sys, cone, 0.05, 400);
  auto R = [](const Vec& x) { return Vec(x - Vec(x.array().square())); };
  auto p_x0 = [&](const Vec& x) { return sys.p.eval(x); };
  auto od = orbit_decomposition(R, consts, cone, 0.9 * consts.a_p,
                                1.1 * consts.b_p, 12000, {}, 10000, p_x0);
  CHECK(od.interleaved);
  CHECK(od.envelope_ok);
  CHECK(od.beta_a > 0.1);
  CHECK(od.beta_b > 0.1);
  // abar, bbar monotone decreasing
  for (size_t k = 1; k < 200; ++k) {
    CHECK(od.abar_seq[k] < od.abar_seq[k - 1]);
    CHECK(od.bbar_seq[k] < od.bbar_seq[k - 1]);
  }
}

TEST_CASE("orbit decomposition rejects a map with wrong leading order") {
  auto sys = one_d_system(2);
  auto cone = half_line();
  auto consts = compute_constants(sys, cone, 0.05, 400);
  auto R = [](const Vec& x) {
    return Vec(x - 0.5 * Vec(x.array().square()));  // wrong quadratic term
  };
  auto p_x0 = [&](const Vec& x) { return sys.p.eval(x); };
  CHECK_THROWS_AS(orbit_decomposition(R, consts, cone, 0.9 * consts.a_p,
                                      1.1 * consts.b_p, 100, {}, 10, p_x0),
                  std::invalid_argument);
}

TEST_CASE("all R^k(x) stay in V_rho and tend to 0 under H1+H3") {
  auto cone = half_line();
  for (const auto& x0 : cone.sample(0.05, 10)) {
    Vec x = x0;
    for (int k = 0; k < 5000; ++k) {
      x = Vec(x - Vec(x.array().square()));
      REQUIRE(cone.in_Vrho(x, 0.05));
    }
    CHECK(x[0] < 1e-3);
  }
}

TEST_CASE("cone sanity checks") {
  auto cone = quartic_cone();
  CHECK(cone.star_shaped_ok(0.1));
  CHECK(cone.origin_not_interior());
  Vec inside(2);
  inside << 0.05, 0.02;
  CHECK(cone.in_Vrho(inside, 0.1));
  CHECK(cone.dist_to_complement(inside, 0.1) > 0);
  Vec outside(2);
  outside << 0.05, 0.06;  // Theta > 0.8 u
  CHECK_FALSE(cone.contains(outside));
  CHECK(cone.dist_to_complement(outside, 0.1) == 0.0);
}
