#include <doctest.h>

#include <cmath>

#include "paraman/homological.hpp"

using namespace paraman;
using namespace paraman::homological;
using polyalg::GradedMapJet;
using polyalg::HomogeneousComponent;
using polyalg::MultiIndex;
using HC = HomogeneousComponent;

namespace {

domain::ConeSpec half_line() {
  domain::ConeSpec cone;
  cone.n = 1;
  cone.halfspaces.push_back({Vec::Ones(1), 0.9});
  return cone;
}

domain::ConeSpec wedge2d(double nu = 0.6) {
  domain::ConeSpec cone;
  cone.n = 2;
  Vec a = Vec::Zero(2);
  a[0] = 1.0;
  cone.halfspaces.push_back({a, nu});
  return cone;
}

// 1D model: p = -x^2, q = -x y (N = M = 2).
domain::SystemJets sys_1d_NeqM() {
  domain::SystemJets s;
  s.n = 1;
  s.m = 1;
  s.N = 2;
  s.M = 2;
  s.p = GradedMapJet(2, 1, 2);
  HC p2(2, 2, 1);
  p2.add_term({2, 0}, -1.0);
  s.p.set(p2);
  s.q = GradedMapJet(2, 1, 2);
  HC q2(2, 2, 1);
  q2.add_term({1, 1}, -1.0);
  s.q.set(q2);
  return s;
}

FlowOracle closed_1d() {
  // phi = x/(1+tx), M1 = (1+tx)^-2, M2 = (1+tx)^-1 for the model above.
  return FlowOracle::closed(
      1, 1, 2,
      [](double t, const Vec& x) { return Vec(x / (1.0 + t * x[0])); },
      [](double t, const Vec& x) {
        return Mat(Mat::Constant(1, 1, std::pow(1.0 + t * x[0], -2.0)));
      },
      [](double t, const Vec& x) {
        return Mat(Mat::Constant(1, 1, 1.0 / (1.0 + t * x[0])));
      });
}

HC mono1(int deg, double c) {  // c * x^deg in one variable
  HC out(deg, 1, 1);
  out.add_term(MultiIndex{deg}, c);
  return out;
}

}  // namespace

TEST_CASE("improper quadrature reproduces int_inf^0 -(1+s)^-2 ds = 1") {
  auto fn = [](double t) {
    return Vec(Vec::Constant(1, -std::pow(1.0 + t, -2.0)));
  };
  Vec I = improper_quadrature(fn, 2.0);
  CHECK(I[0] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("improper quadrature rejects gamma <= 1 up front") {
  auto fn = [](double t) { return Vec(Vec::Constant(1, 1.0 / (1.0 + t))); };
  CHECK_THROWS_AS(improper_quadrature(fn, 0.9), DivergenceError);
  CHECK_THROWS_AS(improper_quadrature(fn, 1.0), DivergenceError);
}

TEST_CASE("improper quadrature detects non-decaying contributions at runtime") {
  // Claimed decay 1.5 but the integrand only decays like 1/t.
  auto fn = [](double t) { return Vec(Vec::Constant(1, 1.0 / (1.0 + t))); };
  CHECK_THROWS_AS(improper_quadrature(fn, 1.5), DivergenceError);
}

TEST_CASE("integrate_ode matches the closed flow of xdot = -x^2") {
  auto f = [](double, const Vec& z) { return Vec(-z.cwiseProduct(z)); };
  Vec z = integrate_ode(f, 0.0, 10.0, Vec::Ones(1));
  CHECK(z[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-10));
}

TEST_CASE("numeric oracle agrees with the closed flow and cocycles") {
  auto sys = sys_1d_NeqM();
  FlowOracle num = numeric_oracle(sys);
  FlowOracle cls = closed_1d();
  Vec x = Vec::Constant(1, 0.07);
  for (double t : {0.5, 3.0, 40.0, 500.0}) {
    CHECK(num.phi(t, x)[0] ==
          doctest::Approx(cls.phi_rule(t, x)[0]).epsilon(1e-9));
    CHECK(num.M1(t, x)(0, 0) ==
          doctest::Approx(cls.M1_rule(t, x)(0, 0)).epsilon(1e-9));
    CHECK(num.M2(t, x)(0, 0) ==
          doctest::Approx(cls.M2_rule(t, x)(0, 0)).epsilon(1e-9));
  }
  // Cocycle property of the numeric flow: phi(s+t,x) = phi(s, phi(t,x)).
  Vec a = num.phi(7.0, x);
  Vec b = num.phi(3.0, num.phi(4.0, x));
  CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-9));
}

TEST_CASE("flow_integral: closed and numeric modes agree at many points") {
  auto sys = sys_1d_NeqM();
  FlowOracle num = numeric_oracle(sys);
  FlowOracle cls = closed_1d();
  HC Ey = mono1(3, 1.0);
  auto g = [&Ey](double, const Vec& ph, const Mat&, const Mat& M2i) {
    return Vec(M2i * Ey.eval(ph));
  };
  int checked = 0;
  for (int i = 1; i <= 110; ++i) {
    double xv = 0.1 * i / 110.0;
    Vec x = Vec::Constant(1, xv);
    // Exact: int_0^inf (1+tx)^1 * x^3 (1+tx)^-3 dt = x^2.
    double exact = xv * xv;
    double Ic = cls.flow_integral(x, 1, g, 3.0)[0];
    double In = num.flow_integral(x, 1, g, 3.0)[0];
    CHECK(std::abs(Ic - exact) <= 1e-8);
    CHECK(std::abs(In - exact) <= 1e-8);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("matvec agrees with pointwise matrix-vector evaluation") {
  HC A(2, 2, 4);  // 2x2 matrix, degree 2, two variables
  A.add_term({2, 0}, Vec(Vec::Ones(4) * 0.5));
  Vec c(4);
  c << 1.0, -2.0, 0.3, 0.7;
  A.add_term({1, 1}, c);
  HC v(3, 2, 2);
  v.add_term({3, 0}, Vec(Vec::Ones(2)));
  Vec d(2);
  d << -0.4, 1.1;
  v.add_term({1, 2}, d);
  HC Av = matvec(A, 2, 2, v);
  CHECK(Av.degree == 5);
  Vec x(2);
  x << 0.3, -0.8;
  Mat Am(2, 2);
  Vec av = A.eval(x);
  Am << av[0], av[1], av[2], av[3];
  Vec want = Am * v.eval(x);
  Vec got = Av.eval(x);
  CHECK((want - got).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("solve_Ky N = M: closed-form coefficient and both oracle modes") {
  auto sys = sys_1d_NeqM();
  auto cone = half_line();
  HC Ey = mono1(3, 1.0);
  // Equation K' p - D_y q K = E with p = -x^2, D_y q = -x: K = -x^2.
  for (bool closed : {true, false}) {
    FlowOracle orc = closed ? closed_1d() : numeric_oracle(sys);
    HC Ky = solve_Ky(Ey, orc, YCase::NeqM, sys, cone, 0.1);
    REQUIRE(Ky.basis == HC::Basis::polynomial);
    CHECK(Ky.degree == 2);
    CHECK(Ky.eval(Vec::Constant(1, 0.05))[0] ==
          doctest::Approx(-0.05 * 0.05).epsilon(1e-7));
  }
}

TEST_CASE("solve_Ky N < M: pure transport equation") {
  domain::SystemJets sys;
  sys.n = 1;
  sys.m = 1;
  sys.N = 2;
  sys.M = 3;
  sys.p = GradedMapJet(2, 1, 2);
  HC p2(2, 2, 1);
  p2.add_term({2, 0}, -1.0);
  sys.p.set(p2);
  sys.q = GradedMapJet(2, 1, 3);
  HC q3(3, 2, 1);
  q3.add_term({2, 1}, -1.0);  // q = -x^2 y
  sys.q.set(q3);
  // DK p = E with E = x^3: K = -x^2/2.
  HC Ky = solve_Ky(mono1(3, 1.0), numeric_oracle(sys), YCase::NltM, sys,
                   half_line(), 0.1);
  REQUIRE(Ky.basis == HC::Basis::polynomial);
  CHECK(Ky.eval(Vec::Constant(1, 0.05))[0] ==
        doctest::Approx(-0.5 * 0.05 * 0.05).epsilon(1e-7));
}

TEST_CASE("solve_Ky N > M: algebraic inversion of D_y q") {
  domain::SystemJets sys;
  sys.n = 1;
  sys.m = 1;
  sys.N = 3;
  sys.M = 2;
  sys.p = GradedMapJet(2, 1, 3);
  HC p3(3, 2, 1);
  p3.add_term({3, 0}, -1.0);
  sys.p.set(p3);
  sys.q = GradedMapJet(2, 1, 2);
  HC q2(2, 2, 1);
  q2.add_term({1, 1}, -1.0);  // q = -x y, D_y q = -x
  sys.q.set(q2);
  // -D_y q K = E: x K = 2 x^3 => K = 2 x^2.
  HC Ky = solve_Ky(mono1(3, 2.0), numeric_oracle(sys), YCase::NgtM, sys,
                   half_line(), 0.1);
  REQUIRE(Ky.basis == HC::Basis::polynomial);
  CHECK(Ky.eval(Vec::Constant(1, 0.1))[0] ==
        doctest::Approx(2.0 * 0.01).epsilon(1e-8));
}

TEST_CASE("solve_Ky N = M in 2D satisfies the y-equation pointwise") {
  // p = (-x1^2, -x1 x2), q = -x1 y.
  domain::SystemJets sys;
  sys.n = 2;
  sys.m = 1;
  sys.N = 2;
  sys.M = 2;
  sys.p = GradedMapJet(3, 2, 2);
  HC p2(2, 3, 2);
  {
    Vec v = Vec::Zero(2);
    v[0] = -1.0;
    p2.add_term({2, 0, 0}, v);
    v.setZero();
    v[1] = -1.0;
    p2.add_term({1, 1, 0}, v);
  }
  sys.p.set(p2);
  sys.q = GradedMapJet(3, 1, 2);
  HC q2(2, 3, 1);
  q2.add_term({1, 0, 1}, -1.0);
  sys.q.set(q2);

  HC Ey(3, 2, 1);  // E = x1^3 + 0.5 x1 x2^2
  Ey.add_term({3, 0}, 1.0);
  Ey.add_term({1, 2}, 0.5);

  auto cone = wedge2d();
  HC Ky = solve_Ky(Ey, numeric_oracle(sys), YCase::NeqM, sys, cone, 0.1);
  // PDE check at 50 cone points: DK p(x,0) - D_y q(x,0) K = E.
  int n_ok = 0;
  for (const Vec& z : cone.sample(0.08, 50)) {
    if (z.norm() < 1e-4) continue;
    Vec px(2);
    px << -z[0] * z[0], -z[0] * z[1];
    double lhs = (Ky.jacobian_at(z) * px)(0) + z[0] * Ky.eval(z)[0];
    double scale = std::pow(z.norm(), 3);
    CHECK(std::abs(lhs - Ey.eval(z)[0]) <= 1e-6 * scale);
    ++n_ok;
  }
  CHECK(n_ok >= 40);
}

TEST_CASE("solve_Kx_integral matches the hand solution and feeds back zero R") {
  domain::SystemJets sys;
  sys.n = 1;
  sys.m = 0;
  sys.N = 2;
  sys.M = 2;
  sys.p = GradedMapJet(1, 1, 2);
  sys.p.set(mono1(2, -1.0));
  auto cone = half_line();
  FlowOracle orc = numeric_oracle(sys);
  // K' p - Dp K = h with p = -x^2: h = x^4 gives K = -x^3.
  HC Ex = mono1(4, 1.0);
  HC Ky;  // empty, m == 0
  HC Kx = solve_Kx_integral(Ex, nullptr, orc, sys, Ky, 3, 3, cone, 0.1);
  REQUIRE(Kx.basis == HC::Basis::polynomial);
  CHECK(Kx.eval(Vec::Constant(1, 0.1))[0] ==
        doctest::Approx(-1e-3).epsilon(1e-7));
  // Feeding the integral-mode K_x into free mode must return R = 0.
  HC R = solve_Kx_free(Ex, Kx, sys, Ky);
  CHECK(R.max_abs_coeff() <= 1e-9);
}

TEST_CASE("solve_Kx_integral rejects orders below the threshold") {
  domain::SystemJets sys;
  sys.n = 1;
  sys.m = 0;
  sys.N = 2;
  sys.M = 2;
  sys.p = GradedMapJet(1, 1, 2);
  sys.p.set(mono1(2, -1.0));
  HC Ex = mono1(3, 1.0);
  HC Ky;
  CHECK_THROWS_AS(solve_Kx_integral(Ex, nullptr, numeric_oracle(sys), sys, Ky,
                                    2, 4, half_line(), 0.1),
                  ConvergenceThresholdError);
}

namespace {

// Full 2-variable map F = Id + (p,q) + (f,g) with p = -x^2, q = -xy,
// f = x^3, g = x^3.
MapState toy_map_state(domain::SystemJets* sys_out = nullptr) {
  auto sys = sys_1d_NeqM();
  GradedMapJet P = GradedMapJet::identity(2, 3);
  HC d2(2, 2, 2);
  {
    Vec v = Vec::Zero(2);
    v[0] = -1.0;
    d2.add_term({2, 0}, v);
    v.setZero();
    v[1] = -1.0;
    d2.add_term({1, 1}, v);
  }
  P.set(d2);
  HC d3(3, 2, 2);
  {
    Vec v = Vec::Ones(2);
    d3.add_term({3, 0}, v);
  }
  P.set(d3);
  if (sys_out) *sys_out = sys;
  return seed_map_state(sys, P);
}

}  // namespace

TEST_CASE("step_map: residual orders climb as j + N and j + L") {
  domain::SystemJets sys;
  MapState st = toy_map_state(&sys);
  FlowOracle orc = numeric_oracle(sys);
  auto cone = half_line();
  for (int j = 2; j <= 5; ++j) {
    auto step = step_map(st, orc, cone, 0.1, Policy::K_x_zero, 0);
    CHECK(step.j == j);
    CHECK(step.slope_x >= j + sys.N - 0.3);
    CHECK(step.slope_y >= j + 2 - 0.3);
    CHECK(step.Ky_polynomial);
  }
  CHECK(st.j_done == 5);
  CHECK(st.polynomial_state);
}

TEST_CASE("step_map invariant: lower-degree error components vanish") {
  domain::SystemJets sys;
  MapState st = toy_map_state(&sys);
  FlowOracle orc = numeric_oracle(sys);
  auto cone = half_line();
  for (int j = 2; j <= 4; ++j) step_map(st, orc, cone, 0.1, Policy::K_x_zero, 0);
  int cutoff = st.j_done + sys.N;
  GradedMapJet E = polyalg::compose_truncated(st.P, st.K, cutoff);
  E.add(polyalg::compose_truncated(st.K, st.R, cutoff).scaled(-1.0));
  for (const auto& [d, c] : E.components) {
    if (d >= st.j_done + sys.N) continue;
    // x-rows must vanish below order j_done + N and y-rows below
    // j_done + L, up to the accuracy of the quadrature-based solves.
    for (const auto& [e, v] : c.coeffs) {
      CHECK(std::abs(v[0]) <= 1e-10);
      if (d < st.j_done + 2) CHECK(std::abs(v[1]) <= 1e-10);
    }
  }
}

TEST_CASE("step_map in integral mode keeps R frozen") {
  domain::SystemJets sys;
  MapState st = toy_map_state(&sys);
  FlowOracle orc = numeric_oracle(sys);
  auto cone = half_line();
  // Threshold ell_star = 3 puts j >= 3 in integral mode.
  auto s2 = step_map(st, orc, cone, 0.1, Policy::R_simplest, 3);
  CHECK_FALSE(s2.kx_integral);
  GradedMapJet R_before = st.R;
  for (int j = 3; j <= 4; ++j) {
    auto s = step_map(st, orc, cone, 0.1, Policy::R_simplest, 3);
    CHECK(s.kx_integral);
    CHECK(s.slope_x >= j + sys.N - 0.3);
    CHECK(s.slope_y >= j + 2 - 0.3);
  }
  CHECK(st.R.max_degree == R_before.max_degree);
}

TEST_CASE("split_mean splits a periodic jet into mean and zero-mean parts") {
  polyalg::PeriodicGradedJet h(1, 1, 2, 1.0, 16);
  std::vector<HC> samples;
  for (int s = 0; s < 16; ++s) {
    HC c(2, 1, 1);
    c.add_term(MultiIndex{2}, 1.5 + std::sin(2.0 * M_PI * s / 16.0));
    samples.push_back(c);
  }
  h.set(2, samples);
  auto [mean, osc] = split_mean(h);
  CHECK(mean.at(2).coeffs.begin()->second[0] ==
        doctest::Approx(1.5).epsilon(1e-12));
  double acc = 0;
  for (const HC& c : osc.at(2)) acc += c.eval(Vec::Ones(1))[0];
  CHECK(std::abs(acc) < 1e-12);
}

TEST_CASE("step_flow: oscillatory forcing is absorbed and orders climb") {
  // xdot = -x^2 + cos(2 pi t) x^3, no y variables.
  domain::SystemJets sys;
  sys.n = 1;
  sys.m = 0;
  sys.N = 2;
  sys.M = 2;
  sys.p = GradedMapJet(1, 1, 2);
  sys.p.set(mono1(2, -1.0));
  const int ns = 32;
  polyalg::PeriodicGradedJet X(1, 1, 3, 1.0, ns);
  X.set_static(mono1(2, -1.0));
  std::vector<HC> d3;
  for (int s = 0; s < ns; ++s)
    d3.push_back(mono1(3, std::cos(2.0 * M_PI * s / ns)));
  X.set(3, d3);

  FlowState st = seed_flow_state(sys, X);
  FlowOracle orc = numeric_oracle(sys);
  auto cone = half_line();
  for (int j = 2; j <= 4; ++j) {
    auto step = step_flow(st, orc, cone, 0.1, Policy::K_x_zero, 0);
    CHECK(step.j == j);
    CHECK(step.slope_x >= j + sys.N - 0.3);
  }
  // The j = 2 oscillatory part is K~ = sin(2 pi t)/(2 pi) x^3 + mean terms.
  REQUIRE(st.K.has(3));
}

TEST_CASE("step_flow with a y variable and periodic y-forcing") {
  // xdot = -x^2, ydot = -x y + cos(2 pi t) x^3.
  auto sys = sys_1d_NeqM();
  const int ns = 32;
  polyalg::PeriodicGradedJet X(2, 2, 3, 1.0, ns);
  HC d2(2, 2, 2);
  {
    Vec v = Vec::Zero(2);
    v[0] = -1.0;
    d2.add_term({2, 0}, v);
    v.setZero();
    v[1] = -1.0;
    d2.add_term({1, 1}, v);
  }
  X.set_static(d2);
  std::vector<HC> d3;
  for (int s = 0; s < ns; ++s) {
    HC c(3, 2, 2);
    Vec v = Vec::Zero(2);
    v[1] = std::cos(2.0 * M_PI * s / ns);
    c.add_term({3, 0}, v);
    d3.push_back(c);
  }
  X.set(3, d3);

  FlowState st = seed_flow_state(sys, X);
  FlowOracle orc = numeric_oracle(sys);
  auto cone = half_line();
  for (int j = 2; j <= 3; ++j) {
    auto step = step_flow(st, orc, cone, 0.1, Policy::K_x_zero, 0);
    CHECK(step.slope_x >= j + sys.N - 0.3);
    CHECK(step.slope_y >= j + 2 - 0.3);
  }
}

TEST_CASE("seed_flow_state absorbs time dependence of the leading part") {
  // xdot = -(1 + 0.3 sin(2 pi t)) x^2; mean leading part is -x^2.
  domain::SystemJets sys;
  sys.n = 1;
  sys.m = 0;
  sys.N = 2;
  sys.M = 2;
  sys.p = GradedMapJet(1, 1, 2);
  sys.p.set(mono1(2, -1.0));
  const int ns = 32;
  polyalg::PeriodicGradedJet X(1, 1, 2, 1.0, ns);
  std::vector<HC> d2;
  for (int s = 0; s < ns; ++s)
    d2.push_back(mono1(2, -(1.0 + 0.3 * std::sin(2.0 * M_PI * s / ns))));
  X.set(2, d2);
  FlowState st = seed_flow_state(sys, X);
  // The seed adds a degree-2 oscillatory component to K.
  REQUIRE(st.K.has(2));
  double sx, sy;
  flow_residual_slopes(st, half_line(), 0.1, &sx, &sy);
  CHECK(sx >= 1 + sys.N - 0.3);
}
