#pragma once

// Graded homogeneous-function algebra: storage, evaluation, differentiation,
// truncated composition and grading of polynomial (and sampled homogeneous)
// maps R^n -> R^k.

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace paraman::polyalg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using MultiIndex = std::vector<int>;

int multi_degree(const MultiIndex& e);
double monomial(const Vec& x, const MultiIndex& e);

// All exponent multi-indices of given length summing to degree, in
// lexicographic order (deterministic enumeration used everywhere).
std::vector<MultiIndex> exponents_of_degree(int n_vars, int degree);

// One homogeneous term of a graded map. Polynomial mode stores a dense
// exponent table; sampled mode stores an evaluation rule plus the degree,
// with eval(x) = |x|^degree * rule(x/|x|).
struct HomogeneousComponent {
  enum class Basis { polynomial, sampled };

  int degree = 0;
  int n_in = 0;
  int n_out = 0;
  Basis basis = Basis::polynomial;
  std::map<MultiIndex, Vec> coeffs;
  std::function<Vec(const Vec&)> rule;  // sampled mode only

  HomogeneousComponent() = default;
  HomogeneousComponent(int deg, int nin, int nout)
      : degree(deg), n_in(nin), n_out(nout) {}

  static HomogeneousComponent sampled(int deg, int nin, int nout,
                                      std::function<Vec(const Vec&)> r);

  bool is_zero(double tol = 0.0) const;
  void add_term(const MultiIndex& exps, const Vec& value);
  void add_term(const MultiIndex& exps, double value);  // n_out == 1
  Vec eval(const Vec& x) const;
  // Exact Jacobian, flattened row-major into n_out*n_in outputs, degree-1.
  HomogeneousComponent jacobian() const;
  Mat jacobian_at(const Vec& x) const;  // sampled mode: central differences
  double max_abs_coeff() const;
  void prune(double tol = 0.0);
};

// Finite sum of homogeneous components with pairwise distinct degrees.
struct GradedMapJet {
  int n_in = 0;
  int n_out = 0;
  int max_degree = 0;
  std::map<int, HomogeneousComponent> components;

  GradedMapJet() = default;
  GradedMapJet(int nin, int nout, int maxdeg)
      : n_in(nin), n_out(nout), max_degree(maxdeg) {}

  static GradedMapJet identity(int n, int maxdeg);

  bool has(int degree) const { return components.count(degree) != 0; }
  const HomogeneousComponent& at(int degree) const;
  void set(HomogeneousComponent c);
  void add(const HomogeneousComponent& c);  // accumulate into same degree
  void add(const GradedMapJet& other);
  GradedMapJet truncated(int cutoff) const;
  GradedMapJet scaled(double factor) const;
  bool polynomial() const;

  Vec eval(const Vec& x) const;
  Mat jacobian_at(const Vec& x) const;
};

GradedMapJet evaluate_jet(const GradedMapJet& jet);  // no-op placeholder
Vec evaluate(const GradedMapJet& jet, const Vec& x);

// Jacobian-valued jet, degrees shifted down by one.
GradedMapJet differentiate(const GradedMapJet& jet);

// Graded expansion of outer(inner(x)) with all degrees > cutoff discarded.
// inner must have no degree-0 component; outer must be polynomial.
GradedMapJet compose_truncated(const GradedMapJet& outer,
                               const GradedMapJet& inner, int cutoff);

// Flat coefficient table -> graded jet, and back.
struct TaylorTable {
  int n_in = 0;
  int n_out = 0;
  std::vector<std::pair<MultiIndex, Vec>> terms;
};
GradedMapJet grade(const TaylorTable& table);
TaylorTable flatten(const GradedMapJet& jet);

nlohmann::json to_json(const HomogeneousComponent& c);
nlohmann::json to_json(const GradedMapJet& jet);
HomogeneousComponent component_from_json(const nlohmann::json& j);
GradedMapJet jet_from_json(const nlohmann::json& j);

// Least-squares fit of point samples against the full degree-d monomial
// basis. Returns true (and the polynomial component) when the max residual
// over the sample set is below tol.
bool fit_polynomial(const std::vector<Vec>& points,
                    const std::vector<Vec>& values, int degree, int n_in,
                    int n_out, double tol, HomogeneousComponent* out);

// T-periodic graded jet on a uniform time grid (sample s corresponds to
// t_s = s*T/n_samples).
struct PeriodicGradedJet {
  int n_in = 0;
  int n_out = 0;
  int max_degree = 0;
  double period = 1.0;
  int n_samples = 64;
  // components[degree][sample]
  std::map<int, std::vector<HomogeneousComponent>> components;

  PeriodicGradedJet() = default;
  PeriodicGradedJet(int nin, int nout, int maxdeg, double T, int nsamp = 64)
      : n_in(nin), n_out(nout), max_degree(maxdeg), period(T),
        n_samples(nsamp) {}

  bool has(int degree) const { return components.count(degree) != 0; }
  void set(int degree, std::vector<HomogeneousComponent> samples);
  void set_static(const HomogeneousComponent& c);  // same at every sample
  const std::vector<HomogeneousComponent>& at(int degree) const;
  // Evaluation at a grid time index (periodic wrap).
  Vec eval_at_sample(const Vec& x, int sample) const;
  // Off-grid evaluation by trigonometric interpolation of the samples.
  Vec eval(const Vec& x, double t) const;
  GradedMapJet sample_jet(int sample) const;
};

// Time average over the period (trapezoid on the uniform periodic grid, which
// reduces to the plain sample mean) and the zero-mean remainder.
GradedMapJet time_mean(const PeriodicGradedJet& h);
PeriodicGradedJet oscillatory_part(const PeriodicGradedJet& h);

// Spectral antiderivative in t of a zero-mean periodic sample set, normalized
// to zero mean; and spectral time derivative.
std::vector<Vec> periodic_antiderivative(const std::vector<Vec>& samples,
                                         double period);
std::vector<Vec> periodic_derivative(const std::vector<Vec>& samples,
                                     double period);

}  // namespace paraman::polyalg
