#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace mfspike {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Drift b: locally Lipschitz, b(0) > 0, bounded above.
struct AffineDrift {
  double mu;     // b(0), > 0
  double kappa;  // decay, >= 0; b(x) = mu - kappa*x
};

struct TabulatedDrift {
  std::vector<double> x;  // strictly increasing, x[0] == 0
  std::vector<double> y;  // b at the sample points; linear interp, constant hold beyond
};

using Drift = std::variant<AffineDrift, TabulatedDrift>;

// Rate f: C^1 convex increasing, f(0) = 0.
struct PowerRate {
  double p;  // >= 1; f(x) = x^p
};

struct TabulatedRate {
  std::vector<double> x;  // strictly increasing, x[0] == 0
  std::vector<double> y;  // f at the sample points, y[0] == 0; linear beyond last slope
};

using Rate = std::variant<PowerRate, TabulatedRate>;

class ModelSpec {
 public:
  ModelSpec(Drift drift, Rate rate, double coupling, double dt_flow = 1e-3);

  double b(double x) const;
  double f(double x) const;
  double f_prime(double x) const;
  double coupling() const { return j_; }
  double drift_sup() const { return c_b_; }  // C_b = sup b
  double dt_flow() const { return dt_flow_; }

  bool is_affine() const { return std::holds_alternative<AffineDrift>(drift_); }
  bool is_power() const { return std::holds_alternative<PowerRate>(rate_); }
  const AffineDrift* affine() const { return std::get_if<AffineDrift>(&drift_); }
  const PowerRate* power() const { return std::get_if<PowerRate>(&rate_); }
  const Drift& drift() const { return drift_; }
  const Rate& rate() const { return rate_; }

 private:
  Drift drift_;
  Rate rate_;
  double j_;
  double dt_flow_;
  double c_b_;
  // fast path for integer power exponents
  int ipow_ = 0;
};

// Convenience: f(x) = x^p, b(x) = mu - kappa*x.
ModelSpec power_model(double mu, double kappa, double p, double coupling);

// External current (a_t), nonnegative continuous.
struct ConstantCurrent {
  double a;
};

struct ExpApproachCurrent {
  double a;       // limit value, >= 0
  double c;       // amplitude, >= 0
  double lambda;  // decay rate, > 0;  a_t = a + c*exp(-lambda*t), clipped at 0
};

struct SampledCurrent {
  double t0;
  double dt;
  std::vector<double> values;  // linear interpolation, constant hold outside
};

class Current {
 public:
  Current() : v_(ConstantCurrent{0.0}) {}
  Current(ConstantCurrent c);
  Current(ExpApproachCurrent c);
  Current(SampledCurrent c);

  static Current constant(double a) { return Current(ConstantCurrent{a}); }
  static Current exp_approach(double a, double c, double lambda) {
    return Current(ExpApproachCurrent{a, c, lambda});
  }

  double operator()(double t) const;
  // int_s^t a_u du
  double integral(double s, double t) const;
  // int_s^t exp(-kappa*(t-u)) a_u du, evaluated in closed form piece by piece
  double exp_weighted_integral(double kappa, double s, double t) const;

  bool is_constant() const { return std::holds_alternative<ConstantCurrent>(v_); }
  const ConstantCurrent* as_constant() const { return std::get_if<ConstantCurrent>(&v_); }
  const ExpApproachCurrent* as_exp_approach() const {
    return std::get_if<ExpApproachCurrent>(&v_);
  }
  const SampledCurrent* as_sampled() const { return std::get_if<SampledCurrent>(&v_); }

 private:
  std::variant<ConstantCurrent, ExpApproachCurrent, SampledCurrent> v_;
};

// Uniform time grid: nodes t0 + k*dt for k = 0..n (n steps, n+1 nodes).
struct TimeGrid {
  double t0 = 0.0;
  double dt = 1e-3;
  int n = 1;

  TimeGrid() = default;
  TimeGrid(double t0_, double dt_, int n_);
  static TimeGrid span(double t0, double t1, double dt);

  double node(int k) const { return t0 + k * dt; }
  int nodes() const { return n + 1; }
  double t_end() const { return t0 + n * dt; }
};

// Flow phi^{(a.)}_{t,s}(x): solution of y' = b(y) + a_t, y(s) = x.
// Affine drifts use the exact closed form; tabulated drifts a fixed-step
// classical RK4 with step <= dt_flow.
double flow_at(const ModelSpec& m, const Current& cur, double s, double t, double x);

// The 4th-order one-step integrator behind tabulated drifts, exposed so the
// closed forms can be checked against it.
double flow_rk4(const ModelSpec& m, const Current& cur, double s, double t, double x,
                double step);

// sigma_a = inf{x >= 0 : b(x) + a = 0}; limit of the constant-current flow.
double sigma_a(const ModelSpec& m, double a);

// psi(theta) = sup_x {theta f'(x) - f(x)^2 / 2}
double psi(const ModelSpec& m, double theta);

// beta = sup_x {J f'(x) - f(x)/8}
double beta_sup(const ModelSpec& m);

// Smallest a_bar >= kappa_floor with J*sqrt(2 psi(a_bar + C_b)) <= a_bar.
// Throws if the bracket scan exceeds a_max.
double a_bar(const ModelSpec& m, double kappa_floor, double a_max = 1e6);

// r_bar = sqrt(psi(2 C_b) + 4 beta^2)
double r_bar(const ModelSpec& m);

}  // namespace mfspike
