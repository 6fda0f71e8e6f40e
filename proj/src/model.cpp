#include "mfspike/model.hpp"

#include <algorithm>
#include <cmath>

namespace mfspike {

namespace {

double ipow(double x, int n) {
  double r = 1.0;
  while (n > 0) {
    if (n & 1) r *= x;
    x *= x;
    n >>= 1;
  }
  return r;
}

double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x,
              bool hold_slope_beyond) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) {
    if (!hold_slope_beyond) return ys.back();
    const std::size_t n = xs.size();
    const double slope = (ys[n - 1] - ys[n - 2]) / (xs[n - 1] - xs[n - 2]);
    return ys.back() + slope * (x - xs.back());
  }
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs.begin());
  const double w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
  return ys[i - 1] + w * (ys[i] - ys[i - 1]);
}

void validate_table(const std::vector<double>& x, const std::vector<double>& y,
                    const char* what) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument(std::string(what) + ": need >= 2 matching samples");
  if (x.front() != 0.0)
    throw std::invalid_argument(std::string(what) + ": grid must start at 0");
  for (std::size_t i = 1; i < x.size(); ++i)
    if (!(x[i] > x[i - 1]))
      throw std::invalid_argument(std::string(what) + ": grid not strictly increasing");
}

}  // namespace

ModelSpec::ModelSpec(Drift drift, Rate rate, double coupling, double dt_flow)
    : drift_(std::move(drift)), rate_(std::move(rate)), j_(coupling), dt_flow_(dt_flow) {
  if (!(j_ >= 0.0)) throw std::invalid_argument("ModelSpec: coupling J must be >= 0");
  if (!(dt_flow_ > 0.0)) throw std::invalid_argument("ModelSpec: dt_flow must be > 0");

  if (const auto* a = std::get_if<AffineDrift>(&drift_)) {
    if (!(a->mu > 0.0)) throw std::invalid_argument("ModelSpec: need b(0) = mu > 0");
    if (!(a->kappa >= 0.0)) throw std::invalid_argument("ModelSpec: need kappa >= 0");
    c_b_ = a->mu;  // kappa >= 0, so b is maximal at 0
  } else {
    const auto& t = std::get<TabulatedDrift>(drift_);
    validate_table(t.x, t.y, "TabulatedDrift");
    if (!(t.y.front() > 0.0)) throw std::invalid_argument("ModelSpec: need b(0) > 0");
    c_b_ = *std::max_element(t.y.begin(), t.y.end());
  }

  if (const auto* p = std::get_if<PowerRate>(&rate_)) {
    if (!(p->p >= 1.0)) throw std::invalid_argument("ModelSpec: rate exponent p must be >= 1");
    const double r = std::round(p->p);
    if (std::abs(p->p - r) < 1e-12 && r <= 64.0) ipow_ = static_cast<int>(r);
  } else {
    const auto& t = std::get<TabulatedRate>(rate_);
    validate_table(t.x, t.y, "TabulatedRate");
    if (std::abs(t.y.front()) > 1e-10)
      throw std::invalid_argument("ModelSpec: need f(0) = 0");
    // finite-difference monotonicity and convexity checks
    double prev_slope = -kInf;
    for (std::size_t i = 1; i < t.x.size(); ++i) {
      const double slope = (t.y[i] - t.y[i - 1]) / (t.x[i] - t.x[i - 1]);
      if (slope < -1e-10)
        throw std::invalid_argument("ModelSpec: tabulated rate not nondecreasing");
      if (slope < prev_slope - 1e-10)
        throw std::invalid_argument("ModelSpec: tabulated rate not convex");
      prev_slope = std::max(prev_slope, slope);
    }
  }
}

double ModelSpec::b(double x) const {
  if (const auto* a = std::get_if<AffineDrift>(&drift_)) return a->mu - a->kappa * x;
  const auto& t = std::get<TabulatedDrift>(drift_);
  return interp(t.x, t.y, x, /*hold_slope_beyond=*/false);
}

double ModelSpec::f(double x) const {
  if (const auto* p = std::get_if<PowerRate>(&rate_)) {
    if (x <= 0.0) return 0.0;
    return ipow_ ? ipow(x, ipow_) : std::pow(x, p->p);
  }
  const auto& t = std::get<TabulatedRate>(rate_);
  if (x <= 0.0) return 0.0;
  return interp(t.x, t.y, x, /*hold_slope_beyond=*/true);
}

double ModelSpec::f_prime(double x) const {
  if (const auto* p = std::get_if<PowerRate>(&rate_)) {
    if (p->p == 1.0) return 1.0;
    if (x <= 0.0) return 0.0;
    return ipow_ ? p->p * ipow(x, ipow_ - 1) : p->p * std::pow(x, p->p - 1.0);
  }
  const auto& t = std::get<TabulatedRate>(rate_);
  const double x1 = std::max(x, 0.0);
  if (x1 >= t.x.back()) {
    const std::size_t n = t.x.size();
    return (t.y[n - 1] - t.y[n - 2]) / (t.x[n - 1] - t.x[n - 2]);
  }
  const auto it = std::upper_bound(t.x.begin(), t.x.end(), x1);
  const std::size_t i = std::max<std::size_t>(1, static_cast<std::size_t>(it - t.x.begin()));
  return (t.y[i] - t.y[i - 1]) / (t.x[i] - t.x[i - 1]);
}

ModelSpec power_model(double mu, double kappa, double p, double coupling) {
  return ModelSpec(AffineDrift{mu, kappa}, PowerRate{p}, coupling);
}

Current::Current(ConstantCurrent c) : v_(c) {
  if (!(c.a >= 0.0)) throw std::invalid_argument("Current: need a >= 0");
}

Current::Current(ExpApproachCurrent c) : v_(c) {
  if (!(c.a >= 0.0) || !(c.c >= 0.0) || !(c.lambda > 0.0))
    throw std::invalid_argument("Current: exp-approach needs a >= 0, C >= 0, lambda > 0");
}

Current::Current(SampledCurrent c) : v_(std::move(c)) {
  const auto& s = std::get<SampledCurrent>(v_);
  if (!(s.dt > 0.0) || s.values.size() < 2)
    throw std::invalid_argument("Current: sampled needs dt > 0 and >= 2 values");
  for (double v : s.values)
    if (!(v >= 0.0)) throw std::invalid_argument("Current: sampled values must be >= 0");
}

double Current::operator()(double t) const {
  if (const auto* c = std::get_if<ConstantCurrent>(&v_)) return c->a;
  if (const auto* e = std::get_if<ExpApproachCurrent>(&v_))
    return std::max(0.0, e->a + e->c * std::exp(-e->lambda * t));
  const auto& s = std::get<SampledCurrent>(v_);
  const double u = (t - s.t0) / s.dt;
  if (u <= 0.0) return s.values.front();
  const double last = static_cast<double>(s.values.size() - 1);
  if (u >= last) return s.values.back();
  const std::size_t k = static_cast<std::size_t>(u);
  const double w = u - static_cast<double>(k);
  return s.values[k] + w * (s.values[k + 1] - s.values[k]);
}

double Current::integral(double s, double t) const {
  return exp_weighted_integral(0.0, s, t);
}

namespace {

// int_{u0}^{u1} exp(-kappa*(t_ref-u)) * (alpha + beta*u) du, closed form
double exp_lin_integral(double kappa, double u0, double u1, double t_ref, double alpha,
                        double beta) {
  if (kappa == 0.0) return alpha * (u1 - u0) + 0.5 * beta * (u1 * u1 - u0 * u0);
  // antiderivative of e^{kappa u} (alpha + beta u) is
  // e^{kappa u} ((alpha + beta u)/kappa - beta/kappa^2)
  auto anti = [&](double u) {
    return std::exp(-kappa * (t_ref - u)) *
           ((alpha + beta * u) / kappa - beta / (kappa * kappa));
  };
  return anti(u1) - anti(u0);
}

}  // namespace

double Current::exp_weighted_integral(double kappa, double s, double t) const {
  if (!(t >= s)) throw std::invalid_argument("Current: need t >= s");
  if (t == s) return 0.0;
  if (const auto* c = std::get_if<ConstantCurrent>(&v_)) {
    if (kappa == 0.0) return c->a * (t - s);
    return c->a * (1.0 - std::exp(-kappa * (t - s))) / kappa;
  }
  if (const auto* e = std::get_if<ExpApproachCurrent>(&v_)) {
    double base;
    if (kappa == 0.0)
      base = e->a * (t - s);
    else
      base = e->a * (1.0 - std::exp(-kappa * (t - s))) / kappa;
    double pert;
    if (kappa == e->lambda) {
      pert = e->c * (t - s) * std::exp(-kappa * t);
    } else {
      pert = e->c * (std::exp(-e->lambda * t) - std::exp(-e->lambda * s - kappa * (t - s))) /
             (kappa - e->lambda);
    }
    return base + pert;
  }
  // Sampled: exact integration of the piecewise-linear interpolant,
  // walking its breakpoints
  const auto& sc = std::get<SampledCurrent>(v_);
  const double t_last = sc.t0 + sc.dt * static_cast<double>(sc.values.size() - 1);
  auto segment_value = [&](double u) { return (*this)(u); };
  double pos = s;
  double acc = 0.0;
  while (pos < t - 1e-15) {
    double next;
    if (pos < sc.t0) {
      next = std::min(t, sc.t0);
    } else if (pos >= t_last) {
      next = t;
    } else {
      const double k = std::floor((pos - sc.t0) / sc.dt + 1e-12) + 1.0;
      next = std::min(t, sc.t0 + k * sc.dt);
    }
    const double a0 = segment_value(pos), a1 = segment_value(next);
    // linear on [pos, next]: alpha + beta*u
    const double beta = (next > pos) ? (a1 - a0) / (next - pos) : 0.0;
    const double alpha = a0 - beta * pos;
    acc += exp_lin_integral(kappa, pos, next, t, alpha, beta);
    pos = next;
  }
  return acc;
}

TimeGrid::TimeGrid(double t0_, double dt_, int n_) : t0(t0_), dt(dt_), n(n_) {
  if (!(dt > 0.0) || n < 1) throw std::invalid_argument("TimeGrid: need dt > 0, n >= 1");
}

TimeGrid TimeGrid::span(double t0, double t1, double dt) {
  const int n = std::max(1, static_cast<int>(std::llround((t1 - t0) / dt)));
  return TimeGrid(t0, dt, n);
}

double flow_at(const ModelSpec& m, const Current& cur, double s, double t, double x) {
  if (!(t >= s)) throw std::invalid_argument("flow_at: need t >= s");
  if (!(x >= 0.0)) throw std::invalid_argument("flow_at: need x >= 0");
  if (t == s) return x;
  if (const AffineDrift* a = m.affine()) {
    if (a->kappa == 0.0) return x + a->mu * (t - s) + cur.integral(s, t);
    const double e = std::exp(-a->kappa * (t - s));
    return x * e + (a->mu / a->kappa) * (1.0 - e) +
           cur.exp_weighted_integral(a->kappa, s, t);
  }
  return flow_rk4(m, cur, s, t, x, m.dt_flow());
}

double flow_rk4(const ModelSpec& m, const Current& cur, double s, double t, double x,
                double step) {
  if (!(t >= s)) throw std::invalid_argument("flow_rk4: need t >= s");
  if (!(step > 0.0)) throw std::invalid_argument("flow_rk4: need step > 0");
  const int n = std::max(1, static_cast<int>(std::ceil((t - s) / step)));
  const double h = (t - s) / n;
  double y = x, u = s;
  auto rhs = [&](double uu, double yy) { return m.b(yy) + cur(uu); };
  for (int i = 0; i < n; ++i) {
    const double k1 = rhs(u, y);
    const double k2 = rhs(u + 0.5 * h, y + 0.5 * h * k1);
    const double k3 = rhs(u + 0.5 * h, y + 0.5 * h * k2);
    const double k4 = rhs(u + h, y + h * k3);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    u += h;
  }
  return y;
}

double sigma_a(const ModelSpec& m, double a) {
  if (!(a >= 0.0)) throw std::invalid_argument("sigma_a: need a >= 0");
  if (const AffineDrift* af = m.affine()) {
    if (af->kappa == 0.0) return kInf;
    return (af->mu + a) / af->kappa;
  }
  // bisection on b(x) + a with an expanding bracket
  double lo = 0.0, hi = 1.0;
  auto g = [&](double x) { return m.b(x) + a; };
  int guard = 0;
  while (g(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (++guard > 60) return kInf;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? lo : hi) = mid;
    if (hi - lo < 1e-14 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

double psi(const ModelSpec& m, double theta) {
  if (!(theta >= 0.0)) throw std::invalid_argument("psi: need theta >= 0");
  if (const PowerRate* p = m.power()) {
    if (theta == 0.0) return 0.0;
    if (p->p == 1.0) return theta;  // sup_x {theta - x^2/2} at x = 0
    const double pp = p->p;
    return 0.5 * std::pow(theta, 2.0 * pp / (pp + 1.0)) *
           std::pow(pp - 1.0, (pp - 1.0) / (pp + 1.0)) * (1.0 + pp);
  }
  // grid maximization over the tabulated support (sup attained on it:
  // beyond the table f grows linearly while f^2 grows quadratically)
  const auto& t = std::get<TabulatedRate>(m.rate());
  double best = theta * m.f_prime(0.0);  // x = 0 candidate
  const double x_hi = 4.0 * t.x.back() + 10.0 * (1.0 + theta);
  const int n = 20000;
  for (int i = 0; i <= n; ++i) {
    const double x = x_hi * i / n;
    best = std::max(best, theta * m.f_prime(x) - 0.5 * m.f(x) * m.f(x));
  }
  return best;
}

double beta_sup(const ModelSpec& m) {
  const double j = m.coupling();
  if (const PowerRate* p = m.power()) {
    if (j == 0.0) return 0.0;
    if (p->p == 1.0) return j;  // sup {J - x/8} at x = 0
    const double xs = 8.0 * j * (p->p - 1.0);
    return j * std::pow(xs, p->p - 1.0);
  }
  const auto& t = std::get<TabulatedRate>(m.rate());
  double best = 0.0;
  const double x_hi = 4.0 * t.x.back() + 80.0 * (1.0 + j);
  const int n = 20000;
  for (int i = 0; i <= n; ++i) {
    const double x = x_hi * i / n;
    best = std::max(best, j * m.f_prime(x) - m.f(x) / 8.0);
  }
  return best;
}

double a_bar(const ModelSpec& m, double kappa_floor, double a_max) {
  if (!(kappa_floor >= 0.0)) throw std::invalid_argument("a_bar: need kappa_floor >= 0");
  const double j = m.coupling();
  auto g = [&](double a) { return a - j * std::sqrt(2.0 * psi(m, a + m.drift_sup())); };
  if (g(kappa_floor) >= 0.0) return kappa_floor;
  double lo = kappa_floor, hi = std::max(kappa_floor, 1e-3), step = 0.5;
  while (g(hi) < 0.0) {
    lo = hi;
    hi += step;
    step *= 1.6;
    if (hi > a_max)
      throw std::runtime_error(
          "a_bar: no a <= a_max with J*sqrt(2 psi(a + C_b)) <= a; "
          "sublinearity of sqrt(psi) not verified on this range");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) < 0.0 ? lo : hi) = mid;
    if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
  }
  return hi;
}

double r_bar(const ModelSpec& m) {
  const double beta = beta_sup(m);
  return std::sqrt(psi(m, 2.0 * m.drift_sup()) + 4.0 * beta * beta);
}

}  // namespace mfspike
