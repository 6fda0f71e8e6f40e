#include "mfspike/quadrature.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace mfspike {

namespace {

GaussRule make_rule(int n) {
  // Newton iteration on Legendre polynomials; nodes symmetric about 0.
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    r.nodes[i] = -x;
    r.nodes[n - 1 - i] = x;
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    r.weights[i] = w;
    r.weights[n - 1 - i] = w;
  }
  return r;
}

}  // namespace

const GaussRule& gauss_rule(int n) {
  static const std::array<GaussRule, 7> rules = {
      make_rule(2), make_rule(3), make_rule(4), make_rule(5),
      make_rule(6), make_rule(7), make_rule(8)};
  if (n < 2 || n > 8) throw std::invalid_argument("gauss_rule: n must be in [2,8]");
  return rules[static_cast<std::size_t>(n - 2)];
}

namespace {

double adapt_rec(const std::function<double(double)>& f, double a, double b,
                 double whole, double tol, int depth, int max_depth) {
  const double m = 0.5 * (a + b);
  const double left = gauss_panel(f, a, m, 5);
  const double right = gauss_panel(f, m, b, 5);
  const double delta = left + right - whole;
  if (std::abs(delta) <= tol || depth >= max_depth)
    return left + right + delta / 63.0;
  return adapt_rec(f, a, m, left, 0.5 * tol, depth + 1, max_depth) +
         adapt_rec(f, m, b, right, 0.5 * tol, depth + 1, max_depth);
}

}  // namespace

double adaptive_gauss(const std::function<double(double)>& f, double a, double b,
                      double tol, int max_depth) {
  if (!(b >= a)) throw std::invalid_argument("adaptive_gauss: b < a");
  if (a == b) return 0.0;
  return adapt_rec(f, a, b, gauss_panel(f, a, b, 5), tol, 0, max_depth);
}

double blocked_sum(std::span<const double> v, std::size_t block) {
  if (v.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t start = 0; start < v.size(); start += block) {
    const std::size_t end = std::min(start + block, v.size());
    double s = 0.0;
    for (std::size_t i = start; i < end; ++i) s += v[i];
    total += s;
  }
  return total;
}

}  // namespace mfspike
