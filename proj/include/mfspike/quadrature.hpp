#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mfspike {

// Gauss-Legendre nodes/weights on [-1, 1].
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

const GaussRule& gauss_rule(int n);  // n in {2,...,8}

// Integrate f over [a, b] with an n-point rule.
template <class F>
double gauss_panel(F&& f, double a, double b, int n = 4) {
  const GaussRule& g = gauss_rule(n);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (std::size_t q = 0; q < g.nodes.size(); ++q)
    s += g.weights[q] * f(mid + half * g.nodes[q]);
  return s * half;
}

// Adaptive Gauss-Legendre by panel halving.
double adaptive_gauss(const std::function<double(double)>& f, double a, double b,
                      double tol, int max_depth = 40);

// Deterministic blocked summation: block partial sums combined in index
// order, so the result does not depend on the thread count used to fill
// the blocks. Also improves accumulation accuracy on long arrays.
double blocked_sum(std::span<const double> v, std::size_t block = 2048);

// Trapezoid weight for node k of an (n+1)-node uniform grid with spacing h.
inline double trapezoid_weight(std::size_t k, std::size_t n, double h) {
  return (k == 0 || k == n) ? 0.5 * h : h;
}

}  // namespace mfspike
