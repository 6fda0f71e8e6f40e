#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mfspike/invariant.hpp"

using namespace mfspike;

TEST_CASE("gamma: Gaussian closed forms") {
  // gamma(a)^-1 = int_0^inf exp(-(1+a) t^2 / 2) dt for mu=1, kappa=0, p=1
  ModelSpec m = power_model(1.0, 0.0, 1.0, 0.0);
  CHECK(std::abs(gamma_rate(m, 0.0) - 0.7978845608028654) <= 1e-9);
  CHECK(std::abs(gamma_rate(m, 1.0) - 1.1283791670955126) <= 1e-9);
}

TEST_CASE("gamma: nondecreasing in a") {
  for (auto [mu, kap, p] : {std::tuple{1.0, 1.0, 2.0}, std::tuple{2.0, 2.0, 10.0},
                            std::tuple{1.0, 0.0, 1.0}}) {
    ModelSpec m = power_model(mu, kap, p, 0.0);
    double prev = 0.0;
    for (double a : {0.0, 0.3, 0.7, 1.2, 2.0}) {
      const double g = gamma_rate(m, a);
      CHECK(g > 0.0);
      CHECK(g >= prev - 1e-12);
      prev = g;
    }
  }
}

TEST_CASE("gamma: x-space form agrees with the flow form") {
  // direct quadrature of eq-(9)'s x integral on a model with smooth density
  ModelSpec m = power_model(1.0, 1.0, 2.0, 0.0);
  const double a = 0.5;
  const double sig = sigma_a(m, a);  // 1.5
  // inner(x) = int_0^x f/(b+a); integrate with fine trapezoid away from sigma
  const int n = 400000;
  const double hi = sig * (1.0 - 1e-7);
  double inner = 0.0, total = 0.0, prev_rho = 1.0 / (m.b(0.0) + a);
  double prev_x = 0.0;
  for (int k = 1; k <= n; ++k) {
    const double x = hi * k / n;
    const double mid = 0.5 * (x + prev_x);
    inner += (x - prev_x) * m.f(mid) / (m.b(mid) + a);
    const double rho = std::exp(-inner) / (m.b(x) + a);
    total += 0.5 * (x - prev_x) * (rho + prev_rho);
    prev_rho = rho;
    prev_x = x;
  }
  CHECK(1.0 / gamma_rate(m, a) == doctest::Approx(total).epsilon(1e-5));
}

TEST_CASE("stationary measure: density closed form for kappa = 0") {
  ModelSpec m = power_model(1.0, 0.0, 1.0, 0.0);
  GridMeasure nu = stationary_measure(m, 0.0, 1e-3, 8.0);
  const double c = 0.7978845608028654;  // sqrt(2/pi)
  for (double x : {0.0, 0.5, 1.0, 2.0, 3.0}) {
    const std::size_t k = static_cast<std::size_t>(std::llround(x / 1e-3));
    CHECK(nu.density()[k] == doctest::Approx(c * std::exp(-0.5 * x * x)).epsilon(1e-5));
  }
  CHECK(std::abs(nu.mass() - 1.0) <= 1e-10);
}

TEST_CASE("stationary measure: support ends at sigma_a") {
  ModelSpec m = power_model(1.0, 1.0, 2.0, 0.0);
  GridMeasure nu = stationary_measure(m, 0.5, 1e-3, 3.0);
  const double sig = 1.5;
  for (double x : {1.6, 2.0, 2.9}) {
    const std::size_t k = static_cast<std::size_t>(std::llround(x / 1e-3));
    CHECK(nu.density()[k] == 0.0);
  }
  const std::size_t k_in = static_cast<std::size_t>(std::llround(1.4 / 1e-3));
  CHECK(nu.density()[k_in] > 0.0);
  CHECK(std::abs(nu.mass() - 1.0) <= 1e-10);
  (void)sig;
}

TEST_CASE("stationary measure: nu(f) = gamma(a)") {
  ModelSpec m = power_model(1.0, 1.0, 2.0, 0.0);
  for (double a : {0.0, 0.5, 1.0}) {
    GridMeasure nu = stationary_measure(m, a, 2e-4, 3.0);
    const double got = nu.moment([&](double x) { return m.f(x); });
    CHECK(got == doctest::Approx(gamma_rate(m, a)).epsilon(1e-6));
  }
}

TEST_CASE("stationary measure: singular-density models keep exact mass") {
  // small sigma: f(sigma)/kappa < 1 makes the density blow up at the edge;
  // the cell-mass construction must still integrate to 1
  ModelSpec m = power_model(0.1, 1.0, 2.0, 0.0);
  GridMeasure nu = stationary_measure(m, 0.1, 1e-4, 0.5);
  CHECK(std::abs(nu.mass() - 1.0) <= 1e-10);
  GridMeasure atoms = stationary_measure_atoms(m, 0.1, 1e-4);
  CHECK(std::abs(atoms.mass() - 1.0) <= 1e-10);
  const double gf = atoms.moment([&](double x) { return m.f(x); });
  CHECK(gf == doctest::Approx(gamma_rate(m, 0.1)).epsilon(1e-6));
}

TEST_CASE("stationary measure: truncation error") {
  ModelSpec m = power_model(1.0, 0.0, 1.0, 0.0);
  CHECK_THROWS_AS(stationary_measure(m, 0.0, 1e-3, 1.0), std::runtime_error);
}

TEST_CASE("steady states: J = 0 and the quadratic oracle") {
  ModelSpec j0 = power_model(1.0, 0.0, 1.0, 0.0);
  SteadyStateReport r0 = steady_states(j0, 2.0, 200);
  REQUIRE(r0.roots.size() == 1);
  CHECK(r0.roots[0].a == 0.0);

  // J = 0.5 on (mu=1,kappa=0,p=1): gamma(a) = sqrt(2(1+a)/pi), so the root
  // solves 2 pi a^2 - a - 1 = 0
  ModelSpec j05 = power_model(1.0, 0.0, 1.0, 0.5);
  SteadyStateReport r = steady_states(j05, 3.0, 400);
  REQUIRE(r.roots.size() == 1);
  CHECK(r.roots[0].a == doctest::Approx(0.48637904119574815).epsilon(1e-7));
  CHECK(std::abs(r.roots[0].a - 0.5 * r.roots[0].gamma) <= 1e-8);
  CHECK(r.roots[0].stable_hint == +1);
}

TEST_CASE("steady states: U continuity endpoints and errors") {
  ModelSpec m = power_model(1.0, 1.0, 2.0, 0.4);
  SteadyStateReport r = steady_states(m, 4.0, 300);
  CHECK(r.u_values.front() == 0.0);
  CHECK(r.u_values.back() > 0.0);
  for (const SteadyStateRoot& root : r.roots)
    CHECK(std::abs(root.a - 0.4 * root.gamma) <= 1e-8);
  // no root below a_max when J is far above the scanned U range
  ModelSpec big = power_model(1.0, 1.0, 2.0, 1e6);
  CHECK_THROWS_AS(steady_states(big, 0.5, 100), std::runtime_error);
}

TEST_CASE("bistability window exists for small mu (kappa=1, p=2)") {
  // the U scan must turn non-monotone for small mu; pick J inside the window
  ModelSpec probe = power_model(0.1, 1.0, 2.0, 0.0);
  SteadyStateReport scan = steady_states(power_model(0.1, 1.0, 2.0, 0.05), 3.0, 800);
  // locate the interior extrema of U
  double u_max = 0.0, u_min = kInf;
  std::size_t i_max = 0;
  for (std::size_t i = 1; i + 1 < scan.u_values.size(); ++i) {
    if (scan.u_values[i] > scan.u_values[i - 1] && scan.u_values[i] >= scan.u_values[i + 1]) {
      u_max = std::max(u_max, scan.u_values[i]);
      i_max = i;
    }
  }
  for (std::size_t i = i_max; i + 1 < scan.u_values.size(); ++i)
    if (scan.u_values[i] < scan.u_values[i - 1] && scan.u_values[i] <= scan.u_values[i + 1])
      u_min = std::min(u_min, scan.u_values[i]);
  REQUIRE(u_max > 0.0);
  REQUIRE(u_min < u_max);
  // J must sit above the local min but below both the peak and the scan-end
  // value, so that the third crossing stays inside [0, a_max]
  const double j_mid = 0.5 * (u_min + std::min(u_max, scan.u_values.back()));
  ModelSpec m = power_model(0.1, 1.0, 2.0, j_mid);
  SteadyStateReport r = steady_states(m, 3.0, 2000);
  CHECK(r.roots.size() == 3);
  CHECK(r.j_m <= u_max + 1e-9);
  CHECK_FALSE(r.j_m_is_scan_limit);
  (void)probe;
}
