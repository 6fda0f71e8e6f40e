#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mfspike/model.hpp"
#include "mfspike/quadrature.hpp"

using namespace mfspike;

TEST_CASE("flow: fixed point and identity") {
  ModelSpec m = power_model(2.0, 2.0, 1.0, 0.0);
  Current zero = Current::constant(0.0);
  // b(sigma) = 0 forces sigma_0 = mu/kappa = 1
  CHECK(flow_at(m, zero, 0.0, 30.0, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  ModelSpec m2 = power_model(1.0, 1.0, 2.0, 0.0);
  CHECK(flow_at(m2, zero, 2.0, 2.0, 3.7) == 3.7);
}

TEST_CASE("flow: affine closed form vs RK4") {
  ModelSpec m = power_model(1.0, 0.5, 1.0, 0.0);
  Current cur = Current::constant(0.25);
  const double closed = flow_at(m, cur, 0.0, 1.0, 0.0);
  CHECK(closed == doctest::Approx(0.9836733507184164).epsilon(1e-12));
  CHECK(std::abs(closed - flow_rk4(m, cur, 0.0, 1.0, 0.0, 1e-3)) < 1e-8);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    ModelSpec mm = power_model(0.2 + 3.0 * u(rng), 3.0 * u(rng), 1.0, 0.0);
    Current cc = (trial % 2 == 0)
                     ? Current::constant(2.0 * u(rng))
                     : Current::exp_approach(u(rng), u(rng), 0.1 + u(rng));
    const double s = u(rng), t = s + 2.0 * u(rng), x = 3.0 * u(rng);
    const double a = flow_at(mm, cc, s, t, x);
    const double b = flow_rk4(mm, cc, s, t, x, 1e-3);
    CHECK(std::abs(a - b) < 1e-8);
  }
}

TEST_CASE("flow: sampled current integral matches quadrature") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    SampledCurrent sc;
    sc.t0 = 0.0;
    sc.dt = 0.05;
    for (int k = 0; k < 80; ++k) sc.values.push_back(u(rng));
    Current cur(sc);
    const double kappa = 2.0 * u(rng);
    const double s = u(rng), t = s + 2.5 * u(rng);
    const double exact = cur.exp_weighted_integral(kappa, s, t);
    // quadrature oracle, integrating piecewise between the interpolation kinks
    double quad = 0.0;
    double pos = s;
    while (pos < t) {
      const double next = std::min(t, sc.dt * (std::floor(pos / sc.dt + 1e-9) + 1.0));
      quad += adaptive_gauss(
          [&](double uu) { return std::exp(-kappa * (t - uu)) * cur(uu); }, pos, next,
          1e-14);
      pos = next;
    }
    CHECK(std::abs(exact - quad) < 1e-10);
  }
}

TEST_CASE("flow: rejects bad arguments") {
  ModelSpec m = power_model(1.0, 1.0, 2.0, 0.0);
  Current zero = Current::constant(0.0);
  CHECK_THROWS_AS(flow_at(m, zero, 1.0, 0.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(flow_at(m, zero, 0.0, 1.0, -0.1), std::invalid_argument);
}

TEST_CASE("flow: comparison principle and growth bounds") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    ModelSpec m = power_model(0.3 + 2.0 * u(rng), 2.5 * u(rng), 1.0, 0.0);
    const double a_hi = 1.0 + u(rng), a_lo = u(rng);
    Current ca = Current::constant(a_hi), cd = Current::constant(a_lo);
    const double x = 1.0 + u(rng), y = u(rng);
    const double s = u(rng), t = s + 2.0 * u(rng);
    CHECK(flow_at(m, ca, s, t, x) >= flow_at(m, cd, s, t, y) - 1e-13);
    // linear growth: flow(x) <= x + (C_b + a)(t - s)
    CHECK(flow_at(m, ca, s, t, x) <= x + (m.drift_sup() + a_hi) * (t - s) + 1e-12);
    // Lipschitz in the current with C_phi = 1 for kappa >= 0
    const double diff = std::abs(flow_at(m, ca, s, t, x) - flow_at(m, cd, s, t, x));
    CHECK(diff <= (a_hi - a_lo) * (t - s) + 1e-12);
  }
}

TEST_CASE("sigma_a closed forms") {
  CHECK(sigma_a(power_model(2.0, 2.0, 1.0, 0.0), 0.0) == doctest::Approx(1.0));
  CHECK(std::isinf(sigma_a(power_model(1.0, 0.0, 1.0, 0.0), 5.0)));
  CHECK(sigma_a(power_model(1.0, 1.0, 1.0, 0.0), 0.5) == doctest::Approx(1.5));
}

TEST_CASE("psi: closed form against grid maximization") {
  ModelSpec p1 = power_model(1.0, 0.0, 1.0, 0.0);
  CHECK(psi(p1, 2.0) == doctest::Approx(2.0).epsilon(1e-12));  // sup at x = 0
  ModelSpec p2 = power_model(1.0, 0.0, 2.0, 0.0);
  CHECK(psi(p2, 0.0) == 0.0);
  // independent oracle: dense grid maximization of theta f'(x) - f(x)^2/2
  for (double theta : {0.5, 1.0, 3.0}) {
    double best = 0.0;
    for (int i = 0; i <= 400000; ++i) {
      const double x = 8.0 * i / 400000.0;
      best = std::max(best, theta * 2.0 * x - 0.5 * x * x * x * x);
    }
    CHECK(psi(p2, theta) == doctest::Approx(best).epsilon(1e-8));
  }
  CHECK(psi(p2, 3.0) == doctest::Approx(6.490123066383337).epsilon(1e-12));
}

TEST_CASE("a_bar: fixed points and bracket behavior") {
  ModelSpec j0 = power_model(1.0, 0.0, 1.0, 0.0);
  CHECK(a_bar(j0, 0.0) == 0.0);
  CHECK(a_bar(j0, 0.7) == 0.7);

  // linear-equation oracle: a = 0.5 sqrt(2 psi(a+1)) with psi(theta)=theta
  // gives 2 a^2 - a - 1 = 0, root a = 1
  ModelSpec j05 = power_model(1.0, 0.0, 1.0, 0.5);
  CHECK(a_bar(j05, 0.0) == doctest::Approx(1.0).epsilon(1e-9));

  // J = 2: root of a^2 - 8a - 8 = 0 at a = 4 + sqrt(24)
  ModelSpec j2 = power_model(1.0, 0.0, 1.0, 2.0);
  CHECK(a_bar(j2, 0.0) == doctest::Approx(8.898979485566356).epsilon(1e-9));
  // a_max below the root: the bracket scan must fail loudly
  CHECK_THROWS_AS(a_bar(j2, 0.0, 5.0), std::runtime_error);
}

TEST_CASE("r_bar closed cases") {
  CHECK(r_bar(power_model(1.0, 0.0, 1.0, 0.0)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(r_bar(power_model(1.0, 0.0, 1.0, 0.5)) == doctest::Approx(std::sqrt(3.0)));
  // J = 0 and f(0) = 0 force beta = 0
  ModelSpec m = power_model(2.0, 1.0, 3.0, 0.0);
  CHECK(r_bar(m) == doctest::Approx(std::sqrt(psi(m, 2.0 * m.drift_sup()))));
}

TEST_CASE("a_bar and r_bar nondecreasing in J") {
  double prev_a = 0.0, prev_r = 0.0;
  for (double j : {0.0, 0.2, 0.4, 0.8, 1.2}) {
    ModelSpec m = power_model(1.0, 1.0, 2.0, j);
    const double a = a_bar(m, 0.0);
    const double r = r_bar(m);
    CHECK(a >= prev_a - 1e-12);
    CHECK(r >= prev_r - 1e-12);
    prev_a = a;
    prev_r = r;
  }
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(power_model(0.0, 1.0, 2.0, 0.1), std::invalid_argument);   // b(0) = 0
  CHECK_THROWS_AS(power_model(1.0, -0.5, 2.0, 0.1), std::invalid_argument);  // kappa < 0
  CHECK_THROWS_AS(power_model(1.0, 1.0, 0.5, 0.1), std::invalid_argument);   // p < 1
  CHECK_THROWS_AS(power_model(1.0, 1.0, 2.0, -0.1), std::invalid_argument);  // J < 0

  // tabulated rate must be convex nondecreasing with f(0) = 0
  std::vector<double> xs{0.0, 1.0, 2.0, 3.0};
  CHECK_THROWS_AS(ModelSpec(AffineDrift{1.0, 0.0},
                            TabulatedRate{xs, {0.0, 1.0, 0.5, 2.0}}, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(ModelSpec(AffineDrift{1.0, 0.0},
                            TabulatedRate{xs, {0.0, 2.0, 3.0, 3.5}}, 0.0),
                  std::invalid_argument);  // concave
  CHECK_THROWS_AS(ModelSpec(AffineDrift{1.0, 0.0},
                            TabulatedRate{xs, {0.5, 1.0, 2.0, 4.0}}, 0.0),
                  std::invalid_argument);  // f(0) != 0
  CHECK_NOTHROW(ModelSpec(AffineDrift{1.0, 0.0},
                          TabulatedRate{xs, {0.0, 1.0, 2.5, 4.5}}, 0.0));
}

TEST_CASE("tabulated drift matches dense affine tabulation") {
  std::vector<double> xs, bs;
  for (int k = 0; k <= 4000; ++k) {
    xs.push_back(5.0 * k / 4000.0);
    bs.push_back(1.0 - 0.5 * xs.back());
  }
  ModelSpec tab(TabulatedDrift{xs, bs}, PowerRate{2.0}, 0.0, 1e-3);
  ModelSpec aff = power_model(1.0, 0.5, 2.0, 0.0);
  Current cur = Current::constant(0.3);
  for (double t : {0.5, 1.0, 2.0})
    CHECK(flow_at(tab, cur, 0.0, t, 0.4) ==
          doctest::Approx(flow_at(aff, cur, 0.0, t, 0.4)).epsilon(1e-6));
  CHECK(sigma_a(tab, 0.0) == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("current validation and evaluation") {
  CHECK_THROWS_AS(Current::constant(-0.1), std::invalid_argument);
  CHECK_THROWS_AS(Current::exp_approach(0.5, -0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(Current::exp_approach(0.5, 0.1, 0.0), std::invalid_argument);
  Current e = Current::exp_approach(0.5, 0.2, 2.0);
  CHECK(e(0.0) == doctest::Approx(0.7));
  CHECK(e(100.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(Current(SampledCurrent{0.0, 0.1, {0.1, -0.2}}), std::invalid_argument);
  CHECK_THROWS_AS(TimeGrid(0.0, 0.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(TimeGrid(0.0, 0.1, 0), std::invalid_argument);
}
