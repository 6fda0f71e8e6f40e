#include "mfspike/invariant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfspike/quadrature.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfspike {

namespace {

// Constant-current flow started at x = 0, evaluated in ascending time order.
// Affine drifts use the closed form; tabulated drifts march with RK4.
class FlowFromZero {
 public:
  FlowFromZero(const ModelSpec& m, double a) : m_(m), a_(a) {
    if (const AffineDrift* af = m.affine()) {
      affine_ = true;
      kappa_ = af->kappa;
      speed_ = af->mu + a;
      sig_ = (kappa_ > 0.0) ? speed_ / kappa_ : kInf;
    } else {
      sig_ = sigma_a(m, a);
    }
  }

  double operator()(double t) const {
    if (affine_) {
      if (kappa_ == 0.0) return speed_ * t;
      return sig_ * (1.0 - std::exp(-kappa_ * t));
    }
    if (t < t_cache_) {
      t_cache_ = 0.0;
      x_cache_ = 0.0;
    }
    const Current zero = Current::constant(a_);
    x_cache_ = flow_rk4(m_, zero, t_cache_, t, x_cache_, m_.dt_flow());
    t_cache_ = t;
    return x_cache_;
  }

  double sigma() const { return sig_; }
  double kappa() const { return affine_ ? kappa_ : 1.0; }

 private:
  const ModelSpec& m_;
  double a_;
  bool affine_ = false;
  double kappa_ = 0.0, speed_ = 0.0, sig_ = kInf;
  mutable double t_cache_ = 0.0, x_cache_ = 0.0;
};

// Marches the survival integrand exp(-Lambda(t)) of the constant-current
// flow from 0. Accumulates I0 = int exp(-Lambda) dt and optionally
// I1 = int phi(t) exp(-Lambda) dt.
class SurvivalMarch {
 public:
  SurvivalMarch(const ModelSpec& m, double a)
      : m_(m), flow_(m, a) {}

  double t() const { return t_; }
  double lambda() const { return lam_; }
  double phi() const { return flow_(t_); }
  double sigma() const { return flow_.sigma(); }

  // advance to t1, adding panel contributions into i0 (+ i1 when not null)
  void advance_to(double t1, double& i0, double* i1, double h_scale) {
    while (t_ < t1 - 1e-300) {
      const double fr = m_.f(flow_(t_));
      const double kap_active = (t_ * flow_.kappa() < 32.0) ? flow_.kappa() : 0.0;
      double h = h_scale * 0.4 / std::max({fr, kap_active, 0.05});
      h = std::min(h, t1 - t_);
      panel(t_, t_ + h, i0, i1);
      t_ += h;
    }
  }

  // remaining integral bound e^{-Lambda}/f(phi); exact once phi has settled
  double tail_estimate() const {
    const double fr = m_.f(flow_(t_));
    if (!(fr > 0.0)) return kInf;
    return std::exp(-lam_) / fr;
  }

 private:
  void panel(double a, double b, double& i0, double* i1) {
    const GaussRule& g8 = gauss_rule(8);
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double lam = lam_;
    double prev = a;
    double s0 = 0.0, s1 = 0.0;
    for (std::size_t q = 0; q < g8.nodes.size(); ++q) {
      const double tq = mid + half * g8.nodes[q];
      lam += gauss_panel([&](double u) { return m_.f(flow_(u)); }, prev, tq, 4);
      prev = tq;
      const double e = std::exp(-lam);
      s0 += g8.weights[q] * e;
      if (i1) s1 += g8.weights[q] * flow_(tq) * e;
    }
    lam += gauss_panel([&](double u) { return m_.f(flow_(u)); }, prev, b, 4);
    lam_ = lam;
    i0 += half * s0;
    if (i1) *i1 += half * s1;
  }

  const ModelSpec& m_;
  FlowFromZero flow_;
  double t_ = 0.0;
  double lam_ = 0.0;
};

// One pass of the gamma integral at a given step scale.
double gamma_pass(const ModelSpec& m, double a, double h_scale) {
  SurvivalMarch march(m, a);
  const double sig = march.sigma();
  double i0 = 0.0;
  // for affine kappa > 0 the flow settles to sigma_a within machine
  // precision by t = 32/kappa, and the remainder is an exact exponential
  const bool can_settle = m.is_affine() && m.affine()->kappa > 0.0;
  const double t_settle = can_settle ? 32.0 / m.affine()->kappa : kInf;
  for (int guard = 0; guard < 100000; ++guard) {
    double t_next = march.t() + std::max(0.5, 0.25 * march.t());
    if (can_settle) t_next = std::min(t_next, t_settle);
    march.advance_to(t_next, i0, nullptr, h_scale);
    const double tail = march.tail_estimate();
    if (can_settle && march.t() >= t_settle) return i0 + tail;
    if (tail < 1e-16 * i0 && i0 > 0.0) return i0 + tail;
    if (march.t() > 1e9) break;
  }
  (void)sig;
  throw std::runtime_error("gamma: survival integral did not converge");
}

}  // namespace

double gamma_rate(const ModelSpec& m, double a) {
  if (!(a >= 0.0)) throw std::invalid_argument("gamma: need a >= 0");
  double prev = gamma_pass(m, a, 1.0);
  for (double scale : {0.5, 0.25, 0.125, 0.0625}) {
    const double cur = gamma_pass(m, a, scale);
    if (std::abs(cur - prev) <= 1e-11 * std::abs(cur)) return 1.0 / cur;
    prev = cur;
  }
  return 1.0 / prev;
}

namespace {

// inverse of the constant-current flow from 0 (time to reach x)
double flow_inverse(const ModelSpec& m, double a, double x) {
  if (const AffineDrift* af = m.affine()) {
    const double speed = af->mu + a;
    if (af->kappa == 0.0) return x / speed;
    const double sig = speed / af->kappa;
    return -std::log1p(-x / sig) / af->kappa;
  }
  // bisection against the marching flow
  FlowFromZero flow(m, a);
  double lo = 0.0, hi = 1.0;
  while (flow(hi) < x) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw std::runtime_error("flow_inverse: x beyond reachable range");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (FlowFromZero(m, a)(mid) < x ? lo : hi) = mid;
    if (hi - lo < 1e-13 * std::max(1.0, hi)) break;
  }
  return 0.5 * (lo + hi);
}

struct CellData {
  std::vector<double> boundaries;  // x-positions of cell edges (ascending)
  std::vector<double> masses;      // per-cell mass (unnormalized by gamma)
  std::vector<double> centroids;   // per-cell mass centroid
  double covered;                  // integral of exp(-Lambda) over covered range
  double total;                    // full integral 1/gamma
};

CellData cell_masses(const ModelSpec& m, double a, const std::vector<double>& edges) {
  CellData out;
  out.boundaries = edges;
  SurvivalMarch march(m, a);
  out.total = 1.0 / gamma_rate(m, a);
  double i0 = 0.0;
  for (std::size_t j = 1; j < edges.size(); ++j) {
    const double t_hi = flow_inverse(m, a, edges[j]);
    const double i0_before = i0;
    double phi_acc = 0.0;
    march.advance_to(t_hi, i0, &phi_acc, 0.5);
    const double mass = i0 - i0_before;
    out.masses.push_back(mass);
    out.centroids.push_back(mass > 0.0 ? phi_acc / mass
                                       : 0.5 * (edges[j - 1] + edges[j]));
  }
  out.covered = i0;
  return out;
}

}  // namespace

GridMeasure stationary_measure(const ModelSpec& m, double a, double dx, double x_max) {
  if (!(a >= 0.0)) throw std::invalid_argument("stationary_measure: need a >= 0");
  if (!(dx > 0.0) || !(x_max > dx))
    throw std::invalid_argument("stationary_measure: need 0 < dx < x_max");
  const double sig = sigma_a(m, a);
  const double gam = gamma_rate(m, a);
  const std::size_t nodes = static_cast<std::size_t>(std::llround(x_max / dx)) + 1;

  // truncation check: mass beyond x_max
  if (sig > x_max) {
    SurvivalMarch march(m, a);
    double i0 = 0.0;
    march.advance_to(flow_inverse(m, a, x_max), i0, nullptr, 0.5);
    const double tail_mass = 1.0 - gam * i0;
    if (tail_mass > 1e-6)
      throw std::runtime_error(
          "stationary_measure: grid truncates " + std::to_string(tail_mass) +
          " of the stationary mass; enlarge x_max");
  }

  // pointwise densities from the closed form; Lambda(t(x_k)) accumulated
  // along the flow so the inner integral never sees the 1/(b+a) singularity
  std::vector<double> dens(nodes, 0.0);
  {
    SurvivalMarch march(m, a);
    double sink = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
      const double x = dx * static_cast<double>(k);
      if (x >= sig) break;
      march.advance_to(flow_inverse(m, a, x), sink, nullptr, 0.5);
      dens[k] = gam * std::exp(-march.lambda()) / (m.b(x) + a);
    }
  }
  // trapezoid mass of the sampled density
  double mass = 0.0;
  for (std::size_t k = 0; k < nodes; ++k)
    mass += trapezoid_weight(k, nodes - 1, dx) * dens[k];
  if (std::abs(mass - 1.0) <= 1e-6)
    return GridMeasure(x_max, dx, std::move(dens), {}, /*renormalize=*/true);

  // endpoint singularity: rebuild node values from exact per-cell masses
  if (!m.is_affine())
    throw std::runtime_error(
        "stationary_measure: sampled density mass off by " +
        std::to_string(mass - 1.0) + "; refine dx");
  const double x_end = std::min(x_max, sig);
  std::vector<double> edges{0.0};
  for (std::size_t k = 0; k < nodes; ++k) {
    const double e = dx * (static_cast<double>(k) + 0.5);
    if (e >= x_end) break;
    edges.push_back(e);
  }
  CellData cd = cell_masses(m, a, edges);
  std::vector<double> vals(nodes, 0.0);
  double assigned = 0.0;
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    vals[k] = gam * cd.masses[k] / trapezoid_weight(k, nodes - 1, dx);
    assigned += gam * cd.masses[k];
  }
  // everything between the last half-cell edge and sigma_a goes to the next
  // node; the flow-form masses make the covered total exact
  const std::size_t k_last = edges.size() - 1;
  if (k_last < nodes)
    vals[k_last] = (1.0 - assigned) / trapezoid_weight(k_last, nodes - 1, dx);
  double rebuilt = 0.0;
  for (std::size_t k = 0; k < nodes; ++k)
    rebuilt += trapezoid_weight(k, nodes - 1, dx) * vals[k];
  if (std::abs(rebuilt - 1.0) > 2e-6)
    throw std::runtime_error("stationary_measure: flow-form mass defect");
  return GridMeasure(x_max, dx, std::move(vals), {}, /*renormalize=*/true);
}

GridMeasure stationary_measure_atoms(const ModelSpec& m, double a, double dx) {
  if (!m.is_affine())
    throw std::runtime_error("stationary_measure_atoms: affine drifts only");
  const double sig = sigma_a(m, a);
  double x_end = sig;
  if (!std::isfinite(sig)) {
    // cover enough of the support that the tail is negligible
    SurvivalMarch probe(m, a);
    double i0 = 0.0;
    const double inv_gamma = 1.0 / gamma_rate(m, a);
    double x_hi = 1.0;
    while (true) {
      SurvivalMarch march(m, a);
      i0 = 0.0;
      march.advance_to(flow_inverse(m, a, x_hi), i0, nullptr, 0.5);
      if (inv_gamma - i0 < 1e-12 * inv_gamma) break;
      x_hi *= 2.0;
      if (x_hi > 1e9) throw std::runtime_error("stationary_measure_atoms: no tail decay");
    }
    x_end = x_hi;
  }
  std::vector<double> edges{0.0};
  const std::size_t n_cells = static_cast<std::size_t>(std::ceil(x_end / dx));
  for (std::size_t j = 1; j <= n_cells; ++j)
    edges.push_back(std::min(x_end * (1.0 - 1e-14), dx * static_cast<double>(j)));
  CellData cd = cell_masses(m, a, edges);
  const double gam = gamma_rate(m, a);
  std::vector<Atom> atoms;
  double placed = 0.0;
  for (std::size_t k = 0; k < cd.masses.size(); ++k) {
    const double mass = gam * cd.masses[k];
    if (mass <= 0.0) continue;
    atoms.push_back(Atom{cd.centroids[k], mass});
    placed += mass;
  }
  // residual mass (beyond the last edge) sits essentially at sigma_a
  const double rest = 1.0 - placed;
  if (rest > 1e-15)
    atoms.push_back(Atom{std::isfinite(sig) ? sig * (1.0 - 1e-15) : x_end, rest});
  return GridMeasure(std::max(x_end, dx * 2.0), std::max(dx, 1e-6), {}, std::move(atoms),
                     /*renormalize=*/true);
}

SteadyStateReport steady_states(const ModelSpec& m, double a_max, int n_scan) {
  if (!(a_max > 0.0)) throw std::invalid_argument("steady_states: need a_max > 0");
  if (n_scan < 8) throw std::invalid_argument("steady_states: need n_scan >= 8");
  const double j = m.coupling();

  SteadyStateReport rep;
  rep.coupling = j;
  rep.a_grid.resize(static_cast<std::size_t>(n_scan) + 1);
  rep.u_values.resize(rep.a_grid.size());
  const double da = a_max / n_scan;
  for (std::size_t i = 0; i < rep.a_grid.size(); ++i)
    rep.a_grid[i] = da * static_cast<double>(i);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (long long i = 0; i < static_cast<long long>(rep.a_grid.size()); ++i) {
    const double a = rep.a_grid[static_cast<std::size_t>(i)];
    rep.u_values[static_cast<std::size_t>(i)] =
        (a == 0.0) ? 0.0 : a / gamma_rate(m, a);
  }

  auto refine = [&](double lo, double hi) {
    auto g = [&](double a) { return a / gamma_rate(m, a) - j; };
    double glo = g(lo);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double gm = g(mid);
      if ((glo <= 0.0) == (gm <= 0.0)) {
        lo = mid;
        glo = gm;
      } else {
        hi = mid;
      }
      if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
  };

  if (j == 0.0) {
    rep.roots.push_back(SteadyStateRoot{0.0, gamma_rate(m, 0.0), +1});
  } else {
    for (std::size_t i = 1; i < rep.a_grid.size(); ++i) {
      const double g0 = rep.u_values[i - 1] - j;
      const double g1 = rep.u_values[i] - j;
      if (g0 == 0.0 && i == 1) continue;  // U(0)=0 only matches J=0
      if ((g0 < 0.0 && g1 >= 0.0) || (g0 > 0.0 && g1 <= 0.0)) {
        const double a = refine(rep.a_grid[i - 1], rep.a_grid[i]);
        const double gam = gamma_rate(m, a);
        if (std::abs(a - j * gam) > 1e-8)
          throw std::runtime_error("steady_states: root refinement failed");
        rep.roots.push_back(SteadyStateRoot{a, gam, g1 >= g0 ? +1 : -1});
      }
    }
    if (rep.roots.empty())
      throw std::runtime_error(
          "steady_states: no root of a/gamma(a) = J in [0, a_max]; "
          "a root exists for larger a_max since U(0)=0 and U -> infinity");
  }

  // J_m from the scan: multiplicity can only start at an interior extremum
  double jm = rep.u_values.back();
  bool limit = true;
  for (std::size_t i = 1; i + 1 < rep.u_values.size(); ++i) {
    const bool loc_max = rep.u_values[i] > rep.u_values[i - 1] &&
                         rep.u_values[i] >= rep.u_values[i + 1];
    const bool loc_min = rep.u_values[i] < rep.u_values[i - 1] &&
                         rep.u_values[i] <= rep.u_values[i + 1];
    if ((loc_max || loc_min) && rep.u_values[i] > 0.0) {
      if (rep.u_values[i] < jm) {
        jm = rep.u_values[i];
        limit = false;
      }
    }
  }
  rep.j_m = jm;
  rep.j_m_is_scan_limit = limit;
  return rep;
}

std::string steady_state_report_json(const SteadyStateReport& r,
                                     const std::string& scan_csv_path) {
  std::ostringstream os;
  os.precision(12);
  os << "{\"J\":" << r.coupling << ",\"roots\":[";
  for (std::size_t i = 0; i < r.roots.size(); ++i) {
    if (i) os << ",";
    os << "{\"a\":" << r.roots[i].a << ",\"gamma\":" << r.roots[i].gamma
       << ",\"stable_hint\":" << (r.roots[i].stable_hint > 0 ? "true" : "false") << "}";
  }
  os << "],\"j_m\":" << r.j_m
     << ",\"j_m_is_scan_limit\":" << (r.j_m_is_scan_limit ? "true" : "false");
  if (!scan_csv_path.empty()) os << ",\"scan_csv\":\"" << scan_csv_path << "\"";
  os << "}";
  return os.str();
}

}  // namespace mfspike
