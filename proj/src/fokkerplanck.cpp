#include "mfspike/fokkerplanck.hpp"

#include <algorithm>
#include <cmath>

namespace mfspike {

namespace {

struct Tables {
  std::vector<double> f_center;  // f at cell centers
  std::vector<double> b_face;    // b at interior faces (face j is at j*dx)
};

Tables build_tables(const ModelSpec& m, double dx, std::size_t n_cells) {
  Tables t;
  t.f_center.resize(n_cells);
  t.b_face.resize(n_cells + 1);
  for (std::size_t j = 0; j < n_cells; ++j)
    t.f_center[j] = m.f((static_cast<double>(j) + 0.5) * dx);
  for (std::size_t j = 0; j <= n_cells; ++j)
    t.b_face[j] = m.b(static_cast<double>(j) * dx);
  return t;
}

double compute_rate(const Tables& t, const std::vector<double>& rho, double dx) {
  double r = 0.0;
  for (std::size_t j = 0; j < rho.size(); ++j) r += t.f_center[j] * rho[j];
  return r * dx;
}

void step_impl(const ModelSpec& m, const Tables& tab, FPState& s, double dt) {
  const std::size_t n = s.rho.size();
  const double j_cur = m.coupling() * s.rate;
  double vmax = 0.0;
  for (std::size_t j = 0; j <= n; ++j)
    vmax = std::max(vmax, std::abs(tab.b_face[j] + j_cur));
  if (dt * vmax / s.dx > 0.9 + 1e-12)
    throw std::runtime_error("fp_step: CFL violation (dt*max|b+Jr|/dx > 0.9)");

  // upwind fluxes; walls at both ends carry no advective flux
  static thread_local std::vector<double> flux;
  flux.assign(n + 1, 0.0);
  for (std::size_t j = 1; j < n; ++j) {
    const double v = tab.b_face[j] + j_cur;
    flux[j] = (v >= 0.0) ? v * s.rho[j - 1] : v * s.rho[j];
  }

  double sink_total = 0.0;
  for (std::size_t j = 0; j < n; ++j) sink_total += tab.f_center[j] * s.rho[j];
  sink_total *= s.dx;  // equals r_t; re-injected at the boundary cell

  for (std::size_t j = 0; j < n; ++j) {
    s.rho[j] += -dt / s.dx * (flux[j + 1] - flux[j]) - dt * tab.f_center[j] * s.rho[j];
  }
  s.rho[0] += dt * sink_total / s.dx;

  for (std::size_t j = 0; j < n; ++j)
    if (s.rho[j] < -1e-12)
      throw std::runtime_error("fp_step: negative density (reduce dt)");
  s.t += dt;
  s.rate = compute_rate(tab, s.rho, s.dx);
}

}  // namespace

double FPState::mass() const {
  double m = 0.0;
  for (double r : rho) m += r;
  return m * dx;
}

GridMeasure mollify_to_cells(const GridMeasure& init, double dx, double x_max) {
  const std::size_t n = static_cast<std::size_t>(std::llround(x_max / dx));
  std::vector<double> cell_mass(n, 0.0);
  // density part: deposit each node's trapezoid weight into its cell
  const auto& dens = init.density();
  const std::size_t nodes = dens.size();
  const double dxi = init.dx();
  for (std::size_t k = 0; k < nodes; ++k) {
    if (dens[k] == 0.0) continue;
    const double w = ((k == 0 || k == nodes - 1) ? 0.5 : 1.0) * dxi * dens[k];
    const double x = std::min(init.node(k), x_max - 0.5 * dx);
    const std::size_t j = std::min(static_cast<std::size_t>(x / dx), n - 1);
    cell_mass[j] += w;
  }
  // atoms: mollify over 3 cells starting at the containing cell
  for (const Atom& a : init.atoms()) {
    if (a.mass <= 0.0) continue;
    const std::size_t j0 = std::min(static_cast<std::size_t>(a.x / dx), n - 1);
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t j = std::min(j0 + k, n - 1);
      cell_mass[j] += a.mass / 3.0;
    }
  }
  std::vector<Atom> atoms;
  for (std::size_t j = 0; j < n; ++j)
    if (cell_mass[j] > 0.0)
      atoms.push_back(Atom{(static_cast<double>(j) + 0.5) * dx, cell_mass[j]});
  return GridMeasure(x_max, dx, std::vector<double>(n + 1, 0.0), std::move(atoms),
                     /*renormalize=*/true);
}

FPState fp_init(const ModelSpec& m, const GridMeasure& init, double dx, double x_max) {
  if (!(dx > 0.0) || !(x_max > 2.0 * dx))
    throw std::invalid_argument("fp_init: need 0 < dx << x_max");
  const GridMeasure cells = mollify_to_cells(init, dx, x_max);
  const std::size_t n = static_cast<std::size_t>(std::llround(x_max / dx));
  FPState s;
  s.dx = dx;
  s.x_max = x_max;
  s.rho.assign(n, 0.0);
  for (const Atom& a : cells.atoms()) {
    const std::size_t j = std::min(static_cast<std::size_t>(a.x / dx), n - 1);
    s.rho[j] += a.mass / dx;
  }
  Tables tab = build_tables(m, dx, n);
  s.rate = compute_rate(tab, s.rho, dx);
  return s;
}

void fp_step(const ModelSpec& m, FPState& state, double dt) {
  Tables tab = build_tables(m, state.dx, state.rho.size());
  step_impl(m, tab, state, dt);
}

FPResult fp_solve(const ModelSpec& m, const GridMeasure& init, double t_end, double dx,
                  double dt, double x_max) {
  if (!(t_end > 0.0) || !(dt > 0.0))
    throw std::invalid_argument("fp_solve: need t_end > 0 and dt > 0");
  FPState s = fp_init(m, init, dx, x_max);
  Tables tab = build_tables(m, dx, s.rho.size());
  FPResult out;
  const long long steps = static_cast<long long>(std::ceil(t_end / dt - 1e-12));
  out.times.reserve(static_cast<std::size_t>(steps) + 1);
  out.rates.reserve(static_cast<std::size_t>(steps) + 1);
  out.times.push_back(0.0);
  out.rates.push_back(s.rate);
  for (long long k = 0; k < steps; ++k) {
    const double h = std::min(dt, t_end - s.t);
    step_impl(m, tab, s, h);
    out.times.push_back(s.t);
    out.rates.push_back(s.rate);
  }
  out.final_state = std::move(s);
  return out;
}

GridMeasure fp_density(const FPState& state) {
  const std::size_t n = state.rho.size();
  std::vector<Atom> atoms;
  for (std::size_t j = 0; j < n; ++j)
    if (state.rho[j] > 0.0)
      atoms.push_back(Atom{(static_cast<double>(j) + 0.5) * state.dx,
                           state.rho[j] * state.dx});
  return GridMeasure(state.x_max, state.dx, std::vector<double>(n + 1, 0.0),
                     std::move(atoms), /*renormalize=*/true);
}

}  // namespace mfspike
