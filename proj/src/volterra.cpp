#include "mfspike/volterra.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mfspike/invariant.hpp"
#include "mfspike/quadrature.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfspike {

namespace {

constexpr std::size_t kBlock = 2048;
constexpr std::size_t kParallelThreshold = 8192;

double ipow_fast(double x, int n) {
  double r = 1.0;
  while (n > 0) {
    if (n & 1) r *= x;
    x *= x;
    n >>= 1;
  }
  return r;
}

// deterministic blocked reduction: per-block sums (parallelizable), then a
// serial combine in block order
template <class Term>
double blocked_reduce(std::size_t n, Term&& term) {
  if (n == 0) return 0.0;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  if (nblocks == 1) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += term(j);
    return s;
  }
  std::vector<double> partial(nblocks);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n >= kParallelThreshold)
#endif
  for (long long b = 0; b < static_cast<long long>(nblocks); ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
    const std::size_t hi = std::min(lo + kBlock, n);
    double s = 0.0;
    for (std::size_t j = lo; j < hi; ++j) s += term(j);
    partial[static_cast<std::size_t>(b)] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

}  // namespace

double RateSolution::at_time(double t) const {
  const double u = (t - grid.t0) / grid.dt;
  if (u <= 0.0) return values.front();
  if (u >= static_cast<double>(grid.n)) return values.back();
  const std::size_t k = static_cast<std::size_t>(u);
  const double w = u - static_cast<double>(k);
  return values[k] + w * (values[k + 1] - values[k]);
}

KernelMatrix::KernelMatrix(const TimeGrid& grid) : grid_(grid) {
  const std::size_t nodes = static_cast<std::size_t>(grid.nodes());
  if (nodes > 8001)
    throw std::invalid_argument(
        "KernelMatrix: dense storage limited to 8001 nodes; use kernel_columns "
        "or solve_rate for large grids");
  v_.assign(tri(nodes), 0.0);
}

std::size_t KernelMatrix::idx(int i, int j) const {
  if (i < 0 || j < 0 || j > i || i >= grid_.nodes())
    throw std::out_of_range("KernelMatrix: index outside lower triangle");
  return tri(static_cast<std::size_t>(i)) + static_cast<std::size_t>(j);
}

CharacteristicEngine::CharacteristicEngine(const ModelSpec& m, const Current& cur,
                                           const TimeGrid& grid, int gl_points)
    : m_(m), cur_(cur), grid_(grid), q_(gl_points), affine_(m.is_affine()) {
  if (q_ < 2 || q_ > 8) throw std::invalid_argument("CharacteristicEngine: gl_points in [2,8]");
  if (!affine_) return;
  const AffineDrift& af = *m.affine();
  const double dt = grid_.dt;
  const GaussRule& g = gauss_rule(q_);
  const std::size_t n = static_cast<std::size_t>(grid_.n);
  step_decay_.assign(1, af.kappa > 0.0 ? std::exp(-af.kappa * dt) : 1.0);
  node_decay_.resize(q_);
  node_w_.resize(q_);
  step_incr_.resize(n);
  node_incr_.resize(n * static_cast<std::size_t>(q_));
  std::vector<double> xi(q_);
  for (int q = 0; q < q_; ++q) {
    xi[q] = 0.5 * (g.nodes[q] + 1.0) * dt;
    node_decay_[q] = af.kappa > 0.0 ? std::exp(-af.kappa * xi[q]) : 1.0;
    node_w_[q] = 0.5 * g.weights[q] * dt;
  }
  const double homog_full =
      af.kappa > 0.0 ? (af.mu / af.kappa) * (1.0 - step_decay_[0]) : af.mu * dt;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = grid_.node(static_cast<int>(i));
    step_incr_[i] = homog_full + cur_.exp_weighted_integral(af.kappa, t, t + dt);
    for (int q = 0; q < q_; ++q) {
      const double homog =
          af.kappa > 0.0 ? (af.mu / af.kappa) * (1.0 - node_decay_[q]) : af.mu * xi[q];
      node_incr_[i * q_ + q] =
          homog + cur_.exp_weighted_integral(af.kappa, t, t + xi[q]);
    }
  }
}

void CharacteristicEngine::advance_range(int step, std::size_t lo, std::size_t hi,
                                         std::span<double> phi,
                                         std::span<double> lam) const {
  if (affine_) {
    const double A = step_decay_[0];
    const double B = step_incr_[static_cast<std::size_t>(step)];
    const double* nd = node_decay_.data();
    const double* ni = &node_incr_[static_cast<std::size_t>(step) * q_];
    const double* nw = node_w_.data();
    const PowerRate* pw = m_.power();
    const int ip = (pw && std::abs(pw->p - std::round(pw->p)) < 1e-12 && pw->p <= 64.0)
                       ? static_cast<int>(std::llround(pw->p))
                       : 0;
    for (std::size_t j = lo; j < hi; ++j) {
      const double p0 = phi[j];
      double add = 0.0;
      if (ip) {
        for (int q = 0; q < q_; ++q) add += nw[q] * ipow_fast(nd[q] * p0 + ni[q], ip);
      } else if (pw) {
        for (int q = 0; q < q_; ++q) {
          const double x = nd[q] * p0 + ni[q];
          add += nw[q] * (x > 0.0 ? std::pow(x, pw->p) : 0.0);
        }
      } else {
        for (int q = 0; q < q_; ++q) add += nw[q] * m_.f(nd[q] * p0 + ni[q]);
      }
      lam[j] += add;
      phi[j] = A * p0 + B;
    }
    return;
  }
  // generic drift: RK4 substeps with Simpson hazard accumulation
  const double t = grid_.node(step);
  const double dt = grid_.dt;
  const int nsub = std::max(1, static_cast<int>(std::ceil(dt / m_.dt_flow())));
  const double h = dt / nsub;
  for (std::size_t j = lo; j < hi; ++j) {
    double y = phi[j], u = t, acc = 0.0;
    for (int s = 0; s < nsub; ++s) {
      const double ym = flow_rk4(m_, cur_, u, u + 0.5 * h, y, h);
      const double y1 = flow_rk4(m_, cur_, u, u + h, y, h);
      acc += (h / 6.0) * (m_.f(y) + 4.0 * m_.f(ym) + m_.f(y1));
      y = y1;
      u += h;
    }
    lam[j] += acc;
    phi[j] = y;
  }
}

void CharacteristicEngine::advance_serial(int step, std::span<double> phi,
                                          std::span<double> lam) const {
  advance_range(step, 0, phi.size(), phi, lam);
}

void CharacteristicEngine::advance(int step, std::span<double> phi,
                                   std::span<double> lam) const {
#ifdef _OPENMP
  const std::size_t n = phi.size();
  if (n >= kParallelThreshold) {
    const std::size_t nblocks = (n + kBlock - 1) / kBlock;
#pragma omp parallel for schedule(static)
    for (long long b = 0; b < static_cast<long long>(nblocks); ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
      advance_range(step, lo, std::min(lo + kBlock, n), phi, lam);
    }
    return;
  }
#endif
  advance_serial(step, phi, lam);
}

namespace {

struct ForcingChars {
  std::vector<double> x, w, phi, lam;
  std::vector<bool> is_atom;

  explicit ForcingChars(const GridMeasure& nu) {
    for (const auto& [xx, ww] : nu.support_points()) {
      x.push_back(xx);
      w.push_back(ww);
    }
    // mark which support points are atoms (tail entries by construction)
    const std::size_t n_atoms =
        static_cast<std::size_t>(std::count_if(nu.atoms().begin(), nu.atoms().end(),
                                               [](const Atom& a) { return a.mass > 0.0; }));
    is_atom.assign(x.size(), false);
    for (std::size_t k = x.size() - n_atoms; k < x.size(); ++k) is_atom[k] = true;
    phi = x;
    lam.assign(x.size(), 0.0);
  }

  double f_moment(const ModelSpec& m) const {
    return blocked_reduce(x.size(), [&](std::size_t s) { return w[s] * m.f(phi[s]); });
  }
  double k_value(const ModelSpec& m) const {
    return blocked_reduce(x.size(), [&](std::size_t s) {
      return w[s] * m.f(phi[s]) * std::exp(-lam[s]);
    });
  }
  double h_value() const {
    return blocked_reduce(x.size(),
                          [&](std::size_t s) { return w[s] * std::exp(-lam[s]); });
  }
};

bool is_delta_zero(const GridMeasure& nu) {
  return nu.atoms().size() == 1 && nu.atoms()[0].x == 0.0 &&
         std::abs(nu.atoms()[0].mass - 1.0) < 1e-12 &&
         std::all_of(nu.density().begin(), nu.density().end(),
                     [](double d) { return d == 0.0; });
}

RateSolution solve_rate_constant(const ModelSpec& m, double a, const GridMeasure& nu,
                                 const TimeGrid& grid) {
  const int n = grid.n;
  const double dt = grid.dt;
  std::vector<double> k1, h1;
  convolution_kernels(m, a, grid, k1, h1);

  std::vector<double> forcing(static_cast<std::size_t>(n) + 1);
  if (is_delta_zero(nu)) {
    forcing = k1;
  } else {
    const Current cur = Current::constant(a);
    CharacteristicEngine engine(m, cur, grid);
    ForcingChars fc(nu);
    forcing[0] = fc.f_moment(m);
    for (int i = 1; i <= n; ++i) {
      engine.advance(i - 1, fc.phi, fc.lam);
      forcing[static_cast<std::size_t>(i)] = fc.k_value(m);
    }
  }

  RateSolution out;
  out.grid = grid;
  out.current = Current::constant(a);
  out.origin = nu;
  out.values.assign(static_cast<std::size_t>(n) + 1, 0.0);
  out.values[0] = forcing[0];
  const double* k1p = k1.data();
  const double* rp = out.values.data();
  for (int i = 1; i <= n; ++i) {
    const double dot = blocked_reduce(static_cast<std::size_t>(i), [&](std::size_t j) {
      const double w = (j == 0) ? 0.5 * dt : dt;
      return w * k1p[static_cast<std::size_t>(i) - j] * rp[j];
    });
    out.values[static_cast<std::size_t>(i)] = forcing[static_cast<std::size_t>(i)] + dot;
  }
  return out;
}

}  // namespace

void convolution_kernels(const ModelSpec& m, double a, const TimeGrid& grid,
                         std::vector<double>& k1, std::vector<double>& h1) {
  const Current cur = Current::constant(a);
  CharacteristicEngine engine(m, cur, grid);
  const std::size_t nodes = static_cast<std::size_t>(grid.nodes());
  k1.assign(nodes, 0.0);
  h1.assign(nodes, 0.0);
  double phi = 0.0, lam = 0.0;
  h1[0] = 1.0;
  k1[0] = m.f(0.0);
  for (std::size_t i = 1; i < nodes; ++i) {
    engine.advance_serial(static_cast<int>(i) - 1, std::span(&phi, 1), std::span(&lam, 1));
    const double e = std::exp(-lam);
    h1[i] = e;
    k1[i] = m.f(phi) * e;
  }
}

KernelColumns kernel_columns(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                             const TimeGrid& grid, int s_index) {
  if (s_index < 0 || s_index >= grid.nodes())
    throw std::invalid_argument("kernel_columns: start index outside grid");
  CharacteristicEngine engine(m, cur, grid);
  ForcingChars fc(nu);
  KernelColumns kc;
  kc.s_index = s_index;
  kc.K.push_back(fc.f_moment(m));
  kc.H.push_back(1.0 * blocked_reduce(fc.w.size(), [&](std::size_t s) { return fc.w[s]; }));
  for (int i = s_index + 1; i < grid.nodes(); ++i) {
    engine.advance(i - 1, fc.phi, fc.lam);
    kc.K.push_back(fc.k_value(m));
    kc.H.push_back(fc.h_value());
  }
  return kc;
}

KernelMatrix kernel_K(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                      const TimeGrid& grid) {
  KernelMatrix out(grid);
  for (int s = 0; s < grid.nodes(); ++s) {
    KernelColumns kc = kernel_columns(m, cur, nu, grid, s);
    for (int i = s; i < grid.nodes(); ++i) out.at(i, s) = kc.K[static_cast<std::size_t>(i - s)];
  }
  return out;
}

KernelMatrix kernel_H(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                      const TimeGrid& grid) {
  KernelMatrix out(grid);
  for (int s = 0; s < grid.nodes(); ++s) {
    KernelColumns kc = kernel_columns(m, cur, nu, grid, s);
    for (int i = s; i < grid.nodes(); ++i) out.at(i, s) = kc.H[static_cast<std::size_t>(i - s)];
  }
  return out;
}

RateSolution volterra_solve(const KernelMatrix& forcing, const KernelMatrix& kernel) {
  const TimeGrid& g = forcing.grid();
  if (g.nodes() != kernel.grid().nodes() || g.dt != kernel.grid().dt)
    throw std::invalid_argument("volterra_solve: mismatched grids");
  const int n = g.n;
  const double dt = g.dt;
  RateSolution out;
  out.grid = g;
  out.values.assign(static_cast<std::size_t>(n) + 1, 0.0);
  out.values[0] = forcing.at(0, 0);
  for (int i = 1; i <= n; ++i) {
    double acc = forcing.at(i, 0);
    for (int j = 0; j < i; ++j) {
      const double w = (j == 0) ? 0.5 * dt : dt;
      acc += w * kernel.at(i, j) * out.values[static_cast<std::size_t>(j)];
    }
    const double denom = 1.0 - 0.5 * dt * kernel.at(i, i);
    if (!(denom > 0.0))
      throw std::runtime_error("volterra_solve: implicit diagonal factor <= 0; reduce dt");
    out.values[static_cast<std::size_t>(i)] = acc / denom;
  }
  return out;
}

KernelMatrix resolvent(const KernelMatrix& kernel) {
  const TimeGrid& g = kernel.grid();
  const int nodes = g.nodes();
  const double dt = g.dt;
  KernelMatrix out(g);
  for (int s = 0; s < nodes; ++s) {
    out.at(s, s) = kernel.at(s, s);
    for (int i = s + 1; i < nodes; ++i) {
      double acc = kernel.at(i, s);
      for (int j = s; j < i; ++j) {
        const double w = (j == s) ? 0.5 * dt : dt;
        acc += w * kernel.at(i, j) * out.at(j, s);
      }
      const double denom = 1.0 - 0.5 * dt * kernel.at(i, i);
      if (!(denom > 0.0))
        throw std::runtime_error("resolvent: implicit diagonal factor <= 0; reduce dt");
      out.at(i, s) = acc / denom;
    }
  }
  return out;
}

RateSolution solve_rate(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                        const TimeGrid& grid) {
  if (const ConstantCurrent* c = cur.as_constant())
    return solve_rate_constant(m, c->a, nu, grid);

  const int n = grid.n;
  const double dt = grid.dt;
  CharacteristicEngine engine(m, cur, grid);
  std::vector<double> phiK(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> lamK(static_cast<std::size_t>(n) + 1, 0.0);
  ForcingChars fc(nu);

  RateSolution out;
  out.grid = grid;
  out.current = cur;
  out.origin = nu;
  out.values.assign(static_cast<std::size_t>(n) + 1, 0.0);
  out.values[0] = fc.f_moment(m);
  const double* rp = out.values.data();
  for (int i = 1; i <= n; ++i) {
    engine.advance(i - 1, std::span(phiK.data(), static_cast<std::size_t>(i)),
                   std::span(lamK.data(), static_cast<std::size_t>(i)));
    phiK[static_cast<std::size_t>(i)] = 0.0;
    lamK[static_cast<std::size_t>(i)] = 0.0;
    engine.advance(i - 1, fc.phi, fc.lam);
    const double f_i = fc.k_value(m);
    const double dot = blocked_reduce(static_cast<std::size_t>(i), [&](std::size_t j) {
      const double w = (j == 0) ? 0.5 * dt : dt;
      return w * m.f(phiK[j]) * std::exp(-lamK[j]) * rp[j];
    });
    out.values[static_cast<std::size_t>(i)] = f_i + dot;
  }
  return out;
}

PicardResult picard_closure(const ModelSpec& m, const GridMeasure& nu, const TimeGrid& grid,
                            double tol, int max_iter, double theta) {
  if (!(tol > 0.0) || max_iter < 1 || !(theta > 0.0) || !(theta <= 1.0))
    throw std::invalid_argument("picard_closure: bad tol/max_iter/theta");
  const double j = m.coupling();
  const std::size_t nodes = static_cast<std::size_t>(grid.nodes());
  std::vector<double> a(nodes, 0.0);
  double resid = kInf;
  for (int iter = 1; iter <= max_iter; ++iter) {
    const auto [mn, mx] = std::minmax_element(a.begin(), a.end());
    Current cur = (*mx - *mn < 1e-300)
                      ? Current::constant(*mn)
                      : Current(SampledCurrent{grid.t0, grid.dt, a});
    RateSolution rate = solve_rate(m, cur, nu, grid);
    resid = 0.0;
    for (std::size_t k = 0; k < nodes; ++k)
      resid = std::max(resid, std::abs(j * rate.values[k] - a[k]));
    std::vector<double> a_next(nodes);
    for (std::size_t k = 0; k < nodes; ++k)
      a_next[k] = theta * j * rate.values[k] + (1.0 - theta) * a[k];
    a = std::move(a_next);
    if (resid <= tol) {
      PicardResult out{Current(SampledCurrent{grid.t0, grid.dt, a}), std::move(rate), iter,
                       resid};
      return out;
    }
  }
  throw PicardError("picard_closure: no convergence after " + std::to_string(max_iter) +
                        " iterations (residual " + std::to_string(resid) + ")",
                    resid, max_iter);
}

MarginalData marginal_data(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                           const TimeGrid& grid) {
  const int n = grid.n;
  CharacteristicEngine engine(m, cur, grid);
  MarginalData md;
  md.grid = grid;
  md.flow_reset.assign(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> lamK(static_cast<std::size_t>(n) + 1, 0.0);
  ForcingChars fc(nu);
  for (int i = 1; i <= n; ++i) {
    engine.advance(i - 1, std::span(md.flow_reset.data(), static_cast<std::size_t>(i)),
                   std::span(lamK.data(), static_cast<std::size_t>(i)));
    engine.advance(i - 1, fc.phi, fc.lam);
  }
  md.surv_reset.resize(lamK.size());
  for (std::size_t k = 0; k < lamK.size(); ++k) md.surv_reset[k] = std::exp(-lamK[k]);
  md.x_init = fc.x;
  md.w_init = fc.w;
  md.flow_init = fc.phi;
  md.surv_init.resize(fc.lam.size());
  for (std::size_t k = 0; k < fc.lam.size(); ++k) md.surv_init[k] = std::exp(-fc.lam[k]);
  md.init_is_atom = fc.is_atom;
  return md;
}

double marginal_moment(const MarginalData& md, const RateSolution& rate,
                       const std::function<double(double)>& phi) {
  const int n = md.grid.n;
  if (rate.grid.n < n || std::abs(rate.grid.dt - md.grid.dt) > 1e-15)
    throw std::invalid_argument("marginal_moment: rate grid incompatible");
  const double dt = md.grid.dt;
  const double boundary = blocked_reduce(static_cast<std::size_t>(n) + 1, [&](std::size_t j) {
    const double w = trapezoid_weight(j, static_cast<std::size_t>(n), dt);
    return w * phi(md.flow_reset[j]) * md.surv_reset[j] * rate.values[j];
  });
  const double init = blocked_reduce(md.x_init.size(), [&](std::size_t s) {
    return md.w_init[s] * phi(md.flow_init[s]) * md.surv_init[s];
  });
  return boundary + init;
}

double marginal_law(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                    const RateSolution& rate, double t,
                    const std::function<double(double)>& phi) {
  const double k_real = (t - rate.grid.t0) / rate.grid.dt;
  const int k = static_cast<int>(std::llround(k_real));
  if (std::abs(k_real - k) > 1e-6 || k < 0 || k > rate.grid.n)
    throw std::invalid_argument("marginal_law: t must be a node of the rate grid");
  if (k == 0) return nu.moment(phi);
  MarginalData md = marginal_data(m, cur, nu, TimeGrid(rate.grid.t0, rate.grid.dt, k));
  return marginal_moment(md, rate, phi);
}

GridMeasure marginal_density(const MarginalData& md, const RateSolution& rate, double dx,
                             double x_max) {
  const int n = md.grid.n;
  const double dt = md.grid.dt;
  const std::size_t nodes = static_cast<std::size_t>(std::llround(x_max / dx)) + 1;
  std::vector<double> dens(nodes, 0.0);
  std::vector<Atom> atoms;
  auto deposit = [&](double y, double mass) {
    if (mass <= 0.0) return;
    const double u = std::clamp(y, 0.0, x_max) / dx;
    std::size_t k = std::min(static_cast<std::size_t>(u), nodes - 2);
    const double frac = std::clamp(u - static_cast<double>(k), 0.0, 1.0);
    dens[k] += mass * (1.0 - frac) / trapezoid_weight(k, nodes - 1, dx);
    dens[k + 1] += mass * frac / trapezoid_weight(k + 1, nodes - 1, dx);
  };
  for (int jj = 0; jj <= n; ++jj) {
    const std::size_t j = static_cast<std::size_t>(jj);
    const double w = trapezoid_weight(j, static_cast<std::size_t>(n), dt);
    deposit(md.flow_reset[j], w * md.surv_reset[j] * rate.values[j]);
  }
  for (std::size_t s = 0; s < md.x_init.size(); ++s) {
    const double mass = md.w_init[s] * md.surv_init[s];
    if (md.init_is_atom[s])
      atoms.push_back(Atom{md.flow_init[s], mass});
    else
      deposit(md.flow_init[s], mass);
  }
  return GridMeasure(x_max, dx, std::move(dens), std::move(atoms), /*renormalize=*/true);
}

PerturbationResult perturbation_reconstruct(const ModelSpec& m, const Current& cur,
                                            const TimeGrid& grid) {
  const ExpApproachCurrent* ea = cur.as_exp_approach();
  if (!ea) throw std::invalid_argument("perturbation_reconstruct: exp-approach current required");
  const int n = grid.n;
  const double dt = grid.dt;
  const std::size_t nodes = static_cast<std::size_t>(n) + 1;

  std::vector<double> k1, h1;
  convolution_kernels(m, ea->a, grid, k1, h1);
  const GridMeasure d0 = GridMeasure::delta(0.0);
  RateSolution base = solve_rate(m, Current::constant(ea->a), d0, grid);
  const double gam = gamma_rate(m, ea->a);

  std::vector<double> xi(nodes);
  for (std::size_t k = 0; k < nodes; ++k) xi[k] = base.values[k] - gam;
  std::vector<double> elam(nodes);
  for (std::size_t k = 0; k < nodes; ++k)
    elam[k] = std::exp(ea->lambda * dt * static_cast<double>(k));

  CharacteristicEngine engine(m, cur, grid);
  std::vector<double> phiA(nodes, 0.0), lamA(nodes, 0.0);
  std::vector<double> kbar(nodes, 0.0), hbar(nodes, 0.0);
  std::vector<double> g(nodes, 0.0), G(nodes, 0.0), kcol0(nodes, 0.0);

  double kbar_norm = 0.0, hbar_norm = 0.0;
  auto wgt = [&](std::size_t j, std::size_t i) {
    return (j == 0 || j == i) ? 0.5 * dt : dt;
  };

  g[0] = base.values[0];  // forcing is delta_0: r(t0) = f(0)
  for (int ii = 1; ii <= n; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    engine.advance(ii - 1, std::span(phiA.data(), i), std::span(lamA.data(), i));
    phiA[i] = 0.0;
    lamA[i] = 0.0;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (i >= kParallelThreshold)
#endif
    for (long long jj = 0; jj <= static_cast<long long>(i); ++jj) {
      const std::size_t jx = static_cast<std::size_t>(jj);
      const double surv = std::exp(-lamA[jx]);
      kbar[jx] = m.f(phiA[jx]) * surv - k1[i - jx];
      hbar[jx] = surv - h1[i - jx];
    }
    kcol0[i] = kbar[0];
    const double conv_xi = blocked_reduce(i + 1, [&](std::size_t v) {
      return wgt(v, i) * xi[i - v] * kcol0[v];
    });
    const double dk_i0 = kcol0[i] + conv_xi - gam * hbar[0];
    const double s1 = blocked_reduce(i + 1, [&](std::size_t u) {
      return wgt(u, i) * (kbar[u] - gam * hbar[u]) * g[u];
    });
    G[i] = blocked_reduce(i + 1, [&](std::size_t u) { return wgt(u, i) * kbar[u] * g[u]; });
    const double s2 = blocked_reduce(i + 1, [&](std::size_t v) {
      return wgt(v, i) * xi[i - v] * G[v];
    });
    g[i] = base.values[i] + dk_i0 + s1 + s2;

    const double kb = blocked_reduce(i + 1, [&](std::size_t u) {
      return wgt(u, i) * std::abs(kbar[u]) * elam[i - u];
    });
    const double hb = blocked_reduce(i + 1, [&](std::size_t u) {
      return wgt(u, i) * std::abs(hbar[u]) * elam[i - u];
    });
    kbar_norm = std::max(kbar_norm, kb);
    hbar_norm = std::max(hbar_norm, hb);
  }

  double xi_norm = 0.0;
  for (std::size_t k = 0; k < nodes; ++k)
    xi_norm += trapezoid_weight(k, nodes - 1, dt) * std::abs(xi[k]) * elam[k];

  PerturbationResult out;
  out.rate.grid = grid;
  out.rate.values = std::move(g);
  out.rate.current = cur;
  out.rate.origin = d0;
  out.gamma = gam;
  out.alpha_hat = kbar_norm * (1.0 + xi_norm) + gam * hbar_norm;
  return out;
}

double peak_to_peak(const RateSolution& r, double t1, double t2) {
  double lo = kInf, hi = -kInf;
  for (int k = 0; k <= r.grid.n; ++k) {
    const double t = r.grid.node(k);
    if (t < t1 || t > t2) continue;
    lo = std::min(lo, r.values[static_cast<std::size_t>(k)]);
    hi = std::max(hi, r.values[static_cast<std::size_t>(k)]);
  }
  if (!(hi >= lo)) throw std::invalid_argument("peak_to_peak: empty window");
  return hi - lo;
}

}  // namespace mfspike
