#include "mfspike/particle.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mfspike/quadrature.hpp"

namespace mfspike {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// portable uniform in (0, 1]
double uniform_01(std::mt19937_64& g) {
  const std::uint64_t r = g();
  return (static_cast<double>(r >> 11) + 1.0) * 0x1.0p-53;
}

double draw_exponential(std::mt19937_64& g) { return -std::log(uniform_01(g)); }

// inverse-CDF sampler for a GridMeasure
class MeasureSampler {
 public:
  explicit MeasureSampler(const GridMeasure& nu) {
    for (const auto& [x, w] : nu.support_points()) {
      xs_.push_back(x);
      cum_.push_back((cum_.empty() ? 0.0 : cum_.back()) + w);
    }
    if (cum_.empty()) throw std::invalid_argument("MeasureSampler: empty measure");
    const double total = cum_.back();
    for (double& c : cum_) c /= total;
  }
  double operator()(std::mt19937_64& g) const {
    const double u = uniform_01(g);
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
    const std::size_t k = std::min(static_cast<std::size_t>(it - cum_.begin()),
                                   xs_.size() - 1);
    return xs_[k];
  }

 private:
  std::vector<double> xs_, cum_;
};

// Constant-zero-current affine flow helpers for the particle system; the
// interaction enters only through the J/N jumps.
struct FlowCoef {
  double decay;  // e^{-kappa dt}
  double incr;   // flow increment for x = 0
};

class ParticleFlow {
 public:
  explicit ParticleFlow(const ModelSpec& m) : m_(m) {
    if (const AffineDrift* a = m.affine()) {
      affine_ = true;
      kappa_ = a->kappa;
      mu_ = a->mu;
      sigma0_ = kappa_ > 0.0 ? mu_ / kappa_ : kInf;
    } else {
      sigma0_ = sigma_a(m, 0.0);
    }
  }

  double sigma0() const { return sigma0_; }

  FlowCoef coef(double dt) const {
    if (!affine_) throw std::logic_error("ParticleFlow::coef: affine only");
    if (kappa_ == 0.0) return {1.0, mu_ * dt};
    const double e = std::exp(-kappa_ * dt);
    return {e, sigma0_ * (1.0 - e)};
  }

  double advance(double x, double dt) const {
    if (affine_) {
      const FlowCoef c = coef(dt);
      return c.decay * x + c.incr;
    }
    static const Current zero = Current::constant(0.0);
    return flow_rk4(m_, zero, 0.0, dt, x, m_.dt_flow());
  }

  // shared Gauss coefficients for the hazard over [0, dt]: panels of
  // absolute-offset nodes, identical for every neuron (affine drift)
  struct HazardCoef {
    std::vector<double> nd, ni, w;  // per node: decay, increment, weight
    double full_decay, full_incr;
  };

  HazardCoef hazard_coef(double dt) const {
    if (!affine_) throw std::logic_error("hazard_coef: affine only");
    HazardCoef hc;
    const int panels = std::max(1, static_cast<int>(std::ceil(dt / 0.05)));
    const double h = dt / panels;
    const GaussRule& g = gauss_rule(6);
    for (int p = 0; p < panels; ++p) {
      for (std::size_t q = 0; q < g.nodes.size(); ++q) {
        const double u = p * h + 0.5 * (g.nodes[q] + 1.0) * h;
        const FlowCoef c = coef(u);
        hc.nd.push_back(c.decay);
        hc.ni.push_back(c.incr);
        hc.w.push_back(0.5 * h * g.weights[q]);
      }
    }
    const FlowCoef cf = coef(dt);
    hc.full_decay = cf.decay;
    hc.full_incr = cf.incr;
    return hc;
  }

  // int_0^dt f(flow_u(x)) du by panelized Gauss-Legendre
  double hazard(double x, double dt, double tol = 1e-12) const {
    if (dt <= 0.0) return 0.0;
    const int panels = std::max(1, static_cast<int>(std::ceil(dt / 0.05)));
    const double h = dt / panels;
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
      const double base = p * h;
      double prev = gauss_panel(
          [&](double u) { return m_.f(advance(x, base + u)); }, 0.0, h, 4);
      double ref = gauss_panel(
          [&](double u) { return m_.f(advance(x, base + u)); }, 0.0, h, 6);
      if (std::abs(ref - prev) > tol) {
        // halve until the panel settles
        ref = adaptive_gauss(
            [&](double u) { return m_.f(advance(x, base + u)); }, 0.0, h, tol);
      }
      acc += ref;
    }
    return acc;
  }

  bool affine() const { return affine_; }

 private:
  const ModelSpec& m_;
  bool affine_ = false;
  double kappa_ = 0.0, mu_ = 0.0, sigma0_ = kInf;
};

}  // namespace

std::uint64_t neuron_stream_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x51ed2701ULL));
}

ParticleTrace simulate(const ModelSpec& m, const ParticleConfig& cfg) {
  if (cfg.n_neurons < 1) throw std::invalid_argument("simulate: need n_neurons >= 1");
  if (!(cfg.t_end > 0.0)) throw std::invalid_argument("simulate: need t_end > 0");
  if (!(cfg.rate_bin > 0.0)) throw std::invalid_argument("simulate: need rate_bin > 0");

  const int n = cfg.n_neurons;
  const double jump = m.coupling() / static_cast<double>(n);
  ParticleFlow flow(m);
  const double sigma0 = flow.sigma0();

  std::vector<std::mt19937_64> rng;
  rng.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    rng.emplace_back(neuron_stream_seed(cfg.seed, cfg.stream_offset + static_cast<std::uint64_t>(i)));

  MeasureSampler sampler(cfg.init);
  std::vector<double> x(static_cast<std::size_t>(n));
  std::vector<double> thr(static_cast<std::size_t>(n));  // residual thresholds
  for (int i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] = sampler(rng[static_cast<std::size_t>(i)]);
    thr[static_cast<std::size_t>(i)] = draw_exponential(rng[static_cast<std::size_t>(i)]);
  }

  ParticleTrace trace;
  trace.n_neurons = n;
  trace.t_end = cfg.t_end;
  trace.seed = cfg.seed;
  trace.rate_bin = cfg.rate_bin;
  trace.initial_potentials = x;
  trace.bin_counts.assign(
      static_cast<std::size_t>(std::ceil(cfg.t_end / cfg.rate_bin)) + 1, 0);

  std::vector<double> snaps = cfg.snapshot_times;
  std::sort(snaps.begin(), snaps.end());
  std::size_t next_snap = 0;

  // candidate screening buffers
  std::vector<double> lb(static_cast<std::size_t>(n));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<int> cand(static_cast<std::size_t>(n));

  const double root_tol = 1e-10;
  double t_now = 0.0;

  auto exact_root = [&](int i, double hi_guess) -> double {
    // solve hazard(x_i, s) = thr_i for s in (0, ...]; expand then bisect+newton
    const double xi = x[static_cast<std::size_t>(i)];
    const double target = thr[static_cast<std::size_t>(i)];
    double hi = std::max(hi_guess, 1e-9);
    double lam_hi = flow.hazard(xi, hi);
    int guard = 0;
    while (lam_hi < target) {
      hi *= 2.0;
      lam_hi = flow.hazard(xi, hi);
      if (++guard > 200) throw std::runtime_error("simulate: hazard never reaches threshold");
    }
    double lo = 0.0;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double lam = flow.hazard(xi, mid);
      if (lam < target)
        lo = mid;
      else
        hi = mid;
      if (hi - lo < root_tol) break;
    }
    return 0.5 * (lo + hi);
  };

  auto record_snapshots_until = [&](double t_event) {
    while (next_snap < snaps.size() && snaps[next_snap] <= t_event &&
           snaps[next_snap] <= cfg.t_end) {
      const double ts = snaps[next_snap];
      Snapshot s;
      s.t = ts;
      s.potentials.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i)
        s.potentials[static_cast<std::size_t>(i)] =
            flow.advance(x[static_cast<std::size_t>(i)], ts - t_now);
      trace.snapshots.push_back(std::move(s));
      ++next_snap;
    }
  };

  while (true) {
    // upper bounds on each neuron's next-spike time from its minimal rate
    double m_horizon = kInf;
    int m_arg = -1;
    for (int i = 0; i < n; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      const double f_lo = m.f(std::min(xi, sigma0));
      if (f_lo > 0.0) {
        const double ub = thr[static_cast<std::size_t>(i)] / f_lo;
        if (ub < m_horizon) {
          m_horizon = ub;
          m_arg = i;
        }
      }
    }
    double best_t;  // relative to t_now
    int best_i;
    if (m_arg < 0) {
      // every neuron sits at f = 0: fall back to the smallest threshold
      int jmin = 0;
      for (int i = 1; i < n; ++i)
        if (thr[static_cast<std::size_t>(i)] < thr[static_cast<std::size_t>(jmin)]) jmin = i;
      best_i = jmin;
      best_t = exact_root(jmin, 1.0);
      m_horizon = best_t;
    } else {
      best_i = m_arg;
      best_t = exact_root(m_arg, m_horizon);
    }

    // lower bounds over the horizon: rate can never exceed
    // f(max(x_i, flow(x_i, horizon)))
    int n_cand = 0;
    {
      const bool aff = flow.affine();
      const FlowCoef reach_c = aff ? flow.coef(m_horizon) : FlowCoef{0.0, 0.0};
      for (int i = 0; i < n; ++i) {
        if (i == best_i) continue;
        const double xi = x[static_cast<std::size_t>(i)];
        const double reach =
            aff ? reach_c.decay * xi + reach_c.incr : flow.advance(xi, m_horizon);
        const double f_hi = m.f(std::max(xi, reach));
        const double bound = (f_hi > 0.0) ? thr[static_cast<std::size_t>(i)] / f_hi : kInf;
        if (bound <= best_t) {
          lb[static_cast<std::size_t>(n_cand)] = bound;
          order[static_cast<std::size_t>(n_cand)] = n_cand;
          ++n_cand;
          cand[static_cast<std::size_t>(n_cand - 1)] = i;
        }
      }
    }
    std::sort(order.begin(), order.begin() + n_cand, [&](int oa, int ob) {
      const double la = lb[static_cast<std::size_t>(oa)];
      const double lbv = lb[static_cast<std::size_t>(ob)];
      if (la != lbv) return la < lbv;
      return cand[static_cast<std::size_t>(oa)] < cand[static_cast<std::size_t>(ob)];
    });
    for (int c = 0; c < n_cand; ++c) {
      const int slot = order[static_cast<std::size_t>(c)];
      const int i = cand[static_cast<std::size_t>(slot)];
      if (lb[static_cast<std::size_t>(slot)] >= best_t + root_tol) break;
      // does this neuron actually fire before best_t?
      const double xi = x[static_cast<std::size_t>(i)];
      if (flow.hazard(xi, best_t) < thr[static_cast<std::size_t>(i)]) continue;
      const double root = exact_root(i, best_t);
      if (root < best_t - root_tol || (std::abs(root - best_t) <= root_tol && i < best_i)) {
        best_t = root;
        best_i = i;
      }
    }

    const double t_event = t_now + best_t;
    if (t_event > cfg.t_end) {
      record_snapshots_until(cfg.t_end);
      for (int i = 0; i < n; ++i)
        x[static_cast<std::size_t>(i)] =
            flow.advance(x[static_cast<std::size_t>(i)], cfg.t_end - t_now);
      break;
    }
    record_snapshots_until(t_event);

    // advance everyone to the event, discounting their thresholds; the
    // Gauss nodes of the hazard panel are shared across neurons
    if (flow.affine()) {
      const ParticleFlow::HazardCoef hc = flow.hazard_coef(best_t);
      const std::size_t nq = hc.nd.size();
      for (int i = 0; i < n; ++i) {
        const double xi = x[static_cast<std::size_t>(i)];
        double acc = 0.0;
        for (std::size_t q = 0; q < nq; ++q)
          acc += hc.w[q] * m.f(hc.nd[q] * xi + hc.ni[q]);
        thr[static_cast<std::size_t>(i)] -= acc;
        x[static_cast<std::size_t>(i)] = hc.full_decay * xi + hc.full_incr;
      }
    } else {
      for (int i = 0; i < n; ++i) {
        const double xi = x[static_cast<std::size_t>(i)];
        thr[static_cast<std::size_t>(i)] -= flow.hazard(xi, best_t);
        x[static_cast<std::size_t>(i)] = flow.advance(xi, best_t);
      }
    }
    // reset the spiker, kick the rest
    for (int i = 0; i < n; ++i) {
      if (i == best_i) continue;
      x[static_cast<std::size_t>(i)] += jump;
    }
    x[static_cast<std::size_t>(best_i)] = 0.0;
    thr[static_cast<std::size_t>(best_i)] =
        draw_exponential(rng[static_cast<std::size_t>(best_i)]);
    // numerical guard: residual thresholds stay positive
    for (int i = 0; i < n; ++i)
      if (i != best_i && thr[static_cast<std::size_t>(i)] <= 0.0)
        thr[static_cast<std::size_t>(i)] = root_tol;

    t_now = t_event;
    trace.events.push_back(SpikeEvent{t_event, best_i});
    const std::size_t bin = static_cast<std::size_t>(t_event / cfg.rate_bin);
    if (bin < trace.bin_counts.size()) ++trace.bin_counts[bin];
  }

  trace.final_potentials = x;
  return trace;
}

std::vector<long long> ParticleTrace::per_neuron_counts() const {
  std::vector<long long> c(static_cast<std::size_t>(n_neurons), 0);
  for (const SpikeEvent& e : events) ++c[static_cast<std::size_t>(e.neuron)];
  return c;
}

namespace {

RateSolution rate_from_counts(const std::vector<double>& counts, double n_total,
                              double rate_bin, double t_end, const TimeGrid& grid) {
  if (grid.t0 < -1e-12 || grid.t_end() > t_end + 1e-9)
    throw std::invalid_argument("empirical_rate: grid outside [0, t_end]");
  RateSolution out;
  out.grid = grid;
  out.values.resize(static_cast<std::size_t>(grid.nodes()));
  out.stderrs.resize(out.values.size());
  double total = 0.0;
  for (double c : counts) total += c;
  out.no_events = (total == 0.0);
  for (int k = 0; k <= grid.n; ++k) {
    const double t = grid.node(k);
    std::size_t bin = static_cast<std::size_t>(std::max(0.0, t) / rate_bin);
    bin = std::min(bin, counts.size() - 1);
    const double c = counts[bin];
    out.values[static_cast<std::size_t>(k)] = c / (n_total * rate_bin);
    out.stderrs[static_cast<std::size_t>(k)] =
        out.no_events ? kInf : std::sqrt(std::max(c, 1.0)) / (n_total * rate_bin);
  }
  return out;
}

}  // namespace

RateSolution empirical_rate(const ParticleTrace& trace, const TimeGrid& grid) {
  std::vector<double> counts(trace.bin_counts.begin(), trace.bin_counts.end());
  return rate_from_counts(counts, static_cast<double>(trace.n_neurons), trace.rate_bin,
                          trace.t_end, grid);
}

RateSolution pooled_empirical_rate(const std::vector<ParticleTrace>& traces,
                                   const TimeGrid& grid) {
  if (traces.empty()) throw std::invalid_argument("pooled_empirical_rate: no traces");
  std::vector<double> counts(traces.front().bin_counts.size(), 0.0);
  double n_total = 0.0;
  for (const ParticleTrace& t : traces) {
    if (t.bin_counts.size() != counts.size() || t.rate_bin != traces.front().rate_bin)
      throw std::invalid_argument("pooled_empirical_rate: mismatched bin layouts");
    for (std::size_t k = 0; k < counts.size(); ++k)
      counts[k] += static_cast<double>(t.bin_counts[k]);
    n_total += static_cast<double>(t.n_neurons);
  }
  return rate_from_counts(counts, n_total, traces.front().rate_bin, traces.front().t_end,
                          grid);
}

}  // namespace mfspike
