#include "mfspike/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "mfspike/quadrature.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfspike {

namespace {

// Constant-current flow from 0, closed form for affine drifts.
struct ZeroFlow {
  const ModelSpec& m;
  double a;
  bool affine;
  double kappa, speed, sig;

  ZeroFlow(const ModelSpec& mm, double aa) : m(mm), a(aa) {
    affine = mm.is_affine();
    kappa = affine ? mm.affine()->kappa : 0.0;
    speed = (affine ? mm.affine()->mu : mm.b(0.0)) + aa;
    sig = sigma_a(mm, aa);
  }
  double operator()(double t) const {
    if (affine) {
      if (kappa == 0.0) return speed * t;
      return (speed / kappa) * (1.0 - std::exp(-kappa * t));
    }
    static thread_local Current zero = Current::constant(0.0);
    Current cur = Current::constant(a);
    return flow_rk4(m, cur, 0.0, t, 0.0, m.dt_flow());
  }
  double settle_time() const { return (affine && kappa > 0.0) ? 40.0 / kappa : kInf; }
};

}  // namespace

LaplaceTable::LaplaceTable(const ModelSpec& m, double a, double depth, double y_max)
    : depth_(depth) {
  const double f_sig = m.f(sigma_a(m, a));
  if (!(depth >= 0.0) || !(depth < f_sig))
    throw std::invalid_argument("LaplaceTable: depth must lie in [0, f(sigma_a))");
  ZeroFlow flow(m, a);
  auto f_of = [&](double t) { return m.f(flow(t)); };
  const double t_settle = flow.settle_time();
  auto stopped = [&](double t, double lam) {
    return (lam - depth * t > 42.0 && t > 1.0) || (t >= t_settle && t > 2.0);
  };

  // pass 1: coarse march to find the horizon and the largest rate seen, so
  // a single fixed panel width can serve the whole table
  double t = 0.0, lam = 0.0, f_max = f_of(0.0);
  while (!stopped(t, lam)) {
    const double h = 0.3 / std::max({f_of(t), flow.kappa, 0.25});
    lam += gauss_panel(f_of, t, t + h, 6);
    t += h;
    f_max = std::max(f_max, f_of(t));
    if (t > 1e7) throw std::runtime_error("LaplaceTable: horizon search ran away");
  }
  const double t_end = t;
  panel_h_ = std::min({1.0 / std::max(1.0, y_max), 0.3 / std::max(f_max, 0.25),
                       0.3 / std::max(flow.kappa, 0.25)});
  const long long panels = std::max(1LL, static_cast<long long>(std::ceil(t_end / panel_h_)));
  if (panels > 4000000) throw std::runtime_error("LaplaceTable: table too large");
  panel_h_ = t_end / static_cast<double>(panels);

  // pass 2: fixed-width panels; Gauss-6 nodes and hazard марч through them
  const GaussRule& g6 = gauss_rule(gl_);
  t = 0.0;
  lam = 0.0;
  t_.reserve(static_cast<std::size_t>(panels) * g6.nodes.size());
  wh2_.reserve(t_.capacity());
  wk2_.reserve(t_.capacity());
  for (long long p = 0; p < panels; ++p) {
    const double mid = t + 0.5 * panel_h_, half = 0.5 * panel_h_;
    double lam_run = lam, prev = t;
    for (std::size_t q = 0; q < g6.nodes.size(); ++q) {
      const double tq = mid + half * g6.nodes[q];
      lam_run += gauss_panel(f_of, prev, tq, 4);
      prev = tq;
      const double e = std::exp(-lam_run);
      t_.push_back(tq);
      wh2_.push_back(half * g6.weights[q] * e);
      wk2_.push_back(half * g6.weights[q] * e * f_of(tq));
    }
    lam = lam_run + gauss_panel(f_of, prev, t + panel_h_, 4);
    t += panel_h_;
  }
  t_max_ = t;
  lam_max_ = lam;
  tail_rate_ = f_of(t);
}

Complex LaplaceTable::sum_nodes(Complex z, bool k_kernel, bool with_t_factor) const {
  const std::vector<double>& w = k_kernel ? wk2_ : wh2_;
  Complex s{0.0, 0.0};
  // guard against overflow of e^{-z t} for deep Re(z) and long horizons
  if (-z.real() * t_max_ < 600.0) {
    const std::size_t q = static_cast<std::size_t>(gl_);
    const Complex step = std::exp(-z * panel_h_);
    Complex base{1.0, 0.0};
    std::array<Complex, 8> eq{};
    for (std::size_t k = 0; k < q; ++k) eq[k] = std::exp(-z * (t_[k] /*first panel*/));
    for (std::size_t p = 0; p < t_.size() / q; ++p) {
      const std::size_t off = p * q;
      Complex local{0.0, 0.0};
      if (with_t_factor) {
        for (std::size_t k = 0; k < q; ++k) local += w[off + k] * t_[off + k] * eq[k];
      } else {
        for (std::size_t k = 0; k < q; ++k) local += w[off + k] * eq[k];
      }
      s += base * local;
      base *= step;
    }
    return s;
  }
  for (std::size_t k = 0; k < t_.size(); ++k) {
    const Complex e = std::exp(-z * t_[k]);
    s += (with_t_factor ? w[k] * t_[k] : w[k]) * e;
  }
  return s;
}

Complex LaplaceTable::hat_H(Complex z) const {
  const Complex tail =
      std::exp(Complex(-z.real() * t_max_ - lam_max_, -z.imag() * t_max_)) /
      (z + tail_rate_);
  return sum_nodes(z, false, false) + tail;
}

Complex LaplaceTable::hat_K(Complex z) const {
  const Complex tail =
      tail_rate_ *
      std::exp(Complex(-z.real() * t_max_ - lam_max_, -z.imag() * t_max_)) /
      (z + tail_rate_);
  return sum_nodes(z, true, false) + tail;
}

Complex LaplaceTable::hat_H_prime(Complex z) const {
  return -sum_nodes(z, false, true);
}

Complex laplace_H(const ModelSpec& m, double a, Complex z, double margin) {
  const double f_sig = m.f(sigma_a(m, a));
  if (!(z.real() > -f_sig + margin))
    throw std::invalid_argument("laplace_H: Re(z) outside the admissible half-plane");
  const double depth = std::max(0.0, -z.real()) + 0.5 * margin;
  LaplaceTable table(m, a, std::min(depth, std::nextafter(f_sig, 0.0)),
                     std::max(1.0, std::abs(z.imag())));
  return table.hat_H(z);
}

Complex laplace_K(const ModelSpec& m, double a, Complex z, double margin) {
  const double f_sig = m.f(sigma_a(m, a));
  if (!(z.real() > -f_sig + margin))
    throw std::invalid_argument("laplace_K: Re(z) outside the admissible half-plane");
  const double depth = std::max(0.0, -z.real()) + 0.5 * margin;
  LaplaceTable table(m, a, std::min(depth, std::nextafter(f_sig, 0.0)),
                     std::max(1.0, std::abs(z.imag())));
  return table.hat_K(z);
}

double cone_bound(const ModelSpec& m, double a, double x) {
  const double f_sig = m.f(sigma_a(m, a));
  if (!(x > -f_sig)) throw std::invalid_argument("cone_bound: need x > -f(sigma_a)");
  // total variation of e^{-x t} K_a(t) sampled on a fine uniform grid;
  // |Delta g| is the midpoint derivative estimate times the grid step
  const double dt = 1e-3;
  const Current cur = Current::constant(a);
  CharacteristicEngine engine(m, cur, TimeGrid(0.0, dt, 1));
  const double t_settle = (m.is_affine() && m.affine()->kappa > 0.0)
                              ? 40.0 / m.affine()->kappa
                              : kInf;
  double phi = 0.0, lam = 0.0, t = 0.0;
  double prev = m.f(0.0);  // g(0) = K_a(0)
  double tv = 0.0;
  for (long long k = 0; k < 200000000; ++k) {
    engine.advance_serial(0, std::span(&phi, 1), std::span(&lam, 1));
    t += dt;
    const double g = std::exp(-x * t - lam) * m.f(phi);
    tv += std::abs(g - prev);
    prev = g;
    if (lam + x * t > 42.0 && t > 1.0) break;
    if (t >= t_settle && t > 2.0) {
      // past the settle time g decreases monotonically to 0 at the exact
      // rate x + f(sigma_a) > 0: the remaining variation is g itself
      tv += g;
      break;
    }
  }
  return tv;
}

namespace {

struct Box {
  double re_lo, re_hi, im_lo, im_hi;
  double width() const { return re_hi - re_lo; }
  double height() const { return im_hi - im_lo; }
};

// winding number of hat_H along the box boundary (counterclockwise);
// returns false when the contour runs too close to a zero
bool winding_number(const LaplaceTable& table, const Box& b, int& w, double near_zero) {
  int samples = 512;
  int prev_wind = std::numeric_limits<int>::min();
  for (int round = 0; round < 7; ++round, samples *= 2) {
    std::vector<Complex> pts;
    pts.reserve(static_cast<std::size_t>(4 * samples));
    for (int e = 0; e < 4; ++e) {
      for (int k = 0; k < samples; ++k) {
        const double u = static_cast<double>(k) / samples;
        switch (e) {
          case 0: pts.emplace_back(b.re_lo + u * b.width(), b.im_lo); break;
          case 1: pts.emplace_back(b.re_hi, b.im_lo + u * b.height()); break;
          case 2: pts.emplace_back(b.re_hi - u * b.width(), b.im_hi); break;
          default: pts.emplace_back(b.re_lo, b.im_hi - u * b.height()); break;
        }
      }
    }
    std::vector<Complex> vals(pts.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (long long i = 0; i < static_cast<long long>(pts.size()); ++i)
      vals[static_cast<std::size_t>(i)] = table.hat_H(pts[static_cast<std::size_t>(i)]);

    double scale = 0.0;
    for (const Complex& v : vals) scale = std::max(scale, std::abs(v));
    double min_abs = kInf;
    for (const Complex& v : vals) min_abs = std::min(min_abs, std::abs(v));
    if (min_abs < near_zero * std::max(1e-30, scale)) return false;

    double total = 0.0, max_step = 0.0;
    bool ok = true;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const Complex& v0 = vals[i];
      const Complex& v1 = vals[(i + 1) % vals.size()];
      double d = std::arg(v1 / v0);
      max_step = std::max(max_step, std::abs(d));
      if (std::abs(d) > 2.5) {
        ok = false;
        break;
      }
      total += d;
    }
    if (ok && max_step < 0.9) {
      const int wind = static_cast<int>(std::llround(total / (2.0 * M_PI)));
      if (wind == prev_wind) {
        w = wind;
        return true;
      }
      prev_wind = wind;
    }
  }
  w = prev_wind;
  return prev_wind != std::numeric_limits<int>::min();
}

bool newton_polish(const LaplaceTable& table, Complex z0, const Box& b, SpectralZero& out) {
  Complex z = z0;
  for (int it = 0; it < 80; ++it) {
    const Complex h = table.hat_H(z);
    const Complex hp = table.hat_H_prime(z);
    if (std::abs(hp) == 0.0) return false;
    const Complex dz = h / hp;
    z -= dz;
    if (std::abs(dz) < 1e-13 * std::max(1.0, std::abs(z))) break;
  }
  const double margin = 0.05 * std::max(b.width(), b.height()) + 1e-12;
  if (z.real() < b.re_lo - margin || z.real() > b.re_hi + margin ||
      z.imag() < b.im_lo - margin || z.imag() > b.im_hi + margin)
    return false;
  out.z = z;
  out.residual = std::abs(table.hat_H(z));
  return out.residual < 1e-8;
}

}  // namespace

SpectralReport lambda_star(const ModelSpec& m, double a, double sigma_floor) {
  const double f_sig = m.f(sigma_a(m, a));
  if (!(sigma_floor > 0.0) || !(sigma_floor < f_sig))
    throw std::invalid_argument("lambda_star: need sigma_floor in (0, f(sigma_a))");

  SpectralReport rep;
  rep.a = a;
  rep.cone_bound_value = cone_bound(m, a, -sigma_floor);
  const double y_hi = 1.05 * rep.cone_bound_value + 0.25;
  rep.box_re_lo = -sigma_floor;
  rep.box_re_hi = 0.0;
  rep.box_im = y_hi;

  LaplaceTable table(m, a, sigma_floor + std::min(0.01, 0.05 * (f_sig - sigma_floor)), y_hi);

  // the zeros live inside the cone |Im z| <= phi_a(Re z), which widens as
  // Re z decreases: cover it with vertical strips, each capped at the cone
  // bound of its left edge, rather than one tall rectangle
  const int n_strips = 6;
  std::deque<Box> work;
  int total = 0;
  bool strips_ok = true;
  for (int s = 0; s < n_strips && strips_ok; ++s) {
    // interior edges carry a small irrational jitter so a zero sitting on a
    // shared strip boundary is unlikely
    auto edge = [&](int k) {
      if (k == 0) return -sigma_floor;
      if (k == n_strips) return 0.0;
      return -sigma_floor + sigma_floor * (k + 0.003 * std::sin(3.7 * k)) / n_strips;
    };
    const double re_lo = edge(s), re_hi = edge(s + 1);
    const double y_strip =
        1.05 * ((s == 0) ? rep.cone_bound_value : cone_bound(m, a, re_lo)) + 0.25;
    Box strip{re_lo, re_hi, 0.0, y_strip};
    int w = 0;
    strips_ok = winding_number(table, strip, w, 1e-8);
    if (strips_ok) {
      total += w;
      if (w > 0) work.push_back(strip);
    }
  }
  if (!strips_ok) {
    // a zero sat too close to a strip edge: fall back to one rectangle with
    // automatic perturbation
    work.clear();
    total = 0;
    Box root{-sigma_floor, 0.0, 0.0, y_hi};
    bool ok = false;
    for (int tries = 0; tries < 6 && !ok; ++tries) {
      ok = winding_number(table, root, total, 1e-8);
      if (!ok) {
        root.re_lo -= 0.013 * (tries + 1) * sigma_floor;
        root.im_hi += 0.017 * (tries + 1) * (y_hi + 0.1);
      }
    }
    if (!ok) throw std::runtime_error("lambda_star: contour kept landing on a zero");
    if (total > 0) work.push_back(root);
  }
  rep.winding_total = total;
  while (!work.empty()) {
    Box b = work.front();
    work.pop_front();
    int w = 0;
    bool ok = false;
    for (int tries = 0; tries < 5 && !ok; ++tries) {
      ok = winding_number(table, b, w, 1e-8);
      if (!ok) {  // nudge the box; zeros never sit on the real axis
        b.re_lo -= 1e-3 * (tries + 1) * std::max(1.0, sigma_floor);
        b.im_hi += 1.3e-3 * (tries + 1) * std::max(1.0, y_hi);
      }
    }
    if (!ok) throw std::runtime_error("lambda_star: winding number did not stabilize");
    if (w == 0) continue;
    if (w == 1 || std::max(b.width(), b.height()) < 1e-6) {
      SpectralZero zz;
      if (newton_polish(table, Complex(0.5 * (b.re_lo + b.re_hi), 0.5 * (b.im_lo + b.im_hi)),
                        b, zz)) {
        rep.zeros.push_back(zz);
        if (w > 1) {  // unresolved cluster: keep digging around it
          // fall through to subdivision below
        } else {
          continue;
        }
      }
      if (std::max(b.width(), b.height()) < 1e-9)
        throw std::runtime_error("lambda_star: failed to isolate a zero");
    }
    // split the longer edge (slightly off midpoint to dodge boundary zeros)
    if (b.width() >= b.height()) {
      const double mid = b.re_lo + 0.5031 * b.width();
      work.push_back(Box{b.re_lo, mid, b.im_lo, b.im_hi});
      work.push_back(Box{mid, b.re_hi, b.im_lo, b.im_hi});
    } else {
      const double mid = b.im_lo + 0.5031 * b.height();
      work.push_back(Box{b.re_lo, b.re_hi, b.im_lo, mid});
      work.push_back(Box{b.re_lo, b.re_hi, mid, b.im_hi});
    }
  }

  // deduplicate and mirror into conjugate pairs
  std::vector<SpectralZero> uniq;
  for (const SpectralZero& z : rep.zeros) {
    bool dup = false;
    for (const SpectralZero& u : uniq)
      if (std::abs(u.z - z.z) < 1e-7 * std::max(1.0, std::abs(u.z))) dup = true;
    if (!dup) uniq.push_back(z);
  }
  rep.winding_consistent = (static_cast<int>(uniq.size()) == rep.winding_total);
  std::vector<SpectralZero> mirrored;
  for (const SpectralZero& z : uniq) {
    mirrored.push_back(z);
    if (z.z.imag() > 1e-12) mirrored.push_back(SpectralZero{std::conj(z.z), z.residual});
  }
  rep.zeros = std::move(mirrored);

  if (!rep.zeros.empty()) {
    double re_max = -kInf;
    for (const SpectralZero& z : rep.zeros) re_max = std::max(re_max, z.z.real());
    rep.lambda_star = -re_max;
    rep.conclusive = true;
  } else {
    rep.lambda_star = std::min(f_sig, sigma_floor);
    rep.conclusive = false;
  }
  return rep;
}

SpectralReport lambda_star_auto(const ModelSpec& m, double a) {
  const double f_sig = m.f(sigma_a(m, a));
  std::vector<double> floors;
  if (std::isfinite(f_sig))
    floors = {0.45 * f_sig, 0.75 * f_sig, 0.92 * f_sig};
  else
    floors = {0.5, 1.0, 2.0, 4.0};
  SpectralReport last;
  for (double fl : floors) {
    last = lambda_star(m, a, fl);
    if (last.conclusive) return last;
  }
  return last;
}

std::string spectral_report_json(const SpectralReport& r) {
  std::ostringstream os;
  os.precision(12);
  os << "{\"a\":" << r.a << ",\"lambda_star\":" << r.lambda_star << ",\"zeros\":[";
  for (std::size_t i = 0; i < r.zeros.size(); ++i) {
    if (i) os << ",";
    os << "{\"re\":" << r.zeros[i].z.real() << ",\"im\":" << r.zeros[i].z.imag()
       << ",\"residual\":" << r.zeros[i].residual << "}";
  }
  os << "],\"box\":{\"re_lo\":" << r.box_re_lo << ",\"re_hi\":" << r.box_re_hi
     << ",\"im\":" << r.box_im << "},\"cone_bound\":" << r.cone_bound_value
     << ",\"winding\":" << r.winding_total
     << ",\"winding_consistent\":" << (r.winding_consistent ? "true" : "false")
     << ",\"conclusive\":" << (r.conclusive ? "true" : "false") << "}";
  return os.str();
}

DecayFit fit_decay_rate(const RateSolution& rate, double gamma_target, double t1, double t2) {
  std::vector<double> ts, ys;  // |r - gamma| samples in the window
  int sign_changes = 0;
  double prev_sign = 0.0;
  int nonconverged = 0;
  for (int k = 0; k <= rate.grid.n; ++k) {
    const double t = rate.grid.node(k);
    if (t < t1 || t > t2) continue;
    const double d = rate.values[static_cast<std::size_t>(k)] - gamma_target;
    const double s = (d > 0.0) ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    if (prev_sign != 0.0 && s != 0.0 && s != prev_sign) ++sign_changes;
    if (s != 0.0) prev_sign = s;
    if (std::abs(d) > 1e-12) ++nonconverged;
    ts.push_back(t);
    ys.push_back(std::abs(d));
  }
  if (ts.size() < 10)
    throw std::invalid_argument("fit_decay_rate: window holds fewer than 10 samples");
  if (nonconverged < static_cast<int>(ts.size()) / 2)
    throw std::runtime_error("fit_decay_rate: rate already converged on most of the window");

  DecayFit out{};
  out.oscillatory = sign_changes >= 3;

  std::vector<double> xs, ls;
  if (out.oscillatory) {
    // fit on the local maxima of |r - gamma|: the envelope carries the rate
    for (std::size_t k = 1; k + 1 < ys.size(); ++k)
      if (ys[k] > ys[k - 1] && ys[k] >= ys[k + 1] && ys[k] > 0.0) {
        xs.push_back(ts[k]);
        ls.push_back(std::log(ys[k]));
      }
  } else {
    for (std::size_t k = 0; k < ys.size(); ++k)
      if (ys[k] > 0.0) {
        xs.push_back(ts[k]);
        ls.push_back(std::log(ys[k]));
      }
  }
  if (xs.size() < 3) throw std::runtime_error("fit_decay_rate: too few usable samples");

  const double n = static_cast<double>(xs.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    sx += xs[k];
    sy += ls[k];
    sxx += xs[k] * xs[k];
    sxy += xs[k] * ls[k];
    syy += ls[k] * ls[k];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double ss_tot = syy - sy * sy / n;
  const double intercept = (sy - slope * sx) / n;
  double ss_res = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double e = ls[k] - (intercept + slope * xs[k]);
    ss_res += e * e;
  }
  out.lambda_hat = -slope;
  out.r2 = (ss_tot > 0.0) ? 1.0 - ss_res / ss_tot : 1.0;
  return out;
}

}  // namespace mfspike
