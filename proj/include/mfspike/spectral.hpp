#pragma once

#include <complex>
#include <string>
#include <vector>

#include "mfspike/model.hpp"
#include "mfspike/volterra.hpp"

namespace mfspike {

using Complex = std::complex<double>;

// Cached quadrature table for the Laplace transforms of H_a and K_a.
// Valid for Re(z) > -depth; built once per (model, a, depth).
class LaplaceTable {
 public:
  LaplaceTable(const ModelSpec& m, double a, double depth, double y_max);

  Complex hat_H(Complex z) const;
  Complex hat_K(Complex z) const;
  Complex hat_H_prime(Complex z) const;  // d/dz of hat_H

  double depth() const { return depth_; }
  double t_max() const { return t_max_; }

 private:
  Complex sum_nodes(Complex z, bool k_kernel, bool with_t_factor) const;

  double depth_;
  double t_max_ = 0.0;
  double lam_max_ = 0.0;
  double tail_rate_ = 0.0;  // f(phi(t_max)), decay rate of the integrands past t_max
  double panel_h_ = 0.0;    // fixed panel width
  int gl_ = 6;
  // Gauss nodes on fixed-width panels: node times, premultiplied real
  // integrand samples w * e^{-Lambda} (and w * f * e^{-Lambda} for K).
  // Fixed spacing lets e^{-z t} advance by one complex multiply per panel.
  std::vector<double> t_, wh2_, wk2_;
};

struct SpectralZero {
  Complex z;
  double residual;  // |hat_H(z)| after polishing
};

struct SpectralReport {
  double a = 0.0;
  double lambda_star = 0.0;
  std::vector<SpectralZero> zeros;  // conjugate pairs included
  double box_re_lo = 0.0, box_re_hi = 0.0, box_im = 0.0;
  double cone_bound_value = 0.0;
  int winding_total = 0;       // over the upper-half search box
  bool winding_consistent = false;
  bool conclusive = false;     // true when a zero pinned lambda_star
};

// hat_H_a(z) for Re(z) > -f(sigma_a) + margin.
Complex laplace_H(const ModelSpec& m, double a, Complex z, double margin = 0.01);
Complex laplace_K(const ModelSpec& m, double a, Complex z, double margin = 0.01);

// phi_a(x) = || d/dt ( e^{-x t} K_a(t) ) ||_{L1}; needs x > -f(sigma_a).
double cone_bound(const ModelSpec& m, double a, double x);

// Locates the zeros of hat_H_a in [-sigma_floor, 0] x [-Y, Y] with
// Y = cone bound at -sigma_floor, by the argument principle on subdivided
// rectangles, and polishes them by complex Newton.
SpectralReport lambda_star(const ModelSpec& m, double a, double sigma_floor);

// Sweeps sigma_floor over a deepening sequence until a zero pins lambda_star
// (needed when f(sigma_a) is infinite and the strip is unbounded).
SpectralReport lambda_star_auto(const ModelSpec& m, double a);

std::string spectral_report_json(const SpectralReport& r);

struct DecayFit {
  double lambda_hat;
  double r2;
  bool oscillatory;
};

// Least-squares decay rate of log|r(t) - gamma_target| over [t1, t2].
// Oscillatory residuals (alternating sign) are fitted on the local maxima of
// |r - gamma| so the cosine dips do not bias the slope.
DecayFit fit_decay_rate(const RateSolution& rate, double gamma_target, double t1, double t2);

}  // namespace mfspike
