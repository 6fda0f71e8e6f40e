#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mfspike/model.hpp"

namespace mfspike {

struct Atom {
  double x;
  double mass;
};

// Probability measure on [0, x_max]: a density sampled on a uniform node
// grid (trapezoid quadrature) plus a list of atoms. Atoms are kept separate
// so that Dirac initial data is integrated exactly downstream.
class GridMeasure {
 public:
  GridMeasure(double x_max, double dx, std::vector<double> density,
              std::vector<Atom> atoms, bool renormalize = false);

  static GridMeasure delta(double x, double x_max = 1.0, double dx = 1e-3);
  static GridMeasure uniform(double lo, double hi, double dx = 1e-3);
  static GridMeasure from_density(const std::function<double(double)>& p, double x_max,
                                  double dx);
  // atoms-only measure (empty density grid kept for shape compatibility)
  static GridMeasure from_atoms(std::vector<Atom> atoms, double x_max, double dx = 1e-3);

  double x_max() const { return x_max_; }
  double dx() const { return dx_; }
  const std::vector<double>& density() const { return density_; }
  const std::vector<Atom>& atoms() const { return atoms_; }
  double node(std::size_t k) const { return dx_ * static_cast<double>(k); }

  double mass() const;
  double moment(const std::function<double(double)>& g) const;

  // support points with positive quadrature weight: (x, w) pairs covering
  // both the density grid (trapezoid weights) and the atoms
  std::vector<std::pair<double, double>> support_points() const;

  void to_csv(std::ostream& os) const;
  static GridMeasure from_csv(std::istream& is);

 private:
  double x_max_;
  double dx_;
  std::vector<double> density_;
  std::vector<Atom> atoms_;
};

double l1_distance(const GridMeasure& a, const GridMeasure& b);

struct FMomentCheck {
  double nu_f;
  double nu_f2;
  bool finite;
};

FMomentCheck check_f_moment(const GridMeasure& nu, const ModelSpec& m);

// Default spatial extent for measures attached to a model:
// sigma_0 + 5, or 5*(C_b + a_bar) when sigma_0 is infinite.
double default_x_max(const ModelSpec& m);

}  // namespace mfspike
