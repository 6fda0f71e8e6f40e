#include "mfspike/measures.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "mfspike/quadrature.hpp"

namespace mfspike {

namespace {
constexpr double kMassTol = 1e-10;
}

GridMeasure::GridMeasure(double x_max, double dx, std::vector<double> density,
                         std::vector<Atom> atoms, bool renormalize)
    : x_max_(x_max), dx_(dx), density_(std::move(density)), atoms_(std::move(atoms)) {
  if (!(x_max_ > 0.0) || !(dx_ > 0.0))
    throw std::invalid_argument("GridMeasure: need x_max > 0 and dx > 0");
  const std::size_t nodes = static_cast<std::size_t>(std::llround(x_max_ / dx_)) + 1;
  if (density_.empty()) density_.assign(nodes, 0.0);
  if (density_.size() != nodes)
    throw std::invalid_argument("GridMeasure: density size does not match grid");
  for (double d : density_)
    if (!(d >= 0.0)) throw std::invalid_argument("GridMeasure: negative density");
  for (const Atom& a : atoms_)
    if (!(a.x >= 0.0) || !(a.mass >= 0.0))
      throw std::invalid_argument("GridMeasure: invalid atom");
  std::sort(atoms_.begin(), atoms_.end(), [](const Atom& l, const Atom& r) { return l.x < r.x; });
  const double m = mass();
  if (renormalize) {
    if (!(m > 0.0)) throw std::invalid_argument("GridMeasure: zero total mass");
    for (double& d : density_) d /= m;
    for (Atom& a : atoms_) a.mass /= m;
  } else if (std::abs(m - 1.0) > kMassTol) {
    throw std::invalid_argument("GridMeasure: total mass " + std::to_string(m) +
                                " deviates from 1 beyond 1e-10");
  }
}

GridMeasure GridMeasure::delta(double x, double x_max, double dx) {
  return GridMeasure(std::max(x_max, x + dx), dx, {}, {Atom{x, 1.0}});
}

GridMeasure GridMeasure::uniform(double lo, double hi, double dx) {
  if (!(hi > lo) || !(lo >= 0.0))
    throw std::invalid_argument("GridMeasure::uniform: need 0 <= lo < hi");
  const double x_max = hi;
  const std::size_t nodes = static_cast<std::size_t>(std::llround(x_max / dx)) + 1;
  std::vector<double> dens(nodes, 0.0);
  const double h = 1.0 / (hi - lo);
  for (std::size_t k = 0; k < nodes; ++k) {
    const double x = dx * static_cast<double>(k);
    if (x >= lo && x <= hi) dens[k] = h;
  }
  return GridMeasure(x_max, dx, std::move(dens), {}, /*renormalize=*/true);
}

GridMeasure GridMeasure::from_density(const std::function<double(double)>& p, double x_max,
                                      double dx) {
  const std::size_t nodes = static_cast<std::size_t>(std::llround(x_max / dx)) + 1;
  std::vector<double> dens(nodes);
  for (std::size_t k = 0; k < nodes; ++k) dens[k] = p(dx * static_cast<double>(k));
  return GridMeasure(x_max, dx, std::move(dens), {}, /*renormalize=*/true);
}

GridMeasure GridMeasure::from_atoms(std::vector<Atom> atoms, double x_max, double dx) {
  return GridMeasure(x_max, dx, {}, std::move(atoms));
}

double GridMeasure::mass() const {
  std::vector<double> terms;
  terms.reserve(density_.size() + atoms_.size());
  const std::size_t n = density_.size() - 1;
  for (std::size_t k = 0; k < density_.size(); ++k)
    terms.push_back(trapezoid_weight(k, n, dx_) * density_[k]);
  for (const Atom& a : atoms_) terms.push_back(a.mass);
  return blocked_sum(terms);
}

double GridMeasure::moment(const std::function<double(double)>& g) const {
  std::vector<double> terms;
  terms.reserve(density_.size() + atoms_.size());
  const std::size_t n = density_.size() - 1;
  for (std::size_t k = 0; k < density_.size(); ++k) {
    if (density_[k] == 0.0) continue;
    const double v = g(node(k));
    if (!std::isfinite(v)) throw std::runtime_error("moment: non-finite integrand value");
    terms.push_back(trapezoid_weight(k, n, dx_) * density_[k] * v);
  }
  for (const Atom& a : atoms_) {
    const double v = g(a.x);
    if (!std::isfinite(v)) throw std::runtime_error("moment: non-finite integrand value");
    terms.push_back(a.mass * v);
  }
  return blocked_sum(terms);
}

std::vector<std::pair<double, double>> GridMeasure::support_points() const {
  std::vector<std::pair<double, double>> pts;
  const std::size_t n = density_.size() - 1;
  for (std::size_t k = 0; k < density_.size(); ++k)
    if (density_[k] > 0.0)
      pts.emplace_back(node(k), trapezoid_weight(k, n, dx_) * density_[k]);
  for (const Atom& a : atoms_)
    if (a.mass > 0.0) pts.emplace_back(a.x, a.mass);
  return pts;
}

void GridMeasure::to_csv(std::ostream& os) const {
  os.precision(17);
  for (const Atom& a : atoms_) os << "# atom," << a.x << "," << a.mass << "\n";
  os << "x,density\n";
  for (std::size_t k = 0; k < density_.size(); ++k)
    os << node(k) << "," << density_[k] << "\n";
}

GridMeasure GridMeasure::from_csv(std::istream& is) {
  std::vector<Atom> atoms;
  std::vector<double> xs, dens;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("# atom,", 0) == 0) {
      std::istringstream ss(line.substr(7));
      Atom a{};
      char comma;
      ss >> a.x >> comma >> a.mass;
      atoms.push_back(a);
      continue;
    }
    if (line[0] == '#' || line.rfind("x,", 0) == 0) continue;
    std::istringstream ss(line);
    double x, d;
    char comma;
    if (ss >> x >> comma >> d) {
      xs.push_back(x);
      dens.push_back(d);
    }
  }
  if (xs.size() < 2) {
    if (atoms.empty()) throw std::runtime_error("GridMeasure::from_csv: no data");
    double xm = 1.0;
    for (const Atom& a : atoms) xm = std::max(xm, a.x + 1e-3);
    return GridMeasure(xm, 1e-3, {}, std::move(atoms));
  }
  const double dx = xs[1] - xs[0];
  return GridMeasure(xs.back(), dx, std::move(dens), std::move(atoms));
}

double l1_distance(const GridMeasure& a, const GridMeasure& b) {
  if (std::abs(a.dx() - b.dx()) > 1e-15 || a.density().size() != b.density().size())
    throw std::invalid_argument("l1_distance: mismatched grids");
  std::vector<double> terms;
  const std::size_t n = a.density().size() - 1;
  for (std::size_t k = 0; k <= n; ++k)
    terms.push_back(trapezoid_weight(k, n, a.dx()) *
                    std::abs(a.density()[k] - b.density()[k]));
  // atoms matched by location within dx/2 (both lists are sorted)
  const double tol = 0.5 * a.dx();
  std::size_t i = 0, j = 0;
  const auto& aa = a.atoms();
  const auto& bb = b.atoms();
  while (i < aa.size() || j < bb.size()) {
    if (i < aa.size() && j < bb.size() && std::abs(aa[i].x - bb[j].x) <= tol) {
      terms.push_back(std::abs(aa[i].mass - bb[j].mass));
      ++i;
      ++j;
    } else if (j >= bb.size() || (i < aa.size() && aa[i].x < bb[j].x)) {
      terms.push_back(aa[i].mass);
      ++i;
    } else {
      terms.push_back(bb[j].mass);
      ++j;
    }
  }
  return blocked_sum(terms);
}

FMomentCheck check_f_moment(const GridMeasure& nu, const ModelSpec& m) {
  FMomentCheck out{0.0, 0.0, true};
  try {
    out.nu_f = nu.moment([&](double x) { return m.f(x); });
    out.nu_f2 = nu.moment([&](double x) {
      const double v = m.f(x);
      return v * v;
    });
  } catch (const std::runtime_error&) {
    out.finite = false;
    return out;
  }
  out.finite = std::isfinite(out.nu_f) && std::isfinite(out.nu_f2);
  return out;
}

double default_x_max(const ModelSpec& m) {
  const double s0 = sigma_a(m, 0.0);
  if (std::isfinite(s0)) return s0 + 5.0;
  return 5.0 * (m.drift_sup() + a_bar(m, 0.0));
}

}  // namespace mfspike
