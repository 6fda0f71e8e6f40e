#pragma once

#include <vector>

#include "mfspike/measures.hpp"
#include "mfspike/model.hpp"

namespace mfspike {

// gamma(a): stationary firing rate of the constant-current process,
// 1/gamma(a) = int_0^inf exp(-int_0^t f(phi^a_u(0)) du) dt.
// Computed along the flow; step-halving controls the error to ~1e-10 rel.
double gamma_rate(const ModelSpec& m, double a);

// Stationary density on [0, min(sigma_a, x_max)] sampled on a dx-grid.
// Node values come from the closed-form density; when its trapezoid mass
// misses 1 by more than 1e-6 (integrable endpoint singularity), the grid is
// rebuilt from exact per-cell masses computed along the flow. Throws when
// the truncated tail mass beyond x_max exceeds 1e-6.
GridMeasure stationary_measure(const ModelSpec& m, double a, double dx, double x_max);

// Same measure as a list of atoms at exact per-cell mass centroids; used
// where quadrature against nu must not see the grid (stationarity checks).
GridMeasure stationary_measure_atoms(const ModelSpec& m, double a, double dx);

struct SteadyStateRoot {
  double a;
  double gamma;
  int stable_hint;  // +1 if U is increasing at the root, -1 if decreasing
};

struct SteadyStateReport {
  double coupling;
  std::vector<double> a_grid;
  std::vector<double> u_values;     // U(a) = a / gamma(a)
  std::vector<SteadyStateRoot> roots;  // ascending
  double j_m;                       // largest J with a unique root, from this scan
  bool j_m_is_scan_limit;           // true when no multiplicity was seen up to a_max
};

// Scan U(a) = a/gamma(a) on [0, a_max], bracket sign changes of U - J and
// refine by bisection. Throws if no root lies in [0, a_max].
SteadyStateReport steady_states(const ModelSpec& m, double a_max, int n_scan = 2000);

std::string steady_state_report_json(const SteadyStateReport& r,
                                     const std::string& scan_csv_path = "");

}  // namespace mfspike
