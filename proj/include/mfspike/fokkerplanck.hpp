#pragma once

#include <vector>

#include "mfspike/measures.hpp"
#include "mfspike/model.hpp"

namespace mfspike {

// Finite-volume state: cell densities on [0, x_max], cells of width dx with
// centers (j + 1/2) dx. Total mass is conserved exactly: the sink term
// f(x) nu is re-injected at the boundary cell, and both walls carry zero
// advective flux.
struct FPState {
  double dx = 1e-3;
  double x_max = 1.0;
  std::vector<double> rho;  // cell-averaged densities
  double t = 0.0;
  double rate = 0.0;        // r_t = sum f(x_j) rho_j dx

  double mass() const;
};

// Project a measure onto FP cells; atoms are mollified over 3 cells.
FPState fp_init(const ModelSpec& m, const GridMeasure& init, double dx, double x_max);

// The same mollified projection as an atom-list measure (atoms at cell
// centers), for runs that need strict parity between the PDE and the
// Volterra pipeline.
GridMeasure mollify_to_cells(const GridMeasure& init, double dx, double x_max);

// One explicit upwind step. Throws on CFL violation or a negative density.
void fp_step(const ModelSpec& m, FPState& state, double dt);

struct FPResult {
  std::vector<double> times;
  std::vector<double> rates;
  FPState final_state;
};

FPResult fp_solve(const ModelSpec& m, const GridMeasure& init, double t_end, double dx,
                  double dt, double x_max);

// Cell-center density of the FP state as a GridMeasure (for comparisons).
GridMeasure fp_density(const FPState& state);

}  // namespace mfspike
