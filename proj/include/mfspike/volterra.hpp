#pragma once

#include <span>
#include <vector>

#include "mfspike/measures.hpp"
#include "mfspike/model.hpp"

namespace mfspike {

struct RateSolution {
  TimeGrid grid;
  std::vector<double> values;    // r(t_k, t0)
  std::vector<double> stderrs;   // per-node standard errors (empirical rates)
  Current current;
  GridMeasure origin = GridMeasure::delta(0.0);
  bool no_events = false;        // empirical rate from an empty trace

  double at_time(double t) const;  // linear interpolation between nodes
};

// Dense lower-triangular two-argument kernel on a grid. Meant for small
// grids (tests, debug dumps); ~n^2/2 doubles, guarded at 8001 nodes.
class KernelMatrix {
 public:
  explicit KernelMatrix(const TimeGrid& grid);
  double at(int i, int j) const { return v_[idx(i, j)]; }
  double& at(int i, int j) { return v_[idx(i, j)]; }
  const TimeGrid& grid() const { return grid_; }

 private:
  static std::size_t tri(std::size_t i) { return i * (i + 1) / 2; }
  std::size_t idx(int i, int j) const;
  TimeGrid grid_;
  std::vector<double> v_;
};

// Advances flow/hazard characteristics in lockstep along a time grid.
// For affine drifts every characteristic shares the same one-step affine
// update and the same Gauss nodes for the hazard increment, so a step is a
// flat data-parallel pass. The serial and OpenMP paths produce identical
// results element for element.
class CharacteristicEngine {
 public:
  CharacteristicEngine(const ModelSpec& m, const Current& cur, const TimeGrid& grid,
                       int gl_points = 4);

  // advance phi/lam over [t_step, t_step+dt]
  void advance_serial(int step, std::span<double> phi, std::span<double> lam) const;
  void advance(int step, std::span<double> phi, std::span<double> lam) const;

  const TimeGrid& grid() const { return grid_; }
  const ModelSpec& model() const { return m_; }

 private:
  void advance_range(int step, std::size_t lo, std::size_t hi, std::span<double> phi,
                     std::span<double> lam) const;

  const ModelSpec& m_;
  Current cur_;
  TimeGrid grid_;
  int q_;
  bool affine_;
  // per step: full-step decay/increment and per-node decay/increment/weight
  std::vector<double> step_decay_, step_incr_;
  std::vector<double> node_decay_, node_incr_, node_w_;  // q entries per step
};

// K^nu(t_i, s) and H^nu(t_i, s) for a fixed start node s, i = s..n.
struct KernelColumns {
  int s_index;
  std::vector<double> K;  // entry k corresponds to node s_index + k
  std::vector<double> H;
};
KernelColumns kernel_columns(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                             const TimeGrid& grid, int s_index = 0);

// Dense kernels (small grids).
KernelMatrix kernel_K(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                      const TimeGrid& grid);
KernelMatrix kernel_H(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                      const TimeGrid& grid);

// Product-trapezoid forward solve of r = F + K * r given dense kernels.
// The diagonal term is handled implicitly; a nonpositive implicit factor
// raises a step-size error.
RateSolution volterra_solve(const KernelMatrix& forcing, const KernelMatrix& kernel);

// Two-variable resolvent r = k + k * r by forward substitution per column.
KernelMatrix resolvent(const KernelMatrix& kernel);

// Fused solver: kernels evaluated on the fly from characteristics, O(n)
// memory. Constant currents take a convolution fast path.
RateSolution solve_rate(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                        const TimeGrid& grid);

// One-variable kernels K_a(k dt), H_a(k dt) for a constant current.
void convolution_kernels(const ModelSpec& m, double a, const TimeGrid& grid,
                         std::vector<double>& k1, std::vector<double>& h1);

struct PicardResult {
  Current current;      // sampled fixed-point current a(t) = J r(t)
  RateSolution rate;    // rate of the final iterate
  int iterations;
  double residual;      // sup |a_{n+1} - a_n| at exit
};

class PicardError : public std::runtime_error {
 public:
  PicardError(const std::string& what, double residual, int iterations)
      : std::runtime_error(what), residual(residual), iterations(iterations) {}
  double residual;
  int iterations;
};

// Picard iteration for the closure a = J r^nu_(a.): iterates the current
// until sup|a_{n+1}-a_n| <= tol. Optional relaxation factor theta in (0,1].
PicardResult picard_closure(const ModelSpec& m, const GridMeasure& nu, const TimeGrid& grid,
                            double tol = 1e-8, int max_iter = 100, double theta = 1.0);

// Characteristic state at the end node of a grid, as needed by the marginal
// law: flow and survival from every reset time and from the initial law.
struct MarginalData {
  TimeGrid grid;
  std::vector<double> flow_reset;  // phi_{T, t_j}(0)
  std::vector<double> surv_reset;  // H(T, t_j)
  std::vector<double> x_init;      // support points of nu
  std::vector<double> w_init;      // their weights
  std::vector<double> flow_init;   // phi_{T, t0}(x)
  std::vector<double> surv_init;   // H^x(T, t0)
  std::vector<bool> init_is_atom;
};

MarginalData marginal_data(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                           const TimeGrid& grid);

double marginal_moment(const MarginalData& md, const RateSolution& rate,
                       const std::function<double(double)>& phi);

// E phi(Y_t) for t on the rate grid.
double marginal_law(const ModelSpec& m, const Current& cur, const GridMeasure& nu,
                    const RateSolution& rate, double t,
                    const std::function<double(double)>& phi);

// Pushforward of the time-t marginal onto a density grid (atoms preserved).
GridMeasure marginal_density(const MarginalData& md, const RateSolution& rate, double dx,
                             double x_max);

struct PerturbationResult {
  RateSolution rate;   // reconstructed r_(a.) for nu = delta_0
  double gamma;        // gamma(a) of the limit current
  double alpha_hat;    // grid estimate of ||Delta_K||_{lambda,1}
};

// Reconstructs the rate for an exp-approach current from the constant-current
// solution plus the kernel-difference expansion, without solving the
// two-variable equation directly.
PerturbationResult perturbation_reconstruct(const ModelSpec& m, const Current& cur,
                                            const TimeGrid& grid);

// Peak-to-peak amplitude of a rate over [t1, t2].
double peak_to_peak(const RateSolution& r, double t1, double t2);

}  // namespace mfspike
