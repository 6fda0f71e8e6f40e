#pragma once

#include <cstdint>
#include <vector>

#include "mfspike/measures.hpp"
#include "mfspike/model.hpp"
#include "mfspike/volterra.hpp"

namespace mfspike {

struct ParticleConfig {
  int n_neurons = 1;
  double t_end = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t stream_offset = 0;  // shifts the per-neuron RNG streams
  GridMeasure init = GridMeasure::delta(0.0);
  double rate_bin = 0.1;
  std::vector<double> snapshot_times;  // optional potential snapshots
};

struct SpikeEvent {
  double t;
  int neuron;
};

struct Snapshot {
  double t;
  std::vector<double> potentials;
};

struct ParticleTrace {
  std::vector<SpikeEvent> events;       // globally ordered
  std::vector<double> initial_potentials;
  std::vector<double> final_potentials;
  std::vector<long long> bin_counts;    // spike counts per rate_bin
  double rate_bin = 0.1;
  double t_end = 0.0;
  int n_neurons = 0;
  std::uint64_t seed = 0;
  std::vector<Snapshot> snapshots;

  std::vector<long long> per_neuron_counts() const;
};

// Exact event-driven simulation of the N-neuron system: each neuron carries
// a unit-exponential threshold against its accumulated hazard along the
// deterministic flow; the next network event is the earliest hazard/threshold
// crossing, root-found to 1e-10. On a spike the spiking neuron resets to 0
// and redraws its threshold; every other neuron jumps by J/N and keeps its
// residual threshold.
ParticleTrace simulate(const ModelSpec& m, const ParticleConfig& cfg);

// Binned spike counts / (N dt), resampled onto the grid, with per-bin
// binomial standard errors.
RateSolution empirical_rate(const ParticleTrace& trace, const TimeGrid& grid);

// Pooled empirical rate over several traces (common bin layout required).
RateSolution pooled_empirical_rate(const std::vector<ParticleTrace>& traces,
                                   const TimeGrid& grid);

// Deterministic per-neuron RNG stream seed.
std::uint64_t neuron_stream_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace mfspike
