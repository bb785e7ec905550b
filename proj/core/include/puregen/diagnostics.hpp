#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "puregen/ddpm.hpp"
#include "puregen/ebm.hpp"
#include "puregen/pipeline.hpp"
#include "puregen/trajectory.hpp"

namespace puregen::diagnostics {

// Both purification runs share one seed. In `clean` the image is purified
// from x; in `poisoned` from x + delta. Distances in both logs are to x
// (l2_clean) and x + delta (l2_poisoned).
struct L2Trajectory {
  TrajectoryLog clean;
  TrajectoryLog poisoned;
};

// EBM-only configs log every Langevin step. DDPM-only configs re-run the
// diffusion at each T on the grid 0, stride, 2 stride, ..., ddpm_steps (same
// seed per T). Mixed configs are rejected.
L2Trajectory l2_trajectory(const pipeline::Models& models, const pipeline::PurifyConfig& config,
                           const Tensor& x_clean, const Tensor& x_poisoned, int ddpm_stride = 5);

// First logged step with l2_poisoned > l2_clean.
std::optional<int> crossover_step(const TrajectoryLog& poisoned_run);

struct EnergyHistogram {
  std::vector<double> edges;  // bins + 1, shared by all three sets
  std::vector<std::size_t> clean;
  std::vector<std::size_t> poisoned;
  std::vector<std::size_t> purified;
  double mean_clean = 0.0, mean_poisoned = 0.0, mean_purified = 0.0;
  double std_error_clean = 0.0, std_error_poisoned = 0.0, std_error_purified = 0.0;
};

EnergyHistogram energy_histogram(const ebm::EnergyModel& model, const std::vector<Tensor>& clean,
                                 const std::vector<Tensor>& poisoned, const std::vector<Tensor>& purified,
                                 int bins = 20, int workers = 1);

struct LyapunovOptions {
  int steps = 10000;
  int renorm_interval = 10;
  double epsilon0 = 1e-5;
  int directions = 3;
  double step_size = 0.01;
  bool clamp = false;  // Z_eta as written has no box constraint
  int batches = 20;    // batch means for the standard error
};

struct LyapunovEstimate {
  double lambda = 0.0;  // mean log growth per step
  double std_error = 0.0;
  std::size_t floored = 0;  // renormalizations whose separation collapsed to 0
  std::size_t overflowed = 0;
  bool flagged = false;  // floored or overflowed in more than half the renormalizations
};

// Log growth floor applied per renormalization when the separation vanishes.
inline constexpr double kLogGrowthFloor = -700.0;

// Benettin: base trajectory plus `directions` companions at distance
// epsilon0, all driven by one shared noise draw per step. Runs in double.
LyapunovEstimate lyapunov(const ebm::EnergyModel& model, const Tensor& x0, double eta,
                          const LyapunovOptions& options, NoiseSource& noise, std::uint64_t direction_seed);
LyapunovEstimate lyapunov(const ebm::EnergyModel& model, const Tensor& x0, double eta,
                          const LyapunovOptions& options, std::uint64_t seed);

struct LyapunovReport {
  std::vector<double> eta;
  std::vector<LyapunovEstimate> estimates;
  std::optional<double> transition;  // first eta with lambda > 0
};

// Grid point i uses seed derive_seed(seed, {i}), so two starts swept with the
// same seed see identical noise.
LyapunovReport lyapunov_sweep(const ebm::EnergyModel& model, const Tensor& x0, std::vector<double> eta_grid,
                              const LyapunovOptions& options, std::uint64_t seed, int workers = 1);

void write_trajectory_csv(std::ostream& out, const TrajectoryLog& log);
void write_histogram_csv(std::ostream& out, const EnergyHistogram& hist);
void write_lyapunov_csv(std::ostream& out, const LyapunovReport& report);

}  // namespace puregen::diagnostics
