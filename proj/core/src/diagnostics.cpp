#include "puregen/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "puregen/errors.hpp"
#include "puregen/parallel.hpp"

namespace puregen::diagnostics {

namespace {

void check_pair(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ConfigError("l2_trajectory: clean and poisoned shapes differ");
}

TrajectoryLog ddpm_grid_log(const pipeline::Models& models, const pipeline::PurifyConfig& config, const Tensor& x,
                            const Tensor& clean, const Tensor& poisoned, int stride) {
  TrajectoryLog log;
  for (int t = 0;; t = std::min(t + stride, config.ddpm_steps)) {
    const Tensor out =
        ddpm::ddpm_purify(*models.ddpm, *models.schedule, x, t, {},
                          pipeline::stage_seed(config.seed, 0, 0, pipeline::Stage::kDdpm))
            .image;
    log.records.push_back({t, 0.0, l2_distance(out, clean), l2_distance(out, poisoned)});
    if (t == config.ddpm_steps) break;
  }
  return log;
}

}  // namespace

L2Trajectory l2_trajectory(const pipeline::Models& models, const pipeline::PurifyConfig& config,
                           const Tensor& x_clean, const Tensor& x_poisoned, int ddpm_stride) {
  config.validate();
  check_pair(x_clean, x_poisoned);
  if (config.ebm_steps > 0 && config.ddpm_steps > 0) {
    throw ConfigError("l2_trajectory: use an EBM-only or DDPM-only config");
  }
  if (config.reps != 1) throw ConfigError("l2_trajectory: reps must be 1");
  L2Trajectory traj;
  if (config.ddpm_steps > 0) {
    if (!models.ddpm || !models.schedule) throw ConfigError("l2_trajectory: no diffusion model loaded");
    if (ddpm_stride < 1) throw ConfigError("l2_trajectory: ddpm stride must be >= 1");
    traj.clean = ddpm_grid_log(models, config, x_clean, x_clean, x_poisoned, ddpm_stride);
    traj.poisoned = ddpm_grid_log(models, config, x_poisoned, x_clean, x_poisoned, ddpm_stride);
    return traj;
  }
  if (!models.ebm) throw ConfigError("l2_trajectory: no energy model loaded");
  ebm::LangevinOptions lo;
  lo.steps = config.ebm_steps;
  lo.step_size = config.step_size;
  lo.noise_scale = config.noise_scale;
  lo.clamp = config.clamp;
  lo.record = true;
  lo.clean_reference = &x_clean;
  lo.poisoned_reference = &x_poisoned;
  const std::uint64_t seed = pipeline::stage_seed(config.seed, 0, 0, pipeline::Stage::kEbm);
  traj.clean = ebm::langevin_purify(*models.ebm, x_clean, lo, seed).log;
  traj.poisoned = ebm::langevin_purify(*models.ebm, x_poisoned, lo, seed).log;
  return traj;
}

std::optional<int> crossover_step(const TrajectoryLog& poisoned_run) {
  for (const TrajectoryRecord& r : poisoned_run.records) {
    if (r.l2_poisoned > r.l2_clean) return r.step;
  }
  return std::nullopt;
}

namespace {

void mean_and_error(const std::vector<double>& v, double& mean, double& err) {
  mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) {
    err = 0.0;
    return;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  err = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

std::vector<std::size_t> bin_counts(const std::vector<double>& v, const std::vector<double>& edges) {
  const std::size_t bins = edges.size() - 1;
  std::vector<std::size_t> counts(bins, 0);
  const double lo = edges.front();
  const double width = (edges.back() - lo) / static_cast<double>(bins);
  for (double x : v) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((x - lo) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

}  // namespace

EnergyHistogram energy_histogram(const ebm::EnergyModel& model, const std::vector<Tensor>& clean,
                                 const std::vector<Tensor>& poisoned, const std::vector<Tensor>& purified,
                                 int bins, int workers) {
  if (bins < 2) throw ConfigError("energy_histogram: bins must be >= 2");
  if (clean.empty() || poisoned.empty() || purified.empty()) throw DataError("energy_histogram: empty set");
  const std::vector<double> ec = ebm::energies(model, clean, workers);
  const std::vector<double> ep = ebm::energies(model, poisoned, workers);
  const std::vector<double> eu = ebm::energies(model, purified, workers);
  double lo = ec.front();
  double hi = ec.front();
  for (const auto* set : {&ec, &ep, &eu}) {
    for (double x : *set) {
      if (!std::isfinite(x)) throw DivergenceError("energy_histogram: non-finite energy");
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  EnergyHistogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.edges[i] = lo + (hi - lo) * i / bins;
  h.clean = bin_counts(ec, h.edges);
  h.poisoned = bin_counts(ep, h.edges);
  h.purified = bin_counts(eu, h.edges);
  mean_and_error(ec, h.mean_clean, h.std_error_clean);
  mean_and_error(ep, h.mean_poisoned, h.std_error_poisoned);
  mean_and_error(eu, h.mean_purified, h.std_error_purified);
  return h;
}

LyapunovEstimate lyapunov(const ebm::EnergyModel& model, const Tensor& x0, double eta,
                          const LyapunovOptions& options, NoiseSource& noise, std::uint64_t direction_seed) {
  if (options.renorm_interval < 1 || options.steps < options.renorm_interval) {
    throw ConfigError("lyapunov: need steps >= renorm_interval >= 1");
  }
  if (options.directions < 1) throw ConfigError("lyapunov: directions must be >= 1");
  if (!(options.epsilon0 > 0.0)) throw ConfigError("lyapunov: epsilon0 must be positive");
  if (!(options.step_size > 0.0)) throw ConfigError("lyapunov: step size must be positive");
  if (!(eta >= 0.0)) throw ConfigError("lyapunov: eta must be >= 0");
  if (options.batches < 1) throw ConfigError("lyapunov: batches must be >= 1");
  if (x0.shape() != model.input_shape) throw ConfigError("lyapunov: start shape does not match model");

  const std::size_t n = x0.size();
  const auto dirs = static_cast<std::size_t>(options.directions);
  ebm::BasicEnergyEvaluator<double> eval(model);

  // Unit start directions, reused whenever a separation collapses.
  std::mt19937_64 rng(direction_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TensorD> unit(dirs, TensorD(x0.shape()));
  for (TensorD& u : unit) {
    double norm = 0.0;
    for (double& v : u.data()) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : u.data()) v /= norm;
  }

  TensorD base = x0.cast<double>();
  std::vector<TensorD> comp(dirs, base);
  for (std::size_t d = 0; d < dirs; ++d) {
    for (std::size_t i = 0; i < n; ++i) comp[d][i] += options.epsilon0 * unit[d][i];
  }

  TensorD grad(x0.shape());
  TensorD eps(x0.shape());
  const double amp = eta * std::sqrt(2.0 * options.step_size);
  auto advance = [&](TensorD& x) {
    const double e = eval.energy_and_grad(x, grad);
    if (!std::isfinite(e) || !grad.all_finite()) throw DivergenceError("lyapunov: non-finite gradient");
    for (std::size_t i = 0; i < n; ++i) {
      double v = x[i] - options.step_size * grad[i] + amp * eps[i];
      if (options.clamp) v = std::clamp(v, 0.0, 1.0);
      x[i] = v;
    }
  };

  LyapunovEstimate est;
  std::vector<double> block;  // per-step log growth of each block, averaged over directions
  const int blocks = options.steps / options.renorm_interval;
  block.reserve(static_cast<std::size_t>(blocks));
  for (int b = 0; b < blocks; ++b) {
    for (int s = 0; s < options.renorm_interval; ++s) {
      noise.fill_normal(eps.data());  // one draw shared by the base and every companion
      advance(base);
      for (TensorD& c : comp) advance(c);
    }
    double growth = 0.0;
    for (std::size_t d = 0; d < dirs; ++d) {
      double norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = comp[d][i] - base[i];
        norm += diff * diff;
      }
      norm = std::sqrt(norm);
      double g;
      if (!std::isfinite(norm)) {
        ++est.overflowed;
        g = 700.0;
      } else if (norm == 0.0) {
        ++est.floored;
        g = kLogGrowthFloor;
      } else {
        g = std::max(std::log(norm / options.epsilon0), kLogGrowthFloor);
        if (g == kLogGrowthFloor) ++est.floored;
      }
      growth += g;
      // Renormalize back to epsilon0 along the grown direction.
      if (std::isfinite(norm) && norm > 0.0) {
        const double k = options.epsilon0 / norm;
        for (std::size_t i = 0; i < n; ++i) comp[d][i] = base[i] + k * (comp[d][i] - base[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) comp[d][i] = base[i] + options.epsilon0 * unit[d][i];
      }
    }
    block.push_back(growth / static_cast<double>(dirs) / options.renorm_interval);
  }

  est.lambda = std::accumulate(block.begin(), block.end(), 0.0) / static_cast<double>(block.size());
  const std::size_t nb = std::min<std::size_t>(static_cast<std::size_t>(options.batches), block.size());
  if (nb >= 2) {
    const std::size_t per = block.size() / nb;
    std::vector<double> means;
    for (std::size_t j = 0; j < nb; ++j) {
      const auto first = block.begin() + static_cast<std::ptrdiff_t>(j * per);
      means.push_back(std::accumulate(first, first + static_cast<std::ptrdiff_t>(per), 0.0) /
                      static_cast<double>(per));
    }
    double mean = 0.0;
    mean_and_error(means, mean, est.std_error);
  }
  const std::size_t events = static_cast<std::size_t>(blocks) * dirs;
  est.flagged = 2 * (est.floored + est.overflowed) > events;
  return est;
}

LyapunovEstimate lyapunov(const ebm::EnergyModel& model, const Tensor& x0, double eta,
                          const LyapunovOptions& options, std::uint64_t seed) {
  GaussianNoise noise(derive_seed(seed, {0x1A9}));
  return lyapunov(model, x0, eta, options, noise, derive_seed(seed, {0xD1C}));
}

LyapunovReport lyapunov_sweep(const ebm::EnergyModel& model, const Tensor& x0, std::vector<double> eta_grid,
                              const LyapunovOptions& options, std::uint64_t seed, int workers) {
  if (eta_grid.empty()) throw ConfigError("lyapunov_sweep: empty eta grid");
  std::sort(eta_grid.begin(), eta_grid.end());
  LyapunovReport report;
  report.eta = eta_grid;
  report.estimates.resize(eta_grid.size());
  parallel_for(eta_grid.size(), workers, [&](std::size_t i) {
    report.estimates[i] = lyapunov(model, x0, eta_grid[i], options, derive_seed(seed, {i}));
  });
  for (std::size_t i = 0; i < eta_grid.size(); ++i) {
    if (report.estimates[i].lambda > 0.0) {
      report.transition = eta_grid[i];
      break;
    }
  }
  return report;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void write_trajectory_csv(std::ostream& out, const TrajectoryLog& log) {
  out << "step,energy,l2_clean,l2_poisoned\n";
  for (const TrajectoryRecord& r : log.records) {
    out << r.step << ',' << num(r.energy) << ',' << num(r.l2_clean) << ',' << num(r.l2_poisoned) << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const EnergyHistogram& hist) {
  out << "bin_lo,bin_hi,count_clean,count_poisoned,count_purified\n";
  for (std::size_t i = 0; i + 1 < hist.edges.size(); ++i) {
    out << num(hist.edges[i]) << ',' << num(hist.edges[i + 1]) << ',' << hist.clean[i] << ',' << hist.poisoned[i]
        << ',' << hist.purified[i] << '\n';
  }
}

void write_lyapunov_csv(std::ostream& out, const LyapunovReport& report) {
  out << "eta,lambda,stderr\n";
  for (std::size_t i = 0; i < report.eta.size(); ++i) {
    out << num(report.eta[i]) << ',' << num(report.estimates[i].lambda) << ','
        << num(report.estimates[i].std_error) << '\n';
  }
}

}  // namespace puregen::diagnostics
