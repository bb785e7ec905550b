#include "puregen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "puregen/errors.hpp"
#include "puregen/parallel.hpp"

namespace puregen::pipeline {

void PurifyConfig::validate() const {
  if (ebm_steps < 0) throw ConfigError("purify.ebm_steps must be >= 0");
  if (ddpm_steps < 0) throw ConfigError("purify.ddpm_steps must be >= 0");
  if (reps < 1) throw ConfigError("purify.reps must be >= 1");
  if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("purify.k must be in [0, 1]");
  if (!(step_size > 0.0f)) throw ConfigError("purify.step_size must be positive");
  if (!(noise_scale >= 0.0f)) throw ConfigError("purify.noise_scale must be >= 0");
}

std::string PurifyConfig::label() const {
  std::ostringstream out;
  out << "T=[" << ebm_steps << "," << ddpm_steps << "," << reps << "],k=" << k;
  return out.str();
}

PurifyConfig PurifyConfig::ebm() { return PurifyConfig{}; }

PurifyConfig PurifyConfig::ddpm() {
  PurifyConfig c;
  c.ebm_steps = 0;
  c.ddpm_steps = 75;
  return c;
}

PurifyConfig PurifyConfig::naive() {
  PurifyConfig c;
  c.ddpm_steps = 75;
  return c;
}

PurifyConfig PurifyConfig::reps_combo() {
  PurifyConfig c;
  c.ebm_steps = 10;
  c.ddpm_steps = 50;
  c.reps = 5;
  return c;
}

PurifyConfig PurifyConfig::filt() {
  PurifyConfig c;
  c.ebm_steps = 0;
  c.ddpm_steps = 125;
  c.k = 0.5;
  return c;
}

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t image, int rep, Stage stage) {
  return derive_seed(seed, {image, static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(stage)});
}

namespace {

void check_models(const PurifyConfig& config, const Models& models) {
  if (config.ebm_steps > 0 && !models.ebm) throw ConfigError("purify: ebm_steps > 0 but no energy model loaded");
  if (config.ddpm_steps > 0 && (!models.ddpm || !models.schedule)) {
    throw ConfigError("purify: ddpm_steps > 0 but no diffusion model loaded");
  }
}

}  // namespace

Tensor psi(const Tensor& x, const PurifyConfig& config, const Models& models, std::uint64_t image) {
  config.validate();
  check_models(config, models);
  Tensor cur = x;
  for (int rep = 0; rep < config.reps; ++rep) {
    if (config.ebm_steps > 0) {
      ebm::LangevinOptions lo;
      lo.steps = config.ebm_steps;
      lo.step_size = config.step_size;
      lo.noise_scale = config.noise_scale;
      lo.clamp = config.clamp;
      cur = ebm::langevin_purify(*models.ebm, cur, lo, stage_seed(config.seed, image, rep, Stage::kEbm)).image;
    }
    if (config.ddpm_steps > 0) {
      cur = ddpm::ddpm_purify(*models.ddpm, *models.schedule, cur, config.ddpm_steps, {},
                              stage_seed(config.seed, image, rep, Stage::kDdpm))
                .image;
    }
  }
  return cur;
}

std::vector<std::size_t> filter_selection(const Dataset& data, double k, const Models& models, int workers) {
  if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("purify.k must be in [0, 1]");
  const std::size_t n = data.size();
  const auto cut = static_cast<std::size_t>(std::ceil(k * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> chosen;
  if (cut == 0) return chosen;
  if (cut >= n) {
    chosen.resize(n);
    for (std::size_t i = 0; i < n; ++i) chosen[i] = i;
    return chosen;
  }
  if (!models.ebm) throw ConfigError("purify: k < 1 needs an energy model for ranking");
  std::vector<std::size_t> order = ebm::energy_rank(*models.ebm, data.images, workers);
  chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

PurifiedDataset psi_dataset(const Dataset& data, const PurifyConfig& config, const Models& models, int workers) {
  config.validate();
  PurifiedDataset out{data, filter_selection(data, config.k, models, workers)};
  if (out.purified.empty()) return out;
  check_models(config, models);
  parallel_for(out.purified.size(), workers, [&](std::size_t j) {
    const std::size_t i = out.purified[j];
    out.data.images[i] = psi(data.images[i], config, models, i);
  });
  return out;
}

int classify_with_psi(threat::ClassifierEvaluator& classifier, const Tensor& x, const PurifyConfig& config,
                      const Models& models, std::uint64_t image) {
  return classifier.predict(psi(x, config, models, image));
}

}  // namespace puregen::pipeline
