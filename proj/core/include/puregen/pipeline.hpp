#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puregen/dataset.hpp"
#include "puregen/ddpm.hpp"
#include "puregen/ebm.hpp"
#include "puregen/threat.hpp"

namespace puregen::pipeline {

// Psi_{T,k}: T = (ebm_steps, ddpm_steps, reps) plus filter fraction k.
struct PurifyConfig {
  int ebm_steps = 150;
  int ddpm_steps = 0;
  int reps = 1;
  double k = 1.0;
  float step_size = 0.01f;  // Langevin dtau
  float noise_scale = 1.0f;  // eta
  bool clamp = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::string label() const;  // e.g. "T=[150,0,1],k=1"

  static PurifyConfig ebm();    // (150, 0, 1)
  static PurifyConfig ddpm();   // (0, 75, 1)
  static PurifyConfig naive();  // (150, 75, 1)
  static PurifyConfig reps_combo();  // (10, 50, 5)
  static PurifyConfig filt();   // (0, 125, 1), k = 0.5
};

// Borrowed models; any may be null when its stage is unused.
struct Models {
  const ebm::EnergyModel* ebm = nullptr;
  const ddpm::DdpmModel* ddpm = nullptr;
  const ddpm::NoiseSchedule* schedule = nullptr;
};

enum class Stage : std::uint64_t { kEbm = 1, kDdpm = 2 };

// Noise stream for one stage of one repetition of one image.
std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t image, int rep, Stage stage);

// Repeats [ebm_steps Langevin steps, then ddpm_steps diffusion purification]
// `reps` times. `image` keys the noise stream so results do not depend on
// scheduling. Ignores k.
Tensor psi(const Tensor& x, const PurifyConfig& config, const Models& models, std::uint64_t image = 0);

struct PurifiedDataset {
  Dataset data;
  std::vector<std::size_t> purified;  // ascending indices that went through psi
};

// Ranks by energy, purifies the top ceil(k N), passes the rest through
// untouched. Order and labels are preserved.
PurifiedDataset psi_dataset(const Dataset& data, const PurifyConfig& config, const Models& models,
                            int workers = 1);

// Indices selected by the k-filter, ascending.
std::vector<std::size_t> filter_selection(const Dataset& data, double k, const Models& models, int workers = 1);

// Point estimate f(psi(x)).
int classify_with_psi(threat::ClassifierEvaluator& classifier, const Tensor& x, const PurifyConfig& config,
                      const Models& models, std::uint64_t image = 0);

}  // namespace puregen::pipeline
