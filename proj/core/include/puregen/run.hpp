#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "puregen/config.hpp"
#include "puregen/manifest.hpp"

namespace puregen::io {

// Files written under RunConfig::out, relative paths.
namespace artifacts {
inline constexpr char kConfig[] = "config.txt";
inline constexpr char kTrain[] = "data/train.pgtn";
inline constexpr char kTest[] = "data/test.pgtn";
inline constexpr char kGenerative[] = "data/generative.pgtn";
inline constexpr char kPoisoned[] = "data/train_poisoned.pgtn";
inline constexpr char kPoisonIndices[] = "poison/indices.csv";
inline constexpr char kTrigger[] = "poison/trigger.pgtn";
inline constexpr char kEbm[] = "models/ebm.pgck";
inline constexpr char kEbmHistory[] = "models/ebm_history.csv";
inline constexpr char kDdpm[] = "models/ddpm.pgck";
inline constexpr char kDdpmHistory[] = "models/ddpm_history.csv";
inline constexpr char kPurified[] = "data/train_purified.pgtn";
inline constexpr char kPurifiedIndices[] = "purify/selected.csv";
inline constexpr char kUndefended[] = "models/classifier_undefended.pgck";
inline constexpr char kDefended[] = "models/classifier_defended.pgck";
inline constexpr char kMetrics[] = "metrics.csv";
inline constexpr char kHistogram[] = "diagnostics/energy_histogram.csv";
inline constexpr char kCrossover[] = "diagnostics/crossover.csv";
inline constexpr char kTrajectoryEbm[] = "diagnostics/trajectory_ebm.csv";
inline constexpr char kTrajectoryDdpm[] = "diagnostics/trajectory_ddpm.csv";
inline constexpr char kLyapunovClean[] = "diagnostics/lyapunov_clean.csv";
inline constexpr char kLyapunovPoisoned[] = "diagnostics/lyapunov_poisoned.csv";
}  // namespace artifacts

// Checkpoint sidecars live at "<checkpoint>.txt".
std::string sidecar_path(const std::string& checkpoint);

struct RunOptions {
  std::function<void(const std::string&)> log;  // progress lines, never written to artifacts
};

struct RunResult {
  std::vector<std::string> stages;
  std::map<std::string, double> metrics;  // "<classifier>.natural_accuracy", "<classifier>.psr"
  Manifest manifest;
};

// Runs config.stages in pipeline order. A stage reads what earlier stages
// (in this or a previous run) left in config.out. Failures are rethrown as
// the same error kind prefixed with "stage <name>: "; artifacts written so
// far stay on disk and the manifest is refreshed either way.
RunResult run(const RunConfig& config, const RunOptions& options = {});

// Loaders for artifacts in a run directory.
ebm::EnergyModel load_energy_model(const std::string& checkpoint);
ddpm::DdpmModel load_ddpm_model(const std::string& checkpoint, ddpm::NoiseSchedule* schedule = nullptr);
threat::Classifier load_classifier(const std::string& checkpoint);

}  // namespace puregen::io
