#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "puregen/ddpm.hpp"
#include "puregen/ebm.hpp"
#include "puregen/pipeline.hpp"
#include "puregen/synthetic.hpp"
#include "puregen/threat.hpp"

namespace puregen::io {

// Flat "key = value" text. Keys are dotted paths, '#' starts a comment,
// list values are comma separated. Every typed getter marks its key as used
// so leftovers can be reported as typos.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& context = "config");
  static KeyValues load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool contains(const std::string& key) const { return values_.contains(key); }

  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  std::vector<std::string> unused() const;
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

 private:
  std::string context_ = "config";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

inline const std::vector<std::string> kAllStages = {"make-data", "poison",   "train-ebm", "train-ddpm",
                                                    "purify",    "train-cls", "eval",      "diagnose"};

struct DataConfig {
  std::string source = "textures";  // textures | file
  // source = file: PGTN or CIFAR-10 batches. generative_path defaults to train_path.
  std::string train_path;
  std::string test_path;
  std::string generative_path;
  TextureConfig textures;
  int test_per_class = 64;
  int generative_per_class = 128;
};

struct EbmSection {
  std::string architecture = "convnet";
  int width = 16;
  ebm::EbmTrainConfig train;
};

struct DdpmSection {
  std::string architecture = "unet";
  int width = 16;
  int embed_dim = 32;
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ddpm::DdpmTrainConfig train;
};

struct DiagnoseConfig {
  int samples = 32;
  int bins = 20;
  int ddpm_stride = 5;
  std::vector<double> eta_grid = {0.25, 0.5, 1.0, 2.0, 4.0};
  int lyapunov_steps = 2000;
};

struct RunConfig {
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out = "run";
  int workers = 1;
  std::vector<std::string> stages = kAllStages;
  DataConfig data;
  threat::PoisonSpec poison;
  EbmSection ebm;
  DdpmSection ddpm;
  pipeline::PurifyConfig purify;
  threat::ClassifierTrainConfig classifier;
  DiagnoseConfig diagnose;

  // Throws ConfigError; checks the seed is present and paths are distinct.
  void validate() const;
};

// Defaults are toy scale: 4-class 3x8x8 textures, minutes on one core.
RunConfig default_run_config();

// Unknown keys are a ConfigError.
RunConfig parse_run_config(const KeyValues& kv);
RunConfig load_run_config(const std::string& path);

// Canonical text of every setting; parse_run_config(format) round-trips.
// Without the runtime keys (out, workers) the text depends only on what
// determines the results.
std::string format_run_config(const RunConfig& config, bool include_runtime = true);

}  // namespace puregen::io
