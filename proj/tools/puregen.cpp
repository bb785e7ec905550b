// puregen: poison, purify and evaluate from the command line.
#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "puregen/config.hpp"
#include "puregen/errors.hpp"
#include "puregen/manifest.hpp"
#include "puregen/run.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "Key-value run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Global seed (overrides the config)");
  cmd->add_option("--out", f.out, "Run directory (overrides the config)");
  cmd->add_option("--workers", f.workers, "Worker threads (default: available cores)")->check(CLI::PositiveNumber);
  cmd->add_option("--set", f.overrides, "Override a config key, e.g. --set purify.ebm_steps=50");
  cmd->add_flag("-q,--quiet", f.quiet, "No progress output");
}

puregen::io::RunConfig build_config(const CommonFlags& f, const std::string& stage) {
  using puregen::io::KeyValues;
  KeyValues kv = f.config.empty() ? KeyValues{} : KeyValues::load(f.config);
  for (const auto& o : f.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw puregen::ConfigError("--set expects key=value, got '" + o + "'");
    kv.set(o.substr(0, eq), o.substr(eq + 1));
  }
  if (f.seed) kv.set("seed", std::to_string(*f.seed));
  if (!f.out.empty()) kv.set("out", f.out);
  if (f.workers) kv.set("workers", std::to_string(*f.workers));
  if (stage != "run") kv.set("stages", stage);
  return puregen::io::parse_run_config(kv);
}

int execute(const CommonFlags& f, const std::string& stage) {
  try {
    const auto config = build_config(f, stage);
    puregen::io::RunOptions options;
    if (!f.quiet) options.log = [](const std::string& line) { std::cerr << line << "\n"; };
    const auto result = puregen::io::run(config, options);
    for (const auto& [name, value] : result.metrics) std::cout << name << " " << value << "\n";
    std::cout << "manifest: " << result.manifest.entries.size() << " artifacts in " << config.out << "\n";
    return kOk;
  } catch (const puregen::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const puregen::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const puregen::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

int verify(const std::string& dir) {
  try {
    const auto problems = puregen::io::verify_manifest(dir);
    for (const auto& p : problems) std::cout << p << "\n";
    if (!problems.empty()) return kData;
    std::cout << "ok\n";
    return kOk;
  } catch (const puregen::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative purification against train-time data poisoning"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"make-data", "Write train/test/generative datasets"},
      {"poison", "Inject the configured poison into the training set"},
      {"train-ebm", "Train the energy model on the generative set"},
      {"train-ddpm", "Train the diffusion model on the generative set"},
      {"purify", "Purify the (poisoned) training set"},
      {"train-cls", "Train undefended and defended classifiers"},
      {"eval", "Natural accuracy and poison success rate"},
      {"diagnose", "Energy histogram, l2 trajectories, Lyapunov sweep"},
      {"run", "All stages listed in the config"},
  };
  CommonFlags flags;
  std::string selected;
  for (const auto& [name, help] : stages) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, flags);
    cmd->callback([&selected, n = name] { selected = n; });
  }
  std::string verify_dir;
  CLI::App* ver = app.add_subcommand("verify", "Check artifacts against the run manifest");
  ver->add_option("dir", verify_dir, "Run directory")->required();
  ver->add_flag("-q,--quiet", flags.quiet, "Accepted for symmetry; verify prints only problems");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  if (ver->parsed()) return verify(verify_dir);
  return execute(flags, selected);
}
