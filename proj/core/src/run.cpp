#include "puregen/run.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "puregen/checkpoint.hpp"
#include "puregen/dataset_io.hpp"
#include "puregen/diagnostics.hpp"
#include "puregen/errors.hpp"
#include "puregen/parallel.hpp"

namespace puregen::io {

namespace fs = std::filesystem;

namespace {

// Stream keys under the global seed.
enum SeedKey : std::uint64_t {
  kSeedTrain = 1,
  kSeedTest,
  kSeedGenerative,
  kSeedPoison,
  kSeedEbmInit,
  kSeedEbmTrain,
  kSeedDdpmInit,
  kSeedDdpmTrain,
  kSeedPurify,
  kSeedUndefended,
  kSeedDefended,
  kSeedDiagnose,
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& text, const std::string& context) {
  Shape s;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      s.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw DataError(context + ": bad input_shape '" + text + "'");
    }
  }
  if (s.size() != 3) throw DataError(context + ": bad input_shape '" + text + "'");
  return s;
}

const std::string& field(const std::map<std::string, std::string>& m, const std::string& key,
                         const std::string& context) {
  auto it = m.find(key);
  if (it == m.end()) throw DataError(context + ": missing '" + key + "'");
  return it->second;
}

int int_field(const std::map<std::string, std::string>& m, const std::string& key, const std::string& context) {
  try {
    return std::stoi(field(m, key, context));
  } catch (const std::invalid_argument&) {
    throw DataError(context + ": bad '" + key + "'");
  }
}

double real_field(const std::map<std::string, std::string>& m, const std::string& key, const std::string& context) {
  try {
    return std::stod(field(m, key, context));
  } catch (const std::invalid_argument&) {
    throw DataError(context + ": bad '" + key + "'");
  }
}

class RunDir {
 public:
  explicit RunDir(std::string root) : root_(std::move(root)) {}

  std::string path(const char* rel) const { return (fs::path(root_) / rel).string(); }
  bool exists(const char* rel) const { return fs::exists(path(rel)); }

  std::string prepare(const char* rel) const {
    const fs::path p = fs::path(root_) / rel;
    fs::create_directories(p.parent_path());
    return p.string();
  }

  void write_text(const char* rel, const std::string& text) const {
    detail::write_file(prepare(rel), std::vector<char>(text.begin(), text.end()));
  }

  Dataset dataset(const char* rel) const {
    if (!exists(rel)) throw DataError("missing " + path(rel) + " (run the stage that produces it first)");
    return load_dataset(path(rel));
  }

  void save(const Dataset& d, const char* rel) const { save_dataset(d, prepare(rel)); }

 private:
  std::string root_;
};

void save_model(const RunDir& dir, const char* rel, const ParameterSet& params,
                std::map<std::string, std::string> fields) {
  const std::string p = dir.prepare(rel);
  save_checkpoint(params, p);
  write_sidecar(sidecar_path(p), fields);
}

// Sidecar config echo: every key of the given section.
void echo_section(std::map<std::string, std::string>& fields, const RunConfig& config, const std::string& prefix) {
  const KeyValues kv = KeyValues::parse(format_run_config(config, false));
  for (const auto& [k, v] : kv.entries()) {
    if (k.starts_with(prefix)) fields["config." + k] = v;
  }
}

Tensor poisoned_probe(const Tensor& x, const threat::PoisonSpec& spec) {
  return threat::apply_trigger(x, threat::checkerboard_trigger(x.shape(), spec.xi));
}

struct Context {
  const RunConfig& config;
  RunDir dir;
  const RunOptions& options;
  RunResult& result;

  std::uint64_t seed(SeedKey key) const { return derive_seed(config.seed, {key}); }
  void log(const std::string& line) const {
    if (options.log) options.log(line);
  }
};

void stage_make_data(const Context& c) {
  const DataConfig& d = c.config.data;
  Dataset train, test, gen;
  if (d.source == "textures") {
    TextureConfig t = d.textures;
    t.seed = c.seed(kSeedTrain);
    train = make_textures(t, "train");
    t.per_class = d.test_per_class;
    t.seed = c.seed(kSeedTest);
    test = make_textures(t, "test");
    t.per_class = d.generative_per_class;
    t.seed = c.seed(kSeedGenerative);
    gen = make_textures(t, "generative");
  } else {
    train = load_dataset(d.train_path);
    test = load_dataset(d.test_path);
    gen = load_dataset(d.generative_path.empty() ? d.train_path : d.generative_path);
    if (test.image_shape != train.image_shape || gen.image_shape != train.image_shape) {
      throw DataError("train, test and generative sets differ in image shape");
    }
  }
  c.dir.save(train, artifacts::kTrain);
  c.dir.save(test, artifacts::kTest);
  c.dir.save(gen, artifacts::kGenerative);
  c.log("make-data: train " + std::to_string(train.size()) + ", test " + std::to_string(test.size()) +
        ", generative " + std::to_string(gen.size()));
}

void stage_poison(const Context& c) {
  const Dataset train = c.dir.dataset(artifacts::kTrain);
  threat::PoisonSpec spec = c.config.poison;
  spec.seed = c.seed(kSeedPoison);
  const threat::PoisonResult r = threat::inject(train, spec);
  for (const auto& w : r.warnings) c.log("poison: warning: " + w);
  c.dir.save(r.data, artifacts::kPoisoned);
  std::string idx = "index\n";
  for (std::size_t i : r.poisoned) idx += std::to_string(i) + "\n";
  c.dir.write_text(artifacts::kPoisonIndices, idx);
  if (spec.kind == threat::PoisonKind::kTriggered) {
    // Stored shifted into [0,1] as (rho + xi) / (2 xi) so it is a valid PGTN image.
    Dataset t{"trigger", train.image_shape, 1, {}, {0}};
    Tensor img = r.trigger;
    for (float& v : img.data()) v = spec.xi > 0.0f ? (v + spec.xi) / (2.0f * spec.xi) : 0.5f;
    t.images.push_back(std::move(img));
    c.dir.save(t, artifacts::kTrigger);
  }
  c.log("poison: " + std::to_string(r.poisoned.size()) + " images of class " + std::to_string(spec.target_class));
}

void stage_train_ebm(const Context& c) {
  const Dataset gen = c.dir.dataset(artifacts::kGenerative);
  const EbmSection& s = c.config.ebm;
  ebm::EnergyModel model;
  if (s.architecture == "convnet" || s.architecture == "convnet-silu") {
    model = ebm::make_convnet_energy(gen.image_shape, c.seed(kSeedEbmInit), s.width,
                                     s.architecture == "convnet" ? ebm::Activation::kLeakyRelu
                                                                 : ebm::Activation::kSilu);
  } else {
    throw ConfigError("ebm.architecture must be convnet or convnet-silu");
  }
  ebm::EbmTrainConfig tc = s.train;
  tc.seed = c.seed(kSeedEbmTrain);
  tc.workers = c.config.workers;
  const int every = std::max(1, tc.steps / 10);
  auto result = ebm::train_ebm(gen, tc, std::move(model), [&](const ebm::EbmStepStats& st) {
    if ((st.step + 1) % every == 0) {
      c.log("train-ebm: step " + std::to_string(st.step + 1) + " G+ " + num(st.positive_energy) + " G- " +
            num(st.negative_energy));
    }
  });
  std::map<std::string, std::string> fields{{"architecture", result.model.architecture},
                                            {"input_shape", shape_text(result.model.input_shape)},
                                            {"width", std::to_string(s.width)}};
  echo_section(fields, c.config, "ebm.");
  save_model(c.dir, artifacts::kEbm, result.model.graph.parameters(), fields);
  std::string hist = "step,positive_energy,negative_energy\n";
  for (const auto& st : result.history) {
    hist += std::to_string(st.step) + "," + num(st.positive_energy) + "," + num(st.negative_energy) + "\n";
  }
  c.dir.write_text(artifacts::kEbmHistory, hist);
}

void stage_train_ddpm(const Context& c) {
  const Dataset gen = c.dir.dataset(artifacts::kGenerative);
  const DdpmSection& s = c.config.ddpm;
  if (s.architecture != "unet") throw ConfigError("ddpm.architecture must be unet");
  const ddpm::NoiseSchedule schedule = ddpm::make_schedule(s.schedule_steps, s.beta_start, s.beta_end);
  ddpm::DdpmTrainConfig tc = s.train;
  tc.seed = c.seed(kSeedDdpmTrain);
  tc.workers = c.config.workers;
  auto model = ddpm::make_unet(gen.image_shape, c.seed(kSeedDdpmInit), s.width, s.embed_dim);
  int last_epoch = -1;
  auto result = ddpm::train_ddpm(gen, schedule, tc, std::move(model), [&](const ddpm::DdpmStepStats& st) {
    if (st.epoch != last_epoch) {
      last_epoch = st.epoch;
      c.log("train-ddpm: epoch " + std::to_string(st.epoch + 1) + " loss " + num(st.loss));
    }
  });
  std::map<std::string, std::string> fields{{"architecture", result.model.architecture},
                                            {"input_shape", shape_text(result.model.input_shape)},
                                            {"width", std::to_string(s.width)},
                                            {"embed_dim", std::to_string(s.embed_dim)},
                                            {"schedule.steps", std::to_string(s.schedule_steps)},
                                            {"schedule.beta_start", num(s.beta_start)},
                                            {"schedule.beta_end", num(s.beta_end)},
                                            {"schedule.train_prefix_steps", std::to_string(tc.train_prefix_steps)}};
  echo_section(fields, c.config, "ddpm.");
  save_model(c.dir, artifacts::kDdpm, result.model.graph.parameters(), fields);
  std::string hist = "step,epoch,loss\n";
  for (const auto& st : result.history) {
    hist += std::to_string(st.step) + "," + std::to_string(st.epoch) + "," + num(st.loss) + "\n";
  }
  c.dir.write_text(artifacts::kDdpmHistory, hist);
}

// Generative models a purification config needs, loaded from the run directory.
struct LoadedModels {
  std::optional<ebm::EnergyModel> ebm;
  std::optional<ddpm::DdpmModel> ddpm;
  ddpm::NoiseSchedule schedule;

  pipeline::Models view() const {
    return {ebm ? &*ebm : nullptr, ddpm ? &*ddpm : nullptr, ddpm ? &schedule : nullptr};
  }
};

LoadedModels load_models(const Context& c, bool need_ebm, bool need_ddpm) {
  LoadedModels m;
  if (need_ebm) {
    if (!c.dir.exists(artifacts::kEbm)) throw DataError("missing " + c.dir.path(artifacts::kEbm) + " (run train-ebm)");
    m.ebm = load_energy_model(c.dir.path(artifacts::kEbm));
  }
  if (need_ddpm) {
    if (!c.dir.exists(artifacts::kDdpm)) {
      throw DataError("missing " + c.dir.path(artifacts::kDdpm) + " (run train-ddpm)");
    }
    m.ddpm = load_ddpm_model(c.dir.path(artifacts::kDdpm), &m.schedule);
  }
  return m;
}

pipeline::PurifyConfig purify_config(const Context& c) {
  pipeline::PurifyConfig p = c.config.purify;
  p.seed = c.seed(kSeedPurify);
  return p;
}

const char* training_set(const Context& c) {
  return c.dir.exists(artifacts::kPoisoned) ? artifacts::kPoisoned : artifacts::kTrain;
}

void stage_purify(const Context& c) {
  const pipeline::PurifyConfig p = purify_config(c);
  const Dataset input = c.dir.dataset(training_set(c));
  const bool ranks = p.k > 0.0 && p.k < 1.0;
  const bool touches = p.k > 0.0;
  const LoadedModels m = load_models(c, ranks || (touches && p.ebm_steps > 0), touches && p.ddpm_steps > 0);
  const auto out = pipeline::psi_dataset(input, p, m.view(), c.config.workers);
  c.dir.save(out.data, artifacts::kPurified);
  std::string idx = "index\n";
  for (std::size_t i : out.purified) idx += std::to_string(i) + "\n";
  c.dir.write_text(artifacts::kPurifiedIndices, idx);
  c.log("purify: " + p.label() + " on " + std::to_string(out.purified.size()) + " of " +
        std::to_string(input.size()) + " images");
}

void train_one(const Context& c, const char* data_rel, const char* model_rel, SeedKey key, const char* name) {
  const Dataset data = c.dir.dataset(data_rel);
  threat::ClassifierTrainConfig tc = c.config.classifier;
  tc.seed = c.seed(key);
  tc.workers = c.config.workers;
  int last_epoch = -1;
  const auto model = threat::train_classifier(data, tc, [&](const threat::ClassifierStepStats& st) {
    if (st.epoch != last_epoch && (st.epoch + 1) % 10 == 0) {
      last_epoch = st.epoch;
      c.log(std::string("train-cls: ") + name + " epoch " + std::to_string(st.epoch + 1) + " loss " + num(st.loss));
    }
  });
  std::map<std::string, std::string> fields{{"architecture", "classifier"},
                                            {"input_shape", shape_text(model.input_shape)},
                                            {"classes", std::to_string(model.classes)},
                                            {"width", std::to_string(tc.width)},
                                            {"training_set", data_rel}};
  echo_section(fields, c.config, "classifier.");
  save_model(c.dir, model_rel, model.graph.parameters(), fields);
}

void stage_train_cls(const Context& c) {
  train_one(c, training_set(c), artifacts::kUndefended, kSeedUndefended, "undefended");
  if (c.dir.exists(artifacts::kPurified)) train_one(c, artifacts::kPurified, artifacts::kDefended, kSeedDefended, "defended");
}

void stage_eval(const Context& c) {
  const Dataset test = c.dir.dataset(artifacts::kTest);
  const threat::PoisonSpec& spec = c.config.poison;
  if (spec.target_class >= test.class_count) throw ConfigError("poison.target_class is not a test-set class");
  std::string csv = "classifier,natural_accuracy,psr\n";
  bool any = false;
  for (const auto& [name, rel] : {std::pair{"undefended", artifacts::kUndefended},
                                  std::pair{"defended", artifacts::kDefended}}) {
    if (!c.dir.exists(rel)) continue;
    any = true;
    const threat::Classifier model = load_classifier(c.dir.path(rel));
    const double acc = threat::natural_accuracy(model, test, c.config.workers);
    double psr = 0.0;
    if (spec.kind == threat::PoisonKind::kTriggered) {
      psr = threat::psr_triggered(model, test, threat::checkerboard_trigger(test.image_shape, spec.xi),
                                  spec.target_class, c.config.workers);
    } else {
      // No crafted targets here: every non-target test image is a target.
      std::vector<Tensor> targets;
      for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.labels[i] != spec.target_class) targets.push_back(test.images[i]);
      }
      if (targets.empty()) throw DataError("no test image outside the target class");
      psr = threat::psr_triggerless(model, targets, std::vector<int>(targets.size(), spec.target_class),
                                    c.config.workers);
    }
    csv += std::string(name) + "," + num(acc) + "," + num(psr) + "\n";
    c.result.metrics[std::string(name) + ".natural_accuracy"] = acc;
    c.result.metrics[std::string(name) + ".psr"] = psr;
    c.log(std::string("eval: ") + name + " accuracy " + num(acc) + " psr " + num(psr));
  }
  if (!any) throw DataError("no classifier checkpoints in " + c.dir.path("models"));
  c.dir.write_text(artifacts::kMetrics, csv);
}

void write_csv(const Context& c, const char* rel, const std::function<void(std::ostream&)>& body) {
  std::ostringstream out;
  body(out);
  c.dir.write_text(rel, out.str());
}

void stage_diagnose(const Context& c) {
  const Dataset test = c.dir.dataset(artifacts::kTest);
  const bool have_ddpm = c.dir.exists(artifacts::kDdpm);
  const pipeline::PurifyConfig p = purify_config(c);
  const LoadedModels m = load_models(c, true, have_ddpm);
  const pipeline::Models view = m.view();
  const int workers = c.config.workers;

  const std::size_t n = std::min<std::size_t>(test.size(), static_cast<std::size_t>(c.config.diagnose.samples));
  std::vector<Tensor> clean(test.images.begin(), test.images.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<Tensor> poisoned(n), purified(n);
  parallel_for(n, workers, [&](std::size_t i) { poisoned[i] = poisoned_probe(clean[i], c.config.poison); });
  const bool can_purify = (p.ebm_steps == 0 || view.ebm) && (p.ddpm_steps == 0 || view.ddpm);
  if (!can_purify) throw DataError("diagnose: purification config needs a diffusion model (run train-ddpm)");
  parallel_for(n, workers, [&](std::size_t i) { purified[i] = pipeline::psi(poisoned[i], p, view, i); });

  const auto hist = diagnostics::energy_histogram(*view.ebm, clean, poisoned, purified, c.config.diagnose.bins, workers);
  write_csv(c, artifacts::kHistogram, [&](std::ostream& o) { diagnostics::write_histogram_csv(o, hist); });
  c.log("diagnose: mean energy clean " + num(hist.mean_clean) + " poisoned " + num(hist.mean_poisoned) +
        " purified " + num(hist.mean_purified));

  struct Probe {
    const char* name;
    const char* trajectory;
    pipeline::PurifyConfig config;
  };
  std::vector<Probe> probes;
  pipeline::PurifyConfig pe = p;
  pe.ddpm_steps = 0;
  pe.reps = 1;
  pe.k = 1.0;
  pe.ebm_steps = std::max(p.ebm_steps, 1);
  probes.push_back({"ebm", artifacts::kTrajectoryEbm, pe});
  if (have_ddpm) {
    pipeline::PurifyConfig pd = p;
    pd.ebm_steps = 0;
    pd.reps = 1;
    pd.k = 1.0;
    pd.ddpm_steps = std::max(p.ddpm_steps, 1);
    probes.push_back({"ddpm", artifacts::kTrajectoryDdpm, pd});
  }
  std::string crossover = "model,image,crossover_step\n";
  for (const Probe& probe : probes) {
    std::vector<diagnostics::L2Trajectory> logs(n);
    parallel_for(n, workers, [&](std::size_t i) {
      pipeline::PurifyConfig pc = probe.config;
      pc.seed = derive_seed(pc.seed, {i});
      logs[i] = diagnostics::l2_trajectory(view, pc, clean[i], poisoned[i], c.config.diagnose.ddpm_stride);
    });
    std::size_t found = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto step = diagnostics::crossover_step(logs[i].poisoned);
      if (step) ++found;
      crossover += std::string(probe.name) + "," + std::to_string(i) + "," + (step ? std::to_string(*step) : "") + "\n";
    }
    write_csv(c, probe.trajectory, [&](std::ostream& o) { diagnostics::write_trajectory_csv(o, logs[0].poisoned); });
    c.log(std::string("diagnose: ") + probe.name + " crossover in " + std::to_string(found) + " of " +
          std::to_string(n));
  }
  c.dir.write_text(artifacts::kCrossover, crossover);

  diagnostics::LyapunovOptions lo;
  lo.steps = c.config.diagnose.lyapunov_steps;
  lo.step_size = p.step_size;
  const std::uint64_t lseed = c.seed(kSeedDiagnose);
  const auto lc = diagnostics::lyapunov_sweep(*view.ebm, clean[0], c.config.diagnose.eta_grid, lo, lseed, workers);
  const auto lp = diagnostics::lyapunov_sweep(*view.ebm, poisoned[0], c.config.diagnose.eta_grid, lo, lseed, workers);
  write_csv(c, artifacts::kLyapunovClean, [&](std::ostream& o) { diagnostics::write_lyapunov_csv(o, lc); });
  write_csv(c, artifacts::kLyapunovPoisoned, [&](std::ostream& o) { diagnostics::write_lyapunov_csv(o, lp); });
}

using StageFn = void (*)(const Context&);

StageFn stage_fn(const std::string& name) {
  if (name == "make-data") return stage_make_data;
  if (name == "poison") return stage_poison;
  if (name == "train-ebm") return stage_train_ebm;
  if (name == "train-ddpm") return stage_train_ddpm;
  if (name == "purify") return stage_purify;
  if (name == "train-cls") return stage_train_cls;
  if (name == "eval") return stage_eval;
  if (name == "diagnose") return stage_diagnose;
  throw ConfigError("unknown stage '" + name + "'");
}

void run_stage(const std::string& name, const Context& c) {
  const std::string prefix = "stage " + name + ": ";
  try {
    stage_fn(name)(c);
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const DivergenceError& e) {
    throw DivergenceError(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(prefix + e.what());
  }
}

}  // namespace

std::string sidecar_path(const std::string& checkpoint) { return checkpoint + ".txt"; }

ebm::EnergyModel load_energy_model(const std::string& checkpoint) {
  const std::string sc = sidecar_path(checkpoint);
  const auto f = read_sidecar(sc);
  ebm::EnergyModel model = ebm::make_energy(field(f, "architecture", sc), parse_shape(field(f, "input_shape", sc), sc),
                                            int_field(f, "width", sc));
  assign_parameters(model.graph, load_checkpoint(checkpoint));
  return model;
}

ddpm::DdpmModel load_ddpm_model(const std::string& checkpoint, ddpm::NoiseSchedule* schedule) {
  const std::string sc = sidecar_path(checkpoint);
  const auto f = read_sidecar(sc);
  ddpm::DdpmModel model = ddpm::make_ddpm(field(f, "architecture", sc), parse_shape(field(f, "input_shape", sc), sc),
                                          int_field(f, "width", sc), int_field(f, "embed_dim", sc));
  assign_parameters(model.graph, load_checkpoint(checkpoint));
  if (schedule) {
    *schedule = ddpm::make_schedule(int_field(f, "schedule.steps", sc), real_field(f, "schedule.beta_start", sc),
                                    real_field(f, "schedule.beta_end", sc));
  }
  return model;
}

threat::Classifier load_classifier(const std::string& checkpoint) {
  const std::string sc = sidecar_path(checkpoint);
  const auto f = read_sidecar(sc);
  if (field(f, "architecture", sc) != "classifier") throw DataError(sc + ": not a classifier");
  threat::Classifier model = threat::make_classifier(parse_shape(field(f, "input_shape", sc), sc),
                                                     int_field(f, "classes", sc), 0, int_field(f, "width", sc));
  assign_parameters(model.graph, load_checkpoint(checkpoint));
  return model;
}

RunResult run(const RunConfig& config, const RunOptions& options) {
  config.validate();
  RunResult result;
  Context c{config, RunDir(config.out), options, result};
  fs::create_directories(config.out);
  c.dir.write_text(artifacts::kConfig, format_run_config(config, false));

  std::vector<std::string> ordered;
  for (const auto& s : kAllStages) {
    if (std::find(config.stages.begin(), config.stages.end(), s) != config.stages.end()) ordered.push_back(s);
  }
  auto refresh = [&] {
    result.manifest = scan_directory(config.out);
    write_manifest(config.out, result.manifest);
  };
  try {
    for (const auto& s : ordered) {
      c.log("== " + s);
      run_stage(s, c);
      result.stages.push_back(s);
    }
  } catch (...) {
    refresh();
    throw;
  }
  refresh();
  return result;
}

}  // namespace puregen::io
