#include "puregen/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "puregen/errors.hpp"
#include "puregen/parallel.hpp"

namespace puregen::io {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(std::string_view(s).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value for " + key + ": '" + text + "'");
  return v;
}

// Shortest text that parses back to the same value.
template <typename T>
std::string format_real(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& context) {
  KeyValues kv;
  kv.context_ = context;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(context + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(context + ":" + std::to_string(lineno) + ": empty key");
    if (kv.values_.contains(key)) throw ConfigError(context + ":" + std::to_string(lineno) + ": duplicate key " + key);
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::vector<char> bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config " + path);
  }
  return parse(std::string_view(bytes.data(), bytes.size()), path);
}

void KeyValues::set(const std::string& key, const std::string& value) { values_[key] = value; }

std::optional<std::string> KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

long long KeyValues::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  return v ? parse_number<long long>(key, *v) : fallback;
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto v = get(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  // "a/b" is accepted so budgets can be written as 8/255.
  if (const auto slash = v->find('/'); slash != std::string::npos) {
    const double num = parse_number<double>(key, trim(std::string_view(*v).substr(0, slash)));
    const double den = parse_number<double>(key, trim(std::string_view(*v).substr(slash + 1)));
    if (den == 0.0) throw ConfigError("config: zero denominator for " + key);
    return num / den;
  }
  return parse_number<double>(key, *v);
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + *v + "'");
}

std::vector<std::string> KeyValues::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
  auto v = get(key);
  return v ? split_list(*v) : fallback;
}

std::vector<double> KeyValues::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(*v)) out.push_back(parse_number<double>(key, item));
  return out;
}

std::vector<std::string> KeyValues::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!used_.contains(k)) out.push_back(k);
  }
  return out;
}

namespace {

// Every setting is listed once here and shared by the reader and writer.
template <typename Visitor>
void visit(RunConfig& c, Visitor&& v) {
  v("stages", c.stages);

  v("data.source", c.data.source);
  v("data.train_path", c.data.train_path);
  v("data.test_path", c.data.test_path);
  v("data.generative_path", c.data.generative_path);
  v("data.classes", c.data.textures.classes);
  v("data.per_class", c.data.textures.per_class);
  v("data.test_per_class", c.data.test_per_class);
  v("data.generative_per_class", c.data.generative_per_class);
  v("data.channels", c.data.textures.channels);
  v("data.height", c.data.textures.height);
  v("data.width", c.data.textures.width);
  v("data.pixel_noise", c.data.textures.pixel_noise);
  v("data.amplitude_min", c.data.textures.amplitude_min);
  v("data.amplitude_max", c.data.textures.amplitude_max);
  v("data.frequency_min", c.data.textures.frequency_min);
  v("data.frequency_max", c.data.textures.frequency_max);
  v("data.orientation_jitter", c.data.textures.orientation_jitter);

  v("poison.kind", c.poison.kind);
  v("poison.xi", c.poison.xi);
  v("poison.alpha", c.poison.alpha);
  v("poison.target_class", c.poison.target_class);

  v("ebm.architecture", c.ebm.architecture);
  v("ebm.width", c.ebm.width);
  v("ebm.steps", c.ebm.train.steps);
  v("ebm.langevin_steps", c.ebm.train.langevin_steps);
  v("ebm.data_noise", c.ebm.train.data_noise);
  v("ebm.step_size", c.ebm.train.step_size);
  v("ebm.noise_scale", c.ebm.train.noise_scale);
  v("ebm.learning_rate", c.ebm.train.learning_rate);
  v("ebm.optimizer", c.ebm.train.optimizer);
  v("ebm.batch", c.ebm.train.batch);
  v("ebm.bank_size", c.ebm.train.bank_size);
  v("ebm.divergence_bound", c.ebm.train.divergence_bound);
  v("ebm.clamp", c.ebm.train.clamp);

  v("ddpm.architecture", c.ddpm.architecture);
  v("ddpm.width", c.ddpm.width);
  v("ddpm.embed_dim", c.ddpm.embed_dim);
  v("ddpm.schedule_steps", c.ddpm.schedule_steps);
  v("ddpm.beta_start", c.ddpm.beta_start);
  v("ddpm.beta_end", c.ddpm.beta_end);
  v("ddpm.train_prefix_steps", c.ddpm.train.train_prefix_steps);
  v("ddpm.epochs", c.ddpm.train.epochs);
  v("ddpm.batch", c.ddpm.train.batch);
  v("ddpm.learning_rate", c.ddpm.train.learning_rate);
  v("ddpm.optimizer", c.ddpm.train.optimizer);
  v("ddpm.divergence_bound", c.ddpm.train.divergence_bound);

  v("purify.ebm_steps", c.purify.ebm_steps);
  v("purify.ddpm_steps", c.purify.ddpm_steps);
  v("purify.reps", c.purify.reps);
  v("purify.k", c.purify.k);
  v("purify.step_size", c.purify.step_size);
  v("purify.noise_scale", c.purify.noise_scale);
  v("purify.clamp", c.purify.clamp);

  v("classifier.epochs", c.classifier.epochs);
  v("classifier.batch", c.classifier.batch);
  v("classifier.learning_rate", c.classifier.learning_rate);
  v("classifier.momentum", c.classifier.momentum);
  v("classifier.weight_decay", c.classifier.weight_decay);
  v("classifier.width", c.classifier.width);
  v("classifier.divergence_bound", c.classifier.divergence_bound);

  v("diagnose.samples", c.diagnose.samples);
  v("diagnose.bins", c.diagnose.bins);
  v("diagnose.ddpm_stride", c.diagnose.ddpm_stride);
  v("diagnose.eta_grid", c.diagnose.eta_grid);
  v("diagnose.lyapunov_steps", c.diagnose.lyapunov_steps);
}

struct Reader {
  const KeyValues& kv;

  void operator()(const std::string& k, std::string& x) const { x = kv.get_string(k, x); }
  void operator()(const std::string& k, int& x) const {
    const long long v = kv.get_int(k, x);
    if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("config: " + k + " out of range");
    x = static_cast<int>(v);
  }
  void operator()(const std::string& k, std::size_t& x) const { x = static_cast<std::size_t>(kv.get_u64(k, x)); }
  void operator()(const std::string& k, double& x) const { x = kv.get_double(k, x); }
  void operator()(const std::string& k, float& x) const { x = static_cast<float>(kv.get_double(k, x)); }
  void operator()(const std::string& k, bool& x) const { x = kv.get_bool(k, x); }
  void operator()(const std::string& k, std::vector<std::string>& x) const { x = kv.get_list(k, x); }
  void operator()(const std::string& k, std::vector<double>& x) const { x = kv.get_doubles(k, x); }
  void operator()(const std::string& k, OptimizerKind& x) const {
    if (auto v = kv.get(k)) x = parse_optimizer(*v);
  }
  void operator()(const std::string& k, threat::PoisonKind& x) const {
    if (auto v = kv.get(k)) x = threat::parse_poison_kind(*v);
  }
};

struct Writer {
  std::ostringstream& out;

  void operator()(const std::string& k, const std::string& x) const { out << k << " = " << x << "\n"; }
  void operator()(const std::string& k, int x) const { out << k << " = " << x << "\n"; }
  void operator()(const std::string& k, std::size_t x) const { out << k << " = " << x << "\n"; }
  void operator()(const std::string& k, double x) const { out << k << " = " << format_real(x) << "\n"; }
  void operator()(const std::string& k, float x) const {
    out << k << " = " << format_real(x) << "\n";
  }
  void operator()(const std::string& k, bool x) const { out << k << " = " << (x ? "true" : "false") << "\n"; }
  void operator()(const std::string& k, const std::vector<std::string>& x) const {
    out << k << " =";
    for (std::size_t i = 0; i < x.size(); ++i) out << (i ? ", " : " ") << x[i];
    out << "\n";
  }
  void operator()(const std::string& k, const std::vector<double>& x) const {
    out << k << " =";
    for (std::size_t i = 0; i < x.size(); ++i) out << (i ? ", " : " ") << format_real(x[i]);
    out << "\n";
  }
  void operator()(const std::string& k, OptimizerKind x) const { out << k << " = " << optimizer_name(x) << "\n"; }
  void operator()(const std::string& k, threat::PoisonKind x) const {
    out << k << " = " << threat::poison_kind_name(x) << "\n";
  }
};

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.data.textures.classes = 4;
  c.data.textures.per_class = 128;

  c.ebm.train.steps = 800;
  c.ebm.train.langevin_steps = 20;
  c.ebm.train.step_size = 5e-5f;
  c.ebm.train.learning_rate = 5e-4f;
  c.ebm.train.optimizer = OptimizerKind::kAdam;

  c.purify.step_size = 5e-5f;
  c.workers = default_workers();
  return c;
}

void RunConfig::validate() const {
  if (!has_seed) throw ConfigError("config: seed is mandatory");
  if (out.empty()) throw ConfigError("config: out must be set");
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (stages.empty()) throw ConfigError("config: no stages requested");
  for (const auto& s : stages) {
    if (std::find(kAllStages.begin(), kAllStages.end(), s) == kAllStages.end()) {
      throw ConfigError("config: unknown stage '" + s + "'");
    }
  }
  if (data.source == "file") {
    if (data.train_path.empty() || data.test_path.empty()) {
      throw ConfigError("config: data.source = file needs data.train_path and data.test_path");
    }
  } else if (data.source != "textures") {
    throw ConfigError("config: data.source must be textures or file");
  }
  std::vector<std::string> paths = {out};
  for (const auto* p : {&data.train_path, &data.test_path, &data.generative_path}) {
    if (!p->empty()) paths.push_back(*p);
  }
  std::vector<std::string> sorted = paths;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("config: referenced paths must be distinct");
  }
  if (data.test_per_class < 1 || data.generative_per_class < 1) {
    throw ConfigError("config: data.test_per_class and data.generative_per_class must be >= 1");
  }
  if (ebm.width < 1 || ddpm.width < 1 || ddpm.embed_dim < 2 || ddpm.embed_dim % 2 != 0) {
    throw ConfigError("config: model widths must be positive and ddpm.embed_dim even");
  }
  if (ddpm.schedule_steps < 1 || !(ddpm.beta_start > 0.0) || !(ddpm.beta_end < 1.0) ||
      !(ddpm.beta_start <= ddpm.beta_end)) {
    throw ConfigError("config: invalid diffusion schedule");
  }
  if (diagnose.samples < 1 || diagnose.bins < 1 || diagnose.ddpm_stride < 1 || diagnose.lyapunov_steps < 10) {
    throw ConfigError("config: invalid diagnose settings");
  }
  if (diagnose.eta_grid.empty()) throw ConfigError("config: diagnose.eta_grid is empty");
  ebm.train.validate();
  ddpm.train.validate(ddpm::make_schedule(ddpm.schedule_steps, ddpm.beta_start, ddpm.beta_end));
  purify.validate();
  poison.validate();
  classifier.validate();
}

RunConfig parse_run_config(const KeyValues& kv) {
  RunConfig c = default_run_config();
  if (auto s = kv.get("seed")) {
    c.seed = kv.get_u64("seed", 0);
    c.has_seed = true;
  }
  c.out = kv.get_string("out", c.out);
  Reader{kv}("workers", c.workers);
  visit(c, Reader{kv});
  if (const auto extra = kv.unused(); !extra.empty()) throw ConfigError("config: unknown key '" + extra.front() + "'");
  return c;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(KeyValues::load(path)); }

std::string format_run_config(const RunConfig& config, bool include_runtime) {
  std::ostringstream out;
  if (config.has_seed) out << "seed = " << config.seed << "\n";
  if (include_runtime) out << "out = " << config.out << "\nworkers = " << config.workers << "\n";
  RunConfig copy = config;
  visit(copy, Writer{out});
  return out.str();
}

}  // namespace puregen::io
