#include "puregen/ebm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "puregen/parallel.hpp"

namespace puregen::ebm {

EnergyModel make_convnet_energy(const Shape& input_shape, std::uint64_t seed, int width, Activation activation) {
  if (input_shape.size() != 3) throw ConfigError("energy model needs a (C,H,W) input shape");
  if (width < 1) throw ConfigError("energy model width must be positive");
  GraphBuilder b(seed);
  auto act = [&](int v) { return activation == Activation::kSilu ? b.silu(v) : b.leaky_relu(v, 0.2f); };
  int x = b.input(input_shape);
  x = act(b.conv2d(x, "conv1", width, 3, 1, 1));
  x = act(b.conv2d(x, "conv2", 2 * width, 3, 2, 1));
  x = act(b.conv2d(x, "conv3", 4 * width, 3, 2, 1));
  x = b.conv2d(x, "conv4", 1, 3, 1, 1);
  const int out = b.sum(x);
  return EnergyModel{activation == Activation::kSilu ? "convnet-silu" : "convnet", input_shape,
                     std::move(b).build(out)};
}

EnergyModel make_quadratic_energy(const Shape& input_shape, float curvature) {
  GraphBuilder b(0);
  const int x = b.input(input_shape);
  const int out = b.scale(b.sum(b.mul(x, x)), 0.5f * curvature);
  return EnergyModel{"quadratic", input_shape, std::move(b).build(out)};
}

EnergyModel make_energy(const std::string& architecture, const Shape& input_shape, int width, float curvature) {
  if (architecture == "convnet") return make_convnet_energy(input_shape, 0, width);
  if (architecture == "convnet-silu") return make_convnet_energy(input_shape, 0, width, Activation::kSilu);
  if (architecture == "quadratic") return make_quadratic_energy(input_shape, curvature);
  throw ConfigError("unknown energy architecture: " + architecture);
}

double energy(const EnergyModel& model, const Tensor& x) {
  EnergyEvaluator eval(model);
  return eval.energy(x);
}

void langevin_chain(EnergyEvaluator& eval, Tensor& x, int steps, float step_size, float noise_scale,
                    bool clamp, NoiseSource& noise) {
  Tensor grad;
  std::vector<float> eps(x.size());
  const float amp = noise_scale * std::sqrt(2.0f * step_size);
  for (int s = 0; s < steps; ++s) {
    const float e = eval.energy_and_grad(x, grad);
    if (!std::isfinite(e) || !grad.all_finite()) {
      std::ostringstream msg;
      msg << "langevin step " << s << ": non-finite gradient (energy " << e << ")";
      throw DivergenceError(msg.str());
    }
    noise.fill_normal(std::span<float>(eps));
    auto xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] += -step_size * grad[i] + amp * eps[i];
    if (clamp) clamp_unit(xv);
  }
}

LangevinResult langevin_purify(const EnergyModel& model, const Tensor& x, const LangevinOptions& options,
                               NoiseSource& noise) {
  if (options.steps < 0) throw ConfigError("langevin: steps must be >= 0");
  if (!(options.step_size > 0.0f)) throw ConfigError("langevin: step size must be positive");
  if (!(options.noise_scale >= 0.0f)) throw ConfigError("langevin: noise scale must be >= 0");
  if (x.shape() != model.input_shape) {
    throw ConfigError("langevin: image shape " + shape_to_string(x.shape()) + " does not match model");
  }
  LangevinResult result{x, {}};
  if (options.steps == 0 && !options.record) return result;

  EnergyEvaluator eval(model);
  const Tensor& clean = options.clean_reference ? *options.clean_reference : x;
  const Tensor& poisoned = options.poisoned_reference ? *options.poisoned_reference : x;
  Tensor& cur = result.image;
  Tensor grad;
  std::vector<float> eps(cur.size());
  const float amp = options.noise_scale * std::sqrt(2.0f * options.step_size);
  for (int s = 0;; ++s) {
    const bool last = s == options.steps;
    float e;
    if (last) {
      if (!options.record) break;
      e = eval.energy(cur);
    } else {
      e = eval.energy_and_grad(cur, grad);
      if (!std::isfinite(e) || !grad.all_finite()) {
        std::ostringstream msg;
        msg << "langevin step " << s << ": non-finite gradient (energy " << e << ")";
        throw DivergenceError(msg.str());
      }
    }
    if (options.record) {
      result.log.records.push_back({s, e, l2_distance(cur, clean), l2_distance(cur, poisoned)});
    }
    if (last) break;
    noise.fill_normal(std::span<float>(eps));
    auto xv = cur.data();
    for (std::size_t i = 0; i < xv.size(); ++i) xv[i] += -options.step_size * grad[i] + amp * eps[i];
    if (options.clamp) clamp_unit(xv);
  }
  return result;
}

LangevinResult langevin_purify(const EnergyModel& model, const Tensor& x, const LangevinOptions& options,
                               std::uint64_t seed) {
  GaussianNoise noise(seed);
  return langevin_purify(model, x, options, noise);
}

PersistentBank::PersistentBank(std::size_t size, const Shape& image_shape, std::uint64_t seed) {
  if (size == 0) throw ConfigError("persistent bank must have at least one slot");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  images_.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    Tensor t(image_shape);
    for (float& v : t.data()) v = uni(rng);
    images_.push_back(std::move(t));
  }
  initialized_.assign(size, 1);
}

std::vector<std::size_t> PersistentBank::draw(std::size_t m, std::mt19937_64& rng) const {
  if (m > images_.size()) throw ConfigError("bank draw larger than bank");
  // Partial Fisher-Yates over slot ids.
  std::vector<std::size_t> ids(images_.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(m);
  return ids;
}

const Tensor& PersistentBank::read(std::size_t slot) {
  if (!initialized_.at(slot)) throw ContractError("persistent bank slot read before initialization");
  ++reads_;
  return images_[slot];
}

void PersistentBank::store(std::size_t slot, Tensor image) {
  if (image.shape() != images_.at(slot).shape()) throw ContractError("bank image shape mismatch");
  images_[slot] = std::move(image);
  initialized_[slot] = 1;
}

std::size_t PersistentBank::initialized_count() const {
  return static_cast<std::size_t>(std::count(initialized_.begin(), initialized_.end(), char{1}));
}

void EbmTrainConfig::validate() const {
  if (steps < 0) throw ConfigError("ebm.steps must be >= 0");
  if (langevin_steps < 1) throw ConfigError("ebm.langevin_steps must be >= 1");
  if (batch < 1) throw ConfigError("ebm.batch must be >= 1");
  if (!(data_noise >= 0.0f)) throw ConfigError("ebm.data_noise must be >= 0");
  if (!(step_size > 0.0f)) throw ConfigError("ebm.step_size must be positive");
  if (!(learning_rate >= 0.0f)) throw ConfigError("ebm.learning_rate must be >= 0");
  if (!(noise_scale >= 0.0f)) throw ConfigError("ebm.noise_scale must be >= 0");
  if (!(divergence_bound > 0.0)) throw ConfigError("ebm.divergence_bound must be positive");
}

EbmTrainResult train_ebm(const Dataset& data, const EbmTrainConfig& config, EnergyModel model,
                         const EbmProgress& progress) {
  config.validate();
  if (data.empty()) throw DataError("train_ebm: empty dataset");
  if (data.image_shape != model.input_shape) throw ConfigError("train_ebm: dataset shape does not match model");

  const std::size_t m = static_cast<std::size_t>(config.batch);
  const std::size_t bank_size = config.bank_size ? config.bank_size : std::max(data.size(), m);
  if (bank_size < m) throw ConfigError("train_ebm: bank smaller than batch");
  PersistentBank bank(bank_size, model.input_shape, derive_seed(config.seed, {0xBA4C}));
  std::mt19937_64 rng(derive_seed(config.seed, {0x7EA1}));
  Optimizer optimizer(OptimizerConfig{.kind = config.optimizer, .learning_rate = config.learning_rate});

  const std::size_t slots = worker_slots(2 * m, config.workers);
  std::vector<EnergyEvaluator> evals;
  evals.reserve(slots);
  for (std::size_t w = 0; w < slots; ++w) evals.emplace_back(model);

  const ParameterSet& ps = model.graph.parameters();
  std::vector<std::vector<Tensor>> sample_grads(2 * m);
  std::vector<double> sample_energy(2 * m);
  std::vector<Tensor> batch(2 * m);
  std::vector<Tensor> grads(ps.size());
  EbmTrainResult result;
  result.history.reserve(static_cast<std::size_t>(config.steps));

  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int step = 0; step < config.steps; ++step) {
    // 1. positives: data + tau_data * noise
    for (std::size_t i = 0; i < m; ++i) {
      Tensor x = data.images[pick(rng)];
      for (float& v : x.data()) v += config.data_noise * normal(rng);
      batch[i] = std::move(x);
    }
    // 2. negatives: K Langevin steps from the persistent bank
    const std::vector<std::size_t> slots_drawn = bank.draw(m, rng);
    for (std::size_t i = 0; i < m; ++i) batch[m + i] = bank.read(slots_drawn[i]);
    parallel_for(m, config.workers, [&](std::size_t i, std::size_t w) {
      GaussianNoise noise(derive_seed(config.seed, {static_cast<std::uint64_t>(step), i}));
      langevin_chain(evals[w], batch[m + i], config.langevin_steps, config.step_size, config.noise_scale,
                     config.clamp, noise);
    });
    for (std::size_t i = 0; i < m; ++i) bank.store(slots_drawn[i], batch[m + i]);

    // 3. ML gradient: mean dG/dtheta(X+) - mean dG/dtheta(X-)
    parallel_for(2 * m, config.workers, [&](std::size_t i, std::size_t w) {
      Tape<float>& tape = evals[w].tape();
      sample_energy[i] = tape.forward(batch[i])[0];
      tape.backward(GradRequest{.inputs = false, .params = true});
      sample_grads[i] = tape.param_grads();
    });
    EbmStepStats stats{step, 0.0, 0.0};
    for (std::size_t i = 0; i < m; ++i) {
      stats.positive_energy += sample_energy[i];
      stats.negative_energy += sample_energy[m + i];
    }
    stats.positive_energy /= static_cast<double>(m);
    stats.negative_energy /= static_cast<double>(m);
    const double gap = stats.positive_energy - stats.negative_energy;
    if (!std::isfinite(gap) || std::abs(gap) > config.divergence_bound) {
      std::ostringstream msg;
      msg << "train_ebm diverged at step " << step << ": energy gap " << gap << " (positive "
          << stats.positive_energy << ", negative " << stats.negative_energy << ")";
      throw DivergenceError(msg.str());
    }
    const float inv_m = 1.0f / static_cast<float>(m);
    for (std::size_t t = 0; t < ps.size(); ++t) {
      Tensor pos(ps[t].shape());
      Tensor neg(ps[t].shape());
      for (std::size_t i = 0; i < m; ++i) {
        const auto gp = sample_grads[i][t].data();
        const auto gn = sample_grads[m + i][t].data();
        for (std::size_t k = 0; k < gp.size(); ++k) {
          pos[k] += gp[k];
          neg[k] += gn[k];
        }
      }
      for (std::size_t k = 0; k < pos.size(); ++k) pos[k] = pos[k] * inv_m - neg[k] * inv_m;
      grads[t] = std::move(pos);
    }
    optimizer.step(model.graph.parameters(), grads);
    result.history.push_back(stats);
    if (progress) progress(stats);
  }
  result.model = std::move(model);
  return result;
}

std::vector<double> energies(const EnergyModel& model, const std::vector<Tensor>& images, int workers) {
  std::vector<double> out(images.size());
  const std::size_t slots = worker_slots(images.size(), workers);
  std::vector<EnergyEvaluator> evals;
  evals.reserve(slots);
  for (std::size_t w = 0; w < slots; ++w) evals.emplace_back(model);
  parallel_for(images.size(), workers, [&](std::size_t i, std::size_t w) { out[i] = evals[w].energy(images[i]); });
  return out;
}

std::vector<std::size_t> energy_rank(const EnergyModel& model, const std::vector<Tensor>& images, int workers) {
  const std::vector<double> e = energies(model, images, workers);
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!std::isfinite(e[i])) throw DivergenceError("energy_rank: non-finite energy at index " + std::to_string(i));
  }
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (e[a] != e[b]) return e[a] > e[b];
    return a < b;
  });
  return order;
}

}  // namespace puregen::ebm
