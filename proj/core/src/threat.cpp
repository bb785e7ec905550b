#include "puregen/threat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "puregen/errors.hpp"
#include "puregen/parallel.hpp"
#include "puregen/rng.hpp"

namespace puregen::threat {

PoisonKind parse_poison_kind(const std::string& name) {
  if (name == "triggered") return PoisonKind::kTriggered;
  if (name == "triggerless") return PoisonKind::kTriggerless;
  throw ConfigError("unknown poison kind: " + name);
}

std::string poison_kind_name(PoisonKind kind) {
  return kind == PoisonKind::kTriggered ? "triggered" : "triggerless";
}

void PoisonSpec::validate() const {
  if (!(xi >= 0.0f && xi <= 1.0f)) throw ConfigError("poison.xi must be in [0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("poison.alpha must be in [0, 1]");
  if (target_class < 0 || target_class > 255) throw ConfigError("poison.target_class out of range");
}

Tensor checkerboard_trigger(const Shape& shape, float xi) {
  if (shape.size() != 3) throw ConfigError("trigger needs a (C,H,W) shape");
  Tensor t(shape);
  std::size_t i = 0;
  for (int c = 0; c < shape[0]; ++c) {
    for (int h = 0; h < shape[1]; ++h) {
      for (int w = 0; w < shape[2]; ++w) t[i++] = ((c + h + w) % 2 == 0) ? xi : -xi;
    }
  }
  return t;
}

Tensor apply_trigger(const Tensor& x, const Tensor& trigger) {
  if (x.shape() != trigger.shape()) throw ConfigError("trigger shape does not match image");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i] + trigger[i], 0.0f, 1.0f);
  return out;
}

namespace {

// floor(alpha N) images of the target class, chosen with the spec seed.
std::vector<std::size_t> choose_victims(const Dataset& data, const PoisonSpec& spec,
                                        std::vector<std::string>& warnings) {
  spec.validate();
  if (spec.target_class >= data.class_count) throw ConfigError("poison.target_class exceeds class count");
  const double budget = spec.alpha * static_cast<double>(data.size());
  const auto count = static_cast<std::size_t>(std::floor(budget + 1e-9));
  if (count == 0) {
    if (spec.alpha > 0.0) warnings.push_back("alpha * N < 1: no images poisoned");
    return {};
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == spec.target_class) pool.push_back(i);
  }
  if (pool.size() < count) {
    std::ostringstream msg;
    msg << "poison: need " << count << " images of class " << spec.target_class << ", dataset has "
        << pool.size();
    throw ConfigError(msg.str());
  }
  std::mt19937_64 rng(derive_seed(spec.seed, {0x9015}));
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

PoisonResult inject_triggered(const Dataset& data, const PoisonSpec& spec) {
  PoisonResult r{data, {}, checkerboard_trigger(data.image_shape, spec.xi), {}};
  r.poisoned = choose_victims(data, spec, r.warnings);
  for (std::size_t i : r.poisoned) r.data.images[i] = apply_trigger(data.images[i], r.trigger);
  return r;
}

PoisonResult inject_triggerless(const Dataset& data, const PoisonSpec& spec) {
  PoisonResult r{data, {}, Tensor{}, {}};
  r.poisoned = choose_victims(data, spec, r.warnings);
  for (std::size_t i : r.poisoned) {
    std::mt19937_64 rng(derive_seed(spec.seed, {0x5167, i}));
    Tensor delta(data.image_shape);
    for (float& v : delta.data()) v = (rng() & 1u) ? spec.xi : -spec.xi;
    r.data.images[i] = apply_trigger(data.images[i], delta);
  }
  return r;
}

PoisonResult inject(const Dataset& data, const PoisonSpec& spec) {
  return spec.kind == PoisonKind::kTriggered ? inject_triggered(data, spec) : inject_triggerless(data, spec);
}

Classifier make_classifier(const Shape& input_shape, int classes, std::uint64_t seed, int width) {
  if (input_shape.size() != 3) throw ConfigError("classifier needs a (C,H,W) input shape");
  if (classes < 2) throw ConfigError("classifier needs at least two classes");
  if (width < 1) throw ConfigError("classifier width must be positive");
  GraphBuilder b(seed);
  int x = b.input(input_shape);
  x = b.leaky_relu(b.conv2d(x, "conv1", width, 3, 1, 1), 0.1f);
  x = b.leaky_relu(b.conv2d(x, "conv2", 2 * width, 3, 2, 1), 0.1f);
  x = b.leaky_relu(b.conv2d(x, "conv3", 2 * width, 3, 2, 1), 0.1f);
  const int out = b.linear(x, "fc", classes);
  return Classifier{input_shape, classes, std::move(b).build(out)};
}

int argmax(std::span<const float> scores) {
  if (scores.empty()) throw ContractError("argmax of empty scores");
  int best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

const Tensor& ClassifierEvaluator::logits(const Tensor& x) {
  if (x.shape() != model_->input_shape) {
    throw ConfigError("classifier: image shape " + shape_to_string(x.shape()) + " does not match model");
  }
  return tape_.forward(x);
}

int ClassifierEvaluator::predict(const Tensor& x) { return argmax(logits(x).data()); }

std::vector<int> predict_all(const Classifier& model, const std::vector<Tensor>& images, int workers) {
  std::vector<int> out(images.size());
  const std::size_t slots = worker_slots(images.size(), workers);
  std::vector<ClassifierEvaluator> evals;
  evals.reserve(slots);
  for (std::size_t w = 0; w < slots; ++w) evals.emplace_back(model);
  parallel_for(images.size(), workers, [&](std::size_t i, std::size_t w) { out[i] = evals[w].predict(images[i]); });
  return out;
}

void ClassifierTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("classifier.epochs must be >= 0");
  if (batch < 1) throw ConfigError("classifier.batch must be >= 1");
  if (!(learning_rate >= 0.0f)) throw ConfigError("classifier.learning_rate must be >= 0");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("classifier.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0f)) throw ConfigError("classifier.weight_decay must be >= 0");
  if (width < 1) throw ConfigError("classifier.width must be positive");
}

Classifier initial_classifier(const Dataset& data, const ClassifierTrainConfig& config) {
  return make_classifier(data.image_shape, data.class_count, derive_seed(config.seed, {0xC1A5}), config.width);
}

Classifier train_classifier(const Dataset& data, const ClassifierTrainConfig& config,
                            const ClassifierProgress& progress) {
  config.validate();
  if (data.empty()) throw DataError("train_classifier: empty dataset");
  Classifier model = initial_classifier(data, config);
  Optimizer optimizer(OptimizerConfig{.kind = OptimizerKind::kSgd,
                                      .learning_rate = config.learning_rate,
                                      .momentum = config.momentum,
                                      .weight_decay = config.weight_decay});
  std::mt19937_64 rng(derive_seed(config.seed, {0x5EED}));
  const std::size_t m = static_cast<std::size_t>(config.batch);
  const std::size_t slots = worker_slots(m, config.workers);
  std::vector<ClassifierEvaluator> evals;
  evals.reserve(slots);
  for (std::size_t w = 0; w < slots; ++w) evals.emplace_back(model);

  const ParameterSet& ps = model.graph.parameters();
  std::vector<Tensor> grads(ps.size());
  std::vector<std::vector<Tensor>> sample_grads(m);
  std::vector<double> sample_loss(m);
  std::vector<char> sample_hit(m);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += m) {
      const std::size_t n = std::min(m, order.size() - start);
      parallel_for(n, config.workers, [&](std::size_t i, std::size_t w) {
        const std::size_t idx = order[start + i];
        const Tensor& z = evals[w].logits(data.images[idx]);
        const int y = data.labels[idx];
        const float zmax = *std::max_element(z.data().begin(), z.data().end());
        double denom = 0.0;
        for (float v : z.data()) denom += std::exp(static_cast<double>(v - zmax));
        sample_loss[i] = std::log(denom) - (z[y] - zmax);
        sample_hit[i] = argmax(z.data()) == y;
        Tensor g(z.shape());
        for (std::size_t c = 0; c < z.size(); ++c) {
          g[c] = static_cast<float>(std::exp(static_cast<double>(z[c] - zmax)) / denom);
        }
        g[y] -= 1.0f;
        evals[w].tape().backward(g, GradRequest{.inputs = false, .params = true});
        sample_grads[i] = evals[w].tape().param_grads();
      });
      ClassifierStepStats stats{step, epoch, 0.0, 0.0};
      for (std::size_t i = 0; i < n; ++i) {
        stats.loss += sample_loss[i];
        stats.accuracy += sample_hit[i];
      }
      stats.loss /= static_cast<double>(n);
      stats.accuracy /= static_cast<double>(n);
      if (!std::isfinite(stats.loss) || stats.loss > config.divergence_bound) {
        std::ostringstream msg;
        msg << "train_classifier diverged at step " << step << ": loss " << stats.loss;
        throw DivergenceError(msg.str());
      }
      const float inv = 1.0f / static_cast<float>(n);
      for (std::size_t p = 0; p < ps.size(); ++p) {
        Tensor acc(ps[p].shape());
        for (std::size_t i = 0; i < n; ++i) {
          const auto gv = sample_grads[i][p].data();
          for (std::size_t k = 0; k < gv.size(); ++k) acc[k] += gv[k];
        }
        for (float& v : acc.data()) v *= inv;
        grads[p] = std::move(acc);
      }
      optimizer.step(model.graph.parameters(), grads);
      if (progress) progress(stats);
      ++step;
    }
  }
  return model;
}

double psr_triggered(const LabelFn& label, const Dataset& test, const Tensor& trigger, int target_class) {
  std::size_t denom = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] == target_class) continue;
    ++denom;
    hits += label(apply_trigger(test.images[i], trigger), i) == target_class;
  }
  if (denom == 0) throw DataError("psr_triggered: no test images outside the target class");
  return static_cast<double>(hits) / static_cast<double>(denom);
}

double psr_triggered(const Classifier& model, const Dataset& test, const Tensor& trigger, int target_class,
                     int workers) {
  std::vector<Tensor> shown;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] != target_class) shown.push_back(apply_trigger(test.images[i], trigger));
  }
  if (shown.empty()) throw DataError("psr_triggered: no test images outside the target class");
  const std::vector<int> pred = predict_all(model, shown, workers);
  const auto hits = std::count(pred.begin(), pred.end(), target_class);
  return static_cast<double>(hits) / static_cast<double>(shown.size());
}

double psr_triggerless(const LabelFn& label, const std::vector<Tensor>& targets,
                       const std::vector<int>& adversarial_labels) {
  if (targets.empty()) throw DataError("psr_triggerless: no targets");
  if (targets.size() != adversarial_labels.size()) throw ConfigError("psr_triggerless: one label per target");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) hits += label(targets[i], i) == adversarial_labels[i];
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double psr_triggerless(const Classifier& model, const std::vector<Tensor>& targets,
                       const std::vector<int>& adversarial_labels, int workers) {
  if (targets.empty()) throw DataError("psr_triggerless: no targets");
  if (targets.size() != adversarial_labels.size()) throw ConfigError("psr_triggerless: one label per target");
  const std::vector<int> pred = predict_all(model, targets, workers);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) hits += pred[i] == adversarial_labels[i];
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double natural_accuracy(const LabelFn& label, const Dataset& test) {
  if (test.empty()) throw DataError("natural_accuracy: empty test set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) hits += label(test.images[i], i) == test.labels[i];
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

double natural_accuracy(const Classifier& model, const Dataset& test, int workers) {
  if (test.empty()) throw DataError("natural_accuracy: empty test set");
  const std::vector<int> pred = predict_all(model, test.images, workers);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) hits += pred[i] == test.labels[i];
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace puregen::threat
