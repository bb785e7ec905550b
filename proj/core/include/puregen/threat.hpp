#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "puregen/dataset.hpp"
#include "puregen/graph.hpp"
#include "puregen/optim.hpp"
#include "puregen/tape.hpp"

namespace puregen::threat {

enum class PoisonKind { kTriggered, kTriggerless };

PoisonKind parse_poison_kind(const std::string& name);
std::string poison_kind_name(PoisonKind kind);

struct PoisonSpec {
  PoisonKind kind = PoisonKind::kTriggered;
  float xi = 8.0f / 255.0f;  // l-inf budget
  double alpha = 0.1;        // poisoned fraction of the whole training set
  int target_class = 0;      // y_adv
  std::uint64_t seed = 0;

  void validate() const;
};

// +-xi checkerboard over the full image; sign alternates with (c + h + w).
Tensor checkerboard_trigger(const Shape& shape, float xi);

// x + rho, clipped to [0, 1].
Tensor apply_trigger(const Tensor& x, const Tensor& trigger);

struct PoisonResult {
  Dataset data;
  std::vector<std::size_t> poisoned;  // ascending
  Tensor trigger;                     // triggered only
  std::vector<std::string> warnings;
};

// Adds the trigger to floor(alpha N) randomly chosen images of target_class.
// Labels are never changed.
PoisonResult inject_triggered(const Dataset& data, const PoisonSpec& spec);
// Random +-xi sign pattern per image on floor(alpha N) images of target_class.
PoisonResult inject_triggerless(const Dataset& data, const PoisonSpec& spec);
PoisonResult inject(const Dataset& data, const PoisonSpec& spec);

// Small ConvNet producing class scores.
struct Classifier {
  Shape input_shape;
  int classes = 0;
  Graph graph;
};

Classifier make_classifier(const Shape& input_shape, int classes, std::uint64_t seed, int width = 16);

// argmax with lowest-index tie-break.
int argmax(std::span<const float> scores);

class ClassifierEvaluator {
 public:
  explicit ClassifierEvaluator(const Classifier& model) : model_(&model), tape_(model.graph) {}
  int predict(const Tensor& x);
  const Tensor& logits(const Tensor& x);
  Tape<float>& tape() noexcept { return tape_; }

 private:
  const Classifier* model_;
  Tape<float> tape_;
};

std::vector<int> predict_all(const Classifier& model, const std::vector<Tensor>& images, int workers = 1);

struct ClassifierTrainConfig {
  int epochs = 30;
  int batch = 32;
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  int width = 16;
  double divergence_bound = 1e3;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

struct ClassifierStepStats {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;      // batch mean cross-entropy
  double accuracy = 0.0;  // batch training accuracy
};

using ClassifierProgress = std::function<void(const ClassifierStepStats&)>;

// Weights train_classifier starts from.
Classifier initial_classifier(const Dataset& data, const ClassifierTrainConfig& config);

// SGD with momentum on softmax cross-entropy.
Classifier train_classifier(const Dataset& data, const ClassifierTrainConfig& config,
                            const ClassifierProgress& progress = {});

// Label oracle for the metrics: image and its test-set index.
using LabelFn = std::function<int(const Tensor& image, std::size_t index)>;

// Fraction of non-target test images labeled target_class once the trigger is
// added. Throws DataError when no test image is outside target_class.
double psr_triggered(const LabelFn& label, const Dataset& test, const Tensor& trigger, int target_class);
double psr_triggered(const Classifier& model, const Dataset& test, const Tensor& trigger, int target_class,
                     int workers = 1);

// Fraction of targets labeled as their adversarial class.
double psr_triggerless(const LabelFn& label, const std::vector<Tensor>& targets,
                       const std::vector<int>& adversarial_labels);
double psr_triggerless(const Classifier& model, const std::vector<Tensor>& targets,
                       const std::vector<int>& adversarial_labels, int workers = 1);

double natural_accuracy(const LabelFn& label, const Dataset& test);
double natural_accuracy(const Classifier& model, const Dataset& test, int workers = 1);

}  // namespace puregen::threat
