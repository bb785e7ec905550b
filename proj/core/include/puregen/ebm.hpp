#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "puregen/dataset.hpp"
#include "puregen/graph.hpp"
#include "puregen/optim.hpp"
#include "puregen/rng.hpp"
#include "puregen/tape.hpp"
#include "puregen/trajectory.hpp"

namespace puregen::ebm {

// Scalar potential G(x); lower energy means a more natural image.
struct EnergyModel {
  std::string architecture;
  Shape input_shape;
  Graph graph;
};

enum class Activation { kLeakyRelu, kSilu };

// Four conv layers (stride 1, 2, 2, 1), leaky-ReLU 0.2 (or SiLU), global sum.
EnergyModel make_convnet_energy(const Shape& input_shape, std::uint64_t seed, int width = 16,
                                Activation activation = Activation::kLeakyRelu);
// G(x) = curvature * sum(x^2) / 2.
EnergyModel make_quadratic_energy(const Shape& input_shape, float curvature = 1.0f);

// Rebuilds the architecture named in a checkpoint manifest.
EnergyModel make_energy(const std::string& architecture, const Shape& input_shape, int width,
                        float curvature = 1.0f);

// Reusable per-thread evaluator. T = double is used for Lyapunov companions.
template <typename T>
class BasicEnergyEvaluator {
 public:
  explicit BasicEnergyEvaluator(const EnergyModel& model) : model_(&model), tape_(model.graph) {}

  T energy(const BasicTensor<T>& x) { return check(x).forward(x)[0]; }

  // Returns G(x) and writes dG/dx into `grad`.
  T energy_and_grad(const BasicTensor<T>& x, BasicTensor<T>& grad) {
    const T e = check(x).forward(x)[0];
    tape_.backward(GradRequest{.inputs = true, .params = false});
    grad = tape_.input_grad();
    return e;
  }

  Tape<T>& tape() noexcept { return tape_; }

 private:
  Tape<T>& check(const BasicTensor<T>& x) {
    if (x.shape() != model_->input_shape) {
      throw ConfigError("energy: image shape " + shape_to_string(x.shape()) + " does not match model " +
                        shape_to_string(model_->input_shape));
    }
    return tape_;
  }

  const EnergyModel* model_;
  Tape<T> tape_;
};

using EnergyEvaluator = BasicEnergyEvaluator<float>;

double energy(const EnergyModel& model, const Tensor& x);

struct LangevinOptions {
  int steps = 150;
  float step_size = 0.01f;
  float noise_scale = 1.0f;  // eta
  bool clamp = true;
  bool record = false;
  // References for the recorded distances; default to the starting image.
  const Tensor* clean_reference = nullptr;
  const Tensor* poisoned_reference = nullptr;
};

struct LangevinResult {
  Tensor image;
  TrajectoryLog log;  // step 0 is the input, step k is after k updates
};

// x <- x - step * dG/dx + eta * sqrt(2 step) * N(0, I), `steps` times,
// clamped to [0,1] after each update when enabled.
LangevinResult langevin_purify(const EnergyModel& model, const Tensor& x, const LangevinOptions& options,
                               NoiseSource& noise);
LangevinResult langevin_purify(const EnergyModel& model, const Tensor& x, const LangevinOptions& options,
                               std::uint64_t seed);

// In-place variant on a caller-owned evaluator (training chains).
void langevin_chain(EnergyEvaluator& eval, Tensor& x, int steps, float step_size, float noise_scale,
                    bool clamp, NoiseSource& noise);

// Negative-sample chains for maximum-likelihood training. Every slot starts
// as uniform noise and is only replaced by completed chains.
class PersistentBank {
 public:
  PersistentBank(std::size_t size, const Shape& image_shape, std::uint64_t seed);

  std::size_t size() const noexcept { return images_.size(); }
  const Tensor& operator[](std::size_t i) const { return images_.at(i); }

  // m distinct slots, uniformly without replacement.
  std::vector<std::size_t> draw(std::size_t m, std::mt19937_64& rng) const;
  void store(std::size_t slot, Tensor image);

  std::size_t initialized_count() const;
  std::size_t reads() const noexcept { return reads_; }
  const Tensor& read(std::size_t slot);

 private:
  std::vector<Tensor> images_;
  std::vector<char> initialized_;
  std::size_t reads_ = 0;
};

struct EbmTrainConfig {
  int steps = 150000;          // J
  int langevin_steps = 100;    // K
  float data_noise = 0.02f;    // tau_data
  float step_size = 0.01f;     // Langevin step
  float noise_scale = 1.0f;    // eta during negative sampling
  float learning_rate = 5e-5f;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  int batch = 32;              // m
  std::size_t bank_size = 0;   // 0: one slot per training image
  double divergence_bound = 1e3;
  std::uint64_t seed = 0;
  int workers = 1;
  bool clamp = true;

  void validate() const;
};

struct EbmStepStats {
  int step = 0;
  double positive_energy = 0.0;  // mean G(X+)
  double negative_energy = 0.0;  // mean G(X-)
};

struct EbmTrainResult {
  EnergyModel model;
  std::vector<EbmStepStats> history;
};

using EbmProgress = std::function<void(const EbmStepStats&)>;

// Convergent maximum-likelihood learning with a persistent image bank.
EbmTrainResult train_ebm(const Dataset& data, const EbmTrainConfig& config, EnergyModel model,
                         const EbmProgress& progress = {});

// Dataset indices ordered by descending energy; ties by ascending index.
std::vector<std::size_t> energy_rank(const EnergyModel& model, const std::vector<Tensor>& images,
                                     int workers = 1);
std::vector<double> energies(const EnergyModel& model, const std::vector<Tensor>& images, int workers = 1);

}  // namespace puregen::ebm
