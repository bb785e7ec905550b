#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "puregen/dataset.hpp"
#include "puregen/graph.hpp"
#include "puregen/optim.hpp"
#include "puregen/rng.hpp"
#include "puregen/tape.hpp"
#include "puregen/trajectory.hpp"

namespace puregen::ddpm {

// Linear beta schedule. Index t runs 1..T; vectors are stored 0-based so
// alpha_bar(t) == alpha_bar_[t - 1].
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(int steps, double beta_start, double beta_end);

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }
  double beta(int t) const { return beta_.at(index(t)); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(index(t)); }
  const std::vector<double>& betas() const noexcept { return beta_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

 private:
  std::size_t index(int t) const;

  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

NoiseSchedule make_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& eps);

// Sinusoidal embedding of the timestep, sin half then cos half.
std::vector<float> timestep_embedding(int t, int dim);

// Images enter the diffusion in [-1, 1].
Tensor to_model_space(const Tensor& x);
Tensor from_model_space(const Tensor& x);

// eps-hat(x_t, t). Stateful (owns scratch), so use one per thread.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual void predict(const Tensor& x_t, int t, Tensor& eps) = 0;
};

// Small U-shaped ConvNet: two stride-2 downs, two transposed-conv ups with
// additive skips, GroupNorm + SiLU, timestep embedding as per-channel bias.
struct DdpmModel {
  std::string architecture;
  Shape input_shape;
  int width = 16;
  int embed_dim = 32;
  Graph graph;  // inputs: image (C,H,W), embedding (embed_dim)
};

DdpmModel make_unet(const Shape& input_shape, std::uint64_t seed, int width = 16, int embed_dim = 32);
DdpmModel make_ddpm(const std::string& architecture, const Shape& input_shape, int width, int embed_dim);

class NetworkPredictor final : public NoisePredictor {
 public:
  explicit NetworkPredictor(const DdpmModel& model);
  void predict(const Tensor& x_t, int t, Tensor& eps) override;
  Tape<float>& tape() noexcept { return tape_; }
  // Loads x_t and the embedding of t, runs forward, returns eps-hat.
  const Tensor& forward(const Tensor& x_t, int t);

 private:
  const DdpmModel* model_;
  Tape<float> tape_;
  Tensor embedding_;
};

struct DdpmTrainConfig {
  int train_prefix_steps = 250;
  int epochs = 20;
  int batch = 32;
  float learning_rate = 2e-3f;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double divergence_bound = 1e3;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate(const NoiseSchedule& schedule) const;
};

struct DdpmStepStats {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;  // batch mean squared error
};

struct DdpmTrainResult {
  DdpmModel model;
  std::vector<DdpmStepStats> history;
};

using DdpmProgress = std::function<void(const DdpmStepStats&)>;

// eps-prediction regression with t uniform on [1, train_prefix_steps].
DdpmTrainResult train_ddpm(const Dataset& data, const NoiseSchedule& schedule, const DdpmTrainConfig& config,
                           DdpmModel model, const DdpmProgress& progress = {});

// Mean eps-MSE over `data` with a fixed draw of (t, eps) per image.
double ddpm_loss(const DdpmModel& model, const NoiseSchedule& schedule, const Dataset& data, int prefix_steps,
                 std::uint64_t seed, int workers = 1);

struct DdpmPurifyOptions {
  bool reverse_noise = true;
  bool record = false;
  const Tensor* clean_reference = nullptr;
  const Tensor* poisoned_reference = nullptr;
};

struct DdpmPurifyResult {
  Tensor image;
  TrajectoryLog log;  // step 0 is the input; step k after k reverse updates
};

// Noise x to level `steps` in one q_sample draw, then run `steps` ancestral
// reverse updates with sigma_t^2 = beta_t (no noise at t = 1). Works in
// [-1, 1] and clamps to [0, 1] once at the end. The predictor sees model-space
// tensors.
DdpmPurifyResult ddpm_purify(NoisePredictor& predictor, const NoiseSchedule& schedule, const Tensor& x, int steps,
                             const DdpmPurifyOptions& options, NoiseSource& noise);
DdpmPurifyResult ddpm_purify(const DdpmModel& model, const NoiseSchedule& schedule, const Tensor& x, int steps,
                             const DdpmPurifyOptions& options, std::uint64_t seed);

}  // namespace puregen::ddpm
