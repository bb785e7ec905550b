#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "puregen/graph.hpp"

namespace puregen {

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  float learning_rate = 1e-3f;
  float momentum = 0.0f;      // SGD only
  float weight_decay = 0.0f;  // L2, added to the gradient
  float beta1 = 0.9f;         // Adam
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Descends on `params` given gradients in parameter order. Holds moment
// state between steps.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  void step(ParameterSet& params, const std::vector<Tensor>& grads);

  const OptimizerConfig& config() const noexcept { return config_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long steps_ = 0;
};

}  // namespace puregen
