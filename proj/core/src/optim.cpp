#include "puregen/optim.hpp"

#include <cmath>

namespace puregen {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer: " + std::string(name));
}

std::string_view optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd";
}

void Optimizer::step(ParameterSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw ContractError("optimizer: gradient count mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].size(), 0.0f);
      if (config_.kind == OptimizerKind::kAdam) v_[i].assign(params[i].size(), 0.0f);
    }
  }
  ++steps_;
  const float lr = config_.learning_rate;
  const float wd = config_.weight_decay;
  if (config_.kind == OptimizerKind::kSgd) {
    const float mu = config_.momentum;
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto p = params[t].data();
      auto g = grads[t].data();
      auto& m = m_[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const float gi = g[i] + wd * p[i];
        if (mu != 0.0f) {
          m[i] = mu * m[i] + gi;
          p[i] -= lr * m[i];
        } else {
          p[i] -= lr * gi;
        }
      }
    }
    return;
  }
  const float b1 = config_.beta1;
  const float b2 = config_.beta2;
  const float c1 = 1.0f - static_cast<float>(std::pow(b1, steps_));
  const float c2 = 1.0f - static_cast<float>(std::pow(b2, steps_));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t].data();
    auto g = grads[t].data();
    auto& m = m_[t];
    auto& v = v_[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = g[i] + wd * p[i];
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

}  // namespace puregen
