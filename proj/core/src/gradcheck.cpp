#include "puregen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "puregen/tape.hpp"

namespace puregen {
namespace {

struct Coordinate {
  bool is_param;
  std::size_t tensor;
  std::size_t index;
};

class Evaluator {
 public:
  Evaluator(const Graph& graph, std::span<const Tensor> inputs, const std::optional<Tensor>& weights)
      : tape_(graph) {
    for (const Tensor& t : inputs) inputs_.push_back(t.cast<double>());
    if (weights) {
      if (weights->shape() != graph.output_shape()) {
        throw ConfigError("output weights shape does not match graph output");
      }
      weights_ = weights->cast<double>();
    } else {
      if (graph.output_shape() != Shape{1}) {
        throw ContractError("finite_diff_check needs a scalar graph or output weights");
      }
      weights_ = TensorD(Shape{1}, 1.0);
    }
    for (const Node& n : graph.nodes()) {
      if (n.kind == OpKind::kLeakyRelu) relu_inputs_.push_back(n.inputs[0]);
    }
  }

  double value() {
    run();
    const TensorD& out = tape_.output();
    double acc = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += weights_[i] * out[i];
    return acc;
  }

  void gradients(std::vector<TensorD>& input_grads, std::vector<TensorD>& param_grads) {
    run();
    tape_.backward(weights_, GradRequest{.inputs = true, .params = true});
    input_grads.clear();
    for (std::size_t i = 0; i < inputs_.size(); ++i) input_grads.push_back(tape_.input_grad(i));
    param_grads = tape_.param_grads();
  }

  // Sign pattern of every leaky-ReLU pre-activation at the last evaluation.
  std::vector<signed char> kink_signature() const {
    std::vector<signed char> sig;
    for (int id : relu_inputs_) {
      for (double v : tape_.value(id).data()) sig.push_back(v > 0 ? 1 : (v < 0 ? -1 : 0));
    }
    return sig;
  }

  double& coord(const Coordinate& c) {
    return c.is_param ? tape_.owned_parameter(c.tensor)[c.index] : inputs_[c.tensor][c.index];
  }

  std::size_t input_count() const { return inputs_.size(); }
  std::size_t input_size(std::size_t i) const { return inputs_[i].size(); }

 private:
  void run() {
    std::vector<const TensorD*> ptrs;
    for (const auto& t : inputs_) ptrs.push_back(&t);
    tape_.forward(std::span<const TensorD* const>(ptrs));
  }

  Tape<double> tape_;
  std::vector<TensorD> inputs_;
  TensorD weights_;
  std::vector<int> relu_inputs_;
};

}  // namespace

FiniteDiffReport finite_diff_check(const Graph& graph, std::span<const Tensor> inputs,
                                   const FiniteDiffOptions& options) {
  if (!(options.h > 0)) throw ConfigError("finite_diff_check: h must be positive");
  Evaluator eval(graph, inputs, options.output_weights);
  std::vector<TensorD> input_grads;
  std::vector<TensorD> param_grads;
  eval.gradients(input_grads, param_grads);

  std::vector<Coordinate> all;
  for (std::size_t t = 0; t < eval.input_count(); ++t) {
    for (std::size_t i = 0; i < eval.input_size(t); ++i) all.push_back({false, t, i});
  }
  const ParameterSet& ps = graph.parameters();
  for (std::size_t t = 0; t < ps.size(); ++t) {
    for (std::size_t i = 0; i < ps[t].size(); ++i) all.push_back({true, t, i});
  }

  FiniteDiffReport report;
  if (all.empty()) return report;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  const std::size_t max_draws = static_cast<std::size_t>(options.probes) * 20 + 100;
  std::size_t draws = 0;
  while (report.probes_checked < options.probes && draws < max_draws) {
    ++draws;
    const Coordinate c = all[pick(rng)];
    double& x = eval.coord(c);
    const double saved = x;
    eval.value();
    const auto sig0 = eval.kink_signature();
    x = saved + options.h;
    const double fp = eval.value();
    const auto sig_plus = eval.kink_signature();
    x = saved - options.h;
    const double fm = eval.value();
    const auto sig_minus = eval.kink_signature();
    x = saved;
    if (sig_plus != sig0 || sig_minus != sig0) {
      ++report.probes_redrawn;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * options.h);
    const double analytic = c.is_param ? param_grads[c.tensor][c.index] : input_grads[c.tensor][c.index];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.probes_checked;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
      report.worst_coordinate = c.is_param ? ps.name(c.tensor) + "[" + std::to_string(c.index) + "]"
                                           : "input" + std::to_string(c.tensor) + "[" +
                                                 std::to_string(c.index) + "]";
    }
  }
  return report;
}

FiniteDiffReport finite_diff_check(const Graph& graph, const Tensor& input, double h) {
  FiniteDiffOptions options;
  options.h = h;
  return finite_diff_check(graph, std::span<const Tensor>(&input, 1), options);
}

}  // namespace puregen
