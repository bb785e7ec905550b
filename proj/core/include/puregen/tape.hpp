#pragma once

#include <span>
#include <vector>

#include "puregen/graph.hpp"

namespace puregen {

namespace detail {
template <typename T>
struct ConvScratch {
  std::vector<T> col;  // cached patches, reused by backward
  std::vector<T> wt;
  std::vector<T> tmp;
  std::vector<T> dcol;
};
}  // namespace detail

struct GradRequest {
  bool inputs = true;
  bool params = true;
};

// One evaluation context over a Graph: holds the cached activations of the
// last forward pass and the gradients of the last backward pass. A Tape is
// single-threaded; use one per worker. Tape<float> reads the graph's
// parameters in place, Tape<double> works on a promoted copy (see
// refresh_parameters()).
template <typename T>
class Tape {
 public:
  explicit Tape(const Graph& graph);

  const Graph& graph() const noexcept { return *graph_; }

  const BasicTensor<T>& forward(const BasicTensor<T>& input);
  const BasicTensor<T>& forward(std::span<const BasicTensor<T>* const> inputs);

  // Vector-Jacobian product of the last forward pass with `output_grad`.
  void backward(const BasicTensor<T>& output_grad, GradRequest request = {});
  // Same, for a scalar output with seed 1.
  void backward(GradRequest request = {});

  const BasicTensor<T>& output() const { return values_[graph_->output_node()]; }
  const BasicTensor<T>& value(int node) const { return values_.at(node); }
  const BasicTensor<T>& input_grad(std::size_t i = 0) const;
  const BasicTensor<T>& param_grad(std::size_t i) const { return param_grads_.at(i); }
  const std::vector<BasicTensor<T>>& param_grads() const noexcept { return param_grads_; }

  // Re-reads parameters from the graph after an optimizer step. Only the
  // double tape keeps a copy; for float this is a no-op.
  void refresh_parameters();

  // Promoted parameter copy of a double tape, for perturbation studies.
  // Throws for Tape<float>, whose parameters belong to the graph.
  BasicTensor<T>& owned_parameter(std::size_t i);

 private:
  const BasicTensor<T>& param(int id) const { return *params_[static_cast<std::size_t>(id)]; }
  void run_forward();

  const Graph* graph_;
  std::vector<BasicTensor<T>> owned_params_;
  std::vector<const BasicTensor<T>*> params_;
  std::vector<BasicTensor<T>> values_;
  std::vector<BasicTensor<T>> grads_;
  std::vector<BasicTensor<T>> param_grads_;
  std::vector<std::vector<double>> aux_;  // per-node scratch (group norm statistics)
  std::vector<detail::ConvScratch<T>> conv_;
  std::vector<char> needs_grad_;
  bool has_forward_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

// Convenience wrappers over a throwaway tape.
Tensor forward(const Graph& graph, const Tensor& input);
Tensor grad_input(const Graph& graph, const Tensor& input);
std::vector<NamedTensor> grad_params(const Graph& graph, const Tensor& input);

}  // namespace puregen
