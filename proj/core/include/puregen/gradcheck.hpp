#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "puregen/graph.hpp"

namespace puregen {

struct FiniteDiffOptions {
  double h = 1e-3;
  int probes = 100;
  std::uint64_t seed = 0;
  // Gradients whose magnitude is below this are compared absolutely.
  double abs_floor = 1e-6;
  // For non-scalar graphs the checked functional is sum(weights * output).
  std::optional<Tensor> output_weights;
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  int probes_checked = 0;
  // Probes whose +-h window crossed a leaky-ReLU kink and were redrawn.
  int probes_redrawn = 0;
  std::string worst_coordinate;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares the analytic input and parameter gradients against central
// differences over a deterministic random subsample of coordinates. Runs in
// double precision on a promoted copy of the graph.
FiniteDiffReport finite_diff_check(const Graph& graph, std::span<const Tensor> inputs,
                                   const FiniteDiffOptions& options = {});
FiniteDiffReport finite_diff_check(const Graph& graph, const Tensor& input, double h);

}  // namespace puregen
