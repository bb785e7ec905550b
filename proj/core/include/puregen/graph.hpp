#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "puregen/tensor.hpp"

namespace puregen {

enum class OpKind : std::uint8_t {
  kInput,
  kConv2d,           // params: weight (Co,Ci,K,K), bias (Co)
  kConvTranspose2d,  // params: weight (Ci,Co,K,K), bias (Co)
  kLinear,           // params: weight (Out,In), bias (Out); input is flattened
  kLeakyRelu,
  kSilu,
  kSum,
  kMean,
  kAdd,
  kMul,
  kScale,         // multiply by a constant
  kUpsample2x,    // nearest neighbour
  kGroupNorm,     // params: gamma (C), beta (C)
  kAddChannel,    // (C,H,W) + per-channel vector (C)
};

std::string_view op_name(OpKind kind);

struct OpAttrs {
  int stride = 1;
  int padding = 0;
  int groups = 1;
  float slope = 0.2f;
  float scale = 1.0f;
  float eps = 1e-5f;
};

struct Node {
  OpKind kind = OpKind::kInput;
  std::vector<int> inputs;  // node ids, all smaller than this node's id
  std::vector<int> params;  // indices into the graph's parameter list
  OpAttrs attrs;
  Shape shape;  // output shape
};

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Ordered, named parameter collection. Order is the checkpoint order.
class ParameterSet {
 public:
  int add(std::string name, Tensor value);
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  Tensor& operator[](std::size_t i) { return entries_[i].value; }
  const Tensor& operator[](std::size_t i) const { return entries_[i].value; }
  const std::string& name(std::size_t i) const { return entries_[i].name; }

  std::optional<std::size_t> find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  std::vector<NamedTensor>& entries() noexcept { return entries_; }
  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }

  std::size_t scalar_count() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

// Immutable computation structure plus its parameters. Evaluation lives in
// Tape; several tapes may read one graph concurrently.
class Graph {
 public:
  Graph() = default;
  Graph(std::vector<Node> nodes, std::vector<int> inputs, int output, ParameterSet params);

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<int>& input_nodes() const noexcept { return inputs_; }
  int output_node() const noexcept { return output_; }
  const Shape& input_shape(std::size_t i = 0) const { return nodes_.at(inputs_.at(i)).shape; }
  const Shape& output_shape() const { return nodes_.at(output_).shape; }
  std::size_t input_count() const noexcept { return inputs_.size(); }

  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

 private:
  std::vector<Node> nodes_;
  std::vector<int> inputs_;
  int output_ = -1;
  ParameterSet params_;
};

// Builds a Graph node by node with shape inference. Parameters are
// initialized from `seed` (uniform fan-in scaling).
class GraphBuilder {
 public:
  explicit GraphBuilder(std::uint64_t seed = 0);

  int input(Shape shape);
  int conv2d(int x, const std::string& name, int out_channels, int kernel, int stride, int padding);
  int conv_transpose2d(int x, const std::string& name, int out_channels, int kernel, int stride,
                       int padding);
  int linear(int x, const std::string& name, int out_features);
  int leaky_relu(int x, float slope = 0.2f);
  int silu(int x);
  int sum(int x);
  int mean(int x);
  int add(int a, int b);
  int mul(int a, int b);
  int scale(int x, float factor);
  int upsample2x(int x);
  int group_norm(int x, const std::string& name, int groups, float eps = 1e-5f);
  int add_channel(int x, int per_channel);

  const Shape& shape(int node) const { return nodes_.at(node).shape; }

  Graph build(int output) &&;

 private:
  int push(Node node);
  void check_node(int id) const;
  int add_param(const std::string& name, Shape shape, float bound);
  int add_param_filled(const std::string& name, Shape shape, float value);

  std::vector<Node> nodes_;
  std::vector<int> inputs_;
  ParameterSet params_;
  std::mt19937_64 engine_;
};

}  // namespace puregen
