#include "puregen/graph.hpp"

#include <cmath>

namespace puregen {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConvTranspose2d: return "conv_transpose2d";
    case OpKind::kLinear: return "linear";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSilu: return "silu";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kUpsample2x: return "upsample2x";
    case OpKind::kGroupNorm: return "group_norm";
    case OpKind::kAddChannel: return "add_channel";
  }
  return "unknown";
}

int ParameterSet::add(std::string name, Tensor value) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), std::move(value)});
  return static_cast<int>(entries_.size() - 1);
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

const Tensor& ParameterSet::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ConfigError("unknown parameter: " + std::string(name));
  return entries_[*i].value;
}

Tensor& ParameterSet::at(std::string_view name) {
  auto i = find(name);
  if (!i) throw ConfigError("unknown parameter: " + std::string(name));
  return entries_[*i].value;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

Graph::Graph(std::vector<Node> nodes, std::vector<int> inputs, int output, ParameterSet params)
    : nodes_(std::move(nodes)), inputs_(std::move(inputs)), output_(output), params_(std::move(params)) {
  if (output_ < 0 || output_ >= static_cast<int>(nodes_.size())) {
    throw ConfigError("graph output node out of range");
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    for (int in : nodes_[id].inputs) {
      if (in < 0 || in >= static_cast<int>(id)) throw ConfigError("graph is not topologically ordered");
    }
    for (int p : nodes_[id].params) {
      if (p < 0 || p >= static_cast<int>(params_.size())) throw ConfigError("graph parameter id out of range");
    }
  }
}

GraphBuilder::GraphBuilder(std::uint64_t seed) : engine_(seed) {}

int GraphBuilder::push(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size() - 1);
}

void GraphBuilder::check_node(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) throw ConfigError("unknown graph node id");
}

int GraphBuilder::add_param(const std::string& name, Shape shape, float bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.data()) v = dist(engine_);
  return params_.add(name, std::move(t));
}

int GraphBuilder::add_param_filled(const std::string& name, Shape shape, float value) {
  return params_.add(name, Tensor(std::move(shape), value));
}

int GraphBuilder::input(Shape shape) {
  Node n;
  n.kind = OpKind::kInput;
  n.shape = std::move(shape);
  if (n.shape.empty()) throw ConfigError("input shape must be non-empty");
  int id = push(std::move(n));
  inputs_.push_back(id);
  return id;
}

int GraphBuilder::conv2d(int x, const std::string& name, int out_channels, int kernel, int stride,
                         int padding) {
  check_node(x);
  const Shape& in = nodes_[x].shape;
  if (in.size() != 3) throw ConfigError("conv2d expects (C,H,W) input, got " + shape_to_string(in));
  if (stride < 1 || kernel < 1 || padding < 0) throw ConfigError("conv2d: invalid geometry");
  const int ho = (in[1] + 2 * padding - kernel) / stride + 1;
  const int wo = (in[2] + 2 * padding - kernel) / stride + 1;
  if (ho < 1 || wo < 1) throw ConfigError("conv2d: kernel larger than padded input");
  const float bound = 1.0f / std::sqrt(static_cast<float>(in[0] * kernel * kernel));
  Node n;
  n.kind = OpKind::kConv2d;
  n.inputs = {x};
  n.params = {add_param(name + ".weight", {out_channels, in[0], kernel, kernel}, bound),
              add_param(name + ".bias", {out_channels}, bound)};
  n.attrs.stride = stride;
  n.attrs.padding = padding;
  n.shape = {out_channels, ho, wo};
  return push(std::move(n));
}

int GraphBuilder::conv_transpose2d(int x, const std::string& name, int out_channels, int kernel,
                                   int stride, int padding) {
  check_node(x);
  const Shape& in = nodes_[x].shape;
  if (in.size() != 3) throw ConfigError("conv_transpose2d expects (C,H,W) input");
  if (stride < 1 || kernel < 1 || padding < 0) throw ConfigError("conv_transpose2d: invalid geometry");
  const int ho = (in[1] - 1) * stride - 2 * padding + kernel;
  const int wo = (in[2] - 1) * stride - 2 * padding + kernel;
  if (ho < 1 || wo < 1) throw ConfigError("conv_transpose2d: empty output");
  const float bound = 1.0f / std::sqrt(static_cast<float>(in[0] * kernel * kernel) /
                                       static_cast<float>(stride * stride));
  Node n;
  n.kind = OpKind::kConvTranspose2d;
  n.inputs = {x};
  n.params = {add_param(name + ".weight", {in[0], out_channels, kernel, kernel}, bound),
              add_param(name + ".bias", {out_channels}, bound)};
  n.attrs.stride = stride;
  n.attrs.padding = padding;
  n.shape = {out_channels, ho, wo};
  return push(std::move(n));
}

int GraphBuilder::linear(int x, const std::string& name, int out_features) {
  check_node(x);
  const int in = static_cast<int>(shape_numel(nodes_[x].shape));
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  Node n;
  n.kind = OpKind::kLinear;
  n.inputs = {x};
  n.params = {add_param(name + ".weight", {out_features, in}, bound),
              add_param(name + ".bias", {out_features}, bound)};
  n.shape = {out_features};
  return push(std::move(n));
}

int GraphBuilder::leaky_relu(int x, float slope) {
  check_node(x);
  Node n;
  n.kind = OpKind::kLeakyRelu;
  n.inputs = {x};
  n.attrs.slope = slope;
  n.shape = nodes_[x].shape;
  return push(std::move(n));
}

int GraphBuilder::silu(int x) {
  check_node(x);
  Node n;
  n.kind = OpKind::kSilu;
  n.inputs = {x};
  n.shape = nodes_[x].shape;
  return push(std::move(n));
}

int GraphBuilder::sum(int x) {
  check_node(x);
  Node n;
  n.kind = OpKind::kSum;
  n.inputs = {x};
  n.shape = {1};
  return push(std::move(n));
}

int GraphBuilder::mean(int x) {
  check_node(x);
  Node n;
  n.kind = OpKind::kMean;
  n.inputs = {x};
  n.shape = {1};
  return push(std::move(n));
}

int GraphBuilder::add(int a, int b) {
  check_node(a);
  check_node(b);
  if (nodes_[a].shape != nodes_[b].shape) {
    throw ConfigError("add: shape mismatch " + shape_to_string(nodes_[a].shape) + " vs " +
                      shape_to_string(nodes_[b].shape));
  }
  Node n;
  n.kind = OpKind::kAdd;
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

int GraphBuilder::mul(int a, int b) {
  check_node(a);
  check_node(b);
  if (nodes_[a].shape != nodes_[b].shape) throw ConfigError("mul: shape mismatch");
  Node n;
  n.kind = OpKind::kMul;
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

int GraphBuilder::scale(int x, float factor) {
  check_node(x);
  Node n;
  n.kind = OpKind::kScale;
  n.inputs = {x};
  n.attrs.scale = factor;
  n.shape = nodes_[x].shape;
  return push(std::move(n));
}

int GraphBuilder::upsample2x(int x) {
  check_node(x);
  const Shape& in = nodes_[x].shape;
  if (in.size() != 3) throw ConfigError("upsample2x expects (C,H,W) input");
  Node n;
  n.kind = OpKind::kUpsample2x;
  n.inputs = {x};
  n.shape = {in[0], in[1] * 2, in[2] * 2};
  return push(std::move(n));
}

int GraphBuilder::group_norm(int x, const std::string& name, int groups, float eps) {
  check_node(x);
  const Shape& in = nodes_[x].shape;
  if (in.size() != 3) throw ConfigError("group_norm expects (C,H,W) input");
  if (groups < 1 || in[0] % groups != 0) throw ConfigError("group_norm: channels not divisible by groups");
  Node n;
  n.kind = OpKind::kGroupNorm;
  n.inputs = {x};
  n.params = {add_param_filled(name + ".gamma", {in[0]}, 1.0f),
              add_param_filled(name + ".beta", {in[0]}, 0.0f)};
  n.attrs.groups = groups;
  n.attrs.eps = eps;
  n.shape = in;
  return push(std::move(n));
}

int GraphBuilder::add_channel(int x, int per_channel) {
  check_node(x);
  check_node(per_channel);
  const Shape& in = nodes_[x].shape;
  if (in.size() != 3) throw ConfigError("add_channel expects (C,H,W) input");
  if (nodes_[per_channel].shape != Shape{in[0]}) throw ConfigError("add_channel: vector must have C entries");
  Node n;
  n.kind = OpKind::kAddChannel;
  n.inputs = {x, per_channel};
  n.shape = in;
  return push(std::move(n));
}

Graph GraphBuilder::build(int output) && {
  check_node(output);
  return Graph(std::move(nodes_), std::move(inputs_), output, std::move(params_));
}

}  // namespace puregen
