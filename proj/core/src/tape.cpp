#include "puregen/tape.hpp"

#include <algorithm>
#include <cmath>

namespace puregen {
namespace {

// Patch matrix layout: col[p * R + r] with p an output position (oh, ow) and
// r = (c * K + kh) * K + kw, sourcing img[c, oh*s + kh - pad, ow*s + kw - pad].
struct PatchGeometry {
  int channels, in_h, in_w;  // image side
  int out_h, out_w;          // patch positions
  int k, stride, pad;
  int rows() const { return out_h * out_w; }
  int cols() const { return channels * k * k; }
};

template <typename T>
void im2col(const T* img, const PatchGeometry& g, T* col) {
  const int r_n = g.cols();
  for (int oh = 0; oh < g.out_h; ++oh) {
    for (int ow = 0; ow < g.out_w; ++ow) {
      T* row = col + static_cast<std::size_t>(oh * g.out_w + ow) * r_n;
      for (int c = 0; c < g.channels; ++c) {
        for (int kh = 0; kh < g.k; ++kh) {
          const int ih = oh * g.stride + kh - g.pad;
          for (int kw = 0; kw < g.k; ++kw) {
            const int iw = ow * g.stride + kw - g.pad;
            const bool inside = ih >= 0 && ih < g.in_h && iw >= 0 && iw < g.in_w;
            *row++ = inside ? img[(static_cast<std::size_t>(c) * g.in_h + ih) * g.in_w + iw] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patches back into the image.
template <typename T>
void col2im_add(const T* col, const PatchGeometry& g, T* img) {
  const int r_n = g.cols();
  for (int oh = 0; oh < g.out_h; ++oh) {
    for (int ow = 0; ow < g.out_w; ++ow) {
      const T* row = col + static_cast<std::size_t>(oh * g.out_w + ow) * r_n;
      for (int c = 0; c < g.channels; ++c) {
        for (int kh = 0; kh < g.k; ++kh) {
          const int ih = oh * g.stride + kh - g.pad;
          for (int kw = 0; kw < g.k; ++kw, ++row) {
            const int iw = ow * g.stride + kw - g.pad;
            if (ih >= 0 && ih < g.in_h && iw >= 0 && iw < g.in_w) {
              img[(static_cast<std::size_t>(c) * g.in_h + ih) * g.in_w + iw] += *row;
            }
          }
        }
      }
    }
  }
}

// dst[j][i] = src[i][j] for an (n x m) row-major src.
template <typename T>
void transpose(const T* src, int n, int m, T* dst) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) dst[static_cast<std::size_t>(j) * n + i] = src[static_cast<std::size_t>(i) * m + j];
  }
}

template <typename T>
using ConvScratch = detail::ConvScratch<T>;

// y (Co,Ho,Wo) = W (Co, R) * patches(x)
template <typename T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b, int stride,
                    int pad, BasicTensor<T>& y, ConvScratch<T>& s) {
  const PatchGeometry g{x.dim(0), x.dim(1), x.dim(2), y.dim(1), y.dim(2), w.dim(2), stride, pad};
  const int p_n = g.rows(), r_n = g.cols(), co_n = y.dim(0);
  s.col.resize(static_cast<std::size_t>(p_n) * r_n);
  s.wt.resize(static_cast<std::size_t>(r_n) * co_n);
  s.tmp.resize(static_cast<std::size_t>(p_n) * co_n);
  im2col(x.data().data(), g, s.col.data());
  transpose(w.data().data(), co_n, r_n, s.wt.data());
  for (int p = 0; p < p_n; ++p) {
    T* out = s.tmp.data() + static_cast<std::size_t>(p) * co_n;
    for (int co = 0; co < co_n; ++co) out[co] = b[co];
    const T* patch = s.col.data() + static_cast<std::size_t>(p) * r_n;
    for (int r = 0; r < r_n; ++r) {
      const T v = patch[r];
      if (v == T{0}) continue;
      const T* wr = s.wt.data() + static_cast<std::size_t>(r) * co_n;
      for (int co = 0; co < co_n; ++co) out[co] += v * wr[co];
    }
  }
  transpose(s.tmp.data(), p_n, co_n, y.data().data());
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy, int stride,
                     int pad, BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb, ConvScratch<T>& s) {
  const PatchGeometry g{x.dim(0), x.dim(1), x.dim(2), gy.dim(1), gy.dim(2), w.dim(2), stride, pad};
  const int p_n = g.rows(), r_n = g.cols(), co_n = gy.dim(0);
  const T* gyp = gy.data().data();
  if (gb) {
    for (int co = 0; co < co_n; ++co) {
      double acc = 0.0;
      for (int p = 0; p < p_n; ++p) acc += gyp[static_cast<std::size_t>(co) * p_n + p];
      (*gb)[co] += static_cast<T>(acc);
    }
  }
  if (gw) {
    T* gwp = gw->data().data();
    for (int co = 0; co < co_n; ++co) {
      T* dst = gwp + static_cast<std::size_t>(co) * r_n;
      for (int p = 0; p < p_n; ++p) {
        const T gv = gyp[static_cast<std::size_t>(co) * p_n + p];
        if (gv == T{0}) continue;
        const T* patch = s.col.data() + static_cast<std::size_t>(p) * r_n;
        for (int r = 0; r < r_n; ++r) dst[r] += gv * patch[r];
      }
    }
  }
  if (gx) {
    s.dcol.assign(static_cast<std::size_t>(p_n) * r_n, T{0});
    const T* wp = w.data().data();
    for (int p = 0; p < p_n; ++p) {
      T* dst = s.dcol.data() + static_cast<std::size_t>(p) * r_n;
      for (int co = 0; co < co_n; ++co) {
        const T gv = gyp[static_cast<std::size_t>(co) * p_n + p];
        if (gv == T{0}) continue;
        const T* wr = wp + static_cast<std::size_t>(co) * r_n;
        for (int r = 0; r < r_n; ++r) dst[r] += gv * wr[r];
      }
    }
    col2im_add(s.dcol.data(), g, gx->data().data());
  }
}

// Transposed convolution is the adjoint of a stride-s convolution from y to
// x: y = col2im(X^T W) with W (Ci, R'), R' = Co*K*K, patch positions = x pixels.
template <typename T>
void conv_transpose_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                            int stride, int pad, BasicTensor<T>& y, ConvScratch<T>& s) {
  const PatchGeometry g{y.dim(0), y.dim(1), y.dim(2), x.dim(1), x.dim(2), w.dim(2), stride, pad};
  const int q_n = g.rows(), r_n = g.cols(), ci_n = x.dim(0);
  s.dcol.assign(static_cast<std::size_t>(q_n) * r_n, T{0});
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  for (int q = 0; q < q_n; ++q) {
    T* dst = s.dcol.data() + static_cast<std::size_t>(q) * r_n;
    for (int ci = 0; ci < ci_n; ++ci) {
      const T v = xp[static_cast<std::size_t>(ci) * q_n + q];
      if (v == T{0}) continue;
      const T* wr = wp + static_cast<std::size_t>(ci) * r_n;
      for (int r = 0; r < r_n; ++r) dst[r] += v * wr[r];
    }
  }
  const std::size_t plane = static_cast<std::size_t>(y.dim(1)) * y.dim(2);
  for (int co = 0; co < y.dim(0); ++co) {
    std::fill(y.data().begin() + co * plane, y.data().begin() + (co + 1) * plane, b[co]);
  }
  col2im_add(s.dcol.data(), g, y.data().data());
}

template <typename T>
void conv_transpose_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                             int stride, int pad, BasicTensor<T>* gx, BasicTensor<T>* gw, BasicTensor<T>* gb,
                             ConvScratch<T>& s) {
  const PatchGeometry g{gy.dim(0), gy.dim(1), gy.dim(2), x.dim(1), x.dim(2), w.dim(2), stride, pad};
  const int q_n = g.rows(), r_n = g.cols(), ci_n = x.dim(0);
  if (gb) {
    const std::size_t plane = static_cast<std::size_t>(gy.dim(1)) * gy.dim(2);
    for (int co = 0; co < gy.dim(0); ++co) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += gy[co * plane + i];
      (*gb)[co] += static_cast<T>(acc);
    }
  }
  if (!gx && !gw) return;
  s.col.resize(static_cast<std::size_t>(q_n) * r_n);
  im2col(gy.data().data(), g, s.col.data());
  const T* xp = x.data().data();
  if (gw) {
    T* gwp = gw->data().data();
    for (int ci = 0; ci < ci_n; ++ci) {
      T* dst = gwp + static_cast<std::size_t>(ci) * r_n;
      for (int q = 0; q < q_n; ++q) {
        const T v = xp[static_cast<std::size_t>(ci) * q_n + q];
        if (v == T{0}) continue;
        const T* patch = s.col.data() + static_cast<std::size_t>(q) * r_n;
        for (int r = 0; r < r_n; ++r) dst[r] += v * patch[r];
      }
    }
  }
  if (gx) {
    // gx[ci, q] = sum_r W[ci, r] * patch_q[r]
    s.wt.resize(static_cast<std::size_t>(r_n) * ci_n);
    transpose(w.data().data(), ci_n, r_n, s.wt.data());
    s.tmp.assign(static_cast<std::size_t>(q_n) * ci_n, T{0});
    for (int q = 0; q < q_n; ++q) {
      T* out = s.tmp.data() + static_cast<std::size_t>(q) * ci_n;
      const T* patch = s.col.data() + static_cast<std::size_t>(q) * r_n;
      for (int r = 0; r < r_n; ++r) {
        const T v = patch[r];
        if (v == T{0}) continue;
        const T* wr = s.wt.data() + static_cast<std::size_t>(r) * ci_n;
        for (int ci = 0; ci < ci_n; ++ci) out[ci] += v * wr[ci];
      }
    }
    T* gxp = gx->data().data();
    for (int q = 0; q < q_n; ++q) {
      for (int ci = 0; ci < ci_n; ++ci) gxp[static_cast<std::size_t>(ci) * q_n + q] += s.tmp[static_cast<std::size_t>(q) * ci_n + ci];
    }
  }
}

template <typename T>
T sigmoid(T v) {
  return T{1} / (T{1} + std::exp(-v));
}

}  // namespace

template <typename T>
Tape<T>::Tape(const Graph& graph) : graph_(&graph) {
  const auto& nodes = graph.nodes();
  values_.resize(nodes.size());
  grads_.resize(nodes.size());
  aux_.resize(nodes.size());
  conv_.resize(nodes.size());
  needs_grad_.assign(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    values_[i] = BasicTensor<T>(nodes[i].shape);
  }
  refresh_parameters();
}

template <typename T>
void Tape<T>::refresh_parameters() {
  const ParameterSet& ps = graph_->parameters();
  params_.resize(ps.size());
  if constexpr (std::is_same_v<T, float>) {
    for (std::size_t i = 0; i < ps.size(); ++i) params_[i] = &ps[i];
  } else {
    owned_params_.resize(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      owned_params_[i] = ps[i].template cast<T>();
      params_[i] = &owned_params_[i];
    }
  }
}

template <typename T>
BasicTensor<T>& Tape<T>::owned_parameter(std::size_t i) {
  if (owned_params_.empty()) throw ContractError("tape does not own its parameters");
  return owned_params_.at(i);
}

template <typename T>
const BasicTensor<T>& Tape<T>::forward(const BasicTensor<T>& input) {
  const BasicTensor<T>* ptr = &input;
  return forward(std::span<const BasicTensor<T>* const>(&ptr, 1));
}

template <typename T>
const BasicTensor<T>& Tape<T>::forward(std::span<const BasicTensor<T>* const> inputs) {
  const auto& in_ids = graph_->input_nodes();
  if (inputs.size() != in_ids.size()) {
    throw ConfigError("graph expects " + std::to_string(in_ids.size()) + " inputs, got " +
                      std::to_string(inputs.size()));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Shape& want = graph_->nodes()[in_ids[i]].shape;
    if (inputs[i]->shape() != want) {
      throw ConfigError("input " + std::to_string(i) + " shape " + shape_to_string(inputs[i]->shape()) +
                        " does not match graph input " + shape_to_string(want));
    }
    auto src = inputs[i]->data();
    std::copy(src.begin(), src.end(), values_[in_ids[i]].data().begin());
  }
  run_forward();
  has_forward_ = true;
  return output();
}

template <typename T>
void Tape<T>::run_forward() {
  const auto& nodes = graph_->nodes();
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    BasicTensor<T>& y = values_[id];
    switch (n.kind) {
      case OpKind::kInput:
        break;
      case OpKind::kConv2d:
        conv2d_forward(values_[n.inputs[0]], param(n.params[0]), param(n.params[1]), n.attrs.stride,
                       n.attrs.padding, y, conv_[id]);
        break;
      case OpKind::kConvTranspose2d:
        conv_transpose_forward(values_[n.inputs[0]], param(n.params[0]), param(n.params[1]),
                               n.attrs.stride, n.attrs.padding, y, conv_[id]);
        break;
      case OpKind::kLinear: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const BasicTensor<T>& w = param(n.params[0]);
        const BasicTensor<T>& b = param(n.params[1]);
        const std::size_t in = x.size();
        for (std::size_t o = 0; o < y.size(); ++o) {
          const T* wr = w.data().data() + o * in;
          T acc = b[o];
          for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
          y[o] = acc;
        }
        break;
      }
      case OpKind::kLeakyRelu: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const T slope = static_cast<T>(n.attrs.slope);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > T{0} ? x[i] : slope * x[i];
        break;
      }
      case OpKind::kSilu: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        double acc = 0.0;
        for (T v : x.data()) acc += static_cast<double>(v);
        if (n.kind == OpKind::kMean) acc /= static_cast<double>(x.size());
        y[0] = static_cast<T>(acc);
        break;
      }
      case OpKind::kAdd: {
        const BasicTensor<T>& a = values_[n.inputs[0]];
        const BasicTensor<T>& b = values_[n.inputs[1]];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
        break;
      }
      case OpKind::kMul: {
        const BasicTensor<T>& a = values_[n.inputs[0]];
        const BasicTensor<T>& b = values_[n.inputs[1]];
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
        break;
      }
      case OpKind::kScale: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const T s = static_cast<T>(n.attrs.scale);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * x[i];
        break;
      }
      case OpKind::kUpsample2x: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        for (int ch = 0; ch < c; ++ch) {
          for (int r = 0; r < 2 * h; ++r) {
            for (int q = 0; q < 2 * w; ++q) {
              y[(static_cast<std::size_t>(ch) * 2 * h + r) * 2 * w + q] =
                  x[(static_cast<std::size_t>(ch) * h + r / 2) * w + q / 2];
            }
          }
        }
        break;
      }
      case OpKind::kGroupNorm: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const BasicTensor<T>& gamma = param(n.params[0]);
        const BasicTensor<T>& beta = param(n.params[1]);
        const int c = x.dim(0);
        const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
        const int groups = n.attrs.groups;
        const int per = c / groups;
        const std::size_t count = static_cast<std::size_t>(per) * hw;
        auto& stats = aux_[id];
        stats.assign(static_cast<std::size_t>(groups) * 2, 0.0);
        for (int g = 0; g < groups; ++g) {
          const std::size_t off = static_cast<std::size_t>(g) * count;
          double mean = 0.0;
          for (std::size_t i = 0; i < count; ++i) mean += x[off + i];
          mean /= static_cast<double>(count);
          double var = 0.0;
          for (std::size_t i = 0; i < count; ++i) {
            const double d = x[off + i] - mean;
            var += d * d;
          }
          var /= static_cast<double>(count);
          const double inv_std = 1.0 / std::sqrt(var + n.attrs.eps);
          stats[2 * g] = mean;
          stats[2 * g + 1] = inv_std;
          for (int cc = 0; cc < per; ++cc) {
            const int ch = g * per + cc;
            const std::size_t coff = static_cast<std::size_t>(ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double xhat = (x[coff + i] - mean) * inv_std;
              y[coff + i] = static_cast<T>(gamma[ch] * xhat + beta[ch]);
            }
          }
        }
        break;
      }
      case OpKind::kAddChannel: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const BasicTensor<T>& v = values_[n.inputs[1]];
        const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
        for (int ch = 0; ch < x.dim(0); ++ch) {
          for (std::size_t i = 0; i < hw; ++i) y[ch * hw + i] = x[ch * hw + i] + v[ch];
        }
        break;
      }
    }
  }
}

template <typename T>
void Tape<T>::backward(GradRequest request) {
  if (graph_->output_shape() != Shape{1}) {
    throw ContractError("scalar backward requested on graph with output shape " +
                        shape_to_string(graph_->output_shape()));
  }
  BasicTensor<T> seed(Shape{1}, T{1});
  backward(seed, request);
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& output_grad, GradRequest request) {
  if (!has_forward_) throw ContractError("backward called before forward");
  const auto& nodes = graph_->nodes();
  const int out_id = graph_->output_node();
  if (output_grad.shape() != nodes[out_id].shape) {
    throw ContractError("output gradient shape " + shape_to_string(output_grad.shape()) +
                        " does not match output " + shape_to_string(nodes[out_id].shape));
  }

  // A node needs an output gradient when something requested lies upstream.
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    const Node& n = nodes[id];
    bool need = (n.kind == OpKind::kInput && request.inputs) || (!n.params.empty() && request.params);
    for (int in : n.inputs) need = need || needs_grad_[in];
    needs_grad_[id] = need;
  }
  for (std::size_t id = 0; id < nodes.size(); ++id) {
    if (!needs_grad_[id]) continue;
    if (grads_[id].shape() != nodes[id].shape) grads_[id] = BasicTensor<T>(nodes[id].shape);
    else grads_[id].fill(T{0});
  }
  if (request.params) {
    const ParameterSet& ps = graph_->parameters();
    param_grads_.resize(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (param_grads_[i].shape() != ps[i].shape()) param_grads_[i] = BasicTensor<T>(ps[i].shape());
      else param_grads_[i].fill(T{0});
    }
  } else {
    param_grads_.clear();
  }
  if (!needs_grad_[out_id]) return;
  std::copy(output_grad.data().begin(), output_grad.data().end(), grads_[out_id].data().begin());

  for (int id = out_id; id >= 0; --id) {
    const Node& n = nodes[id];
    if (!needs_grad_[id] || n.kind == OpKind::kInput) continue;
    const BasicTensor<T>& gy = grads_[id];
    auto in_grad = [&](std::size_t k) -> BasicTensor<T>* {
      const int in = n.inputs[k];
      return needs_grad_[in] ? &grads_[in] : nullptr;
    };
    auto pgrad = [&](std::size_t k) -> BasicTensor<T>* {
      return request.params ? &param_grads_[static_cast<std::size_t>(n.params[k])] : nullptr;
    };
    switch (n.kind) {
      case OpKind::kInput:
        break;
      case OpKind::kConv2d:
        conv2d_backward(values_[n.inputs[0]], param(n.params[0]), gy, n.attrs.stride, n.attrs.padding,
                        in_grad(0), pgrad(0), pgrad(1), conv_[id]);
        break;
      case OpKind::kConvTranspose2d:
        conv_transpose_backward(values_[n.inputs[0]], param(n.params[0]), gy, n.attrs.stride,
                                n.attrs.padding, in_grad(0), pgrad(0), pgrad(1), conv_[id]);
        break;
      case OpKind::kLinear: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const BasicTensor<T>& w = param(n.params[0]);
        const std::size_t in = x.size();
        BasicTensor<T>* gx = in_grad(0);
        BasicTensor<T>* gw = pgrad(0);
        BasicTensor<T>* gb = pgrad(1);
        for (std::size_t o = 0; o < gy.size(); ++o) {
          const T g = gy[o];
          if (gb) (*gb)[o] += g;
          if (gx) {
            const T* wr = w.data().data() + o * in;
            T* gxp = gx->data().data();
            for (std::size_t i = 0; i < in; ++i) gxp[i] += wr[i] * g;
          }
          if (gw) {
            T* gwr = gw->data().data() + o * in;
            for (std::size_t i = 0; i < in; ++i) gwr[i] += g * x[i];
          }
        }
        break;
      }
      case OpKind::kLeakyRelu: {
        BasicTensor<T>* gx = in_grad(0);
        if (!gx) break;
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const T slope = static_cast<T>(n.attrs.slope);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const T d = x[i] > T{0} ? T{1} : (x[i] < T{0} ? slope : T{0});
          (*gx)[i] += d * gy[i];
        }
        break;
      }
      case OpKind::kSilu: {
        BasicTensor<T>* gx = in_grad(0);
        if (!gx) break;
        const BasicTensor<T>& x = values_[n.inputs[0]];
        for (std::size_t i = 0; i < gy.size(); ++i) {
          const T s = sigmoid(x[i]);
          (*gx)[i] += gy[i] * s * (T{1} + x[i] * (T{1} - s));
        }
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        BasicTensor<T>* gx = in_grad(0);
        if (!gx) break;
        T g = gy[0];
        if (n.kind == OpKind::kMean) g = static_cast<T>(static_cast<double>(g) / static_cast<double>(gx->size()));
        for (T& v : gx->data()) v += g;
        break;
      }
      case OpKind::kAdd: {
        for (std::size_t k = 0; k < 2; ++k) {
          if (BasicTensor<T>* g = in_grad(k)) {
            for (std::size_t i = 0; i < gy.size(); ++i) (*g)[i] += gy[i];
          }
        }
        break;
      }
      case OpKind::kMul: {
        const BasicTensor<T>& a = values_[n.inputs[0]];
        const BasicTensor<T>& b = values_[n.inputs[1]];
        if (BasicTensor<T>* ga = in_grad(0)) {
          for (std::size_t i = 0; i < gy.size(); ++i) (*ga)[i] += gy[i] * b[i];
        }
        if (BasicTensor<T>* gb = in_grad(1)) {
          for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] += gy[i] * a[i];
        }
        break;
      }
      case OpKind::kScale: {
        BasicTensor<T>* gx = in_grad(0);
        if (!gx) break;
        const T s = static_cast<T>(n.attrs.scale);
        for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += s * gy[i];
        break;
      }
      case OpKind::kUpsample2x: {
        BasicTensor<T>* gx = in_grad(0);
        if (!gx) break;
        const int c = gx->dim(0), h = gx->dim(1), w = gx->dim(2);
        for (int ch = 0; ch < c; ++ch) {
          for (int r = 0; r < 2 * h; ++r) {
            for (int q = 0; q < 2 * w; ++q) {
              (*gx)[(static_cast<std::size_t>(ch) * h + r / 2) * w + q / 2] +=
                  gy[(static_cast<std::size_t>(ch) * 2 * h + r) * 2 * w + q];
            }
          }
        }
        break;
      }
      case OpKind::kGroupNorm: {
        const BasicTensor<T>& x = values_[n.inputs[0]];
        const BasicTensor<T>& gamma = param(n.params[0]);
        BasicTensor<T>* gx = in_grad(0);
        BasicTensor<T>* ggamma = pgrad(0);
        BasicTensor<T>* gbeta = pgrad(1);
        const int c = x.dim(0);
        const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
        const int groups = n.attrs.groups;
        const int per = c / groups;
        const double count = static_cast<double>(per) * static_cast<double>(hw);
        const auto& stats = aux_[id];
        for (int g = 0; g < groups; ++g) {
          const double mean = stats[2 * g];
          const double inv_std = stats[2 * g + 1];
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (int cc = 0; cc < per; ++cc) {
            const int ch = g * per + cc;
            const std::size_t off = static_cast<std::size_t>(ch) * hw;
            double gsum = 0.0;
            double gxsum = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
              const double xhat = (x[off + i] - mean) * inv_std;
              const double d = gy[off + i];
              gsum += d;
              gxsum += d * xhat;
              sum_d += d * gamma[ch];
              sum_dx += d * gamma[ch] * xhat;
            }
            if (gbeta) (*gbeta)[ch] += static_cast<T>(gsum);
            if (ggamma) (*ggamma)[ch] += static_cast<T>(gxsum);
          }
          if (!gx) continue;
          for (int cc = 0; cc < per; ++cc) {
            const int ch = g * per + cc;
            const std::size_t off = static_cast<std::size_t>(ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double xhat = (x[off + i] - mean) * inv_std;
              const double dxhat = gy[off + i] * gamma[ch];
              (*gx)[off + i] += static_cast<T>(inv_std * (dxhat - sum_d / count - xhat * sum_dx / count));
            }
          }
        }
        break;
      }
      case OpKind::kAddChannel: {
        const std::size_t hw = static_cast<std::size_t>(gy.dim(1)) * gy.dim(2);
        if (BasicTensor<T>* gx = in_grad(0)) {
          for (std::size_t i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i];
        }
        if (BasicTensor<T>* gv = in_grad(1)) {
          for (int ch = 0; ch < gy.dim(0); ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) acc += gy[ch * hw + i];
            (*gv)[ch] += static_cast<T>(acc);
          }
        }
        break;
      }
    }
  }
}

template <typename T>
const BasicTensor<T>& Tape<T>::input_grad(std::size_t i) const {
  const int id = graph_->input_nodes().at(i);
  if (!needs_grad_[id]) throw ContractError("input gradient was not requested in the last backward pass");
  return grads_[id];
}

template class Tape<float>;
template class Tape<double>;

Tensor forward(const Graph& graph, const Tensor& input) {
  Tape<float> tape(graph);
  return tape.forward(input);
}

Tensor grad_input(const Graph& graph, const Tensor& input) {
  Tape<float> tape(graph);
  tape.forward(input);
  tape.backward(GradRequest{.inputs = true, .params = false});
  return tape.input_grad();
}

std::vector<NamedTensor> grad_params(const Graph& graph, const Tensor& input) {
  Tape<float> tape(graph);
  tape.forward(input);
  tape.backward(GradRequest{.inputs = false, .params = true});
  std::vector<NamedTensor> out;
  const ParameterSet& ps = graph.parameters();
  out.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) out.push_back({ps.name(i), tape.param_grad(i)});
  return out;
}

}  // namespace puregen
