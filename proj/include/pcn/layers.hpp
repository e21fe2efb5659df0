#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pcn/error.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

enum class LayerKind : std::uint32_t { conv = 0, maxpool = 1, fc = 2, relu = 3, softmax = 4 };

/// One layer of the fixed menu. Parameter tensors are empty for parameter-free kinds.
template <typename T>
struct Layer {
  LayerKind kind = LayerKind::relu;
  int kernel = 0;
  int stride = 1;
  Tensor<T> weights;
  Tensor<T> bias;
  Tensor<T> weight_grad;
  Tensor<T> bias_grad;
  Tensor<T> weight_velocity;
  Tensor<T> bias_velocity;

  static Layer conv(int in_ch, int out_ch, int k, int s) {
    if (k <= 0 || s <= 0) fail(ErrorKind::invalid_argument, "conv kernel and stride must be positive");
    Layer l;
    l.kind = LayerKind::conv;
    l.kernel = k;
    l.stride = s;
    l.set_param_shapes(Shape{out_ch, in_ch, k, k}, Shape{out_ch});
    return l;
  }

  static Layer fully_connected(int n_in, int n_out) {
    Layer l;
    l.kind = LayerKind::fc;
    l.set_param_shapes(Shape{n_out, n_in}, Shape{n_out});
    return l;
  }

  static Layer max_pool(int k, int s) {
    if (k <= 0 || s <= 0) fail(ErrorKind::invalid_argument, "pool kernel and stride must be positive");
    Layer l;
    l.kind = LayerKind::maxpool;
    l.kernel = k;
    l.stride = s;
    return l;
  }

  static Layer rectifier() { return Layer{}; }

  bool has_params() const noexcept { return kind == LayerKind::conv || kind == LayerKind::fc; }

  std::size_t param_count() const noexcept { return weights.size() + bias.size(); }

  void set_param_shapes(Shape w, Shape b) {
    weights = Tensor<T>(w);
    bias = Tensor<T>(b);
    weight_grad = Tensor<T>(w);
    bias_grad = Tensor<T>(b);
    weight_velocity = Tensor<T>(w);
    bias_velocity = Tensor<T>(b);
  }

  void zero_grad() {
    weight_grad.fill(T{});
    bias_grad.fill(T{});
  }
};

namespace detail {

inline int pooled_extent(int n, int k, int s) { return (n - k) / s + 1; }

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  int in_ch, h, w, out_ch, k, s, oh, ow;
  int patch() const { return in_ch * k * k; }
  int pixels() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Layer<T>& p) {
  if (input.rank() != 3 || p.weights.rank() != 4) fail(ErrorKind::shape, "conv2d expects (C,H,W) input");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), p.weights.dim(0), p.kernel, p.stride, 0, 0};
  if (p.weights.dim(1) != g.in_ch) {
    fail(ErrorKind::shape, "conv2d input channels " + std::to_string(g.in_ch) + " vs weights " +
                               to_string(p.weights.shape()));
  }
  if (g.h < g.k || g.w < g.k) fail(ErrorKind::shape, "conv2d input smaller than kernel");
  g.oh = pooled_extent(g.h, g.k, g.s);
  g.ow = pooled_extent(g.w, g.k, g.s);
  return g;
}

// Row (ic, ky, kx), column (oy, ox).
template <typename T>
AlignedVector<T> im2col(const T* in, const ConvGeometry& g) {
  AlignedVector<T> col(static_cast<std::size_t>(g.patch()) * g.pixels());
  T* dst = col.data();
  for (int ic = 0; ic < g.in_ch; ++ic) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        for (int oy = 0; oy < g.oh; ++oy) {
          const T* src = in + (static_cast<std::size_t>(ic) * g.h + oy * g.s + ky) * g.w + kx;
          for (int ox = 0; ox < g.ow; ++ox) *dst++ = src[ox * g.s];
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* out) {
  for (int ic = 0; ic < g.in_ch; ++ic) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        for (int oy = 0; oy < g.oh; ++oy) {
          T* dst = out + (static_cast<std::size_t>(ic) * g.h + oy * g.s + ky) * g.w + kx;
          for (int ox = 0; ox < g.ow; ++ox) dst[ox * g.s] += *col++;
        }
      }
    }
  }
}

}  // namespace detail

/// Valid (unpadded) 2-D convolution of a (C, H, W) input.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Layer<T>& p) {
  const auto g = detail::conv_geometry(input, p);
  Tensor<T> out(Shape{g.out_ch, g.oh, g.ow});
  const auto col = detail::im2col(input.data(), g);
  detail::MatrixMap<T> o(out.data(), g.out_ch, g.pixels());
  detail::ConstMatrixMap<T> w(p.weights.data(), g.out_ch, g.patch());
  detail::ConstMatrixMap<T> c(col.data(), g.patch(), g.pixels());
  o.noalias() = w * c;
  for (int oc = 0; oc < g.out_ch; ++oc) o.row(oc).array() += p.bias[static_cast<std::size_t>(oc)];
  return out;
}

/// Accumulates parameter gradients into `p` and returns dL/dinput.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& input, Layer<T>& p, const Tensor<T>& grad_out) {
  const auto g = detail::conv_geometry(input, p);
  if (!(grad_out.shape() == Shape{g.out_ch, g.oh, g.ow})) {
    fail(ErrorKind::shape, "conv2d_backward grad_out " + to_string(grad_out.shape()));
  }
  const auto col = detail::im2col(input.data(), g);
  detail::ConstMatrixMap<T> go(grad_out.data(), g.out_ch, g.pixels());
  detail::ConstMatrixMap<T> c(col.data(), g.patch(), g.pixels());
  detail::ConstMatrixMap<T> w(p.weights.data(), g.out_ch, g.patch());
  detail::MatrixMap<T> gw(p.weight_grad.data(), g.out_ch, g.patch());
  gw.noalias() += go * c.transpose();
  for (int oc = 0; oc < g.out_ch; ++oc) p.bias_grad[static_cast<std::size_t>(oc)] += go.row(oc).sum();

  AlignedVector<T> gcol(col.size());
  detail::MatrixMap<T> gc(gcol.data(), g.patch(), g.pixels());
  gc.noalias() = w.transpose() * go;
  Tensor<T> grad_in(input.shape());
  detail::col2im_add(gcol.data(), g, grad_in.data());
  return grad_in;
}

/// Max pooling; the second member holds, per output cell, the flat input index of its maximum.
/// Ties resolve to the smallest flat index.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> maxpool(const Tensor<T>& input, int k, int s) {
  if (input.rank() != 3) fail(ErrorKind::shape, "maxpool expects (C,H,W) input");
  const int c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (k <= 0 || s <= 0 || k > h || k > w) fail(ErrorKind::shape, "maxpool window does not fit input");
  const int oh = detail::pooled_extent(h, k, s), ow = detail::pooled_extent(w, k, s);
  Tensor<T> out(Shape{c_n, oh, ow});
  std::vector<int> argmax(out.size());
  std::size_t o = 0;
  for (int c = 0; c < c_n; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++o) {
        int best = (c * h + oy * s) * w + ox * s;
        T best_v = input[static_cast<std::size_t>(best)];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int idx = (c * h + oy * s + ky) * w + ox * s + kx;
            if (input[static_cast<std::size_t>(idx)] > best_v) {
              best_v = input[static_cast<std::size_t>(idx)];
              best = idx;
            }
          }
        }
        out[o] = best_v;
        argmax[o] = best;
      }
    }
  }
  return {std::move(out), std::move(argmax)};
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, std::span<const int> argmax, const Shape& input_shape) {
  if (grad_out.size() != argmax.size()) fail(ErrorKind::shape, "maxpool_backward argmax size");
  Tensor<T> grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    grad_in[static_cast<std::size_t>(argmax[i])] += grad_out[i];
  }
  return grad_in;
}

/// Fully connected layer over the flattened input: out = W * in + b.
template <typename T>
Tensor<T> fc(const Tensor<T>& input, const Layer<T>& p) {
  const int n_out = p.weights.dim(0), n_in = p.weights.dim(1);
  if (input.size() != static_cast<std::size_t>(n_in)) {
    fail(ErrorKind::shape, "fc input " + to_string(input.shape()) + " vs weights " + to_string(p.weights.shape()));
  }
  Tensor<T> out(Shape{n_out});
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  detail::ConstMatrixMap<T> w(p.weights.data(), n_out, n_in);
  Eigen::Map<const Vec> x(input.data(), n_in);
  Eigen::Map<const Vec> b(p.bias.data(), n_out);
  Eigen::Map<Vec>(out.data(), n_out).noalias() = w * x + b;
  return out;
}

template <typename T>
Tensor<T> fc_backward(const Tensor<T>& input, Layer<T>& p, const Tensor<T>& grad_out) {
  const int n_out = p.weights.dim(0), n_in = p.weights.dim(1);
  if (input.size() != static_cast<std::size_t>(n_in) || grad_out.size() != static_cast<std::size_t>(n_out)) {
    fail(ErrorKind::shape, "fc_backward");
  }
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Tensor<T> grad_in(input.shape());
  detail::ConstMatrixMap<T> w(p.weights.data(), n_out, n_in);
  Eigen::Map<const Vec> x(input.data(), n_in);
  Eigen::Map<const Vec> g(grad_out.data(), n_out);
  detail::MatrixMap<T>(p.weight_grad.data(), n_out, n_in).noalias() += g * x.transpose();
  Eigen::Map<Vec>(p.bias_grad.data(), n_out) += g;
  Eigen::Map<Vec>(grad_in.data(), n_in).noalias() = w.transpose() * g;
  return grad_in;
}

template <typename T>
Tensor<T> relu(Tensor<T> t) {
  for (auto& v : t.values()) v = v > T{} ? v : T{};
  return t;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, Tensor<T> grad_out) {
  if (!(input.shape() == grad_out.shape())) fail(ErrorKind::shape, "relu_backward");
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!(input[i] > T{})) grad_out[i] = T{};
  }
  return grad_out;
}

/// Max-subtracted softmax over a vector of logits.
template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (logits.empty()) return p;
  const T m = *std::max_element(logits.begin(), logits.end());
  T sum{};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& t) {
  if (t.rank() != 1) fail(ErrorKind::shape, "softmax expects a rank-1 tensor");
  return Tensor<T>(t.shape(), softmax<T>(t.values()));
}

}  // namespace pcn
