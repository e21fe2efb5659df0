#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pcn/error.hpp"
#include "pcn/layers.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

/// Declarative layer entry. `out` is the channel count for conv and the width for fc.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int kernel = 0;
  int stride = 1;
  int out = 0;

  static LayerSpec conv(int out_ch, int k, int s) { return {LayerKind::conv, k, s, out_ch}; }
  static LayerSpec pool(int k, int s) { return {LayerKind::maxpool, k, s, 0}; }
  static LayerSpec fc(int n_out) { return {LayerKind::fc, 0, 1, n_out}; }
  static LayerSpec relu() { return {LayerKind::relu, 0, 1, 0}; }
};

struct NetSpec {
  int in_channels = 3;
  int input_side = 24;
  std::vector<LayerSpec> layers;
};

/// A feed-forward chain of layers over a square (C, side, side) input.
template <typename T>
class Network {
 public:
  /// Intermediate state kept by a training forward pass.
  struct Trace {
    std::vector<Tensor<T>> inputs;            // input of every layer
    std::vector<std::vector<int>> argmax;     // per layer, empty unless maxpool
  };

  Network() = default;

  explicit Network(const NetSpec& spec) : in_channels_(spec.in_channels), input_side_(spec.input_side) {
    int c = spec.in_channels, h = spec.input_side, w = spec.input_side;
    bool flat = false;
    for (const auto& ls : spec.layers) {
      switch (ls.kind) {
        case LayerKind::conv:
          if (flat || h < ls.kernel || w < ls.kernel) fail(ErrorKind::shape, "conv does not fit its input");
          layers_.push_back(Layer<T>::conv(c, ls.out, ls.kernel, ls.stride));
          c = ls.out;
          h = detail::pooled_extent(h, ls.kernel, ls.stride);
          w = detail::pooled_extent(w, ls.kernel, ls.stride);
          break;
        case LayerKind::maxpool:
          if (flat || h < ls.kernel || w < ls.kernel) fail(ErrorKind::shape, "pool does not fit its input");
          layers_.push_back(Layer<T>::max_pool(ls.kernel, ls.stride));
          h = detail::pooled_extent(h, ls.kernel, ls.stride);
          w = detail::pooled_extent(w, ls.kernel, ls.stride);
          break;
        case LayerKind::fc:
          layers_.push_back(Layer<T>::fully_connected(flat ? c : c * h * w, ls.out));
          c = ls.out;
          h = w = 1;
          flat = true;
          break;
        case LayerKind::relu:
          layers_.push_back(Layer<T>::rectifier());
          break;
        case LayerKind::softmax:
          fail(ErrorKind::invalid_argument, "softmax is applied per head, not as a chain layer");
      }
    }
    output_size_ = flat ? c : c * h * w;
  }

  Network(int in_channels, int input_side, std::vector<Layer<T>> layers, int output_size)
      : in_channels_(in_channels), input_side_(input_side), output_size_(output_size), layers_(std::move(layers)) {}

  int in_channels() const noexcept { return in_channels_; }
  int input_side() const noexcept { return input_side_; }
  int output_size() const noexcept { return output_size_; }
  Shape input_shape() const { return Shape{in_channels_, input_side_, input_side_}; }

  std::vector<Layer<T>>& layers() noexcept { return layers_; }
  const std::vector<Layer<T>>& layers() const noexcept { return layers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
  }

  void zero_grad() {
    for (auto& l : layers_) {
      if (l.has_params()) l.zero_grad();
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    check_input(x);
    Tensor<T> a = x;
    for (const auto& l : layers_) a = apply(l, a, nullptr);
    return a;
  }

  Tensor<T> forward(const Tensor<T>& x, Trace& trace) const {
    check_input(x);
    trace.inputs.clear();
    trace.argmax.assign(layers_.size(), {});
    Tensor<T> a = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      trace.inputs.push_back(a);
      a = apply(layers_[i], a, &trace.argmax[i]);
    }
    return a;
  }

  /// Accumulates parameter gradients for one sample; returns dL/dinput.
  Tensor<T> backward(const Trace& trace, Tensor<T> grad) {
    if (trace.inputs.size() != layers_.size()) fail(ErrorKind::shape, "trace does not belong to this network");
    for (std::size_t i = layers_.size(); i-- > 0;) {
      auto& l = layers_[i];
      const auto& in = trace.inputs[i];
      switch (l.kind) {
        case LayerKind::conv: grad = conv2d_backward(in, l, grad); break;
        case LayerKind::maxpool: grad = maxpool_backward(grad, trace.argmax[i], in.shape()); break;
        case LayerKind::fc: grad = fc_backward(in, l, grad); break;
        case LayerKind::relu: grad = relu_backward(in, std::move(grad)); break;
        case LayerKind::softmax: break;
      }
    }
    return grad;
  }

  template <typename U>
  Network<U> cast() const {
    std::vector<Layer<U>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) {
      Layer<U> u;
      u.kind = l.kind;
      u.kernel = l.kernel;
      u.stride = l.stride;
      if (l.has_params()) {
        u.set_param_shapes(l.weights.shape(), l.bias.shape());
        u.weights = l.weights.template cast<U>();
        u.bias = l.bias.template cast<U>();
      }
      out.push_back(std::move(u));
    }
    return Network<U>(in_channels_, input_side_, std::move(out), output_size_);
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (!(x.shape() == input_shape())) {
      fail(ErrorKind::shape, "network input " + to_string(x.shape()) + " vs " + to_string(input_shape()));
    }
  }

  static Tensor<T> apply(const Layer<T>& l, const Tensor<T>& a, std::vector<int>* argmax) {
    switch (l.kind) {
      case LayerKind::conv: return conv2d(a, l);
      case LayerKind::maxpool: {
        auto [out, idx] = maxpool(a, l.kernel, l.stride);
        if (argmax) *argmax = std::move(idx);
        return out;
      }
      case LayerKind::fc: return fc(a, l);
      case LayerKind::relu: return relu(a);
      case LayerKind::softmax: return softmax(a);
    }
    return a;
  }

  int in_channels_ = 0;
  int input_side_ = 0;
  int output_size_ = 0;
  std::vector<Layer<T>> layers_;
};

/// SGD hyper-parameters with Caffe's "step" policy: the rate drops by 10x once
/// `iteration` reaches `lr_drop_iter`.
struct OptimState {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  long iteration = 0;
  long lr_drop_iter = 7000;
  long max_iter = 10000;

  double current_lr() const { return iteration >= lr_drop_iter ? lr * 0.1 : lr; }

  void validate() const {
    if (!(lr >= 0.0)) fail(ErrorKind::invalid_argument, "learning rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::invalid_argument, "momentum must be in [0, 1)");
  }
};

/// v <- momentum*v - lr*(grad + wd*w); w <- w + v. Biases are not decayed.
template <typename T>
void sgd_step(Network<T>& net, OptimState& optim) {
  const T lr = static_cast<T>(optim.current_lr());
  const T mu = static_cast<T>(optim.momentum);
  const T wd = static_cast<T>(optim.weight_decay);
  for (auto& l : net.layers()) {
    if (!l.has_params()) continue;
    for (std::size_t i = 0; i < l.weights.size(); ++i) {
      T& v = l.weight_velocity[i];
      v = mu * v - lr * (l.weight_grad[i] + wd * l.weights[i]);
      l.weights[i] += v;
    }
    for (std::size_t i = 0; i < l.bias.size(); ++i) {
      T& v = l.bias_velocity[i];
      v = mu * v - lr * l.bias_grad[i];
      l.bias[i] += v;
    }
  }
  ++optim.iteration;
}

/// Zero-mean Gaussian weights, zero biases; deterministic in `seed`.
template <typename T>
void gaussian_init(Network<T>& net, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& l : net.layers()) {
    if (!l.has_params()) continue;
    for (auto& w : l.weights.values()) w = static_cast<T>(stddev * normal(rng));
    l.bias.fill(T{});
    l.weight_velocity.fill(T{});
    l.bias_velocity.fill(T{});
    l.zero_grad();
  }
}

/// Zero-mean Gaussian weights with stddev gain / sqrt(fan_in) per layer; zero biases.
template <typename T>
void fan_in_init(Network<T>& net, std::uint64_t seed, double gain = 1.4142135623730951) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& l : net.layers()) {
    if (!l.has_params()) continue;
    const double fan_in = static_cast<double>(l.weights.size()) / l.weights.dim(0);
    const double stddev = gain / std::sqrt(fan_in);
    for (auto& w : l.weights.values()) w = static_cast<T>(stddev * normal(rng));
    l.bias.fill(T{});
    l.weight_velocity.fill(T{});
    l.bias_velocity.fill(T{});
    l.zero_grad();
  }
}

}  // namespace pcn
