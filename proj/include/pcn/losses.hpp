#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "pcn/error.hpp"
#include "pcn/layers.hpp"

namespace pcn {

template <typename T>
struct LossAndGrad {
  T loss{};
  std::vector<T> grad;
};

inline constexpr double kProbClamp = 1e-7;

template <typename T>
T clamp_prob(T p) {
  return std::clamp(p, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
}

/// Two-class cross entropy from the positive-class probability `prob` and label `y`.
/// The gradient is taken with respect to the (negative, positive) logit pair.
template <typename T>
LossAndGrad<T> cross_entropy_loss(T prob, int y) {
  if (y != 0 && y != 1) fail(ErrorKind::invalid_argument, "binary label must be 0 or 1");
  const T f = clamp_prob(prob);
  const T yt = static_cast<T>(y);
  LossAndGrad<T> r;
  r.loss = -(yt * std::log(f) + (T{1} - yt) * std::log(T{1} - f));
  r.grad = {yt - prob, prob - yt};
  return r;
}

/// Softmax cross entropy over k logits; gradient is softmax - onehot(label).
template <typename T>
LossAndGrad<T> softmax_cross_entropy(std::span<const T> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    fail(ErrorKind::invalid_argument, "class label out of range");
  }
  LossAndGrad<T> r;
  r.grad = softmax<T>(logits);
  r.loss = -std::log(clamp_prob(r.grad[static_cast<std::size_t>(label)]));
  r.grad[static_cast<std::size_t>(label)] -= T{1};
  return r;
}

/// Summed smooth-L1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
template <typename T>
LossAndGrad<T> smooth_l1(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) fail(ErrorKind::shape, "smooth_l1 length mismatch");
  LossAndGrad<T> r;
  r.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    if (std::abs(d) < T{1}) {
      r.loss += T{0.5} * d * d;
      r.grad[i] = d;
    } else {
      r.loss += std::abs(d) - T{0.5};
      r.grad[i] = d > T{} ? T{1} : T{-1};
    }
  }
  return r;
}

}  // namespace pcn
