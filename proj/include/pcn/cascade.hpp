#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pcn/error.hpp"
#include "pcn/geometry.hpp"
#include "pcn/losses.hpp"
#include "pcn/network.hpp"

namespace pcn {

enum class Stage : int { one = 1, two = 2, three = 3 };

inline constexpr Stage kStages[] = {Stage::one, Stage::two, Stage::three};

inline int stage_index(Stage s) { return static_cast<int>(s) - 1; }

inline Stage stage_from_int(int v) {
  if (v < 1 || v > 3) fail(ErrorKind::invalid_argument, "stage must be 1, 2 or 3");
  return static_cast<Stage>(v);
}

inline int stage_input_side(Stage s) { return s == Stage::three ? 48 : 24; }

/// Number of orientation outputs: 2 logits (up/down), 3 logits (left/up/right), 1 regressed angle.
inline int orient_arity(Stage s) {
  switch (s) {
    case Stage::one: return 2;
    case Stage::two: return 3;
    case Stage::three: return 1;
  }
  return 0;
}

/// Raw output layout: [face logits (2) | t_w t_a t_b | orientation].
inline int output_arity(Stage s) { return 5 + orient_arity(s); }

inline constexpr int kFaceOffset = 0;
inline constexpr int kRegOffset = 2;
inline constexpr int kOrientOffset = 5;

/// Default layer stacks. Every head is a slice of the final fully connected layer, which
/// branches from the last shared hidden layer.
inline NetSpec default_net_spec(Stage s) {
  using L = LayerSpec;
  NetSpec spec;
  spec.in_channels = 3;
  spec.input_side = stage_input_side(s);
  switch (s) {
    case Stage::one:
      spec.layers = {L::conv(10, 3, 2), L::relu(), L::conv(16, 3, 1), L::relu(), L::pool(2, 2),
                     L::conv(24, 3, 1), L::relu(), L::fc(96),          L::relu(), L::fc(output_arity(s))};
      break;
    case Stage::two:
      spec.layers = {L::conv(16, 3, 2), L::relu(), L::conv(24, 3, 1), L::relu(), L::conv(32, 3, 1),
                     L::relu(),         L::pool(3, 2), L::fc(128),    L::relu(), L::fc(output_arity(s))};
      break;
    case Stage::three:
      spec.layers = {L::conv(24, 3, 2), L::relu(), L::pool(3, 2), L::conv(32, 3, 1), L::relu(),
                     L::pool(3, 2),     L::conv(48, 3, 1), L::relu(), L::conv(64, 2, 1), L::relu(),
                     L::fc(192),        L::relu(), L::fc(output_arity(s))};
      break;
  }
  return spec;
}

/// Fresh stage network with fan-in scaled Gaussian weights.
inline Network<float> build_pcn(Stage s, std::uint64_t seed) {
  Network<float> net(default_net_spec(s));
  fan_in_init(net, seed);
  return net;
}

/// Decoded head outputs for one window.
struct StageOutput {
  double f = 0.0;                         // face probability
  RegressionTarget t;                     // predicted (t_w, t_a, t_b)
  double g = 0.0;                         // stage 1: probability of facing up
  std::array<double, 3> g3{};             // stage 2: scores for -90 / 0 / +90
  double theta3_norm = 0.0;               // stage 3: predicted residual angle / 45
};

template <typename T>
StageOutput decode(std::span<const T> raw, Stage s) {
  if (raw.size() != static_cast<std::size_t>(output_arity(s))) fail(ErrorKind::shape, "stage output arity");
  StageOutput o;
  const auto face = softmax<T>(raw.subspan(kFaceOffset, 2));
  o.f = static_cast<double>(face[1]);
  o.t = {static_cast<double>(raw[kRegOffset]), static_cast<double>(raw[kRegOffset + 1]),
         static_cast<double>(raw[kRegOffset + 2])};
  if (s == Stage::one) {
    o.g = static_cast<double>(softmax<T>(raw.subspan(kOrientOffset, 2))[1]);
  } else if (s == Stage::two) {
    const auto p = softmax<T>(raw.subspan(kOrientOffset, 3));
    for (int i = 0; i < 3; ++i) o.g3[static_cast<std::size_t>(i)] = static_cast<double>(p[static_cast<std::size_t>(i)]);
  } else {
    o.theta3_norm = static_cast<double>(raw[kOrientOffset]);
  }
  return o;
}

/// theta_1: 0 when facing up (g >= 0.5), otherwise 180.
inline double decide_theta1(double g) { return g >= 0.5 ? 0.0 : 180.0; }

/// theta_2 from the ternary scores; ties go to the smaller class id.
inline double decide_theta2(double g0, double g1, double g2) {
  int id = 0;
  double best = g0;
  if (g1 > best) {
    best = g1;
    id = 1;
  }
  if (g2 > best) id = 2;
  return id == 0 ? -90.0 : (id == 1 ? 0.0 : 90.0);
}

inline double theta3_from_norm(double norm) { return 45.0 * std::clamp(norm, -1.0, 1.0); }

/// theta_RIP = theta_1 + theta_2 + theta_3, normalized into (-180, 180].
inline double accumulate_rip(double theta1, double theta2, double theta3) {
  return normalize_degrees(theta1 + theta2 + theta3);
}

enum class Band { positive, negative, suspected };

inline const char* to_string(Band b) {
  switch (b) {
    case Band::positive: return "positive";
    case Band::negative: return "negative";
    case Band::suspected: return "suspected";
  }
  return "?";
}

/// Supervision for one window. `orient` is a class index for stages 1-2 and angle/45 for stage 3.
struct SampleLabels {
  Band band = Band::negative;
  std::optional<int> face;
  std::optional<RegressionTarget> reg;
  std::optional<double> orient;

  /// Builds labels with the face term implied by the band (suspected windows get none).
  static SampleLabels make(Band band, std::optional<RegressionTarget> reg = {}, std::optional<double> orient = {}) {
    SampleLabels l;
    l.band = band;
    if (band == Band::positive) l.face = 1;
    if (band == Band::negative) l.face = 0;
    l.reg = reg;
    l.orient = orient;
    return l;
  }
};

struct LossWeights {
  double lambda_reg = 0.5;
  double lambda_cal = 0.5;
};

/// Extra per-term multipliers, used by the trainer to average each term over the samples
/// that actually contribute to it.
struct TermScale {
  double cls = 1.0;
  double reg = 1.0;
  double cal = 1.0;
};

template <typename T>
struct StageLoss {
  T total{};
  T cls{};
  T reg{};
  T cal{};
  std::vector<T> grad;  // d total / d raw outputs
};

/// L = L_cls + lambda_reg * L_reg + lambda_cal * L_cal for one window; absent labels
/// contribute neither loss nor gradient.
template <typename T>
StageLoss<T> stage_loss(std::span<const T> raw, const SampleLabels& labels, Stage s, const LossWeights& lw,
                        const TermScale& scale = {}) {
  if (raw.size() != static_cast<std::size_t>(output_arity(s))) fail(ErrorKind::shape, "stage output arity");
  if (lw.lambda_reg < 0.0 || lw.lambda_cal < 0.0) fail(ErrorKind::invalid_argument, "loss weights must be >= 0");
  if (labels.band == Band::suspected && labels.face) {
    fail(ErrorKind::invalid_argument, "suspected samples do not train face classification");
  }
  if (labels.band == Band::negative && (labels.reg || labels.orient)) {
    fail(ErrorKind::invalid_argument, "negative samples carry no regression or calibration label");
  }
  StageLoss<T> out;
  out.grad.assign(raw.size(), T{});

  if (labels.face) {
    const auto ce = softmax_cross_entropy<T>(raw.subspan(kFaceOffset, 2), *labels.face);
    out.cls = ce.loss;
    const T k = static_cast<T>(scale.cls);
    for (int i = 0; i < 2; ++i) out.grad[static_cast<std::size_t>(kFaceOffset + i)] += k * ce.grad[static_cast<std::size_t>(i)];
    out.total += k * ce.loss;
  }
  if (labels.reg) {
    const std::array<T, 3> target{static_cast<T>(labels.reg->t_w), static_cast<T>(labels.reg->t_a),
                                  static_cast<T>(labels.reg->t_b)};
    const auto sl = smooth_l1<T>(raw.subspan(kRegOffset, 3), target);
    out.reg = sl.loss;
    const T k = static_cast<T>(lw.lambda_reg * scale.reg);
    for (int i = 0; i < 3; ++i) out.grad[static_cast<std::size_t>(kRegOffset + i)] += k * sl.grad[static_cast<std::size_t>(i)];
    out.total += k * sl.loss;
  }
  if (labels.orient) {
    const T k = static_cast<T>(lw.lambda_cal * scale.cal);
    if (s == Stage::three) {
      const std::array<T, 1> target{static_cast<T>(*labels.orient)};
      const auto sl = smooth_l1<T>(raw.subspan(kOrientOffset, 1), target);
      out.cal = sl.loss;
      out.grad[kOrientOffset] += k * sl.grad[0];
      out.total += k * sl.loss;
    } else {
      const double v = *labels.orient;
      const int id = static_cast<int>(v);
      if (static_cast<double>(id) != v || id < 0 || id >= orient_arity(s)) {
        fail(ErrorKind::invalid_argument, "orientation class out of range");
      }
      const auto ce = softmax_cross_entropy<T>(raw.subspan(kOrientOffset, static_cast<std::size_t>(orient_arity(s))), id);
      out.cal = ce.loss;
      for (int i = 0; i < orient_arity(s); ++i) {
        out.grad[static_cast<std::size_t>(kOrientOffset + i)] += k * ce.grad[static_cast<std::size_t>(i)];
      }
      out.total += k * ce.loss;
    }
  }
  return out;
}

/// The three stage networks of one detector.
struct CascadeModel {
  std::array<Network<float>, 3> nets;

  Network<float>& at(Stage s) { return nets[static_cast<std::size_t>(stage_index(s))]; }
  const Network<float>& at(Stage s) const { return nets[static_cast<std::size_t>(stage_index(s))]; }

  static CascadeModel fresh(std::uint64_t seed) {
    CascadeModel m;
    for (Stage s : kStages) m.at(s) = build_pcn(s, seed + static_cast<std::uint64_t>(stage_index(s)));
    return m;
  }
};

}  // namespace pcn
