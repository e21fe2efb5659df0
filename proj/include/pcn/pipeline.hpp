#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <vector>

#include "pcn/cascade.hpp"
#include "pcn/error.hpp"
#include "pcn/geometry.hpp"
#include "pcn/image.hpp"

namespace pcn {

/// A window moving through the cascade. `box` is always in original-image coordinates;
/// `frame` is the rotated copy its pixels are read from, and satisfies
/// frame_rotation(frame) == -theta_acc (mod 360).
struct Candidate {
  Box box;
  OrientationFrame frame = OrientationFrame::up;
  double score = 0.0;
  double theta1 = 0.0;
  double theta2 = 0.0;
  double theta_acc = 0.0;
  double theta3 = 0.0;
};

struct DetectConfig {
  double min_face = 40.0;
  double pyramid_factor = 0.79;
  int stride = 4;
  std::array<double, 3> thresholds{0.4, 0.5, 0.9};
  std::array<double, 3> nms_iou{0.8, 0.8, 0.3};
  int max_candidates = 2000;

  void validate() const {
    if (!(min_face > 0.0)) fail(ErrorKind::invalid_argument, "min_face must be positive");
    if (!(pyramid_factor > 0.0 && pyramid_factor < 1.0)) fail(ErrorKind::invalid_argument, "pyramid_factor in (0,1)");
    if (stride <= 0) fail(ErrorKind::invalid_argument, "stride must be positive");
    for (double t : thresholds) {
      if (!(t >= 0.0 && t < 1.0)) fail(ErrorKind::invalid_argument, "stage thresholds must be in [0, 1)");
    }
    for (double t : nms_iou) {
      if (!(t > 0.0 && t <= 1.0)) fail(ErrorKind::invalid_argument, "nms thresholds must be in (0, 1]");
    }
    if (max_candidates <= 0) fail(ErrorKind::invalid_argument, "max_candidates must be positive");
  }
};

struct DetectedFace {
  Box box;
  double theta_rip = 0.0;
  double score = 0.0;
};

/// Instrumentation filled in by detect().
struct DetectStats {
  int frame_sets_built = 0;
  int rotations_computed = 0;
  std::size_t proposals = 0;
  std::array<std::size_t, 3> survivors{};
};

/// The original image plus its three exact rotations, computed once per image.
class OrientationFrames {
 public:
  explicit OrientationFrames(const ImageBuffer& img, DetectStats* stats = nullptr)
      : width_(img.width), height_(img.height) {
    images_[static_cast<std::size_t>(OrientationFrame::up)] = img;
    for (OrientationFrame f : {OrientationFrame::left, OrientationFrame::right, OrientationFrame::down}) {
      images_[static_cast<std::size_t>(f)] = rot_exact(img, frame_rotation(f));
    }
    if (stats) {
      ++stats->frame_sets_built;
      stats->rotations_computed += 3;
    }
  }

  const ImageBuffer& operator[](OrientationFrame f) const { return images_[static_cast<std::size_t>(f)]; }
  int width() const { return width_; }
  int height() const { return height_; }

 private:
  int width_;
  int height_;
  std::array<ImageBuffer, 4> images_;
};

struct PyramidLevel {
  double scale = 1.0;
  int width = 0;
  int height = 0;
};

inline constexpr int kWindowSide = 24;

/// Pyramid levels (24 / min_face) * factor^k down to the last level whose short side is >= 24.
inline std::vector<PyramidLevel> pyramid_levels(int width, int height, const DetectConfig& cfg) {
  std::vector<PyramidLevel> levels;
  if (width < cfg.min_face || height < cfg.min_face) return levels;
  double scale = kWindowSide / cfg.min_face;
  for (;;) {
    const int lw = static_cast<int>(std::floor(width * scale + 1e-9));
    const int lh = static_cast<int>(std::floor(height * scale + 1e-9));
    if (std::min(lw, lh) < kWindowSide) break;
    levels.push_back({scale, lw, lh});
    scale *= cfg.pyramid_factor;
  }
  return levels;
}

/// Sliding 24x24 windows over every pyramid level, mapped back to original pixels.
inline std::vector<Candidate> propose(const ImageBuffer& img, const DetectConfig& cfg) {
  cfg.validate();
  std::vector<Candidate> out;
  for (const auto& lv : pyramid_levels(img.width, img.height, cfg)) {
    const double inv = 1.0 / lv.scale;
    for (int y = 0; y + kWindowSide <= lv.height; y += cfg.stride) {
      for (int x = 0; x + kWindowSide <= lv.width; x += cfg.stride) {
        Candidate c;
        c.box = {x * inv, y * inv, kWindowSide * inv};
        out.push_back(c);
      }
    }
  }
  return out;
}

namespace detail {

inline constexpr double kMinScaleStep = 0.5;
inline constexpr double kMaxScaleStep = 2.0;

inline std::vector<Candidate> suppress(std::vector<Candidate> cands, double thresh, std::size_t cap) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& c : cands) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  std::vector<Candidate> kept;
  for (std::size_t i : nms_indices(boxes, scores, thresh)) kept.push_back(cands[i]);
  if (kept.size() > cap) kept.resize(cap);
  return kept;
}

}  // namespace detail

/// Scores, regresses and calibrates every candidate with one stage network, then applies NMS
/// (per frame for stages 1-2, globally for stage 3).
inline std::vector<Candidate> run_stage(const std::vector<Candidate>& cands, Stage stage, const Network<float>& net,
                                        const OrientationFrames& frames, const DetectConfig& cfg) {
  const int side = stage_input_side(stage);
  const double tau = cfg.thresholds[static_cast<std::size_t>(stage_index(stage))];
  const int w = frames.width(), h = frames.height();
  std::vector<Candidate> passed;
  for (const Candidate& c : cands) {
    const Box in_frame = remap_box(c.box, OrientationFrame::up, c.frame, w, h);
    const Tensor<float> patch = crop_resize(frames[c.frame], in_frame, side);
    const Tensor<float> raw = net.forward(patch);
    const StageOutput o = decode<float>(raw.values(), stage);
    if (o.f < tau) continue;

    Candidate n = c;
    n.score = o.f;
    RegressionTarget t = o.t;
    t.t_w = std::clamp(t.t_w, detail::kMinScaleStep, detail::kMaxScaleStep);
    n.box = remap_box(bbox_apply(in_frame, t), c.frame, OrientationFrame::up, w, h);
    if (stage == Stage::one) {
      n.theta1 = decide_theta1(o.g);
    } else if (stage == Stage::two) {
      n.theta2 = decide_theta2(o.g3[0], o.g3[1], o.g3[2]);
    } else {
      n.theta3 = theta3_from_norm(o.theta3_norm);
    }
    if (stage != Stage::three) {
      n.theta_acc = normalize_degrees(n.theta1 + n.theta2);
      n.frame = frame_for_rotation(-static_cast<int>(std::lround(n.theta_acc)));
    }
    passed.push_back(n);
  }

  const double thresh = cfg.nms_iou[static_cast<std::size_t>(stage_index(stage))];
  const auto cap = static_cast<std::size_t>(cfg.max_candidates);
  if (stage == Stage::three) return detail::suppress(std::move(passed), thresh, cap);

  std::map<int, std::vector<Candidate>> groups;
  for (auto& c : passed) groups[static_cast<int>(c.frame)].push_back(c);
  std::vector<Candidate> merged;
  for (auto& [frame, group] : groups) {
    auto kept = detail::suppress(std::move(group), thresh, cap);
    merged.insert(merged.end(), kept.begin(), kept.end());
  }
  std::stable_sort(merged.begin(), merged.end(), [](const Candidate& l, const Candidate& r) { return l.score > r.score; });
  if (merged.size() > cap) merged.resize(cap);
  return merged;
}

inline DetectedFace to_detection(const Candidate& c) {
  return {c.box, accumulate_rip(c.theta1, c.theta2, c.theta3), c.score};
}

/// Full cascade on one image; detections sorted by descending score.
inline std::vector<DetectedFace> detect(const ImageBuffer& img, const CascadeModel& model, const DetectConfig& cfg,
                                        DetectStats* stats = nullptr) {
  cfg.validate();
  const OrientationFrames frames(img, stats);
  std::vector<Candidate> cands = propose(img, cfg);
  if (stats) stats->proposals += cands.size();
  for (Stage s : kStages) {
    cands = run_stage(cands, s, model.at(s), frames, cfg);
    if (stats) stats->survivors[static_cast<std::size_t>(stage_index(s))] += cands.size();
  }
  std::vector<DetectedFace> faces;
  faces.reserve(cands.size());
  for (const auto& c : cands) faces.push_back(to_detection(c));
  return faces;
}

}  // namespace pcn
