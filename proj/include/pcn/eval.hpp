#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "pcn/cascade.hpp"
#include "pcn/error.hpp"
#include "pcn/pipeline.hpp"
#include "pcn/synthetic.hpp"
#include "pcn/trainer.hpp"

namespace pcn {

/// Predicted orientation class of a stage-1/2 output: stage 1 gives 1 (up) or 0 (down),
/// stage 2 the argmax id with ties going to the smaller id.
inline int predicted_orientation(Stage s, const StageOutput& o) {
  if (s == Stage::one) return o.g >= 0.5 ? 1 : 0;
  if (s == Stage::two) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (o.g3[static_cast<std::size_t>(i)] > o.g3[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
  }
  fail(ErrorKind::invalid_argument, "stage 3 has no orientation classes");
}

/// Fraction of outputs whose predicted class equals the label.
inline double orientation_accuracy(Stage s, std::span<const double> labels, std::span<const StageOutput> outputs) {
  if (labels.size() != outputs.size()) fail(ErrorKind::shape, "labels/outputs length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ok += predicted_orientation(s, outputs[i]) == static_cast<int>(labels[i]);
  }
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

/// Mean |theta3 - 45 * label| in degrees over stage-3 outputs.
inline double calibration_mae(std::span<const double> labels, std::span<const StageOutput> outputs) {
  if (labels.size() != outputs.size()) fail(ErrorKind::shape, "labels/outputs length mismatch");
  if (labels.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sum += std::abs(theta3_from_norm(outputs[i].theta3_norm) - 45.0 * labels[i]);
  }
  return sum / static_cast<double>(labels.size());
}

struct OrientationMetrics {
  double stage1_accuracy = 0.0;
  double stage2_accuracy = 0.0;
  double stage3_mae = 0.0;
  std::size_t samples_per_stage = 0;
};

/// Runs each stage network on `n` held-out positive windows that carry a calibration label.
inline OrientationMetrics evaluate_orientation(const CascadeModel& model, const Corpus& corpus, std::size_t n,
                                               std::uint64_t seed) {
  OrientationMetrics m;
  m.samples_per_stage = n;
  for (Stage s : kStages) {
    SampleMiner miner(corpus, s, seed + static_cast<std::uint64_t>(stage_index(s)));
    std::vector<double> labels;
    std::vector<StageOutput> outputs;
    while (labels.size() < n) {
      const TrainingSample smp = miner.draw(Band::positive);
      if (!smp.orient) continue;
      labels.push_back(*smp.orient);
      outputs.push_back(decode<float>(model.at(s).forward(smp.patch).values(), s));
    }
    if (s == Stage::one) m.stage1_accuracy = orientation_accuracy(s, labels, outputs);
    if (s == Stage::two) m.stage2_accuracy = orientation_accuracy(s, labels, outputs);
    if (s == Stage::three) m.stage3_mae = calibration_mae(labels, outputs);
  }
  return m;
}

struct MatchedDetection {
  double score = 0.0;
  bool true_positive = false;
};

/// Greedy matching in descending score order: each detection claims the unclaimed face with
/// the highest IoU, if that IoU is at least `min_iou`.
inline std::vector<MatchedDetection> match_detections(std::span<const DetectedFace> dets,
                                                      std::span<const FaceAnnotation> faces, double min_iou = 0.5) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return dets[l].score > dets[r].score; });
  std::vector<char> taken(faces.size(), 0);
  std::vector<MatchedDetection> out;
  for (std::size_t i : order) {
    double best = min_iou;
    std::size_t hit = faces.size();
    for (std::size_t j = 0; j < faces.size(); ++j) {
      if (taken[j]) continue;
      const double v = iou(dets[i].box, faces[j].box);
      if (v >= best) {
        best = v;
        hit = j;
      }
    }
    if (hit < faces.size()) taken[hit] = 1;
    out.push_back({dets[i].score, hit < faces.size()});
  }
  return out;
}

struct RecallAtFp {
  double recall = 0.0;
  double threshold = 0.0;  // detections scoring >= threshold are counted
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
};

/// Recall at the lowest score threshold that admits no more than `fp_budget` false positives.
/// Detections with equal scores are admitted together. With no faces, recall is 0.
inline RecallAtFp recall_at_fp(std::vector<MatchedDetection> all, std::size_t n_faces, std::size_t fp_budget) {
  std::stable_sort(all.begin(), all.end(), [](const auto& l, const auto& r) { return l.score > r.score; });
  RecallAtFp r;
  r.threshold = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i, tp = 0, fp = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].true_positive ? tp : fp) += 1;
      ++j;
    }
    if (r.false_positives + fp > fp_budget) break;
    r.true_positives += tp;
    r.false_positives += fp;
    r.threshold = all[i].score;
    i = j;
  }
  r.recall = n_faces ? static_cast<double>(r.true_positives) / static_cast<double>(n_faces) : 0.0;
  return r;
}

/// One hundred false positives per 2845 images, scaled to the corpus.
inline std::size_t default_fp_budget(std::size_t corpus_size) { return corpus_size / 28; }

struct DetectionEvaluation {
  std::vector<std::vector<DetectedFace>> detections;
  std::vector<MatchedDetection> matches;
  std::size_t faces = 0;
  RecallAtFp at_budget;
};

inline DetectionEvaluation evaluate_detection(const CascadeModel& model, const Corpus& corpus, const DetectConfig& cfg,
                                              std::size_t fp_budget) {
  DetectionEvaluation ev;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const LabeledImage li = corpus.get(i);
    ev.detections.push_back(detect(li.image, model, cfg));
    const auto m = match_detections(ev.detections.back(), li.faces);
    ev.matches.insert(ev.matches.end(), m.begin(), m.end());
    ev.faces += li.faces.size();
  }
  ev.at_budget = recall_at_fp(ev.matches, ev.faces, fp_budget);
  return ev;
}

inline constexpr std::array<int, 4> kEvalRotations{0, 90, 180, 270};

/// Detection evaluation of `corpus` rotated clockwise by 0, 90, 180 and 270 degrees.
inline std::array<DetectionEvaluation, 4> evaluate_per_orientation(const CascadeModel& model, const Corpus& corpus,
                                                                   const DetectConfig& cfg, std::size_t fp_budget) {
  std::array<DetectionEvaluation, 4> out;
  for (std::size_t k = 0; k < kEvalRotations.size(); ++k) {
    const RotatedCorpus rotated(corpus, kEvalRotations[k]);
    out[k] = evaluate_detection(model, rotated, cfg, fp_budget);
  }
  return out;
}

inline double angle_difference(double x, double y) { return std::abs(normalize_degrees(x - y)); }

/// Where a detection of an upright image lands after the image is rotated clockwise by `angle`.
inline DetectedFace rotate_detection(const DetectedFace& d, int angle, int width, int height) {
  return {remap_box(d.box, OrientationFrame::up, frame_for_rotation(angle), width, height),
          normalize_degrees(d.theta_rip + angle), d.score};
}

struct EquivarianceCount {
  std::size_t matched = 0;
  std::size_t total = 0;

  double fraction() const { return total ? static_cast<double>(matched) / static_cast<double>(total) : 1.0; }
  EquivarianceCount& operator+=(const EquivarianceCount& o) {
    matched += o.matched;
    total += o.total;
    return *this;
  }
};

/// One-to-one greedy match between the rotated detections of the upright image and the
/// detections of the rotated image. `total` counts the larger of the two sets, so both
/// missing and extra detections count against the match rate.
inline EquivarianceCount compare_equivariance(std::span<const DetectedFace> upright, std::span<const DetectedFace> rotated,
                                              int angle, int width, int height, double min_iou = 0.7,
                                              double max_dtheta = 15.0) {
  EquivarianceCount c;
  c.total = std::max(upright.size(), rotated.size());
  std::vector<char> taken(rotated.size(), 0);
  for (const auto& d : upright) {
    const DetectedFace expect = rotate_detection(d, angle, width, height);
    double best = min_iou;
    std::size_t hit = rotated.size();
    for (std::size_t j = 0; j < rotated.size(); ++j) {
      if (taken[j] || angle_difference(expect.theta_rip, rotated[j].theta_rip) > max_dtheta) continue;
      const double v = iou(expect.box, rotated[j].box);
      if (v >= best) {
        best = v;
        hit = j;
      }
    }
    if (hit < rotated.size()) {
      taken[hit] = 1;
      ++c.matched;
    }
  }
  return c;
}

struct BenchConfig {
  int width = 640;
  int height = 480;
  double min_face = 40.0;
  int runs = 5;
  int stride = 4;
  std::uint64_t seed = 1;
};

struct BenchReport {
  std::vector<double> seconds;
  double mean_fps = 0.0;
  double median_fps = 0.0;
  double mean_proposals = 0.0;
  std::array<double, 3> mean_survivors{};
  double frame_sets_per_image = 0.0;
  double rotations_per_image = 0.0;
};

inline SceneParams bench_scene(const BenchConfig& cfg) {
  SceneParams p;
  p.width = cfg.width;
  p.height = cfg.height;
  p.max_faces = 4;
  p.min_face = cfg.min_face;
  p.max_face = std::max(cfg.min_face, std::min(cfg.width, cfg.height) / 3.0);
  p.max_distractors = 12;
  return p;
}

/// Times detect() on `runs` synthetic frames and averages the instrumentation counters.
inline BenchReport run_bench(const CascadeModel& model, const BenchConfig& cfg) {
  if (cfg.runs <= 0) fail(ErrorKind::invalid_argument, "runs must be positive");
  DetectConfig dc;
  dc.min_face = cfg.min_face;
  dc.stride = cfg.stride;
  dc.validate();
  const SceneParams scene = bench_scene(cfg);
  BenchReport r;
  DetectStats stats;
  for (int i = 0; i < cfg.runs; ++i) {
    const LabeledImage li = render_synthetic(cfg.seed, static_cast<std::size_t>(i), scene);
    const auto t0 = std::chrono::steady_clock::now();
    detect(li.image, model, dc, &stats);
    const auto t1 = std::chrono::steady_clock::now();
    r.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  const double n = cfg.runs;
  double total = 0.0;
  for (double s : r.seconds) total += s;
  r.mean_fps = total > 0.0 ? n / total : 0.0;
  std::vector<double> sorted = r.seconds;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  const double median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  r.median_fps = median > 0.0 ? 1.0 / median : 0.0;
  r.mean_proposals = static_cast<double>(stats.proposals) / n;
  for (std::size_t k = 0; k < 3; ++k) r.mean_survivors[k] = static_cast<double>(stats.survivors[k]) / n;
  r.frame_sets_per_image = stats.frame_sets_built / n;
  r.rotations_per_image = stats.rotations_computed / n;
  return r;
}

}  // namespace pcn
