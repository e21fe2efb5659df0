#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pcn/cascade.hpp"
#include "pcn/error.hpp"
#include "pcn/geometry.hpp"
#include "pcn/network.hpp"
#include "pcn/pipeline.hpp"
#include "pcn/synthetic.hpp"

namespace pcn {

/// IoU bands: positive > 0.7, suspected in [0.4, 0.7], negative < 0.3; (0.3, 0.4) is unused.
inline std::optional<Band> band_for_iou(double v) {
  if (v > 0.7) return Band::positive;
  if (v < 0.3) return Band::negative;
  if (v >= 0.4) return Band::suspected;
  return std::nullopt;
}

/// Calibration label of a face at RIP `rip` for a stage, or nothing if the angle falls in a gap.
/// Stage 1: 1 = facing up [-65, 65], 0 = facing down (beyond +-115).
/// Stage 2: 0 / 1 / 2 for [-90, -60] / [-30, 30] / [60, 90].
/// Stage 3: rip / 45 within [-45, 45].
inline std::optional<double> orientation_label(Stage s, double rip) {
  const double r = normalize_degrees(rip);
  switch (s) {
    case Stage::one:
      if (std::abs(r) <= 65.0) return 1.0;
      if (std::abs(r) >= 115.0) return 0.0;
      return std::nullopt;
    case Stage::two:
      if (r >= -90.0 && r <= -60.0) return 0.0;
      if (r >= -30.0 && r <= 30.0) return 1.0;
      if (r >= 60.0 && r <= 90.0) return 2.0;
      return std::nullopt;
    case Stage::three:
      if (std::abs(r) <= 45.0) return r / 45.0;
      return std::nullopt;
  }
  return std::nullopt;
}

/// RIP range the training faces of a stage are rotated into.
inline std::pair<double, double> training_rip_range(Stage s) {
  switch (s) {
    case Stage::one: return {-180.0, 180.0};
    case Stage::two: return {-90.0, 90.0};
    case Stage::three: return {-45.0, 45.0};
  }
  return {0.0, 0.0};
}

struct TrainingSample {
  Tensor<float> patch;
  Band band = Band::negative;
  std::optional<RegressionTarget> reg;
  std::optional<double> orient;

  SampleLabels labels() const { return SampleLabels::make(band, reg, orient); }
};

/// Labels a window against the faces it may cover (face RIPs as seen in the window's frame).
/// Returns nothing for windows in the unused IoU gap.
inline std::optional<TrainingSample> label_window(const Box& win, std::span<const FaceAnnotation> faces, Stage s) {
  double best = 0.0;
  const FaceAnnotation* face = nullptr;
  for (const auto& f : faces) {
    const double v = iou(win, f.box);
    if (v > best) {
      best = v;
      face = &f;
    }
  }
  const auto band = band_for_iou(best);
  if (!band) return std::nullopt;
  TrainingSample out;
  out.band = *band;
  if (*band != Band::negative) {
    out.reg = bbox_targets(win, face->box);
    out.orient = orientation_label(s, face->theta);
  }
  return out;
}

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual TrainingSample draw(Band band) = 0;
};

/// Fixed sample lists, one per band, each cycled in a freshly shuffled order.
class SamplePool final : public SampleSource {
 public:
  SamplePool(std::vector<TrainingSample> samples, std::uint64_t seed) : rng_(seed) {
    for (auto& s : samples) bands_[static_cast<std::size_t>(s.band)].items.push_back(std::move(s));
  }

  std::size_t count(Band b) const { return bands_[static_cast<std::size_t>(b)].items.size(); }

  TrainingSample draw(Band band) override {
    auto& pool = bands_[static_cast<std::size_t>(band)];
    if (pool.items.empty()) fail(ErrorKind::insufficient_data, std::string("no ") + to_string(band) + " samples");
    if (pool.cursor >= pool.order.size()) {
      pool.order.resize(pool.items.size());
      std::iota(pool.order.begin(), pool.order.end(), std::size_t{0});
      std::shuffle(pool.order.begin(), pool.order.end(), rng_);
      pool.cursor = 0;
    }
    return pool.items[pool.order[pool.cursor++]];
  }

 private:
  struct PerBand {
    std::vector<TrainingSample> items;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  std::array<PerBand, 3> bands_;
  std::mt19937_64 rng_;
};

struct MinerConfig {
  int working_set = 16;          // images kept rendered at once
  int refresh_every = 8;         // draws between replacing one working-set image
  double neg_min_side = 20.0;
  double neg_max_side = 110.0;
  double near_face_negatives = 0.5;
};

/// Generates samples on the fly. Positive and suspected windows are jittered around a face
/// after rotating the image about the face centre so its RIP lands uniformly in the stage's
/// range; every visit draws a fresh angle. Negatives come from the hard-negative list when one
/// is supplied, otherwise from random windows.
class SampleMiner final : public SampleSource {
 public:
  SampleMiner(const Corpus& corpus, Stage stage, std::uint64_t seed, std::vector<Tensor<float>> hard_negatives = {},
              MinerConfig cfg = {})
      : corpus_(corpus), stage_(stage), cfg_(cfg), rng_(seed), hard_(std::move(hard_negatives)) {
    if (corpus_.size() == 0) fail(ErrorKind::insufficient_data, "empty corpus");
    hard_order_.resize(hard_.size());
    std::iota(hard_order_.begin(), hard_order_.end(), std::size_t{0});
    hard_cursor_ = hard_order_.size();
  }

  Stage stage() const { return stage_; }
  std::size_t hard_negative_count() const { return hard_.size(); }

  TrainingSample draw(Band band) override {
    tick();
    if (band == Band::negative) {
      return hard_.empty() ? random_negative() : next_hard_negative();
    }
    return face_sample(band);
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  void tick() {
    if (working_.empty()) {
      for (int i = 0; i < cfg_.working_set; ++i) working_.push_back(corpus_.get(pick(corpus_.size())));
    }
    if (++draws_ % static_cast<std::size_t>(cfg_.refresh_every) == 0) {
      working_[pick(working_.size())] = corpus_.get(pick(corpus_.size()));
    }
  }

  const LabeledImage& image_with_faces() {
    for (int attempt = 0; attempt < 256; ++attempt) {
      const std::size_t slot = pick(working_.size());
      if (!working_[slot].faces.empty()) return working_[slot];
      working_[slot] = corpus_.get(pick(corpus_.size()));
    }
    fail(ErrorKind::insufficient_data, "corpus has no annotated faces");
  }

  TrainingSample face_sample(Band band) {
    const LabeledImage& li = image_with_faces();
    const FaceAnnotation& face = li.faces[pick(li.faces.size())];
    const auto [lo, hi] = training_rip_range(stage_);
    const double target_rip = normalize_degrees(uniform(lo, hi));
    const double turn = target_rip - face.theta;
    const double jitter_scale = band == Band::positive ? 0.12 : 0.35;
    const double jitter_shift = band == Band::positive ? 0.10 : 0.35;
    for (int attempt = 0; attempt < 500; ++attempt) {
      const double side = face.box.w * std::exp(uniform(-jitter_scale, jitter_scale));
      const double cx = face.box.cx() + face.box.w * uniform(-jitter_shift, jitter_shift);
      const double cy = face.box.cy() + face.box.w * uniform(-jitter_shift, jitter_shift);
      const Box win{cx - 0.5 * side, cy - 0.5 * side, side};
      const double v = iou(win, face.box);
      const auto b = band_for_iou(v);
      if (!b || *b != band) continue;
      TrainingSample s;
      s.band = band;
      s.reg = bbox_targets(win, face.box);
      s.orient = orientation_label(stage_, target_rip);
      s.patch = crop_resize_rotated(li.image, win, turn, stage_input_side(stage_), face.box.cx(), face.box.cy());
      return s;
    }
    fail(ErrorKind::insufficient_data, "could not place a window in the requested band");
  }

  TrainingSample random_negative() {
    const LabeledImage& li = working_[pick(working_.size())];
    const double w = li.image.width, h = li.image.height;
    for (int attempt = 0; attempt < 500; ++attempt) {
      Box win;
      if (!li.faces.empty() && uniform(0.0, 1.0) < cfg_.near_face_negatives) {
        const auto& f = li.faces[pick(li.faces.size())];
        const double side = f.box.w * std::exp(uniform(-0.7, 0.7));
        win = {f.box.cx() + f.box.w * uniform(-1.2, 1.2) - 0.5 * side,
               f.box.cy() + f.box.w * uniform(-1.2, 1.2) - 0.5 * side, side};
      } else {
        const double side = std::exp(uniform(std::log(cfg_.neg_min_side), std::log(cfg_.neg_max_side)));
        win = {uniform(-0.1 * side, w - 0.9 * side), uniform(-0.1 * side, h - 0.9 * side), side};
      }
      double best = 0.0;
      for (const auto& f : li.faces) best = std::max(best, iou(win, f.box));
      if (best >= 0.3) continue;
      TrainingSample s;
      s.band = Band::negative;
      const double turn = 90.0 * static_cast<double>(pick(4));
      s.patch = crop_resize_rotated(li.image, win, turn, stage_input_side(stage_));
      return s;
    }
    fail(ErrorKind::insufficient_data, "could not place a negative window");
  }

  TrainingSample next_hard_negative() {
    if (hard_cursor_ >= hard_order_.size()) {
      std::shuffle(hard_order_.begin(), hard_order_.end(), rng_);
      hard_cursor_ = 0;
    }
    TrainingSample s;
    s.band = Band::negative;
    s.patch = hard_[hard_order_[hard_cursor_++]];
    return s;
  }

  const Corpus& corpus_;
  Stage stage_;
  MinerConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<LabeledImage> working_;
  std::size_t draws_ = 0;
  std::vector<Tensor<float>> hard_;
  std::vector<std::size_t> hard_order_;
  std::size_t hard_cursor_ = 0;
};

/// Windows that survive stages 1 .. stage-1 of `model` yet overlap no face (IoU < 0.3), cropped
/// exactly as the given stage would see them.
inline std::vector<Tensor<float>> mine_hard_negatives(const Corpus& corpus, Stage stage, const CascadeModel& model,
                                                      const DetectConfig& cfg, std::size_t max_images,
                                                      std::size_t max_count) {
  std::vector<Tensor<float>> out;
  if (stage == Stage::one) return out;
  const int side = stage_input_side(stage);
  const std::size_t n = std::min(max_images, corpus.size());
  for (std::size_t i = 0; i < n && out.size() < max_count; ++i) {
    const LabeledImage li = corpus.get(i);
    const OrientationFrames frames(li.image);
    std::vector<Candidate> cands = propose(li.image, cfg);
    for (int s = 1; s < static_cast<int>(stage); ++s) {
      const Stage st = stage_from_int(s);
      cands = run_stage(cands, st, model.at(st), frames, cfg);
    }
    for (const auto& c : cands) {
      double best = 0.0;
      for (const auto& f : li.faces) best = std::max(best, iou(c.box, f.box));
      if (best >= 0.3) continue;
      const Box in_frame = remap_box(c.box, OrientationFrame::up, c.frame, li.image.width, li.image.height);
      out.push_back(crop_resize(frames[c.frame], in_frame, side));
      if (out.size() >= max_count) break;
    }
  }
  return out;
}

struct SampleCounts {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t suspected = 0;
};

/// Materializes a sample list for `stage`. Stages 2 and 3 need the previously trained stages to
/// mine their hard negatives.
inline std::vector<TrainingSample> mine_samples(const Corpus& corpus, Stage stage, const CascadeModel* prev_nets,
                                                const SampleCounts& counts, std::uint64_t seed,
                                                const DetectConfig& mining_cfg = {}, std::size_t mining_images = 200) {
  std::vector<Tensor<float>> hard;
  if (stage != Stage::one) {
    if (!prev_nets) fail(ErrorKind::invalid_argument, "stages 2 and 3 require the previous stage networks");
    hard = mine_hard_negatives(corpus, stage, *prev_nets, mining_cfg, mining_images, counts.negative);
  }
  bool any_face = false;
  for (std::size_t i = 0; i < corpus.size() && !any_face; ++i) any_face = !corpus.get(i).faces.empty();
  if (!any_face) fail(ErrorKind::insufficient_data, "no positive samples can be drawn");
  SampleMiner miner(corpus, stage, seed, std::move(hard));
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < counts.positive; ++i) out.push_back(miner.draw(Band::positive));
  for (std::size_t i = 0; i < counts.negative; ++i) out.push_back(miner.draw(Band::negative));
  for (std::size_t i = 0; i < counts.suspected; ++i) out.push_back(miner.draw(Band::suspected));
  return out;
}

struct TrainConfig {
  LossWeights loss_weights;
  OptimState optim;
  int batch = 20;
  std::array<int, 3> ratio{2, 2, 1};  // positive : negative : suspected
  int log_every = 100;
};

struct BatchComposition {
  int positive = 0;
  int negative = 0;
  int suspected = 0;
};

/// Suspected count is floor(batch * r_s / sum); the rest splits by r_p : r_n, rounding toward positives.
inline BatchComposition batch_composition(int batch, const std::array<int, 3>& ratio) {
  if (batch <= 0) fail(ErrorKind::invalid_argument, "batch must be positive");
  if (ratio[0] <= 0 || ratio[1] <= 0 || ratio[2] <= 0) fail(ErrorKind::invalid_argument, "ratio must be positive");
  const int sum = ratio[0] + ratio[1] + ratio[2];
  BatchComposition c;
  c.suspected = batch * ratio[2] / sum;
  const int rest = batch - c.suspected;
  c.negative = rest * ratio[1] / (ratio[0] + ratio[1]);
  c.positive = rest - c.negative;
  return c;
}

struct TrainLogRow {
  long iteration = 0;
  double total = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double cal = 0.0;
  double lr = 0.0;
};

inline constexpr const char* kTrainLogHeader = "iteration,total_loss,cls_loss,reg_loss,cal_loss,lr";

inline void write_log_row(std::ostream& out, const TrainLogRow& r) {
  out << r.iteration << ',' << r.total << ',' << r.cls << ',' << r.reg << ',' << r.cal << ',' << r.lr << '\n';
}

struct TrainLog {
  std::vector<TrainLogRow> rows;
};

/// Minibatch SGD on one stage. Each term of the loss is averaged over the samples that carry
/// its label; rows of the log average the iterations since the previous row.
inline TrainLog train_stage(Network<float>& net, Stage stage, SampleSource& source, TrainConfig cfg,
                            const std::function<void(const TrainLogRow&)>& on_log = {}) {
  cfg.optim.validate();
  if (net.output_size() != output_arity(stage)) fail(ErrorKind::shape, "network does not match stage heads");
  const BatchComposition comp = batch_composition(cfg.batch, cfg.ratio);
  TrainLog log;
  TrainLogRow acc;
  long acc_n = 0;
  Network<float>::Trace trace;
  std::vector<TrainingSample> batch;
  while (cfg.optim.iteration < cfg.optim.max_iter) {
    batch.clear();
    for (int i = 0; i < comp.positive; ++i) batch.push_back(source.draw(Band::positive));
    for (int i = 0; i < comp.negative; ++i) batch.push_back(source.draw(Band::negative));
    for (int i = 0; i < comp.suspected; ++i) batch.push_back(source.draw(Band::suspected));
    int n_cls = 0, n_reg = 0, n_cal = 0;
    for (const auto& s : batch) {
      n_cls += s.band != Band::suspected;
      n_reg += s.reg.has_value();
      n_cal += s.orient.has_value();
    }
    const TermScale scale{n_cls ? 1.0 / n_cls : 0.0, n_reg ? 1.0 / n_reg : 0.0, n_cal ? 1.0 / n_cal : 0.0};

    net.zero_grad();
    double total = 0.0, cls = 0.0, reg = 0.0, cal = 0.0;
    for (const auto& s : batch) {
      const Tensor<float> raw = net.forward(s.patch, trace);
      const auto loss = stage_loss<float>(raw.values(), s.labels(), stage, cfg.loss_weights, scale);
      total += loss.total;
      cls += scale.cls * loss.cls;
      reg += scale.reg * loss.reg;
      cal += scale.cal * loss.cal;
      net.backward(trace, Tensor<float>(Shape{output_arity(stage)}, loss.grad));
    }
    if (!std::isfinite(total)) {
      fail(ErrorKind::numeric, "loss diverged at iteration " + std::to_string(cfg.optim.iteration) + " of stage " +
                                   std::to_string(static_cast<int>(stage)));
    }
    const double lr = cfg.optim.current_lr();
    sgd_step(net, cfg.optim);

    acc.total += total;
    acc.cls += cls;
    acc.reg += reg;
    acc.cal += cal;
    ++acc_n;
    if (cfg.optim.iteration % cfg.log_every == 0 || cfg.optim.iteration == cfg.optim.max_iter) {
      TrainLogRow row{cfg.optim.iteration, acc.total / acc_n, acc.cls / acc_n, acc.reg / acc_n, acc.cal / acc_n, lr};
      log.rows.push_back(row);
      if (on_log) on_log(row);
      acc = {};
      acc_n = 0;
    }
  }
  return log;
}

struct CascadeTrainConfig {
  std::array<TrainConfig, 3> stages{};
  DetectConfig mining{};
  std::size_t mining_images = 300;
  std::size_t max_hard_negatives = 20000;
  std::uint64_t seed = 1;

  /// Scaled-down schedule: `iters` steps per stage with the rate dropping at 70%.
  static CascadeTrainConfig with_iterations(long iters, std::uint64_t seed) {
    CascadeTrainConfig c;
    c.seed = seed;
    c.mining.min_face = 24.0;
    for (auto& s : c.stages) {
      s.optim.max_iter = iters;
      s.optim.lr_drop_iter = iters * 7 / 10;
    }
    return c;
  }
};

struct CascadeTrainResult {
  CascadeModel model;
  std::array<TrainLog, 3> logs;
  std::array<std::size_t, 3> hard_negatives{};
};

/// Trains stages 1 -> 2 -> 3; each later stage mines its negatives through the earlier ones.
inline CascadeTrainResult train_cascade(const Corpus& corpus, const CascadeTrainConfig& cfg,
                                        const std::function<void(Stage, const TrainLogRow&)>& on_log = {}) {
  CascadeTrainResult result;
  result.model = CascadeModel::fresh(cfg.seed);
  for (Stage s : kStages) {
    const auto& sc = cfg.stages[static_cast<std::size_t>(stage_index(s))];
    if (sc.optim.max_iter <= 0) continue;
    std::vector<Tensor<float>> hard;
    if (s != Stage::one) {
      hard = mine_hard_negatives(corpus, s, result.model, cfg.mining, cfg.mining_images, cfg.max_hard_negatives);
    }
    result.hard_negatives[static_cast<std::size_t>(stage_index(s))] = hard.size();
    SampleMiner miner(corpus, s, cfg.seed * 7919 + static_cast<std::uint64_t>(stage_index(s)), std::move(hard));
    result.logs[static_cast<std::size_t>(stage_index(s))] =
        train_stage(result.model.at(s), s, miner, sc, [&](const TrainLogRow& row) {
          if (on_log) on_log(s, row);
        });
  }
  return result;
}

}  // namespace pcn
