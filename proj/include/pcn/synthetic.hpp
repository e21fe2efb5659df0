#pragma once

// Procedural stand-in for a face corpus: "glyph faces" are disks carrying a dark cap on
// top and a T-shaped mark, so every 90-degree rotation of a glyph looks different.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "pcn/geometry.hpp"
#include "pcn/image.hpp"

namespace pcn {

struct FaceAnnotation {
  Box box;
  double theta = 0.0;  // RIP angle, clockwise, (-180, 180]
};

struct LabeledImage {
  ImageBuffer image;
  std::vector<FaceAnnotation> faces;
};

struct SceneParams {
  int width = 128;
  int height = 128;
  int max_faces = 2;
  double min_face = 24.0;
  double max_face = 64.0;
  int max_distractors = 4;
};

namespace glyph {

enum Region { none = 0, skin = 1, mark = 2, cap = 3 };

inline constexpr double kRadius = 0.46;

/// Region at face-local coordinates (units of box side, origin at centre, +v toward the chin).
inline Region region(double u, double v) {
  if (u * u + v * v > kRadius * kRadius) return none;
  if (v < -0.27) return cap;
  if (v >= -0.19 && v <= -0.07 && std::abs(u) <= 0.28) return mark;
  if (std::abs(u) <= 0.07 && v > -0.07 && v <= 0.31) return mark;
  return skin;
}

using Rgb = std::array<float, 3>;

struct Palette {
  Rgb skin{0.93f, 0.78f, 0.60f};
  Rgb mark{0.10f, 0.08f, 0.12f};
  Rgb cap{0.55f, 0.12f, 0.10f};
};

}  // namespace glyph

/// Draws one glyph face over `img`, anti-aliased with a 4x4 supersampling grid that is
/// closed under 90-degree rotation.
inline void render_glyph(ImageBuffer& img, const Box& box, double theta, const glyph::Palette& pal = {}) {
  const auto [s, c] = sincos_deg(theta);
  const double cx = box.cx(), cy = box.cy();
  const double reach = box.w * 0.5 + 1.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + reach)));
  static constexpr double kOffsets[4] = {-0.375, -0.125, 0.125, 0.375};
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      std::array<double, 3> acc{};
      int hits = 0;
      for (double oy : kOffsets) {
        for (double ox : kOffsets) {
          const double dx = x + 0.5 + ox - cx, dy = y + 0.5 + oy - cy;
          const double u = (c * dx + s * dy) / box.w;
          const double v = (-s * dx + c * dy) / box.w;
          const glyph::Region r = glyph::region(u, v);
          if (r == glyph::none) continue;
          const glyph::Rgb& col = r == glyph::skin ? pal.skin : (r == glyph::mark ? pal.mark : pal.cap);
          for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += col[static_cast<std::size_t>(k)];
          ++hits;
        }
      }
      if (hits == 0) continue;
      const double cover = hits / 16.0;
      for (int k = 0; k < img.channels; ++k) {
        const double fg = img.channels == 3 ? acc[static_cast<std::size_t>(k)] / hits
                                            : (acc[0] + acc[1] + acc[2]) / (3.0 * hits);
        float& px = img.at(x, y, k);
        px = static_cast<float>((1.0 - cover) * px + cover * fg);
      }
    }
  }
}

namespace detail {

inline void render_background(ImageBuffer& img, std::mt19937_64& rng, int max_distractors) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, 3> base{};
  for (auto& b : base) b = 0.2 + 0.35 * unit(rng);
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::array<Wave, 3> waves{};
  for (auto& wv : waves) {
    const double ang = unit(rng) * 6.283185307179586;
    const double freq = 0.02 + 0.12 * unit(rng);
    wv = {freq * std::cos(ang), freq * std::sin(ang), unit(rng) * 6.283185307179586, 0.03 + 0.07 * unit(rng)};
  }
  std::uniform_real_distribution<double> noise(-0.08, 0.08);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double tex = 0.0;
      for (const auto& wv : waves) tex += wv.amp * std::sin(wv.kx * x + wv.ky * y + wv.phase);
      for (int k = 0; k < img.channels; ++k) {
        img.at(x, y, k) = static_cast<float>(std::clamp(base[static_cast<std::size_t>(k)] + tex + noise(rng), 0.0, 1.0));
      }
    }
  }
  // distractors: plain disks (some skin coloured), bars and blocks
  std::uniform_int_distribution<int> count(0, max_distractors);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const int kind = static_cast<int>(unit(rng) * 3.0);
    const double cx = unit(rng) * img.width, cy = unit(rng) * img.height;
    const double size = 8.0 + unit(rng) * 40.0;
    std::array<double, 3> col{unit(rng), unit(rng), unit(rng)};
    if (kind == 0 && unit(rng) < 0.5) col = {0.93, 0.78, 0.60};
    const double ang = unit(rng) * 3.141592653589793;
    const double ca = std::cos(ang), sa = std::sin(ang);
    const double half_len = size * 0.5, half_thick = size * (kind == 1 ? 0.08 : 0.35);
    for (int y = std::max(0, static_cast<int>(cy - size)); y < std::min(img.height, static_cast<int>(cy + size) + 1); ++y) {
      for (int x = std::max(0, static_cast<int>(cx - size)); x < std::min(img.width, static_cast<int>(cx + size) + 1); ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        bool in = false;
        if (kind == 0) {
          in = dx * dx + dy * dy <= half_len * half_len * 0.8;
        } else {
          const double along = ca * dx + sa * dy, across = -sa * dx + ca * dy;
          in = std::abs(along) <= half_len && std::abs(across) <= half_thick;
        }
        if (!in) continue;
        for (int k = 0; k < img.channels; ++k) img.at(x, y, k) = static_cast<float>(col[static_cast<std::size_t>(k)]);
      }
    }
  }
}

inline bool overlaps(const Box& x, const Box& y, double margin) {
  return x.a < y.a + y.w + margin && y.a < x.a + x.w + margin && x.b < y.b + y.w + margin &&
         y.b < x.b + x.w + margin;
}

}  // namespace detail

/// Renders a textured scene with 0..max_faces non-overlapping glyph faces, fully inside the
/// frame, at uniform scale in [min_face, max_face] and uniform RIP in (-180, 180].
inline LabeledImage render_scene(const SceneParams& params, std::mt19937_64& rng) {
  LabeledImage out;
  out.image = ImageBuffer(params.width, params.height, 3);
  detail::render_background(out.image, rng, params.max_distractors);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count(0, params.max_faces);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double max_w = std::min({params.max_face, static_cast<double>(params.width), static_cast<double>(params.height)});
      const double w = params.min_face + unit(rng) * (max_w - params.min_face);
      const Box box{unit(rng) * (params.width - w), unit(rng) * (params.height - w), w};
      const double theta = 180.0 - 360.0 * unit(rng);  // (-180, 180]
      const bool clash = std::any_of(out.faces.begin(), out.faces.end(),
                                     [&](const FaceAnnotation& f) { return detail::overlaps(f.box, box, 2.0); });
      if (clash) continue;
      out.faces.push_back({box, theta});
      break;
    }
  }
  glyph::Palette pal;
  for (const auto& f : out.faces) {
    glyph::Palette p = pal;
    const float tint = static_cast<float>(0.9 + 0.1 * unit(rng));
    for (auto& ch : p.skin) ch *= tint;
    render_glyph(out.image, f.box, f.theta, p);
  }
  return out;
}

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

/// Image `index` of the synthetic corpus identified by `seed`.
inline LabeledImage render_synthetic(std::uint64_t seed, std::size_t index, const SceneParams& params = {}) {
  auto rng = seeded_rng(seed, index);
  return render_scene(params, rng);
}

inline std::vector<LabeledImage> gen_synthetic(std::size_t n, std::uint64_t seed, const SceneParams& params = {}) {
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(render_synthetic(seed, i, params));
  return out;
}

/// Random-access labeled image source.
class Corpus {
 public:
  virtual ~Corpus() = default;
  virtual std::size_t size() const = 0;
  virtual LabeledImage get(std::size_t index) const = 0;
};

/// Renders images on demand, so large corpora cost no memory.
class SyntheticCorpus final : public Corpus {
 public:
  SyntheticCorpus(std::size_t n, std::uint64_t seed, SceneParams params = {}) : n_(n), seed_(seed), params_(params) {}
  std::size_t size() const override { return n_; }
  LabeledImage get(std::size_t index) const override { return render_synthetic(seed_, index, params_); }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  SceneParams params_;
};

class InMemoryCorpus final : public Corpus {
 public:
  explicit InMemoryCorpus(std::vector<LabeledImage> items) : items_(std::move(items)) {}
  std::size_t size() const override { return items_.size(); }
  LabeledImage get(std::size_t index) const override { return items_.at(index); }

 private:
  std::vector<LabeledImage> items_;
};

/// Images [begin, end) of another corpus.
class SliceCorpus final : public Corpus {
 public:
  SliceCorpus(const Corpus& src, std::size_t begin, std::size_t end)
      : src_(src), begin_(std::min(begin, src.size())), end_(std::clamp(end, begin_, src.size())) {}
  std::size_t size() const override { return end_ - begin_; }
  LabeledImage get(std::size_t index) const override { return src_.get(begin_ + index); }

 private:
  const Corpus& src_;
  std::size_t begin_;
  std::size_t end_;
};

/// Every image of `src` rotated clockwise by `angle` (a multiple of 90), annotations included.
class RotatedCorpus final : public Corpus {
 public:
  RotatedCorpus(const Corpus& src, int angle) : src_(src), angle_(normalize_right_angle(angle)) {}
  std::size_t size() const override { return src_.size(); }
  LabeledImage get(std::size_t index) const override {
    LabeledImage in = src_.get(index);
    LabeledImage out;
    out.image = rot_exact(in.image, angle_);
    const OrientationFrame to = frame_for_rotation(angle_);
    for (const auto& f : in.faces) {
      out.faces.push_back({remap_box(f.box, OrientationFrame::up, to, in.image.width, in.image.height),
                           normalize_degrees(f.theta + angle_)});
    }
    return out;
  }

 private:
  const Corpus& src_;
  int angle_;
};

}  // namespace pcn
