#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "pcn/error.hpp"
#include "pcn/image.hpp"
#include "pcn/tensor.hpp"

namespace pcn {

/// Square window: top-left corner (a, b) and side w, in pixels. Pixel i covers [i, i+1).
struct Box {
  double a = 0.0;
  double b = 0.0;
  double w = 0.0;

  double cx() const { return a + 0.5 * w; }
  double cy() const { return b + 0.5 * w; }
  double area() const { return w * w; }
};

struct RegressionTarget {
  double t_w = 1.0;
  double t_a = 0.0;
  double t_b = 0.0;
};

/// Which pre-rotated copy of the source image a window refers to. The rotation is the
/// clockwise angle applied to the original image to obtain that copy.
enum class OrientationFrame : int { up = 0, left = 1, right = 2, down = 3 };

inline constexpr OrientationFrame kAllFrames[] = {OrientationFrame::up, OrientationFrame::left,
                                                  OrientationFrame::right, OrientationFrame::down};

inline int frame_rotation(OrientationFrame f) {
  switch (f) {
    case OrientationFrame::up: return 0;
    case OrientationFrame::left: return -90;
    case OrientationFrame::right: return 90;
    case OrientationFrame::down: return 180;
  }
  return 0;
}

/// Maps any multiple of 90 into [0, 360).
inline int normalize_right_angle(int deg) {
  if (deg % 90 != 0) fail(ErrorKind::invalid_argument, "angle must be a multiple of 90");
  return ((deg % 360) + 360) % 360;
}

inline OrientationFrame frame_for_rotation(int deg) {
  switch (normalize_right_angle(deg)) {
    case 0: return OrientationFrame::up;
    case 90: return OrientationFrame::right;
    case 180: return OrientationFrame::down;
    default: return OrientationFrame::left;
  }
}

/// Normalizes a real angle into (-180, 180].
inline double normalize_degrees(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

/// sin/cos of an angle in degrees, exact at multiples of 90.
inline std::pair<double, double> sincos_deg(double deg) {
  const double n = normalize_degrees(deg);
  if (n == 0.0) return {0.0, 1.0};
  if (n == 90.0) return {1.0, 0.0};
  if (n == 180.0) return {0.0, -1.0};
  if (n == -90.0) return {-1.0, 0.0};
  const double rad = n * (3.14159265358979323846 / 180.0);
  return {std::sin(rad), std::cos(rad)};
}

/// Exact clockwise rotation by a multiple of 90 degrees (pixel permutation, no resampling).
inline ImageBuffer rot_exact(const ImageBuffer& img, int angle) {
  const int r = normalize_right_angle(angle);
  const int w = img.width, h = img.height, ch = img.channels;
  if (r == 0) return img;
  const bool swap = (r == 90 || r == 270);
  ImageBuffer out(swap ? h : w, swap ? w : h, ch);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      int sx = x, sy = y;
      if (r == 90) {
        sx = y;
        sy = h - 1 - x;
      } else if (r == 180) {
        sx = w - 1 - x;
        sy = h - 1 - y;
      } else {
        sx = w - 1 - y;
        sy = x;
      }
      const float* src = &img.pixels[img.index(sx, sy)];
      float* dst = &out.pixels[out.index(x, y)];
      for (int c = 0; c < ch; ++c) dst[c] = src[c];
    }
  }
  return out;
}

namespace detail {

// Window coordinates in a (src_w x src_h) image -> coordinates after rotating that image clockwise by r.
inline Box rotate_box(const Box& bx, int r, double src_w, double src_h) {
  switch (r) {
    case 90: return {src_h - bx.b - bx.w, bx.a, bx.w};
    case 180: return {src_w - bx.a - bx.w, src_h - bx.b - bx.w, bx.w};
    case 270: return {bx.b, src_w - bx.a - bx.w, bx.w};
    default: return bx;
  }
}

inline std::pair<int, int> frame_dims(OrientationFrame f, int w, int h) {
  const int r = normalize_right_angle(frame_rotation(f));
  return (r == 90 || r == 270) ? std::pair{h, w} : std::pair{w, h};
}

inline bool inside(const Box& bx, int w, int h) {
  return bx.a >= 0.0 && bx.b >= 0.0 && bx.a + bx.w <= w && bx.b + bx.w <= h;
}

}  // namespace detail

/// Re-expresses a window between orientation frames without bounds checks.
/// `w`, `h` are the dimensions of the original (UP) image.
inline Box remap_box(const Box& win, OrientationFrame from, OrientationFrame to, int w, int h) {
  if (from == to) return win;
  const auto [fw, fh] = detail::frame_dims(from, w, h);
  const Box up = detail::rotate_box(win, normalize_right_angle(-frame_rotation(from)), fw, fh);
  return detail::rotate_box(up, normalize_right_angle(frame_rotation(to)), w, h);
}

/// Strict variant for integer windows that must lie inside both frames.
inline Box remap_window(const Box& win, OrientationFrame from, OrientationFrame to, int w, int h) {
  if (!(win.w > 0.0)) fail(ErrorKind::invalid_argument, "window side must be positive");
  const auto [fw, fh] = detail::frame_dims(from, w, h);
  if (!detail::inside(win, fw, fh)) fail(ErrorKind::out_of_bounds, "window outside its source frame");
  const Box out = remap_box(win, from, to, w, h);
  const auto [tw, th] = detail::frame_dims(to, w, h);
  if (!detail::inside(out, tw, th)) fail(ErrorKind::out_of_bounds, "window outside its target frame");
  return out;
}

namespace detail {

// Bilinear sample at continuous pixel-centre coordinates; out-of-image taps read as 0.
inline float bilinear(const ImageBuffer& img, double x, double y, int c) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  const double fx = x - fx0, fy = y - fy0;
  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) return 0.0;
    return img.pixels[img.index(xi, yi, c)];
  };
  double v = (1.0 - fx) * (1.0 - fy) * px(x0, y0);
  if (fx != 0.0) v += fx * (1.0 - fy) * px(x0 + 1, y0);
  if (fy != 0.0) v += (1.0 - fx) * fy * px(x0, y0 + 1);
  if (fx != 0.0 && fy != 0.0) v += fx * fy * px(x0 + 1, y0 + 1);
  return static_cast<float>(v);
}

}  // namespace detail

/// Continuous clockwise rotation about the image centre; bilinear, zero fill, same dimensions.
inline ImageBuffer rotate_continuous(const ImageBuffer& img, double theta_deg) {
  const auto [s, c] = sincos_deg(theta_deg);
  const double cx = 0.5 * (img.width - 1), cy = 0.5 * (img.height - 1);
  ImageBuffer out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      // inverse rotation: R(-theta)
      const double sx = cx + c * dx + s * dy;
      const double sy = cy - s * dx + c * dy;
      for (int ch = 0; ch < img.channels; ++ch) out.at(x, y, ch) = detail::bilinear(img, sx, sy, ch);
    }
  }
  return out;
}

/// Integer crop; the window must lie inside the image.
inline ImageBuffer crop(const ImageBuffer& img, int x, int y, int side) {
  if (side <= 0) fail(ErrorKind::invalid_argument, "crop side must be positive");
  if (x < 0 || y < 0 || x + side > img.width || y + side > img.height) {
    fail(ErrorKind::out_of_bounds, "crop window outside image");
  }
  ImageBuffer out(side, side, img.channels);
  for (int yy = 0; yy < side; ++yy) {
    const float* src = &img.pixels[img.index(x, y + yy)];
    std::copy(src, src + static_cast<std::size_t>(side) * img.channels, &out.pixels[out.index(0, yy)]);
  }
  return out;
}

/// Reads the content of `win`, as it would appear after rotating the image clockwise by
/// `angle_deg` about the point (pivot_x, pivot_y), resized to `side` x `side`. Output is
/// (C, side, side) with values mapped from [0, 1] to [-1, 1]; samples outside the image read
/// as 0 before mapping.
inline Tensor<float> crop_resize_rotated(const ImageBuffer& img, const Box& win, double angle_deg, int side,
                                         double pivot_x, double pivot_y) {
  if (!(win.w > 0.0)) fail(ErrorKind::invalid_argument, "window side must be positive");
  if (side <= 0) fail(ErrorKind::invalid_argument, "output side must be positive");
  const int ch = img.channels;
  Tensor<float> out(Shape{ch, side, side});
  const double step = win.w / side;
  const double ccx = pivot_x - 0.5, ccy = pivot_y - 0.5;
  const auto [s, c] = sincos_deg(angle_deg);
  const bool upright = (s == 0.0 && c == 1.0);
  const std::size_t plane = static_cast<std::size_t>(side) * side;
  for (int i = 0; i < side; ++i) {
    const double qy = win.b + (i + 0.5) * step - 0.5;
    for (int j = 0; j < side; ++j) {
      const double qx = win.a + (j + 0.5) * step - 0.5;
      double sx = qx, sy = qy;
      if (!upright) {
        const double dx = qx - ccx, dy = qy - ccy;
        sx = ccx + c * dx + s * dy;
        sy = ccy - s * dx + c * dy;
      }
      for (int k = 0; k < ch; ++k) {
        out[k * plane + static_cast<std::size_t>(i) * side + j] = detail::bilinear(img, sx, sy, k) * 2.0f - 1.0f;
      }
    }
  }
  return out;
}

/// As above, rotating about the window centre.
inline Tensor<float> crop_resize_rotated(const ImageBuffer& img, const Box& win, double angle_deg, int side) {
  return crop_resize_rotated(img, win, angle_deg, side, win.cx(), win.cy());
}

/// Bilinear crop-and-resize of a (possibly partially out-of-image) square window.
inline Tensor<float> crop_resize(const ImageBuffer& img, const Box& win, int side) {
  return crop_resize_rotated(img, win, 0.0, side);
}

/// Bounding-box regression targets of `box` toward ground truth `gt`.
inline RegressionTarget bbox_targets(const Box& box, const Box& gt) {
  if (!(box.w > 0.0) || !(gt.w > 0.0)) fail(ErrorKind::invalid_argument, "box widths must be positive");
  return {gt.w / box.w, (gt.a + 0.5 * gt.w - box.a - 0.5 * box.w) / gt.w,
          (gt.b + 0.5 * gt.w - box.b - 0.5 * box.w) / gt.w};
}

/// Inverse of bbox_targets.
inline Box bbox_apply(const Box& box, const RegressionTarget& t) {
  if (!(box.w > 0.0) || !(t.t_w > 0.0)) fail(ErrorKind::invalid_argument, "box width and t_w must be positive");
  const double w = t.t_w * box.w;
  return {box.a + 0.5 * box.w - 0.5 * w + t.t_a * w, box.b + 0.5 * box.w - 0.5 * w + t.t_b * w, w};
}

inline double iou(const Box& x, const Box& y) {
  const double ix = std::max(0.0, std::min(x.a + x.w, y.a + y.w) - std::max(x.a, y.a));
  const double iy = std::max(0.0, std::min(x.b + x.w, y.b + y.w) - std::max(x.b, y.b));
  const double inter = ix * iy;
  const double uni = x.area() + y.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Greedy NMS. Returns surviving indices by descending score; equal scores keep input order.
/// A box is suppressed when its IoU with a kept box exceeds `thresh`.
inline std::vector<std::size_t> nms_indices(std::span<const Box> boxes, std::span<const double> scores,
                                            double thresh) {
  if (boxes.size() != scores.size()) fail(ErrorKind::shape, "nms boxes/scores length mismatch");
  if (!(thresh > 0.0 && thresh <= 1.0)) fail(ErrorKind::invalid_argument, "nms threshold must be in (0, 1]");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return scores[l] > scores[r]; });
  std::vector<std::size_t> keep;
  std::vector<char> dead(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (dead[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!dead[j] && iou(boxes[i], boxes[j]) > thresh) dead[j] = 1;
    }
  }
  return keep;
}

struct ScoredBox {
  Box box;
  double score = 0.0;
};

inline std::vector<ScoredBox> nms(const std::vector<ScoredBox>& cands, double thresh) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (const auto& c : cands) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  std::vector<ScoredBox> out;
  for (std::size_t i : nms_indices(boxes, scores, thresh)) out.push_back(cands[i]);
  return out;
}

}  // namespace pcn
