#pragma once

#include <array>
#include <cmath>

#include "pcn/geometry.hpp"
#include "pcn/image.hpp"
#include "pcn/pipeline.hpp"

namespace pcn {

inline constexpr std::array<float, 3> kBoxColor{0.0f, 1.0f, 0.0f};
inline constexpr std::array<float, 3> kTickColor{0.0f, 0.25f, 1.0f};

namespace detail {

inline void plot(ImageBuffer& img, int x, int y, const std::array<float, 3>& rgb) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  if (img.channels == 3) {
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[static_cast<std::size_t>(c)];
  } else {
    img.at(x, y) = (rgb[0] + rgb[1] + rgb[2]) / 3.0f;
  }
}

}  // namespace detail

/// Bresenham segment, clipped to the image.
inline void draw_line(ImageBuffer& img, int x0, int y0, int x1, int y1, const std::array<float, 3>& rgb) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    detail::plot(img, x0, y0, rgb);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

/// 1-px box outline plus a tick of half the box side from its centre toward the top of the face.
inline void draw_detection(ImageBuffer& img, const DetectedFace& d) {
  const int x0 = static_cast<int>(std::lround(d.box.a)), y0 = static_cast<int>(std::lround(d.box.b));
  const int x1 = static_cast<int>(std::lround(d.box.a + d.box.w)) - 1;
  const int y1 = static_cast<int>(std::lround(d.box.b + d.box.w)) - 1;
  draw_line(img, x0, y0, x1, y0, kBoxColor);
  draw_line(img, x1, y0, x1, y1, kBoxColor);
  draw_line(img, x1, y1, x0, y1, kBoxColor);
  draw_line(img, x0, y1, x0, y0, kBoxColor);
  const auto [s, c] = sincos_deg(d.theta_rip);
  const double cx = d.box.cx() - 0.5, cy = d.box.cy() - 0.5, r = 0.5 * d.box.w;
  draw_line(img, static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(cy)),
            static_cast<int>(std::lround(cx + r * s)), static_cast<int>(std::lround(cy - r * c)), kTickColor);
}

}  // namespace pcn
