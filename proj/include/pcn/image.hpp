#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pcn/error.hpp"

namespace pcn {

/// Interleaved row-major image with real pixels in [0, 1].
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, float fill = 0.0f) : width(w), height(h), channels(c) {
    if (w <= 0 || h <= 0) fail(ErrorKind::invalid_argument, "image dimensions must be positive");
    if (c != 1 && c != 3) fail(ErrorKind::invalid_argument, "image must have 1 or 3 channels");
    pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return pixels[index(x, y, c)]; }

  bool same_geometry(const ImageBuffer& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  bool operator==(const ImageBuffer& o) const { return same_geometry(o) && pixels == o.pixels; }
};

namespace detail {

inline void skip_ppm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_ppm_int(std::istream& in) {
  skip_ppm_space(in);
  int v = -1;
  if (!(in >> v) || v < 0) fail(ErrorKind::format, "malformed PNM header");
  return v;
}

}  // namespace detail

/// Reads binary PPM (P6) or PGM (P5) with maxval <= 255.
inline ImageBuffer read_pnm(std::istream& in) {
  char magic[2] = {};
  if (!in.read(magic, 2) || magic[0] != 'P' || (magic[1] != '6' && magic[1] != '5')) {
    fail(ErrorKind::format, "not a binary PPM/PGM stream");
  }
  const int channels = magic[1] == '6' ? 3 : 1;
  const int w = detail::read_ppm_int(in);
  const int h = detail::read_ppm_int(in);
  const int maxval = detail::read_ppm_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) fail(ErrorKind::format, "unsupported PNM geometry");
  in.get();  // single whitespace before raster
  ImageBuffer img(w, h, channels);
  std::vector<unsigned char> raw(img.pixels.size());
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    fail(ErrorKind::format, "truncated PNM raster");
  }
  const float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) * scale;
  return img;
}

inline ImageBuffer read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  return read_pnm(in);
}

/// Replicates a grayscale image into three channels; RGB input is returned unchanged.
inline ImageBuffer to_rgb(const ImageBuffer& img) {
  if (img.channels == 3) return img;
  ImageBuffer out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.pixels[3 * i + c] = img.pixels[i];
  }
  return out;
}

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Writes P6 for 3-channel images and P5 for grayscale.
inline void write_pnm(std::ostream& out, const ImageBuffer& img) {
  out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), raw.begin(), quantize);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

inline void write_pnm(const std::string& path, const ImageBuffer& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  write_pnm(out, img);
  if (!out) fail(ErrorKind::io, "write failed for " + path);
}

}  // namespace pcn
