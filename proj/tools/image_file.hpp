#pragma once

#include <png.h>

#include <fstream>
#include <string>
#include <vector>

#include "pcn/error.hpp"
#include "pcn/image.hpp"

namespace pcn::tools {

inline ImageBuffer read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail(ErrorKind::format, path + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> raw(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorKind::format, path + ": " + msg);
  }
  ImageBuffer img(static_cast<int>(png.width), static_cast<int>(png.height), 3);
  const float scale = 1.0f / 255.0f;
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) * scale;
  return img;
}

/// PNG or binary PPM/PGM, chosen by file signature; always returned as RGB.
inline ImageBuffer load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  if (in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
  in.clear();
  in.seekg(0);
  try {
    return to_rgb(read_pnm(in));
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
}

}  // namespace pcn::tools
