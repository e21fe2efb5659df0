#pragma once

// Model file layout (all integers u32, all reals f32, little-endian):
//   "PCNW" version stage_count
//   per stage:  stage_tag in_channels input_side layer_count output_size
//   per layer:  kind kernel stride weight_rank weight_dims... bias_rank bias_dims... weights... biases...

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pcn/cascade.hpp"
#include "pcn/error.hpp"
#include "pcn/network.hpp"

namespace pcn {

inline constexpr char kModelMagic[4] = {'P', 'C', 'N', 'W'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(b[i], b[sizeof(U) - 1 - i]);
    std::memcpy(&v, b, sizeof(U));
  }
  return v;
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  put_u32(out, bits);
}

inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) fail(ErrorKind::format, "truncated model file");
  return to_little(v);
}

inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

inline void put_shape(std::ostream& out, const Shape& s) {
  put_u32(out, static_cast<std::uint32_t>(s.rank));
  for (int i = 0; i < s.rank; ++i) put_u32(out, static_cast<std::uint32_t>(s[i]));
}

inline Shape get_shape(std::istream& in) {
  const std::uint32_t rank = get_u32(in);
  if (rank > 4) fail(ErrorKind::format, "tensor rank > 4");
  Shape s;
  s.rank = static_cast<int>(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = get_u32(in);
    if (d == 0 || d > (1u << 24)) fail(ErrorKind::format, "bad tensor extent");
    s.dims[i] = static_cast<int>(d);
  }
  return s;
}

}  // namespace detail

struct TaggedNetwork {
  std::uint32_t tag = 0;
  Network<float> net;
};

inline void write_networks(std::ostream& out, const std::vector<TaggedNetwork>& nets) {
  out.write(kModelMagic, 4);
  detail::put_u32(out, kModelVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(nets.size()));
  for (const auto& tn : nets) {
    const auto& net = tn.net;
    detail::put_u32(out, tn.tag);
    detail::put_u32(out, static_cast<std::uint32_t>(net.in_channels()));
    detail::put_u32(out, static_cast<std::uint32_t>(net.input_side()));
    detail::put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
    detail::put_u32(out, static_cast<std::uint32_t>(net.output_size()));
    for (const auto& l : net.layers()) {
      detail::put_u32(out, static_cast<std::uint32_t>(l.kind));
      detail::put_u32(out, static_cast<std::uint32_t>(l.kernel));
      detail::put_u32(out, static_cast<std::uint32_t>(l.stride));
      detail::put_shape(out, l.weights.shape());
      detail::put_shape(out, l.bias.shape());
      for (float v : l.weights.values()) detail::put_f32(out, v);
      for (float v : l.bias.values()) detail::put_f32(out, v);
    }
  }
}

inline std::vector<TaggedNetwork> read_networks(std::istream& in) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) fail(ErrorKind::format, "bad model magic");
  const std::uint32_t version = detail::get_u32(in);
  if (version != kModelVersion) fail(ErrorKind::format, "unsupported model version " + std::to_string(version));
  const std::uint32_t count = detail::get_u32(in);
  if (count > 64) fail(ErrorKind::format, "implausible network count");
  std::vector<TaggedNetwork> nets;
  for (std::uint32_t n = 0; n < count; ++n) {
    TaggedNetwork tn;
    tn.tag = detail::get_u32(in);
    const int in_ch = static_cast<int>(detail::get_u32(in));
    const int side = static_cast<int>(detail::get_u32(in));
    const std::uint32_t layer_count = detail::get_u32(in);
    const int output_size = static_cast<int>(detail::get_u32(in));
    if (layer_count > 256) fail(ErrorKind::format, "implausible layer count");
    std::vector<Layer<float>> layers;
    for (std::uint32_t li = 0; li < layer_count; ++li) {
      Layer<float> l;
      const std::uint32_t kind = detail::get_u32(in);
      if (kind > static_cast<std::uint32_t>(LayerKind::softmax)) fail(ErrorKind::format, "unknown layer kind");
      l.kind = static_cast<LayerKind>(kind);
      l.kernel = static_cast<int>(detail::get_u32(in));
      l.stride = static_cast<int>(detail::get_u32(in));
      const Shape ws = detail::get_shape(in);
      const Shape bs = detail::get_shape(in);
      if (l.has_params()) {
        if (ws.rank == 0 || bs.rank != 1) fail(ErrorKind::format, "parameter layer without parameters");
        l.set_param_shapes(ws, bs);
        for (auto& v : l.weights.values()) v = detail::get_f32(in);
        for (auto& v : l.bias.values()) v = detail::get_f32(in);
      } else if (ws.rank != 0 || bs.rank != 0) {
        fail(ErrorKind::format, "parameter-free layer with parameters");
      }
      layers.push_back(std::move(l));
    }
    tn.net = Network<float>(in_ch, side, std::move(layers), output_size);
    nets.push_back(std::move(tn));
  }
  return nets;
}

inline void save_model(std::ostream& out, const CascadeModel& model) {
  std::vector<TaggedNetwork> nets;
  for (Stage s : kStages) nets.push_back({static_cast<std::uint32_t>(s), model.at(s)});
  write_networks(out, nets);
}

inline CascadeModel load_model(std::istream& in) {
  auto nets = read_networks(in);
  CascadeModel model;
  std::array<bool, 3> seen{};
  for (auto& tn : nets) {
    const Stage s = stage_from_int(static_cast<int>(tn.tag));
    if (tn.net.output_size() != output_arity(s) || tn.net.input_side() != stage_input_side(s)) {
      fail(ErrorKind::format, "stage " + std::to_string(tn.tag) + " network has the wrong geometry");
    }
    seen[static_cast<std::size_t>(stage_index(s))] = true;
    model.at(s) = std::move(tn.net);
  }
  for (bool b : seen) {
    if (!b) fail(ErrorKind::format, "model file is missing a stage");
  }
  return model;
}

inline void save_model(const std::string& path, const CascadeModel& model) {
  std::ostringstream buf(std::ios::binary);
  save_model(buf, model);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  const std::string bytes = buf.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for " + path);
}

inline CascadeModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  return load_model(in);
}

}  // namespace pcn
