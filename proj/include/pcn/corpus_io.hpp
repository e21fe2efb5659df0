#pragma once

// Corpus directory: images named NNNNNN.ppm plus annotations.jsonl, one line per image:
//   {"file":"000000.ppm","faces":[{"a":..,"b":..,"w":..,"theta":..}]}

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcn/error.hpp"
#include "pcn/image.hpp"
#include "pcn/synthetic.hpp"

namespace pcn {

inline constexpr const char* kAnnotationFile = "annotations.jsonl";

inline std::string corpus_image_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.ppm", index);
  return buf;
}

inline nlohmann::ordered_json annotation_record(const std::string& file, const std::vector<FaceAnnotation>& faces) {
  nlohmann::ordered_json rec;
  rec["file"] = file;
  rec["faces"] = nlohmann::ordered_json::array();
  for (const auto& f : faces) {
    rec["faces"].push_back({{"a", f.box.a}, {"b", f.box.b}, {"w", f.box.w}, {"theta", f.theta}});
  }
  return rec;
}

inline void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream ann(dir / kAnnotationFile);
  if (!ann) fail(ErrorKind::io, "cannot write " + (dir / kAnnotationFile).string());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const LabeledImage li = corpus.get(i);
    const std::string name = corpus_image_name(i);
    write_pnm((dir / name).string(), li.image);
    ann << annotation_record(name, li.faces).dump() << '\n';
  }
  if (!ann) fail(ErrorKind::io, "write failed for " + (dir / kAnnotationFile).string());
}

/// Corpus read from a directory; images are decoded on access.
class DirectoryCorpus final : public Corpus {
 public:
  explicit DirectoryCorpus(const std::filesystem::path& dir) : dir_(dir) {
    const auto path = dir / kAnnotationFile;
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "missing annotations: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto rec = nlohmann::json::parse(line);
        Entry e;
        e.file = rec.at("file").get<std::string>();
        for (const auto& f : rec.at("faces")) {
          FaceAnnotation fa;
          fa.box = {f.at("a").get<double>(), f.at("b").get<double>(), f.at("w").get<double>()};
          fa.theta = normalize_degrees(f.at("theta").get<double>());
          if (!(fa.box.w > 0.0)) fail(ErrorKind::format, "face width must be positive");
          e.faces.push_back(fa);
        }
        entries_.push_back(std::move(e));
      } catch (const nlohmann::json::exception& ex) {
        fail(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
      }
    }
  }

  std::size_t size() const override { return entries_.size(); }

  LabeledImage get(std::size_t index) const override {
    const Entry& e = entries_.at(index);
    return {read_pnm((dir_ / e.file).string()), e.faces};
  }

 private:
  struct Entry {
    std::string file;
    std::vector<FaceAnnotation> faces;
  };
  std::filesystem::path dir_;
  std::vector<Entry> entries_;
};

}  // namespace pcn
