#include <gtest/gtest.h>
#include <png.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "pcn/pcn.hpp"
#include "toy_model.hpp"

namespace fs = std::filesystem;
using namespace pcn;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path dir() {
    static const fs::path d = [] {
      const fs::path p = fs::temp_directory_path() / "pcn_cli_test";
      fs::remove_all(p);
      fs::create_directories(p);
      return p;
    }();
    return d;
  }

  static CliRun run(const std::string& args, const std::string& env = "") {
    const fs::path out = dir() / "stdout.txt", err = dir() / "stderr.txt";
    const std::string cmd = env + " \"" PCN_CLI_PATH "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

  // The briefly trained toy cascade, written once for the CLI to load.
  static fs::path toy_model_file() {
    static const fs::path p = [] {
      const fs::path f = dir() / "toy.pcn";
      save_model(f.string(), toy::model());
      return f;
    }();
    return p;
  }

  static fs::path fresh_model_file() {
    static const fs::path p = [] {
      const fs::path f = dir() / "fresh.pcn";
      save_model(f.string(), CascadeModel::fresh(1));
      return f;
    }();
    return p;
  }
};

void write_png(const fs::path& path, const ImageBuffer& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<png_byte>(std::lround(img.pixels[i] * 255.0f));
  ASSERT_TRUE(png_image_write_to_file(&png, path.c_str(), 0, raw.data(), 0, nullptr));
}

std::vector<nlohmann::json> parse_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("detect --in x.ppm").code, 1);
  EXPECT_EQ(run("bench --model m --runs 0").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(CliTest, TrainZeroIterationsWritesFreshModel) {
  const fs::path m = dir() / "zero.pcn";
  const CliRun r = run("train --out " + q(m) + " --iters 0 --seed 4 --corpus-size 50 --log " + q(dir() / "zero"));
  ASSERT_EQ(r.code, 0) << r.err;
  const CascadeModel back = load_model(m.string());
  const CascadeModel fresh = CascadeModel::fresh(4);
  for (Stage s : kStages)
    for (std::size_t i = 0; i < fresh.at(s).layers().size(); ++i)
      EXPECT_TRUE(std::ranges::equal(back.at(s).layers()[i].weights.values(), fresh.at(s).layers()[i].weights.values()));
  EXPECT_NE(r.out.find("stage1 orientation accuracy"), std::string::npos);
  EXPECT_EQ(slurp(dir() / "zero.stage1.csv"), std::string(kTrainLogHeader) + "\n");
}

TEST_F(CliTest, TrainIsByteDeterministic) {
  std::array<std::string, 2> bytes;
  for (int i = 0; i < 2; ++i) {
    const fs::path m = dir() / ("det" + std::to_string(i) + ".pcn");
    ASSERT_EQ(run("train --out " + q(m) + " --iters 20 --seed 9 --corpus-size 200").code, 0);
    bytes[static_cast<std::size_t>(i)] = slurp(m);
  }
  EXPECT_FALSE(bytes[0].empty());
  EXPECT_EQ(bytes[0], bytes[1]);
  const std::string log = slurp(dir() / "det0.pcn.stage2.csv");
  EXPECT_EQ(log.rfind(kTrainLogHeader, 0), 0u);
  EXPECT_NE(log.find("\n20,"), std::string::npos);
}

TEST_F(CliTest, TrainUnwritableOutputIsDataError) {
  EXPECT_EQ(run("train --out /nonexistent_dir/m.pcn --iters 0").code, 2);
  EXPECT_EQ(run("train --out " + q(dir() / "x.pcn") + " --iters 0 --data " + q(dir() / "no_such_corpus")).code, 2);
}

TEST_F(CliTest, DetectBlankImageGivesEmptyRecord) {
  const fs::path img = dir() / "blank.ppm";
  write_pnm(img.string(), ImageBuffer(96, 96, 3, 0.5f));
  const CliRun r = run("detect --model " + q(fresh_model_file()) + " --in " + q(img));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto recs = parse_lines(r.out);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0]["path"], img.string());
  EXPECT_TRUE(recs[0]["faces"].is_array());
}

TEST_F(CliTest, DetectUnreadableInputIsPerFileError) {
  const fs::path good = dir() / "good.ppm", bad = dir() / "bad.ppm";
  write_pnm(good.string(), ImageBuffer(64, 64, 3, 0.2f));
  std::ofstream(bad) << "P6\n2 2\n255\nxx";
  const fs::path json = dir() / "partial.jsonl";
  const CliRun r = run("detect --model " + q(fresh_model_file()) + " --json " + q(json) + " --in " + q(good) + " " +
                    q(bad) + " " + q(dir() / "missing.ppm"));
  EXPECT_EQ(r.code, 2);
  const auto recs = parse_lines(slurp(json));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0]["path"], good.string());
  EXPECT_EQ(run("detect --model " + q(dir() / "missing.pcn") + " --in " + q(good)).code, 2);
}

TEST_F(CliTest, DetectSingleFaceAndAnnotate) {
  const Box gt{30, 40, 50};
  const double theta = -120.0;
  const LabeledImage li = toy::single_face(gt, theta);
  const fs::path img = dir() / "single.ppm", ann = dir() / "annotated";
  write_pnm(img.string(), li.image);
  const CliRun r = run("detect --model " + q(toy_model_file()) + " --min-face 24 --annotate " + q(ann) + " --in " + q(img));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto recs = parse_lines(r.out);
  ASSERT_EQ(recs.size(), 1u);
  ASSERT_EQ(recs[0]["faces"].size(), 1u);
  const auto& f = recs[0]["faces"][0];
  EXPECT_LE(std::abs(normalize_degrees(f["theta"].get<double>() - theta)), 15.0);
  EXPECT_GE(iou(Box{f["a"], f["b"], f["w"]}, gt), 0.5);
  for (const char* k : {"a", "b", "w", "theta", "score"}) EXPECT_TRUE(f.contains(k));

  const ImageBuffer drawn = read_pnm((ann / "single.ppm").string());
  ASSERT_TRUE(drawn.same_geometry(li.image));
  std::size_t green = 0, blue = 0;
  for (int y = 0; y < drawn.height; ++y)
    for (int x = 0; x < drawn.width; ++x) {
      auto is = [&](const std::array<float, 3>& c) {
        for (int k = 0; k < 3; ++k)
          if (std::abs(drawn.at(x, y, k) - c[static_cast<std::size_t>(k)]) > 0.5f / 255) return false;
        return true;
      };
      green += is(kBoxColor);
      blue += is(kTickColor);
    }
  EXPECT_GT(green, 100u);
  EXPECT_GT(blue, 10u);
}

TEST_F(CliTest, DetectPngMatchesPpm) {
  const LabeledImage li = toy::single_face(Box{20, 30, 60}, 75.0);
  const fs::path ppm = dir() / "face.ppm", png = dir() / "face.png";
  write_pnm(ppm.string(), li.image);
  write_png(png, read_pnm(ppm.string()));
  const CliRun a = run("detect --model " + q(toy_model_file()) + " --min-face 24 --in " + q(ppm));
  const CliRun b = run("detect --model " + q(toy_model_file()) + " --min-face 24 --in " + q(png));
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(parse_lines(a.out)[0]["faces"], parse_lines(b.out)[0]["faces"]);
}

TEST_F(CliTest, DetectOutputIndependentOfWorkerCount) {
  const fs::path corpus = dir() / "workers";
  ASSERT_EQ(run("gen --out " + q(corpus) + " --n 6 --seed 3").code, 0);
  std::string inputs;
  for (std::size_t i = 0; i < 6; ++i) inputs += " " + q(corpus / corpus_image_name(i));
  const std::string base = "detect --model " + q(toy_model_file()) + " --min-face 24 --in" + inputs;
  const CliRun one = run(base, "PCN_THREADS=1");
  const CliRun four = run(base, "PCN_THREADS=4");
  const CliRun again = run(base, "PCN_THREADS=1");
  ASSERT_EQ(one.code, 0);
  EXPECT_EQ(one.out, four.out);
  EXPECT_EQ(one.out, again.out);
  const auto recs = parse_lines(one.out);
  ASSERT_EQ(recs.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(recs[i]["path"], (corpus / corpus_image_name(i)).string());
  EXPECT_EQ(run(base, "PCN_THREADS=zero").code, 1);
}

TEST_F(CliTest, EvalOnGeneratedCorpus) {
  const fs::path corpus = dir() / "evalset";
  ASSERT_EQ(run("gen --out " + q(corpus) + " --n 28 --seed 77").code, 0);
  const CliRun r = run("eval --model " + q(toy_model_file()) + " --data " + q(corpus));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* key : {"stage1 orientation accuracy", "stage2 orientation accuracy", "stage3 mean abs angle error",
                          "rotation 0 recall", "rotation 90 recall", "rotation 180 recall", "rotation 270 recall",
                          "at fp budget 1", "per-orientation recall spread"})
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  const CliRun zero = run("eval --model " + q(toy_model_file()) + " --data " + q(corpus) + " --fp-budget 0");
  ASSERT_EQ(zero.code, 0);
  EXPECT_NE(zero.out.find("at fp budget 0"), std::string::npos);

  fs::remove(corpus / kAnnotationFile);
  EXPECT_EQ(run("eval --model " + q(toy_model_file()) + " --data " + q(corpus)).code, 2);
}

TEST_F(CliTest, BenchSingleRunSingleTimingLine) {
  const CliRun r = run("bench --model " + q(fresh_model_file()) + " --width 160 --height 120 --runs 1");
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t timing = 0;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);) timing += line.find("fps") != std::string::npos;
  EXPECT_EQ(timing, 1u);
  EXPECT_NE(r.out.find("frame sets per frame 1.00"), std::string::npos);
}

TEST_F(CliTest, BenchStrideDoublingQuartersStageOneInput) {
  auto proposals = [&](int stride) {
    const CliRun r = run("bench --model " + q(toy_model_file()) + " --runs 1 --stride " + std::to_string(stride));
    std::smatch m;
    EXPECT_TRUE(std::regex_search(r.out, m, std::regex("proposals ([0-9.]+), stage1 ([0-9.]+), stage2 ([0-9.]+), stage3 ([0-9.]+)")));
    return std::array<double, 4>{std::stod(m[1]), std::stod(m[2]), std::stod(m[3]), std::stod(m[4])};
  };
  const auto a = proposals(2), b = proposals(4);
  const double ratio = a[0] / b[0];
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.5);
  for (const auto& c : {a, b}) {
    EXPECT_GE(c[0], c[1]);
    EXPECT_GE(c[1], c[2]);
    EXPECT_GE(c[2], c[3]);
  }
}

TEST(EvalMetricsTest, OracleInjectedPredictionsArePerfect) {
  std::vector<double> l1{0, 1, 1, 0}, l2{0, 1, 2}, l3{-1, 0.2, 0.9};
  std::vector<StageOutput> o1, o2, o3;
  for (double l : l1) {
    StageOutput o;
    o.g = l;
    o1.push_back(o);
  }
  for (double l : l2) {
    StageOutput o;
    o.g3 = {0, 0, 0};
    o.g3[static_cast<std::size_t>(l)] = 1;
    o2.push_back(o);
  }
  for (double l : l3) {
    StageOutput o;
    o.theta3_norm = l;
    o3.push_back(o);
  }
  EXPECT_EQ(orientation_accuracy(Stage::one, l1, o1), 1.0);
  EXPECT_EQ(orientation_accuracy(Stage::two, l2, o2), 1.0);
  EXPECT_NEAR(calibration_mae(l3, o3), 0.0, 1e-12);
  o3[0].theta3_norm = -0.8;
  EXPECT_NEAR(calibration_mae(l3, o3), 9.0 / 3.0, 1e-12);
}

TEST(EvalMetricsTest, RecallAtFalsePositiveBudget) {
  const std::vector<MatchedDetection> m{{0.9, true}, {0.8, false}, {0.7, true}, {0.6, false}, {0.6, true}, {0.5, true}};
  const auto zero = recall_at_fp(m, 5, 0);
  EXPECT_EQ(zero.true_positives, 1u);
  EXPECT_EQ(zero.threshold, 0.9);
  const auto one = recall_at_fp(m, 5, 1);
  EXPECT_EQ(one.true_positives, 2u);
  EXPECT_EQ(one.false_positives, 1u);
  const auto two = recall_at_fp(m, 5, 2);
  EXPECT_EQ(two.true_positives, 4u);
  EXPECT_DOUBLE_EQ(two.recall, 0.8);
  EXPECT_EQ(recall_at_fp({{0.9, false}}, 3, 0).recall, 0.0);
  EXPECT_EQ(default_fp_budget(2845), 101u);
  EXPECT_EQ(default_fp_budget(560), 20u);
}

TEST(EvalMetricsTest, EquivarianceOfExactlyRotatedDetections) {
  const std::vector<DetectedFace> up{{Box{10, 20, 30}, 15.0, 0.9}, {Box{60, 5, 40}, -170.0, 0.8}};
  for (int a : {90, 180, 270}) {
    std::vector<DetectedFace> rot;
    for (const auto& d : up) rot.push_back(rotate_detection(d, a, 128, 100));
    EXPECT_EQ(compare_equivariance(up, rot, a, 128, 100).matched, 2u);
    rot[1].theta_rip += 20;
    const auto c = compare_equivariance(up, rot, a, 128, 100);
    EXPECT_EQ(c.matched, 1u);
    EXPECT_EQ(c.total, 2u);
    rot.push_back(rot[0]);
    EXPECT_EQ(compare_equivariance(up, rot, a, 128, 100).total, 3u);
  }
}
