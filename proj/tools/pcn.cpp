// pcn: train, run, evaluate and benchmark the rotation-invariant face detector.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "image_file.hpp"
#include "json.hpp"
#include "pcn/pcn.hpp"

namespace fs = std::filesystem;
using namespace pcn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::numeric: return kNumeric;
    case ErrorKind::invalid_argument: return kUsage;
    default: return kData;
  }
}

constexpr std::uint64_t kHeldOutSalt = 0x9e3779b97f4a7c15ull;

struct CorpusHandle {
  std::unique_ptr<Corpus> owner;
  std::unique_ptr<Corpus> train;
  std::unique_ptr<Corpus> held_out;
};

/// "synthetic" or a corpus directory. Directories hold out their last tenth.
CorpusHandle open_training_data(const std::string& data, std::uint64_t seed, std::size_t synthetic_size) {
  CorpusHandle h;
  if (data == "synthetic") {
    h.train = std::make_unique<SyntheticCorpus>(synthetic_size, seed);
    h.held_out = std::make_unique<SyntheticCorpus>(std::max<std::size_t>(synthetic_size / 10, 1), seed ^ kHeldOutSalt);
    return h;
  }
  h.owner = std::make_unique<DirectoryCorpus>(data);
  const std::size_t n = h.owner->size();
  if (n < 2) fail(ErrorKind::insufficient_data, data + " holds fewer than two images");
  const std::size_t cut = n - std::max<std::size_t>(n / 10, 1);
  h.train = std::make_unique<SliceCorpus>(*h.owner, 0, cut);
  h.held_out = std::make_unique<SliceCorpus>(*h.owner, cut, n);
  return h;
}

void print_orientation(std::ostream& out, const OrientationMetrics& m) {
  out << std::fixed << std::setprecision(4) << "stage1 orientation accuracy " << m.stage1_accuracy << "\n"
      << "stage2 orientation accuracy " << m.stage2_accuracy << "\n"
      << "stage3 mean abs angle error " << m.stage3_mae << " deg\n";
  out.unsetf(std::ios::floatfield);
}

struct TrainArgs {
  std::string out;
  std::string data = "synthetic";
  std::string log_prefix;
  std::uint64_t seed = 1;
  long iters = 10000;
  std::size_t corpus_size = 5000;
  std::size_t eval_samples = 1000;
};

int cmd_train(const TrainArgs& a) {
  {
    std::ofstream probe(a.out, std::ios::binary | std::ios::app);
    if (!probe) fail(ErrorKind::io, "cannot write " + a.out);
  }
  CorpusHandle data = open_training_data(a.data, a.seed, a.corpus_size);
  const std::string prefix = a.log_prefix.empty() ? a.out : a.log_prefix;
  std::array<std::ofstream, 3> logs;
  for (Stage s : kStages) {
    const std::string path = prefix + ".stage" + std::to_string(static_cast<int>(s)) + ".csv";
    auto& f = logs[static_cast<std::size_t>(stage_index(s))];
    f.open(path, std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot write " + path);
    f << kTrainLogHeader << '\n';
  }
  const auto cfg = CascadeTrainConfig::with_iterations(a.iters, a.seed);
  const auto result = train_cascade(*data.train, cfg, [&](Stage s, const TrainLogRow& row) {
    auto& f = logs[static_cast<std::size_t>(stage_index(s))];
    write_log_row(f, row);
    f.flush();
    std::cerr << "stage " << static_cast<int>(s) << " iter " << row.iteration << " loss " << row.total << "\n";
  });
  save_model(a.out, result.model);
  std::cout << "model written to " << a.out << "\n";
  std::cout << "hard negatives mined: stage2 " << result.hard_negatives[1] << ", stage3 " << result.hard_negatives[2]
            << "\n";
  print_orientation(std::cout, evaluate_orientation(result.model, *data.held_out, a.eval_samples, a.seed));
  return kOk;
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PCN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v <= 0) fail(ErrorKind::invalid_argument, "PCN_THREADS must be a positive integer");
    n = std::min(n, static_cast<std::size_t>(v));
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

struct DetectArgs {
  std::string model;
  std::vector<std::string> inputs;
  std::string json;
  std::string annotate;
  double min_face = 40.0;
};

nlohmann::ordered_json detection_record(const std::string& path, const std::vector<DetectedFace>& faces) {
  nlohmann::ordered_json rec;
  rec["path"] = path;
  rec["faces"] = nlohmann::ordered_json::array();
  for (const auto& f : faces) {
    rec["faces"].push_back(
        {{"a", f.box.a}, {"b", f.box.b}, {"w", f.box.w}, {"theta", f.theta_rip}, {"score", f.score}});
  }
  return rec;
}

int cmd_detect(const DetectArgs& a) {
  const CascadeModel model = load_model(a.model);
  DetectConfig cfg;
  cfg.min_face = a.min_face;
  cfg.validate();
  if (!a.annotate.empty()) {
    std::error_code ec;
    fs::create_directories(a.annotate, ec);
    if (ec) fail(ErrorKind::io, "cannot create " + a.annotate);
  }

  struct Result {
    std::optional<std::vector<DetectedFace>> faces;
    std::string error;
  };
  std::vector<Result> results(a.inputs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < a.inputs.size(); i = next++) {
      try {
        ImageBuffer img = tools::load_image(a.inputs[i]);
        results[i].faces = detect(img, model, cfg);
        if (!a.annotate.empty()) {
          for (const auto& f : *results[i].faces) draw_detection(img, f);
          write_pnm((fs::path(a.annotate) / fs::path(a.inputs[i]).stem()).string() + ".ppm", img);
        }
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = worker_count(a.inputs.size());
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::ofstream file;
  if (!a.json.empty()) {
    file.open(a.json, std::ios::binary | std::ios::trunc);
    if (!file) fail(ErrorKind::io, "cannot write " + a.json);
  }
  std::ostream& out = a.json.empty() ? std::cout : file;
  int code = kOk;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].faces) {
      std::cerr << "error: " << results[i].error << "\n";
      code = kData;
      continue;
    }
    out << detection_record(a.inputs[i], *results[i].faces).dump() << '\n';
  }
  out.flush();
  if (!out) fail(ErrorKind::io, "write failed");
  return code;
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::uint64_t seed = 1;
  std::size_t size = 560;
  std::size_t eval_samples = 1000;
  double min_face = 24.0;
  std::optional<std::size_t> fp_budget;
};

int cmd_eval(const EvalArgs& a) {
  const CascadeModel model = load_model(a.model);
  std::unique_ptr<Corpus> corpus;
  if (a.data == "synthetic") {
    corpus = std::make_unique<SyntheticCorpus>(a.size, a.seed ^ kHeldOutSalt);
  } else {
    corpus = std::make_unique<DirectoryCorpus>(a.data);
  }
  if (corpus->size() == 0) fail(ErrorKind::insufficient_data, "evaluation corpus is empty");
  DetectConfig cfg;
  cfg.min_face = a.min_face;
  const std::size_t budget = a.fp_budget.value_or(default_fp_budget(corpus->size()));

  print_orientation(std::cout, evaluate_orientation(model, *corpus, a.eval_samples, a.seed));
  const auto per = evaluate_per_orientation(model, *corpus, cfg, budget);
  double lo = 1.0, hi = 0.0;
  std::cout << std::fixed << std::setprecision(4);
  for (std::size_t k = 0; k < per.size(); ++k) {
    const auto& r = per[k].at_budget;
    std::cout << "rotation " << kEvalRotations[k] << " recall " << r.recall << " at " << r.false_positives << "/"
              << budget << " false positives (tp " << r.true_positives << " of " << per[k].faces << ")\n";
    lo = std::min(lo, r.recall);
    hi = std::max(hi, r.recall);
  }
  std::cout << "recall " << per[0].at_budget.recall << " at fp budget " << budget << "\n";
  std::cout << "per-orientation recall spread " << std::setprecision(2) << 100.0 * (hi - lo) << " pp\n";
  return kOk;
}

int cmd_bench(const std::string& model_path, const BenchConfig& bc) {
  const CascadeModel model = load_model(model_path);
  const BenchReport r = run_bench(model, bc);
  std::cout << std::fixed << std::setprecision(2) << "fps mean " << r.mean_fps << " median " << r.median_fps << " over "
            << bc.runs << " frames of " << bc.width << "x" << bc.height << ", min face " << bc.min_face << "\n";
  std::cout << std::setprecision(1) << "candidates per frame: proposals " << r.mean_proposals << ", stage1 "
            << r.mean_survivors[0] << ", stage2 " << r.mean_survivors[1] << ", stage3 " << r.mean_survivors[2] << "\n";
  std::cout << std::setprecision(2) << "orientation frame sets per frame " << r.frame_sets_per_image
            << ", rotations per frame " << r.rotations_per_image << "\n";
  return kOk;
}

int cmd_gen(const std::string& out, std::size_t n, std::uint64_t seed) {
  write_corpus(out, SyntheticCorpus(n, seed));
  std::cout << "wrote " << n << " images to " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-invariant cascaded face detector"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train all three stages and write a model file");
  train->add_option("--out", ta.out, "model file to write")->required();
  train->add_option("--seed", ta.seed, "random seed");
  train->add_option("--iters", ta.iters, "SGD iterations per stage")->check(CLI::NonNegativeNumber);
  train->add_option("--data", ta.data, "corpus directory or 'synthetic'");
  train->add_option("--corpus-size", ta.corpus_size, "synthetic training images")->check(CLI::PositiveNumber);
  train->add_option("--log", ta.log_prefix, "prefix of the per-stage CSV logs (default: the model path)");

  DetectArgs da;
  auto* det = app.add_subcommand("detect", "detect faces; one JSON line per image");
  det->add_option("--model", da.model, "model file")->required();
  det->add_option("--in", da.inputs, "PPM/PGM/PNG images")->required();
  det->add_option("--json", da.json, "JSON-lines output (default: stdout)");
  det->add_option("--annotate", da.annotate, "directory for annotated PPM copies");
  det->add_option("--min-face", da.min_face, "smallest face side in pixels")->check(CLI::PositiveNumber);

  EvalArgs ea;
  std::size_t fp_budget = 0;
  auto* ev = app.add_subcommand("eval", "orientation and detection metrics on an annotated corpus");
  ev->add_option("--model", ea.model, "model file")->required();
  ev->add_option("--data", ea.data, "corpus directory or 'synthetic'")->required();
  ev->add_option("--seed", ea.seed, "seed for synthetic data and window sampling");
  ev->add_option("--size", ea.size, "synthetic corpus size")->check(CLI::PositiveNumber);
  ev->add_option("--min-face", ea.min_face, "smallest face side in pixels")->check(CLI::PositiveNumber);
  auto* fp_opt = ev->add_option("--fp-budget", fp_budget, "false positives allowed (default: images / 28)");

  std::string bench_model;
  BenchConfig bc;
  auto* bench = app.add_subcommand("bench", "time detection on synthetic frames");
  bench->add_option("--model", bench_model, "model file")->required();
  bench->add_option("--width", bc.width)->check(CLI::PositiveNumber);
  bench->add_option("--height", bc.height)->check(CLI::PositiveNumber);
  bench->add_option("--min-face", bc.min_face)->check(CLI::PositiveNumber);
  bench->add_option("--runs", bc.runs)->check(CLI::PositiveNumber);
  bench->add_option("--stride", bc.stride, "stage-1 window stride")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bc.seed);

  std::string gen_out;
  std::size_t gen_n = 100;
  std::uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("gen", "write a synthetic annotated corpus");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", gen_n, "number of images");
  gen->add_option("--seed", gen_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*det) return cmd_detect(da);
    if (*ev) {
      if (*fp_opt) ea.fp_budget = fp_budget;
      return cmd_eval(ea);
    }
    if (*bench) return cmd_bench(bench_model, bc);
    if (*gen) return cmd_gen(gen_out, gen_n, gen_seed);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
