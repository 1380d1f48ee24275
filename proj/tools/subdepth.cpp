#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "subdepth/ablation.hpp"
#include "subdepth/checkpoint.hpp"
#include "subdepth/dataset.hpp"
#include "subdepth/eval.hpp"
#include "subdepth/pipeline.hpp"
#include "subdepth/run_manifest.hpp"
#include "subdepth/runtime.hpp"
#include "subdepth/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace subdepth;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr std::size_t kHardestCount = 10;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Values set on the command line; unset ones fall back to the config file.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string ckpt;
  std::string teacher_ckpt;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> objective_mode;
  std::optional<std::string> resolution;
  std::optional<std::size_t> triplets;
  std::optional<std::size_t> eval_triplets;
  std::size_t seeds = 3;
  std::size_t count = kHardestCount;
};

struct Settings {
  DatasetSpec dataset;
  TrainConfig train;
};

json settings_json(const Settings& s) {
  return json{{"dataset",
               {{"seed", s.dataset.seed},
                {"train_triplets", s.dataset.train_triplets},
                {"eval_triplets", s.dataset.eval_triplets},
                {"scene", s.dataset.scene}}},
              {"train", s.train}};
}

std::pair<std::size_t, std::size_t> parse_resolution(const std::string& text) {
  const auto x = text.find('x');
  std::size_t w = 0, h = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    w = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(text);
    h = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw std::invalid_argument(text);
  } catch (const std::logic_error&) {
    throw UsageError("--resolution expects WxH, got '" + text + "'");
  }
  return {w, h};
}

// defaults < config file < flags
Settings resolve(const Flags& f) {
  Settings s;
  if (!f.config.empty()) {
    std::ifstream is(f.config);
    if (!is) throw UsageError("cannot open config " + f.config);
    json j;
    try {
      j = json::parse(is);
      for (const auto& [key, _] : j.items()) {
        if (key != "dataset" && key != "train") throw UsageError("unknown config section '" + key + "'");
      }
      if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        for (const auto& [key, _] : d.items()) {
          if (key != "seed" && key != "train_triplets" && key != "eval_triplets" && key != "scene") {
            throw UsageError("unknown dataset key '" + key + "'");
          }
        }
        s.dataset.seed = d.value("seed", s.dataset.seed);
        s.dataset.train_triplets = d.value("train_triplets", s.dataset.train_triplets);
        s.dataset.eval_triplets = d.value("eval_triplets", s.dataset.eval_triplets);
        if (d.contains("scene")) d["scene"].get_to(s.dataset.scene);
      }
      if (j.contains("train")) j["train"].get_to(s.train);
    } catch (const json::exception& e) {
      throw UsageError("bad config " + f.config + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw UsageError("bad config " + f.config + ": " + e.what());
    }
  }
  if (f.seed) s.dataset.seed = s.train.seed = *f.seed;
  if (f.epochs) s.train.epochs = *f.epochs;
  if (f.batch_size) s.train.batch_size = *f.batch_size;
  if (f.objective_mode) {
    try {
      s.train.objective_mode = parse_mode(*f.objective_mode);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (f.resolution) std::tie(s.dataset.scene.width, s.dataset.scene.height) = parse_resolution(*f.resolution);
  if (f.triplets) s.dataset.train_triplets = *f.triplets;
  if (f.eval_triplets) s.dataset.eval_triplets = *f.eval_triplets;
  try {
    s.dataset.scene.validate();
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return s;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

Dataset open_dataset(const Flags& f, const Settings& s) {
  require(f.dataset, "--dataset");
  auto d = load_dataset(f.dataset);
  if (d.train.empty() && d.eval.empty()) throw std::invalid_argument("dataset " + f.dataset + " has no triplets");
  if (f.resolution) {
    const auto& k = (d.train.empty() ? d.eval : d.train).front().intrinsics;
    if (k.width != s.dataset.scene.width || k.height != s.dataset.scene.height) {
      throw std::invalid_argument("dataset resolution " + std::to_string(k.width) + "x" + std::to_string(k.height) +
                                  " does not match --resolution " + *f.resolution);
    }
  }
  return d;
}

class ManifestScope {
 public:
  ManifestScope(std::string command, const Settings& s, std::uint64_t seed) {
    m_.command = std::move(command);
    m_.config = settings_json(s);
    m_.version = version_tag();
    m_.seed = seed;
    m_.started_at = utc_timestamp();
  }
  json& inputs() { return m_.inputs; }
  void set_dataset(std::uint64_t hash) { m_.dataset_hash = hash_hex(hash); }
  void finish(const fs::path& dir) {
    m_.finished_at = utc_timestamp();
    write_run_manifest(dir, m_);
  }

 private:
  RunManifest m_;
};

void write_logs(const fs::path& dir, const TrainLog& log) {
  log.write_steps_csv(dir / "steps.csv");
  log.write_epochs_csv(dir / "epochs.csv");
}

int gen_data(const Flags& f) {
  require(f.out, "--out");
  const auto s = resolve(f);
  ManifestScope manifest("gen-data", s, s.dataset.seed);
  manifest.inputs() = {{"out", f.out}};
  const auto hash = generate_dataset(f.out, s.dataset);
  manifest.set_dataset(hash);
  manifest.finish(f.out);
  std::cout << "dataset " << f.out << " hash " << hash_hex(hash) << '\n';
  return 0;
}

int train_teacher_cmd(const Flags& f) {
  require(f.out, "--out");
  auto s = resolve(f);
  if (f.objective_mode && s.train.objective_mode != ObjectiveMode::photometric) {
    throw UsageError("train-teacher only supports --objective-mode photometric");
  }
  s.train.objective_mode = ObjectiveMode::photometric;
  const auto dataset = open_dataset(f, s);
  ManifestScope manifest("train-teacher", s, s.train.seed);
  manifest.inputs() = {{"dataset", f.dataset}, {"out", f.out}};
  manifest.set_dataset(dataset.hash);
  const auto result = train_teacher(dataset, s.train);
  fs::create_directories(f.out);
  save_checkpoint(fs::path(f.out) / "teacher.ckpt", result.model);
  write_logs(f.out, result.log);
  manifest.finish(f.out);
  return 0;
}

int train_subdepth_cmd(const Flags& f) {
  require(f.out, "--out");
  const auto s = resolve(f);
  std::optional<ModelBundle> teacher;
  if (!f.teacher_ckpt.empty()) teacher = load_checkpoint(f.teacher_ckpt);
  const auto dataset = open_dataset(f, s);
  ManifestScope manifest("train-subdepth", s, s.train.seed);
  manifest.inputs() = {{"dataset", f.dataset}, {"teacher_ckpt", f.teacher_ckpt}, {"out", f.out}};
  manifest.set_dataset(dataset.hash);
  const auto result = train_subdepth(dataset, teacher, s.train);
  fs::create_directories(f.out);
  save_checkpoint(fs::path(f.out) / "student.ckpt", result.model);
  write_logs(f.out, result.log);
  manifest.finish(f.out);
  return 0;
}

void write_hardest(const fs::path& path, const EvalReport& report, std::size_t k) {
  std::vector<std::pair<std::string, double>> scores;
  for (const auto& [id, m] : report.per_image) scores.emplace_back(id, m.abs_rel);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "rank,id,abs_rel\n";
  const auto ids = select_hardest(scores, std::min(k, scores.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (const auto& [id, v] : scores) {
      if (id == ids[i]) out << i + 1 << ',' << id << ',' << v << '\n';
    }
  }
}

int eval_cmd(const Flags& f) {
  require(f.ckpt, "--ckpt");
  const auto model = load_checkpoint(f.ckpt);
  require(f.out, "--out");
  const auto s = resolve(f);
  const auto dataset = open_dataset(f, s);
  if (!dataset.has_ground_truth()) throw std::invalid_argument("eval split of " + f.dataset + " lacks depth_0.pfm");
  ManifestScope manifest("eval", s, s.train.seed);
  manifest.inputs() = {{"dataset", f.dataset}, {"ckpt", f.ckpt}, {"out", f.out}};
  manifest.set_dataset(dataset.hash);
  const auto report =
      evaluate_depth(model.depth, dataset.eval, s.train.objective(), eval_clamp_range(dataset, s.train));
  fs::create_directories(f.out);
  write_metrics_csv(fs::path(f.out) / "metrics.csv", report.per_image, report.aggregate);
  write_hardest(fs::path(f.out) / "hardest.csv", report, kHardestCount);
  manifest.finish(f.out);
  const auto& a = report.aggregate;
  std::cout << kMetricsHeader << '\n'
            << a.abs_rel << ',' << a.sq_rel << ',' << a.rmse << ',' << a.rmse_log << ',' << a.delta1 << ','
            << a.delta2 << ',' << a.delta3 << '\n';
  return 0;
}

int ablate_cmd(const Flags& f) {
  require(f.out, "--out");
  const auto s = resolve(f);
  if (f.seeds == 0) throw UsageError("--seeds must be positive");
  std::optional<ModelBundle> loaded;
  if (!f.teacher_ckpt.empty()) loaded = load_checkpoint(f.teacher_ckpt);
  const auto dataset = open_dataset(f, s);
  const fs::path out = f.out;
  ManifestScope manifest("ablate", s, s.train.seed);
  manifest.inputs() = {{"dataset", f.dataset}, {"teacher_ckpt", f.teacher_ckpt}, {"out", f.out}, {"seeds", f.seeds}};
  manifest.set_dataset(dataset.hash);

  const auto clamp = eval_clamp_range(dataset, s.train);
  fs::create_directories(out);
  ModelBundle teacher;
  if (loaded) {
    teacher = std::move(*loaded);
  } else {
    TrainConfig tc = s.train;
    tc.objective_mode = ObjectiveMode::photometric;
    auto r = train_teacher(dataset, tc);
    fs::create_directories(out / "teacher");
    save_checkpoint(out / "teacher" / "teacher.ckpt", r.model);
    write_logs(out / "teacher", r.log);
    teacher = std::move(r.model);
  }
  const auto teacher_report = evaluate_depth(teacher.depth, dataset.eval, s.train.objective(), clamp);
  write_metrics_csv(out / "teacher_metrics.csv", teacher_report.per_image, teacher_report.aggregate);

  const auto runs = run_ablation(dataset, teacher, s.train, kAllModes, f.seeds, [&](const AblationRun& run) {
    const auto dir = out / "runs" / std::string(mode_name(run.mode)) / ("seed" + std::to_string(run.seed));
    fs::create_directories(dir);
    save_checkpoint(dir / "student.ckpt", run.result.model);
    write_logs(dir, run.result.log);
  });
  const auto rows = summarize_ablation(runs);
  write_ablation_csv(out / "ablation.csv", rows);
  manifest.finish(out);
  std::cout << "teacher abs_rel " << teacher_report.aggregate.abs_rel << '\n';
  for (const auto& r : rows) std::cout << mode_name(r.mode) << " abs_rel " << r.mean.abs_rel << '\n';
  return 0;
}

int export_maps_cmd(const Flags& f) {
  require(f.ckpt, "--ckpt");
  const auto model = load_checkpoint(f.ckpt);
  require(f.out, "--out");
  const auto s = resolve(f);
  const auto dataset = open_dataset(f, s);
  ManifestScope manifest("export-maps", s, s.train.seed);
  manifest.inputs() = {{"dataset", f.dataset}, {"ckpt", f.ckpt}, {"out", f.out}, {"count", f.count}};
  manifest.set_dataset(dataset.hash);
  const auto objective = s.train.objective();
  const auto clamp = eval_clamp_range(dataset, s.train);

  // Hardest images first when ground truth allows ranking, else the split order.
  std::vector<const FrameTriplet*> chosen;
  if (dataset.has_ground_truth()) {
    const auto report = evaluate_depth(model.depth, dataset.eval, objective, clamp);
    std::vector<std::pair<std::string, double>> scores;
    for (const auto& [id, m] : report.per_image) scores.emplace_back(id, m.abs_rel);
    for (const auto& id : select_hardest(scores, std::min(f.count, scores.size()))) {
      for (const auto& t : dataset.eval) {
        if (t.id == id) chosen.push_back(&t);
      }
    }
  } else {
    const auto& split = dataset.eval.empty() ? dataset.train : dataset.eval;
    for (std::size_t i = 0; i < std::min(f.count, split.size()); ++i) chosen.push_back(&split[i]);
  }
  fs::create_directories(f.out);
  for (const auto* t : chosen) {
    auto p = predict(model, *t, objective);
    if (t->gt_depth) {
      const Mask all(p.depth.data.size(), 1);
      p.depth.data = median_scale(p.depth.data, t->gt_depth->data, all);
    }
    export_maps(f.out, MapExport{t->id, std::move(p.depth), std::move(p.sigma_pho), std::move(p.sigma_reg), t->gt_depth},
                clamp.first, clamp.second);
  }
  manifest.finish(f.out);
  std::cout << "exported " << chosen.size() << " images to " << f.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Self-supervised depth with self-distillation and uncertainty"};
  app.require_subcommand(1);
  Flags f;

  const auto common = [&f](CLI::App* c) {
    c->add_option("--config", f.config, "JSON config with optional 'dataset' and 'train' sections");
    c->add_option("--seed", f.seed, "Master seed");
    c->add_option("--out", f.out, "Output directory");
  };
  const auto data = [&f](CLI::App* c) { c->add_option("--dataset", f.dataset, "Dataset root"); };
  const auto training = [&f](CLI::App* c) {
    c->add_option("--epochs", f.epochs);
    c->add_option("--batch-size", f.batch_size);
    c->add_option("--objective-mode", f.objective_mode,
                  "photometric, regression, photometric+regression, reconstruction, distillation or subdepth");
  };
  const auto resolution = [&f](CLI::App* c) { c->add_option("--resolution", f.resolution, "Image size WxH"); };

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic triplet dataset");
  common(gen);
  resolution(gen);
  gen->add_option("--triplets", f.triplets, "Training triplets (default 500)");
  gen->add_option("--eval-triplets", f.eval_triplets, "Evaluation triplets (default 100)");

  auto* teacher = app.add_subcommand("train-teacher", "Photometric-only teacher training");
  common(teacher);
  data(teacher);
  training(teacher);
  resolution(teacher);

  auto* student = app.add_subcommand("train-subdepth", "Student training against a frozen teacher");
  common(student);
  data(student);
  training(student);
  resolution(student);
  student->add_option("--teacher-ckpt", f.teacher_ckpt);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the eval split");
  common(eval);
  data(eval);
  resolution(eval);
  eval->add_option("--ckpt", f.ckpt);

  auto* ablate = app.add_subcommand("ablate", "Train all six objective modes over several seeds");
  common(ablate);
  data(ablate);
  training(ablate);
  resolution(ablate);
  ablate->add_option("--teacher-ckpt", f.teacher_ckpt, "Reuse a teacher instead of training one");
  ablate->add_option("--seeds", f.seeds, "Seeds per mode, starting at --seed")->capture_default_str();

  auto* maps = app.add_subcommand("export-maps", "Write depth, uncertainty and error images");
  common(maps);
  data(maps);
  resolution(maps);
  maps->add_option("--ckpt", f.ckpt);
  maps->add_option("--count", f.count, "Number of images, hardest first")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    init_logging_from_env();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  const auto* cmd = app.get_subcommands().front();
  try {
    if (cmd == gen) return gen_data(f);
    if (cmd == teacher) return train_teacher_cmd(f);
    if (cmd == student) return train_subdepth_cmd(f);
    if (cmd == eval) return eval_cmd(f);
    if (cmd == ablate) return ablate_cmd(f);
    return export_maps_cmd(f);
  } catch (const UsageError& e) {
    std::cerr << "error: " << cmd->get_name() << ": " << e.what() << "\n\n" << cmd->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << cmd->get_name() << ": " << e.what() << '\n';
    return kExitFailure;
  }
}
