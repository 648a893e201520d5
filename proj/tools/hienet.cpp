// hienet: command-line front end for synthesis, preprocessing, training,
// grading and leave-one-subject-out evaluation.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hienet/checkpoint.hpp"
#include "hienet/errors.hpp"
#include "hienet/eval.hpp"
#include "hienet/segmentation.hpp"
#include "hienet/signal.hpp"
#include "hienet/synth.hpp"
#include "hienet/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

constexpr char kOutputEnv[] = "HIENET_OUTPUT_DIR";
constexpr char kRunManifest[] = "run_manifest.json";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// --out if given, else $HIENET_OUTPUT_DIR, else a usage error.
fs::path output_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
  throw UsageError(std::string("--out is required (or set ") + kOutputEnv + ")");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw hienet::DataError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw hienet::DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw hienet::DataError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw hienet::DataError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// The reproducibility record written next to every command's outputs.
struct RunManifest {
  explicit RunManifest(std::string name) : command(std::move(name)) {}

  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started = utc_now();
  Clock::time_point start = Clock::now();

  void write(const fs::path& dir) const {
    json j;
    j["command"] = command;
    j["tool_version"] = HIENET_VERSION;
    j["config"] = config;
    j["master_seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started_utc"] = started;
    j["wall_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
    write_text(dir / kRunManifest, j.dump(2) + "\n");
  }
};

struct TrainFlags {
  hienet::TrainConfig config;
  std::string schedule_unit = "epoch";

  void add(CLI::App* app) {
    app->add_option("--epochs", config.epochs, "Epoch budget")->capture_default_str();
    app->add_option("--batch-size", config.batch_size, "Mini-batch size")->capture_default_str();
    app->add_option("--lr", config.initial_lr, "Initial learning rate")->capture_default_str();
    app->add_option("--lr-decay", config.lr_decay, "Learning-rate multiplier per decay step")
        ->capture_default_str();
    app->add_option("--decay-every", config.decay_every, "Schedule units between decays")
        ->capture_default_str();
    app->add_option("--schedule-unit", schedule_unit, "epoch or iteration")
        ->check(CLI::IsMember({"epoch", "iteration"}))
        ->capture_default_str();
    app->add_option("--momentum", config.momentum, "Nesterov momentum")->capture_default_str();
    app->add_option("--seed", config.seed, "Master seed")->capture_default_str();
    app->add_option("--val-fraction", config.validation_fraction,
                    "Share of training subjects held out for validation")
        ->capture_default_str();
    app->add_option("--clip-norm", config.clip_norm, "Gradient-norm cap per step (0: off)")
        ->capture_default_str();
  }

  hienet::TrainConfig resolve() const {
    hienet::TrainConfig c = config;
    c.schedule_unit = hienet::parse_schedule_unit(schedule_unit);
    c.validate();
    return c;
  }
};

json train_json(const hienet::TrainConfig& c) {
  json j;
  j["initial_lr"] = c.initial_lr;
  j["lr_decay"] = c.lr_decay;
  j["decay_every"] = c.decay_every;
  j["schedule_unit"] = hienet::to_string(c.schedule_unit);
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["validation_fraction"] = c.validation_fraction;
  j["clip_norm"] = c.clip_norm;
  return j;
}

// ---- synth --------------------------------------------------------------------

struct SynthArgs {
  std::size_t per_grade = 3;
  std::uint64_t seed = 7;
  double duration_minutes = 60.0;
  int rate = hienet::kRawSampleRate;
  unsigned jobs = 1;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  RunManifest run("synth");
  const fs::path out = output_dir(a.out);
  hienet::CorpusSpec spec;
  spec.subjects_per_grade = a.per_grade;
  spec.master_seed = a.seed;
  spec.duration_seconds = a.duration_minutes * 60.0;
  spec.sample_rate = a.rate;
  const auto entries = hienet::generate_corpus(spec, out, a.jobs);
  run.seed = a.seed;
  run.config = {{"per_grade", a.per_grade}, {"duration_minutes", a.duration_minutes},
                {"sample_rate", a.rate}, {"jobs", a.jobs}};
  for (const auto& e : entries) run.outputs.push_back(e.path.generic_string());
  run.outputs.push_back(hienet::kManifestFileName);
  run.write(out);
  std::cout << "wrote " << entries.size() << " recordings and " << hienet::kManifestFileName
            << " to " << out.string() << "\n";
  return kExitOk;
}

// ---- preprocess -----------------------------------------------------------------

struct PreprocessArgs {
  std::vector<std::string> inputs;
  std::string out;
  int csv_rate = hienet::kRawSampleRate;
};

int cmd_preprocess(const PreprocessArgs& a) {
  RunManifest run("preprocess");
  const fs::path out = output_dir(a.out);
  make_dir(out);

  // Expand directories; remember manifests so labels follow the files.
  std::vector<fs::path> files;
  std::vector<hienet::ManifestEntry> labels;
  for (const auto& in : a.inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        const auto ext = e.path().extension();
        if (ext == ".neeg" || (ext == ".csv" && e.path().filename() != hienet::kManifestFileName)) {
          found.push_back(e.path());
        }
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
      if (fs::exists(p / hienet::kManifestFileName)) {
        for (auto& e : hienet::read_manifest(p / hienet::kManifestFileName)) labels.push_back(e);
      }
    } else {
      files.push_back(p);
    }
    run.inputs.push_back(in);
  }
  if (files.empty()) throw UsageError("no input recordings found");

  std::vector<std::string> failures;
  std::vector<hienet::ManifestEntry> written;
  for (const auto& file : files) {
    try {
      hienet::EegRecording r = hienet::load_any_recording(file, a.csv_rate);
      for (const auto& e : labels) {
        if (e.path.filename() == file.filename() && !r.grade) r.grade = e.grade;
      }
      const bool ready = r.sample_rate == hienet::kModelSampleRate && hienet::is_bipolar_montage(r);
      if (ready) {
        std::cerr << "note: " << file.string() << " is already 64 Hz bipolar; passing through\n";
      }
      const hienet::EegRecording p = ready ? r : hienet::preprocess(r);
      const std::string name = file.stem().string() + ".neeg";
      hienet::save_recording(p, out / name);
      run.outputs.push_back(name);
      if (p.grade) written.push_back({p.subject_id, *p.grade, name});
    } catch (const std::exception& e) {
      failures.push_back(file.string() + ": " + e.what());
    }
  }
  if (!written.empty()) {
    hienet::write_manifest(written, out / hienet::kManifestFileName);
    run.outputs.push_back(hienet::kManifestFileName);
  }
  run.config = {{"csv_sample_rate", a.csv_rate}, {"failures", failures.size()}};
  run.write(out);
  std::cout << "preprocessed " << (files.size() - failures.size()) << "/" << files.size()
            << " recordings into " << out.string() << "\n";
  if (!failures.empty()) {
    std::cerr << failures.size() << " recording(s) failed:\n";
    for (const auto& f : failures) std::cerr << "  " << f << "\n";
    return kExitData;
  }
  return kExitOk;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out;
  double segment_minutes = 5.0;
  TrainFlags flags;
};

int cmd_train(const TrainArgs& a) {
  RunManifest run("train");
  const fs::path out = output_dir(a.out);
  const hienet::TrainConfig config = a.flags.resolve();
  const auto subjects = hienet::load_corpus(a.manifest);
  std::vector<hienet::LabeledSegment> dataset;
  for (const auto& s : subjects) {
    auto segs = hienet::labeled_segments(s, a.segment_minutes);
    dataset.insert(dataset.end(), segs.begin(), segs.end());
  }
  const hienet::ModelSpec spec = hienet::build_hienet(hienet::segment_samples_for(a.segment_minutes));
  const hienet::TrainResult result =
      hienet::train(spec, dataset, config, [](const hienet::CurvePoint& p) {
        if (p.iteration % 10 == 0 || !std::isnan(p.val_loss)) {
          std::fprintf(stderr, "epoch %zu iteration %zu loss %.4f acc %.3f\n", p.epoch + 1,
                       p.iteration, p.train_loss, p.train_acc);
        }
      });
  make_dir(out);
  hienet::save_checkpoint(result.params, out / "model.ckpt");
  write_text(out / "training_curve.csv", result.curve.to_csv());
  run.seed = config.seed;
  run.inputs.push_back(a.manifest);
  run.outputs = {"model.ckpt", "training_curve.csv"};
  run.config = {{"segment_minutes", a.segment_minutes},
                {"train", train_json(config)},
                {"training_subjects", result.training_subjects},
                {"validation_subjects", result.validation_subjects},
                {"training_segments", dataset.size()}};
  run.write(out);
  std::cout << "trained on " << dataset.size() << " segments; checkpoint "
            << (out / "model.ckpt").string() << "\n";
  return kExitOk;
}

// ---- grade ----------------------------------------------------------------------

struct GradeArgs {
  std::string model;
  std::vector<std::string> inputs;
  std::string method = "two-step";
  std::optional<double> segment_minutes;
  std::string format = "csv";
  std::string out;
};

int cmd_grade(const GradeArgs& a) {
  RunManifest run("grade");
  const hienet::ModelParams params = hienet::load_checkpoint(a.model);
  const double model_minutes =
      static_cast<double>(params.spec.segment_samples) / hienet::kModelSampleRate / 60.0;
  if (a.segment_minutes &&
      hienet::segment_samples_for(*a.segment_minutes) != params.spec.segment_samples) {
    throw hienet::DataError("checkpoint was trained on " + std::to_string(model_minutes) +
                            "-minute segments, not " + std::to_string(*a.segment_minutes));
  }
  std::vector<hienet::VotingMethod> methods;
  if (a.method == "all") {
    methods.assign(std::begin(hienet::kAllMethods), std::end(hienet::kAllMethods));
  } else {
    methods.push_back(hienet::parse_voting_method(a.method));
  }

  std::string csv = hienet::decision_csv_header() + "\n";
  json records = json::array();
  for (const auto& in : a.inputs) {
    const hienet::EegRecording r = hienet::preprocess(hienet::load_any_recording(in));
    const hienet::SegmentSource source = hienet::make_segment_source(r);
    const hienet::RecordingGrades g = hienet::grade_recording(params, source, model_minutes);
    for (const auto& d : g.decisions) {
      if (std::find(methods.begin(), methods.end(), d.method) == methods.end()) continue;
      csv += hienet::decision_csv_row(r.subject_id, d) + "\n";
      records.push_back(json::parse(hienet::decision_json(r.subject_id, d)));
    }
    run.inputs.push_back(in);
  }
  const std::string text = a.format == "json" ? records.dump(2) + "\n" : csv;
  if (a.out.empty() && !std::getenv(kOutputEnv)) {
    std::cout << text;
    return kExitOk;
  }
  const fs::path out = output_dir(a.out);
  make_dir(out);
  const std::string name = a.format == "json" ? "grades.json" : "grades.csv";
  write_text(out / name, text);
  run.inputs.push_back(a.model);
  run.outputs.push_back(name);
  run.config = {{"method", a.method}, {"segment_minutes", model_minutes}, {"format", a.format}};
  run.write(out);
  std::cout << "wrote " << (out / name).string() << "\n";
  return kExitOk;
}

// ---- loso / sweep ------------------------------------------------------------------

struct LosoArgs {
  std::string manifest;
  std::string out;
  double segment_minutes = 5.0;
  unsigned jobs = 1;
  bool save_checkpoints = false;
  TrainFlags flags;
};

int cmd_loso(const LosoArgs& a) {
  RunManifest run("loso");
  const fs::path out = output_dir(a.out);
  hienet::LosoConfig config;
  config.train = a.flags.resolve();
  config.segment_minutes = a.segment_minutes;
  config.jobs = a.jobs;
  if (a.save_checkpoints) config.checkpoint_dir = out / "checkpoints";
  const auto subjects = hienet::load_corpus(a.manifest);
  make_dir(out);
  const auto report = hienet::loso_evaluate(subjects, config, [](const hienet::FoldProgress& p) {
    if (!p.result) return;
    std::fprintf(stderr, "fold %zu/%zu %s: actual %d, two-step %d\n", p.fold + 1, p.folds,
                 p.result->subject_id.c_str(), p.result->actual,
                 p.result->decision(hienet::VotingMethod::kTwoStep).grade);
  });
  write_text(out / "loso_report.json", report.to_json());
  run.outputs.push_back("loso_report.json");
  for (hienet::VotingMethod m : hienet::kAllMethods) {
    const std::string name = "confusion_" + hienet::to_string(m) + ".csv";
    write_text(out / name, report.confusion(m).to_csv());
    run.outputs.push_back(name);
  }
  if (a.save_checkpoints) run.outputs.push_back("checkpoints/");
  run.seed = config.train.seed;
  run.inputs.push_back(a.manifest);
  run.config = {{"segment_minutes", a.segment_minutes}, {"jobs", a.jobs},
                {"train", train_json(config.train)}};
  run.write(out);
  const auto rows = hienet::compare_postprocessing(report);
  std::cout << hienet::format_postprocessing(rows) << "\n"
            << report.confusion(hienet::VotingMethod::kTwoStep).to_text();
  return kExitOk;
}

struct SweepArgs {
  std::string manifest;
  std::string out;
  std::vector<double> lengths = hienet::default_sweep_lengths();
  unsigned jobs = 1;
  TrainFlags flags;
};

int cmd_sweep(const SweepArgs& a) {
  RunManifest run("sweep");
  const fs::path out = output_dir(a.out);
  hienet::LosoConfig config;
  config.train = a.flags.resolve();
  config.jobs = a.jobs;
  const auto subjects = hienet::load_corpus(a.manifest);
  const auto result = hienet::segment_length_sweep(subjects, a.lengths, config, [](double m) {
    std::fprintf(stderr, "segment length %g min\n", m);
  });
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  make_dir(out);
  write_text(out / "sweep.csv", result.to_csv());
  run.seed = config.train.seed;
  run.inputs.push_back(a.manifest);
  run.outputs.push_back("sweep.csv");
  run.config = {{"lengths", a.lengths}, {"jobs", a.jobs}, {"train", train_json(config.train)},
                {"skipped", result.warnings}};
  run.write(out);
  std::cout << result.to_csv();
  return kExitOk;
}

// ---- report -------------------------------------------------------------------------

struct ReportArgs {
  std::string report;
  std::string confusion;
};

int cmd_report(const ReportArgs& a) {
  if (a.report.empty() == a.confusion.empty()) {
    throw UsageError("report needs exactly one of --loso-report or --confusion");
  }
  if (!a.confusion.empty()) {
    const hienet::ConfusionMatrix m = hienet::parse_confusion_csv(read_text(a.confusion));
    std::cout << m.to_text();
    return kExitOk;
  }
  const auto report = hienet::LosoReport::from_json(read_text(a.report));
  const auto rows = hienet::compare_postprocessing(report);
  std::cout << hienet::format_postprocessing(rows) << "\n";
  for (hienet::VotingMethod m : hienet::kAllMethods) {
    std::cout << "[" << hienet::to_string(m) << "]\n" << report.confusion(m).to_text() << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neonatal EEG HIE grading with a 1-D convolutional network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(HIENET_VERSION));

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
  s->add_option("--per-grade", synth.per_grade, "Subjects per grade")->capture_default_str();
  s->add_option("--seed", synth.seed, "Master seed")->capture_default_str();
  s->add_option("--duration-min", synth.duration_minutes, "Recording length in minutes")
      ->capture_default_str();
  s->add_option("--rate", synth.rate, "256 (nine electrodes) or 64 (eight bipolar channels)")
      ->check(CLI::IsMember({256, 64}))
      ->capture_default_str();
  s->add_option("--jobs", synth.jobs, "Generator threads")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory");

  PreprocessArgs prep;
  auto* p = app.add_subcommand("preprocess", "Montage, anti-alias filter and decimate to 64 Hz");
  p->add_option("--in", prep.inputs, "Recordings or directories")->required();
  p->add_option("--out", prep.out, "Output directory");
  p->add_option("--csv-rate", prep.csv_rate, "Sample rate of CSV inputs")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model on a labeled corpus");
  t->add_option("--manifest", train.manifest, "Labels manifest (subject_id,grade,path)")->required();
  t->add_option("--out", train.out, "Output directory");
  t->add_option("--segment-min", train.segment_minutes, "Segment length in minutes")->capture_default_str();
  train.flags.add(t);

  GradeArgs grade;
  auto* g = app.add_subcommand("grade", "Grade recordings with a trained model");
  g->add_option("--model", grade.model, "Checkpoint")->required();
  g->add_option("--in", grade.inputs, "Recordings")->required();
  g->add_option("--method", grade.method, "raw-average, one-step, two-step or all")
      ->capture_default_str();
  g->add_option("--segment-min", grade.segment_minutes, "Must match the checkpoint");
  g->add_option("--format", grade.format, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  g->add_option("--out", grade.out, "Output directory (default: stdout)");

  LosoArgs loso;
  auto* l = app.add_subcommand("loso", "Leave-one-subject-out evaluation");
  l->add_option("--manifest", loso.manifest, "Labels manifest")->required();
  l->add_option("--out", loso.out, "Output directory");
  l->add_option("--segment-min", loso.segment_minutes, "Segment length in minutes")->capture_default_str();
  l->add_option("--jobs", loso.jobs, "Folds trained concurrently")->capture_default_str();
  l->add_flag("--save-checkpoints", loso.save_checkpoints, "Write each fold's model");
  loso.flags.add(l);

  SweepArgs sweep;
  auto* w = app.add_subcommand("sweep", "LOSO accuracy against segment length");
  w->add_option("--manifest", sweep.manifest, "Labels manifest")->required();
  w->add_option("--out", sweep.out, "Output directory");
  w->add_option("--lengths", sweep.lengths, "Segment lengths in minutes");
  w->add_option("--jobs", sweep.jobs, "Folds trained concurrently")->capture_default_str();
  sweep.flags.add(w);

  ReportArgs report;
  auto* r = app.add_subcommand("report", "Render LOSO tables or a confusion-matrix CSV");
  r->add_option("--loso-report", report.report, "loso_report.json");
  r->add_option("--confusion", report.confusion, "Confusion CSV (actual,1,2,3,4[,total,false])");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (p->parsed()) return cmd_preprocess(prep);
    if (t->parsed()) return cmd_train(train);
    if (g->parsed()) return cmd_grade(grade);
    if (l->parsed()) return cmd_loso(loso);
    if (w->parsed()) return cmd_sweep(sweep);
    if (r->parsed()) return cmd_report(report);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const hienet::InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const hienet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
