#include "hienet/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "hienet/checkpoint.hpp"
#include "hienet/errors.hpp"

namespace hienet {
namespace {

using json = nlohmann::ordered_json;

std::size_t index_of(int grade) { return static_cast<std::size_t>(grade - 1); }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& where) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw DataError(where + ": '" + s + "' is not a non-negative integer");
  }
  return std::stoull(s);
}

std::string hex_digest(const std::vector<char>& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json train_config_json(const TrainConfig& c) {
  json j;
  j["initial_lr"] = c.initial_lr;
  j["lr_decay"] = c.lr_decay;
  j["decay_every"] = c.decay_every;
  j["schedule_unit"] = to_string(c.schedule_unit);
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["validation_fraction"] = c.validation_fraction;
  j["clip_norm"] = c.clip_norm;
  return j;
}

TrainConfig train_config_from(const json& j) {
  TrainConfig c;
  c.initial_lr = j.at("initial_lr").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.decay_every = j.at("decay_every").get<std::size_t>();
  c.schedule_unit = parse_schedule_unit(j.at("schedule_unit").get<std::string>());
  c.momentum = j.at("momentum").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.clip_norm = j.value("clip_norm", 0.0);
  return c;
}

}  // namespace

// ---- ConfusionMatrix --------------------------------------------------------

void ConfusionMatrix::add(int actual, int predicted) {
  require_grade(actual, "actual grade");
  require_grade(predicted, "predicted grade");
  ++counts[index_of(actual)][index_of(predicted)];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

std::size_t ConfusionMatrix::correct() const {
  std::size_t n = 0;
  for (std::size_t g = 0; g < kNumGrades; ++g) n += counts[g][g];
  return n;
}

std::size_t ConfusionMatrix::row_total(int actual) const {
  require_grade(actual, "actual grade");
  std::size_t n = 0;
  for (std::size_t v : counts[index_of(actual)]) n += v;
  return n;
}

std::size_t ConfusionMatrix::column_total(int predicted) const {
  require_grade(predicted, "predicted grade");
  std::size_t n = 0;
  for (const auto& row : counts) n += row[index_of(predicted)];
  return n;
}

std::size_t ConfusionMatrix::false_count(int actual) const {
  return row_total(actual) - counts[index_of(actual)][index_of(actual)];
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(correct()) / static_cast<double>(n);
}

double ConfusionMatrix::recall(int actual) const {
  const std::size_t n = row_total(actual);
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(counts[index_of(actual)][index_of(actual)]) / static_cast<double>(n);
}

std::size_t ConfusionMatrix::off_by_more_than_one() const {
  std::size_t n = 0;
  for (std::size_t a = 0; a < kNumGrades; ++a) {
    for (std::size_t p = 0; p < kNumGrades; ++p) {
      if (a > p + 1 || p > a + 1) n += counts[a][p];
    }
  }
  return n;
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "actual,1,2,3,4,total,false\n";
  std::size_t total_false = 0;
  for (int a = 1; a <= kNumGrades; ++a) {
    out += std::to_string(a);
    for (std::size_t v : counts[index_of(a)]) out += "," + std::to_string(v);
    out += "," + std::to_string(row_total(a)) + "," + std::to_string(false_count(a)) + "\n";
    total_false += false_count(a);
  }
  out += "total";
  for (int p = 1; p <= kNumGrades; ++p) out += "," + std::to_string(column_total(p));
  out += "," + std::to_string(total()) + "," + std::to_string(total_false) + "\n";
  return out;
}

std::string ConfusionMatrix::to_text() const {
  char line[160];
  std::string out = "Actual |            Predicted grade             | Total | False\n";
  out += "grade  |      1         2         3         4     |       |\n";
  for (int a = 1; a <= kNumGrades; ++a) {
    std::string cells;
    for (int p = 1; p <= kNumGrades; ++p) {
      const std::size_t v = counts[index_of(a)][index_of(p)];
      char cell[32];
      if (a == p && row_total(a) > 0) {
        std::snprintf(cell, sizeof cell, "%3zu (%3.0f%%)", v, 100.0 * recall(a));
      } else {
        std::snprintf(cell, sizeof cell, "%3zu       ", v);
      }
      cells += cell;
    }
    std::snprintf(line, sizeof line, "%-6d | %s | %5zu | %5zu\n", a, cells.c_str(), row_total(a),
                  false_count(a));
    out += line;
  }
  std::string totals;
  std::size_t total_false = 0;
  for (int p = 1; p <= kNumGrades; ++p) {
    char cell[32];
    std::snprintf(cell, sizeof cell, "%3zu       ", column_total(p));
    totals += cell;
    total_false += false_count(p);
  }
  std::snprintf(line, sizeof line, "%-6s | %s | %5zu | %5zu\n", "Total", totals.c_str(), total(),
                total_false);
  out += line;
  out += "Accuracy: " + format_percent(accuracy()) + " (" + std::to_string(correct()) + "/" +
         std::to_string(total()) + "), off by more than one grade: " +
         std::to_string(off_by_more_than_one()) + "\n";
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const std::pair<int, int>> actual_predicted) {
  ConfusionMatrix m;
  for (const auto& [a, p] : actual_predicted) m.add(a, p);
  return m;
}

ConfusionMatrix parse_confusion_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("confusion CSV is empty");
  const auto header = split(line, ',');
  const bool has_totals = header.size() == 7;
  if (!(header.size() == 5 || has_totals) || header[0] != "actual" || header[1] != "1" ||
      header[2] != "2" || header[3] != "3" || header[4] != "4" ||
      (has_totals && (header[5] != "total" || header[6] != "false"))) {
    throw DataError("confusion CSV header must be actual,1,2,3,4[,total,false]");
  }
  ConfusionMatrix m;
  std::set<int> seen;
  std::optional<std::vector<std::size_t>> total_row;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    const std::string where = "confusion CSV row " + std::to_string(row);
    if (f.size() != header.size()) throw DataError(where + ": expected " + std::to_string(header.size()) + " columns");
    std::vector<std::size_t> values;
    for (std::size_t i = 1; i < f.size(); ++i) values.push_back(parse_count(f[i], where));
    if (f[0] == "total") {
      total_row = values;
      continue;
    }
    const int a = static_cast<int>(parse_count(f[0], where));
    require_grade(a, where + ": actual grade");
    if (!seen.insert(a).second) throw DataError(where + ": grade " + f[0] + " listed twice");
    for (std::size_t p = 0; p < kNumGrades; ++p) m.counts[index_of(a)][p] = values[p];
    if (has_totals && (values[4] != m.row_total(a) || values[5] != m.false_count(a))) {
      throw DataError(where + ": total/false columns disagree with the counts");
    }
  }
  if (seen.size() != kNumGrades) throw DataError("confusion CSV must list grades 1 to 4");
  if (total_row) {
    for (int p = 1; p <= kNumGrades; ++p) {
      if ((*total_row)[index_of(p)] != m.column_total(p)) {
        throw DataError("confusion CSV total row disagrees with column " + std::to_string(p));
      }
    }
    if (has_totals && (*total_row)[4] != m.total()) {
      throw DataError("confusion CSV grand total disagrees with the counts");
    }
  }
  return m;
}

std::string format_percent(double fraction) {
  if (std::isnan(fraction)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * fraction);
  return buf;
}

// ---- LOSO -------------------------------------------------------------------

const GradeDecision& FoldResult::decision(VotingMethod method) const {
  for (const auto& d : decisions) {
    if (d.method == method) return d;
  }
  throw DataError("fold '" + subject_id + "' has no " + to_string(method) + " decision");
}

ConfusionMatrix LosoReport::confusion(VotingMethod method) const {
  ConfusionMatrix m;
  for (const auto& f : folds) m.add(f.actual, f.decision(method).grade);
  return m;
}

double LosoReport::accuracy(VotingMethod method) const { return confusion(method).accuracy(); }

std::string LosoReport::to_json() const {
  json j;
  json c;
  c["train"] = train_config_json(config.train);
  c["segment_minutes"] = config.segment_minutes;
  c["jobs"] = config.jobs;
  j["config"] = c;
  json folds_json = json::array();
  for (const auto& f : folds) {
    json fj;
    fj["subject_id"] = f.subject_id;
    fj["actual"] = f.actual;
    fj["training_subjects"] = f.training_subjects;
    fj["validation_subjects"] = f.validation_subjects;
    fj["training_segments"] = f.training_segments;
    fj["final_train_loss"] = f.final_train_loss;
    fj["checkpoint_digest"] = f.checkpoint_digest;
    json dj;
    for (const auto& d : f.decisions) {
      json one;
      one["grade"] = d.grade;
      one["probabilities"] = d.probabilities;
      one["periods"] = d.periods;
      one["inputs"] = d.inputs;
      one["n_segments_used"] = d.segments_used;
      dj[to_string(d.method)] = one;
    }
    fj["decisions"] = dj;
    folds_json.push_back(fj);
  }
  j["folds"] = folds_json;
  json summary;
  for (VotingMethod m : kAllMethods) {
    const ConfusionMatrix cm = confusion(m);
    json s;
    s["accuracy"] = cm.accuracy();
    s["correct"] = cm.correct();
    s["total"] = cm.total();
    s["off_by_more_than_one"] = cm.off_by_more_than_one();
    s["confusion"] = cm.counts;
    summary[to_string(m)] = s;
  }
  j["summary"] = summary;
  return j.dump(2) + "\n";
}

LosoReport LosoReport::from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    LosoReport r;
    const json& c = j.at("config");
    r.config.train = train_config_from(c.at("train"));
    r.config.segment_minutes = c.at("segment_minutes").get<double>();
    r.config.jobs = c.at("jobs").get<unsigned>();
    for (const json& fj : j.at("folds")) {
      FoldResult f;
      f.subject_id = fj.at("subject_id").get<std::string>();
      f.actual = fj.at("actual").get<int>();
      require_grade(f.actual, "fold '" + f.subject_id + "' actual grade");
      f.training_subjects = fj.at("training_subjects").get<std::vector<std::string>>();
      f.validation_subjects = fj.at("validation_subjects").get<std::vector<std::string>>();
      f.training_segments = fj.at("training_segments").get<std::size_t>();
      f.final_train_loss = fj.at("final_train_loss").get<double>();
      f.checkpoint_digest = fj.at("checkpoint_digest").get<std::string>();
      for (const auto& [name, dj] : fj.at("decisions").items()) {
        GradeDecision d;
        d.method = parse_voting_method(name);
        d.grade = dj.at("grade").get<int>();
        require_grade(d.grade, "fold '" + f.subject_id + "' " + name + " grade");
        d.probabilities = dj.at("probabilities").get<GradeProbabilities>();
        d.periods = dj.at("periods").get<std::vector<GradeProbabilities>>();
        d.inputs = dj.at("inputs").get<std::size_t>();
        d.segments_used = dj.at("n_segments_used").get<std::size_t>();
        double total = 0.0;
        for (double v : d.probabilities) total += v;
        for (int i = 0; i < kNumGrades; ++i) {
          d.normalized[i] = total > 0.0 ? d.probabilities[i] / total : 1.0 / kNumGrades;
        }
        f.decisions.push_back(std::move(d));
      }
      r.folds.push_back(std::move(f));
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed LOSO report: ") + e.what());
  }
}

std::vector<LosoSubject> load_corpus(const std::filesystem::path& manifest) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw DataError(manifest.string() + ": manifest lists no recordings");
  std::vector<LosoSubject> subjects;
  for (const auto& e : entries) {
    const std::filesystem::path path = e.path.is_absolute() ? e.path : manifest.parent_path() / e.path;
    EegRecording r = load_any_recording(path);
    if (r.grade && *r.grade != e.grade) {
      throw DataError(path.string() + ": recording is labeled grade " + std::to_string(*r.grade) +
                      " but the manifest says " + std::to_string(e.grade));
    }
    r.subject_id = e.subject_id;
    r.grade = e.grade;
    const EegRecording p = preprocess(r);
    subjects.push_back({e.subject_id, e.grade, make_segment_source(p)});
  }
  return subjects;
}

std::vector<LabeledSegment> labeled_segments(const LosoSubject& subject, double segment_minutes,
                                             double overlap) {
  std::vector<LabeledSegment> out;
  for (const Segment& s : segment_recording(subject.source, segment_minutes, overlap)) {
    out.push_back({s.samples, subject.grade, subject.subject_id});
  }
  return out;
}

LosoReport loso_evaluate(std::span<const LosoSubject> subjects, const LosoConfig& config,
                         const FoldCallback& on_fold) {
  config.train.validate();
  if (subjects.size() < 2) throw DataError("LOSO needs at least two subjects");
  std::vector<const LosoSubject*> ordered;
  std::set<std::string> ids;
  for (const auto& s : subjects) {
    if (!ids.insert(s.subject_id).second) throw DataError("duplicate subject_id '" + s.subject_id + "'");
    require_grade(s.grade, "subject '" + s.subject_id + "' label");
    ordered.push_back(&s);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const LosoSubject* a, const LosoSubject* b) { return a->subject_id < b->subject_id; });

  const ModelSpec spec = build_hienet(segment_samples_for(config.segment_minutes));
  std::vector<std::vector<LabeledSegment>> per_subject;
  for (const LosoSubject* s : ordered) per_subject.push_back(labeled_segments(*s, config.segment_minutes));
  if (config.checkpoint_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*config.checkpoint_dir, ec);
    if (ec) throw DataError("cannot create " + config.checkpoint_dir->string() + ": " + ec.message());
  }

  LosoReport report;
  report.config = config;
  report.folds.resize(ordered.size());
  std::mutex callback_mutex;

  auto run_fold = [&](std::size_t k) {
    const LosoSubject& test = *ordered[k];
    if (on_fold) {
      std::lock_guard lock(callback_mutex);
      on_fold({k, ordered.size(), nullptr});
    }
    std::vector<LabeledSegment> pool;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      if (i != k) pool.insert(pool.end(), per_subject[i].begin(), per_subject[i].end());
    }
    TrainConfig fold_config = config.train;
    fold_config.seed = derive_seed(config.train.seed, test.subject_id);
    std::vector<LabeledSegment> training, validation;
    split_by_subject(pool, fold_config.validation_fraction, fold_config.seed, training, validation);
    for (const auto* part : {&training, &validation}) {
      for (const auto& s : *part) {
        if (s.subject_id == test.subject_id) {
          throw InvariantError("fold '" + test.subject_id + "': test subject leaked into training data");
        }
      }
    }
    TrainResult trained =
        train_from(init_params(spec, fold_config.seed), training, validation, fold_config);

    FoldResult& f = report.folds[k];
    f.subject_id = test.subject_id;
    f.actual = test.grade;
    f.training_subjects = trained.training_subjects;
    f.validation_subjects = trained.validation_subjects;
    f.training_segments = training.size();
    f.final_train_loss = trained.curve.points.empty() ? 0.0 : trained.curve.points.back().train_loss;
    const auto bytes = encode_checkpoint(trained.params);
    f.checkpoint_digest = hex_digest(bytes);
    if (config.checkpoint_dir) {
      save_checkpoint(trained.params, *config.checkpoint_dir / ("fold-" + test.subject_id + ".ckpt"));
    }
    f.decisions = grade_recording(trained.params, test.source, config.segment_minutes).decisions;
    if (on_fold) {
      std::lock_guard lock(callback_mutex);
      on_fold({k, ordered.size(), &f});
    }
  };

  const unsigned threads =
      std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(ordered.size())));
  if (threads == 1) {
    for (std::size_t k = 0; k < ordered.size(); ++k) run_fold(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
      std::vector<std::jthread> pool;
      for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
          for (std::size_t k = next++; k < ordered.size(); k = next++) {
            try {
              run_fold(k);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  return report;
}

// ---- Sweep and post-processing comparison ------------------------------------

std::string SweepResult::to_csv() const {
  std::string out = "segment_minutes,accuracy\n";
  for (const auto& p : points) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g,%.10g\n", p.segment_minutes, p.accuracy);
    out += buf;
  }
  return out;
}

std::vector<double> default_sweep_lengths() {
  std::vector<double> lengths;
  for (int i = 1; i <= 20; ++i) lengths.push_back(0.5 * i);
  return lengths;
}

SweepResult segment_length_sweep(std::span<const LosoSubject> subjects, std::span<const double> lengths,
                                 const LosoConfig& config, const std::function<void(double)>& on_length) {
  if (subjects.empty()) throw DataError("sweep needs a corpus");
  double shortest = std::numeric_limits<double>::infinity();
  for (const auto& s : subjects) shortest = std::min(shortest, s.source.duration_seconds());
  SweepResult result;
  for (double minutes : lengths) {
    if (!(minutes > 0.0)) throw DataError("segment lengths must be positive");
    if (minutes * 60.0 > shortest + 1e-9) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "skipping %g min: longer than the shortest recording (%g s)",
                    minutes, shortest);
      result.warnings.emplace_back(buf);
      continue;
    }
    if (on_length) on_length(minutes);
    LosoConfig c = config;
    c.segment_minutes = minutes;
    c.checkpoint_dir.reset();
    const LosoReport report = loso_evaluate(subjects, c);
    result.points.push_back({minutes, report.accuracy(VotingMethod::kTwoStep)});
  }
  return result;
}

std::vector<MethodAccuracy> compare_postprocessing(const LosoReport& report) {
  std::vector<MethodAccuracy> rows;
  for (VotingMethod m : kAllMethods) rows.push_back({m, report.accuracy(m)});
  return rows;
}

std::string format_postprocessing(std::span<const MethodAccuracy> rows) {
  const auto column = [](VotingMethod m) -> std::string {
    switch (m) {
      case VotingMethod::kRawAverage:
        return "CNN output";
      case VotingMethod::kOneStep:
        return "One-step voting";
      case VotingMethod::kTwoStep:
        return "Two-step voting";
    }
    return "?";
  };
  std::string header = "System performance";
  std::string values = "Accuracy          ";
  for (const auto& r : rows) {
    char h[32], v[32];
    std::snprintf(h, sizeof h, " | %-15s", column(r.method).c_str());
    std::snprintf(v, sizeof v, " | %-15s", format_percent(r.accuracy).c_str());
    header += h;
    values += v;
  }
  return header + "\n" + values + "\n";
}

}  // namespace hienet
