#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hienet/grade.hpp"
#include "hienet/segmentation.hpp"
#include "hienet/trainer.hpp"

namespace hienet {

/// Rows are actual grades, columns predicted grades.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumGrades>, kNumGrades> counts{};

  void add(int actual, int predicted);
  std::size_t total() const;
  std::size_t correct() const;
  std::size_t row_total(int actual) const;
  std::size_t column_total(int predicted) const;
  /// Misclassified subjects of one actual grade.
  std::size_t false_count(int actual) const;
  /// trace / total; NaN when empty.
  double accuracy() const;
  /// Diagonal share of one row; NaN when the row is empty.
  double recall(int actual) const;
  /// Predictions two or more grades from the truth.
  std::size_t off_by_more_than_one() const;

  /// Header `actual,1,2,3,4,total,false`, one row per grade, then a `total` row.
  std::string to_csv() const;
  /// Aligned text table with per-row recall on the diagonal.
  std::string to_text() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(std::span<const std::pair<int, int>> actual_predicted);

/// Reads the CSV written by ConfusionMatrix::to_csv. The total/false columns
/// and the total row are optional but checked when present.
ConfusionMatrix parse_confusion_csv(const std::string& text);

/// Percentage with one decimal, e.g. 0.8148 -> "81.5%".
std::string format_percent(double fraction);

/// A labeled recording, preprocessed to 64 Hz, ready for LOSO.
struct LosoSubject {
  std::string subject_id;
  int grade = 0;
  SegmentSource source;
};

/// Loads every recording listed in a labels manifest (paths relative to the
/// manifest's folder), applies the manifest grade and preprocesses to 64 Hz.
/// A recording whose embedded grade disagrees with the manifest is rejected.
std::vector<LosoSubject> load_corpus(const std::filesystem::path& manifest);

struct LosoConfig {
  TrainConfig train;
  double segment_minutes = 5.0;  // half-overlapping windows for training and grading
  unsigned jobs = 1;  // folds trained concurrently
  /// When set, each fold's checkpoint is written here as `fold-<id>.ckpt`.
  std::optional<std::filesystem::path> checkpoint_dir;
};

struct FoldResult {
  std::string subject_id;
  int actual = 0;
  std::vector<std::string> training_subjects;
  std::vector<std::string> validation_subjects;
  std::size_t training_segments = 0;
  double final_train_loss = 0.0;
  std::string checkpoint_digest;  // FNV-1a 64 of the encoded checkpoint, hex
  std::vector<GradeDecision> decisions;  // one per kAllMethods entry

  const GradeDecision& decision(VotingMethod method) const;
};

struct LosoReport {
  LosoConfig config;
  std::vector<FoldResult> folds;  // ordered by subject_id

  ConfusionMatrix confusion(VotingMethod method) const;
  double accuracy(VotingMethod method) const;

  /// Deterministic JSON (no timestamps).
  std::string to_json() const;
  static LosoReport from_json(const std::string& text);
};

struct FoldProgress {
  std::size_t fold = 0;  // 0-based, in subject_id order
  std::size_t folds = 0;
  const FoldResult* result = nullptr;  // null when the fold starts
};
using FoldCallback = std::function<void(const FoldProgress&)>;

/// Segments of every channel of `subject`, labeled with its grade.
std::vector<LabeledSegment> labeled_segments(const LosoSubject& subject, double segment_minutes,
                                             double overlap = 0.5);

/// Trains on all other subjects and grades the held-out one, for every
/// subject. Throws DataError on fewer than two subjects, duplicate ids or
/// bad labels; InvariantError if the test subject reaches a fold's training
/// or validation data.
LosoReport loso_evaluate(std::span<const LosoSubject> subjects, const LosoConfig& config,
                         const FoldCallback& on_fold = {});

struct SweepPoint {
  double segment_minutes = 0.0;
  double accuracy = 0.0;  // two-step
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<std::string> warnings;  // skipped lengths

  /// `segment_minutes,accuracy`
  std::string to_csv() const;
};

/// 0.5, 1.0, ..., 10.0 minutes.
std::vector<double> default_sweep_lengths();

/// LOSO per segment length; lengths longer than the shortest recording are
/// skipped with a warning.
SweepResult segment_length_sweep(std::span<const LosoSubject> subjects,
                                 std::span<const double> lengths, const LosoConfig& config,
                                 const std::function<void(double)>& on_length = {});

struct MethodAccuracy {
  VotingMethod method = VotingMethod::kTwoStep;
  double accuracy = 0.0;
};

/// One row per voting method, in kAllMethods order.
std::vector<MethodAccuracy> compare_postprocessing(const LosoReport& report);
/// Method/accuracy table, columns CNN output, one-step, two-step.
std::string format_postprocessing(std::span<const MethodAccuracy> rows);

}  // namespace hienet
