#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hienet/grade.hpp"
#include "hienet/model.hpp"
#include "hienet/signal.hpp"

namespace hienet {

/// A 64 Hz recording held as doubles so segments can be viewed in place.
struct SegmentSource {
  std::string subject_id;
  int sample_rate = kModelSampleRate;
  std::optional<int> grade;
  std::vector<std::string> channel_labels;
  std::vector<std::vector<double>> channels;

  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  double duration_seconds() const { return static_cast<double>(length()) / sample_rate; }
};

/// Requires a validated 64 Hz recording.
SegmentSource make_segment_source(const EegRecording& recording);

/// Samples in a segment of `minutes` at `sample_rate` (rounded to the nearest sample).
std::size_t segment_samples_for(double minutes, int sample_rate = kModelSampleRate);

struct Segment {
  std::size_t channel_index = 0;
  double start_time = 0.0;  // seconds from the recording start
  std::size_t start_sample = 0;
  std::span<const double> samples;  // view into the SegmentSource
};

/// Per channel, windows start at 0, W/2, W, ... while fully inside the
/// recording (W = segment length, half overlap by default). Channel-major.
std::vector<Segment> segment_recording(const SegmentSource& source, double segment_minutes,
                                       double overlap = 0.5);

/// Windows per channel: floor((length - W) / stride) + 1.
std::size_t segments_per_channel(std::size_t length, std::size_t window, std::size_t stride);

struct SegmentProbability {
  std::size_t channel_index = 0;
  double start_time = 0.0;
  GradeProbabilities p{};
};

using SegmentProbabilities = std::vector<SegmentProbability>;

/// One probability row per segment, order preserving.
SegmentProbabilities infer_segments(const ModelParams& params, std::span<const Segment> segments);

inline constexpr double kVotingPeriodSeconds = 600.0;

/// Average of the segments lying wholly inside one voting period.
struct PeriodVector {
  std::size_t period = 0;
  GradeProbabilities p{};
  std::size_t segments = 0;
};

struct PeriodGrouping {
  /// channels[c] lists channel c's periods in time order.
  std::vector<std::vector<PeriodVector>> channels;
  /// Rows of the input that fall inside some period.
  std::vector<std::size_t> contained_rows;

  std::size_t vector_count() const;
};

/// Groups segment rows into 10-minute periods [600k, 600(k+1)). Segments that
/// straddle a period boundary are left out; periods holding no whole
/// segment are dropped.
PeriodGrouping group_ten_minute(const SegmentProbabilities& probs, double recording_seconds,
                                double segment_seconds,
                                double period_seconds = kVotingPeriodSeconds);

enum class VotingMethod { kRawAverage, kOneStep, kTwoStep };

inline constexpr VotingMethod kAllMethods[] = {VotingMethod::kRawAverage, VotingMethod::kOneStep,
                                               VotingMethod::kTwoStep};

std::string to_string(VotingMethod method);
/// Accepts "raw-average", "one-step", "two-step".
VotingMethod parse_voting_method(const std::string& name);

struct GradeDecision {
  int grade = 1;
  VotingMethod method = VotingMethod::kTwoStep;
  /// Aggregate as computed; two-step medians need not sum to 1.
  GradeProbabilities probabilities{};
  GradeProbabilities normalized{};
  /// Per-period aggregate (raw/one-step: period mean, two-step: period median).
  std::vector<GradeProbabilities> periods;
  std::size_t inputs = 0;         // vectors entering the final average
  std::size_t segments_used = 0;  // segments behind those vectors
};

/// Mean of the segment vectors, then argmax.
GradeDecision vote_raw_average(std::span<const GradeProbabilities> segments);
/// Raw average over the period-contained rows of `probs`.
GradeDecision vote_raw_average(const SegmentProbabilities& probs, const PeriodGrouping& grouping);
/// Mean of every (channel, period) vector, then argmax.
GradeDecision vote_one_step(const PeriodGrouping& grouping);
/// Per period, elementwise median across channels; then mean over periods.
GradeDecision vote_two_step(const PeriodGrouping& grouping);

GradeDecision vote(VotingMethod method, const SegmentProbabilities& probs,
                   const PeriodGrouping& grouping);

/// Elementwise median; an even count averages the two middle order statistics.
GradeProbabilities elementwise_median(std::span<const GradeProbabilities> vectors);

/// Everything needed to grade one recording with all three methods.
struct RecordingGrades {
  std::string subject_id;
  std::size_t segments = 0;
  SegmentProbabilities probabilities;
  PeriodGrouping grouping;
  std::vector<GradeDecision> decisions;  // one per kAllMethods entry
};

RecordingGrades grade_recording(const ModelParams& params, const SegmentSource& source,
                                double segment_minutes);

/// `subject_id,method,grade,p1,p2,p3,p4,n_segments_used`
std::string decision_csv_header();
std::string decision_csv_row(const std::string& subject_id, const GradeDecision& decision);
/// JSON object with the per-period breakdown.
std::string decision_json(const std::string& subject_id, const GradeDecision& decision);

}  // namespace hienet
