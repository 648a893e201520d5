#include "hienet/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>

#include "hienet/errors.hpp"

namespace hienet {
namespace {

// Running mean over the vectors in sorted order: identical inputs reproduce
// themselves bit for bit and the result ignores input order exactly.
GradeProbabilities mean_of(std::span<const GradeProbabilities> vectors) {
  std::vector<GradeProbabilities> sorted(vectors.begin(), vectors.end());
  std::sort(sorted.begin(), sorted.end());
  GradeProbabilities mean{};
  double k = 0.0;
  for (const auto& v : sorted) {
    k += 1.0;
    for (int i = 0; i < kNumGrades; ++i) mean[i] += (v[i] - mean[i]) / k;
  }
  return mean;
}

GradeDecision finish(VotingMethod method, const GradeProbabilities& aggregate) {
  GradeDecision d;
  d.method = method;
  d.probabilities = aggregate;
  d.grade = argmax_grade(aggregate);
  double total = 0.0;
  for (double v : aggregate) total += v;
  for (int i = 0; i < kNumGrades; ++i) {
    d.normalized[i] = total > 0.0 ? aggregate[i] / total : 1.0 / kNumGrades;
  }
  return d;
}

std::size_t period_count(const PeriodGrouping& grouping) {
  std::size_t n = 0;
  for (const auto& channel : grouping.channels) {
    for (const auto& pv : channel) n = std::max(n, pv.period + 1);
  }
  return n;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SegmentSource make_segment_source(const EegRecording& recording) {
  recording.validate();
  if (recording.sample_rate != kModelSampleRate) {
    throw DataError("recording '" + recording.subject_id + "' is at " +
                    std::to_string(recording.sample_rate) +
                    " Hz; segmentation expects preprocessed 64 Hz data");
  }
  SegmentSource s;
  s.subject_id = recording.subject_id;
  s.sample_rate = recording.sample_rate;
  s.grade = recording.grade;
  s.channel_labels = recording.channel_labels;
  for (std::size_t c = 0; c < recording.channel_count(); ++c) {
    s.channels.push_back(channel_as_double(recording, c));
  }
  return s;
}

std::size_t segment_samples_for(double minutes, int sample_rate) {
  if (!(minutes > 0.0)) throw DataError("segment length must be positive");
  return static_cast<std::size_t>(std::llround(minutes * 60.0 * sample_rate));
}

std::size_t segments_per_channel(std::size_t length, std::size_t window, std::size_t stride) {
  if (window == 0 || stride == 0) throw DataError("segment window and stride must be positive");
  if (length < window) return 0;
  return (length - window) / stride + 1;
}

std::vector<Segment> segment_recording(const SegmentSource& source, double segment_minutes,
                                       double overlap) {
  if (!(overlap >= 0.0 && overlap < 1.0)) throw DataError("segment overlap must be in [0, 1)");
  const std::size_t window = segment_samples_for(segment_minutes, source.sample_rate);
  const auto stride = static_cast<std::size_t>(std::llround(static_cast<double>(window) * (1.0 - overlap)));
  if (source.length() < window) {
    throw DataError("recording '" + source.subject_id + "' lasts " +
                    std::to_string(source.duration_seconds()) + " s, shorter than one " +
                    std::to_string(segment_minutes) + "-minute segment");
  }
  const std::size_t count = segments_per_channel(source.length(), window, stride);
  std::vector<Segment> segments;
  segments.reserve(count * source.channels.size());
  for (std::size_t c = 0; c < source.channels.size(); ++c) {
    const std::span<const double> channel(source.channels[c]);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t start = i * stride;
      segments.push_back({c, static_cast<double>(start) / source.sample_rate, start,
                          channel.subspan(start, window)});
    }
  }
  return segments;
}

SegmentProbabilities infer_segments(const ModelParams& params, std::span<const Segment> segments) {
  SegmentProbabilities out;
  out.reserve(segments.size());
  for (const Segment& s : segments) {
    out.push_back({s.channel_index, s.start_time, forward(params, s.samples, Mode::kInfer)});
  }
  return out;
}

std::size_t PeriodGrouping::vector_count() const {
  std::size_t n = 0;
  for (const auto& c : channels) n += c.size();
  return n;
}

PeriodGrouping group_ten_minute(const SegmentProbabilities& probs, double recording_seconds,
                                double segment_seconds, double period_seconds) {
  if (!(period_seconds > 0.0) || !(segment_seconds > 0.0)) {
    throw DataError("period and segment durations must be positive");
  }
  std::size_t channels = 0;
  for (const auto& row : probs) channels = std::max(channels, row.channel_index + 1);

  // (channel, period) -> contained rows, in input order.
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> members;
  const double eps = 1e-6;
  for (std::size_t r = 0; r < probs.size(); ++r) {
    const double start = probs[r].start_time;
    const double end = start + segment_seconds;
    if (end > recording_seconds + eps) continue;
    const auto period = static_cast<std::size_t>(std::floor((start + eps) / period_seconds));
    if (end <= static_cast<double>(period + 1) * period_seconds + eps) {
      members[{probs[r].channel_index, period}].push_back(r);
    }
  }

  PeriodGrouping g;
  g.channels.resize(channels);
  for (const auto& [key, rows] : members) {
    std::vector<GradeProbabilities> vs;
    for (std::size_t r : rows) vs.push_back(probs[r].p);
    g.channels[key.first].push_back({key.second, mean_of(vs), rows.size()});
    g.contained_rows.insert(g.contained_rows.end(), rows.begin(), rows.end());
  }
  std::sort(g.contained_rows.begin(), g.contained_rows.end());
  return g;
}

std::string to_string(VotingMethod method) {
  switch (method) {
    case VotingMethod::kRawAverage:
      return "raw-average";
    case VotingMethod::kOneStep:
      return "one-step";
    case VotingMethod::kTwoStep:
      return "two-step";
  }
  return "?";
}

VotingMethod parse_voting_method(const std::string& name) {
  for (VotingMethod m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  throw DataError("unknown voting method '" + name + "' (expected raw-average, one-step or two-step)");
}

GradeDecision vote_raw_average(std::span<const GradeProbabilities> segments) {
  if (segments.empty()) throw DataError("raw-average vote needs at least one segment");
  GradeDecision d = finish(VotingMethod::kRawAverage, mean_of(segments));
  d.inputs = d.segments_used = segments.size();
  return d;
}

GradeDecision vote_raw_average(const SegmentProbabilities& probs, const PeriodGrouping& grouping) {
  std::vector<GradeProbabilities> included;
  for (std::size_t r : grouping.contained_rows) included.push_back(probs.at(r).p);
  GradeDecision d = vote_raw_average(included);
  // Per-period breakdown: mean of the period's segments over all channels.
  const std::size_t periods = period_count(grouping);
  for (std::size_t k = 0; k < periods; ++k) {
    // Sorted so the sum does not depend on channel order.
    std::vector<std::pair<GradeProbabilities, std::size_t>> weighted;
    for (const auto& channel : grouping.channels) {
      for (const auto& pv : channel) {
        if (pv.period == k) weighted.emplace_back(pv.p, pv.segments);
      }
    }
    std::sort(weighted.begin(), weighted.end());
    GradeProbabilities sum{};
    std::size_t n = 0;
    for (const auto& [p, segments] : weighted) {
      for (int i = 0; i < kNumGrades; ++i) sum[i] += p[i] * static_cast<double>(segments);
      n += segments;
    }
    if (n == 0) continue;
    for (double& v : sum) v /= static_cast<double>(n);
    d.periods.push_back(sum);
  }
  return d;
}

GradeDecision vote_one_step(const PeriodGrouping& grouping) {
  std::vector<GradeProbabilities> all;
  std::size_t segments = 0;
  for (const auto& channel : grouping.channels) {
    for (const auto& pv : channel) {
      all.push_back(pv.p);
      segments += pv.segments;
    }
  }
  if (all.empty()) throw DataError("one-step vote needs at least one period vector");
  GradeDecision d = finish(VotingMethod::kOneStep, mean_of(all));
  d.inputs = all.size();
  d.segments_used = segments;
  const std::size_t periods = period_count(grouping);
  for (std::size_t k = 0; k < periods; ++k) {
    std::vector<GradeProbabilities> column;
    for (const auto& channel : grouping.channels) {
      for (const auto& pv : channel) {
        if (pv.period == k) column.push_back(pv.p);
      }
    }
    if (!column.empty()) d.periods.push_back(mean_of(column));
  }
  return d;
}

GradeProbabilities elementwise_median(std::span<const GradeProbabilities> vectors) {
  if (vectors.empty()) throw DataError("median of an empty set");
  GradeProbabilities out{};
  std::vector<double> column(vectors.size());
  const std::size_t n = vectors.size();
  for (int i = 0; i < kNumGrades; ++i) {
    for (std::size_t k = 0; k < n; ++k) column[k] = vectors[k][i];
    std::sort(column.begin(), column.end());
    out[i] = n % 2 == 1 ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
  }
  return out;
}

GradeDecision vote_two_step(const PeriodGrouping& grouping) {
  const std::size_t periods = period_count(grouping);
  std::vector<GradeProbabilities> medians;
  std::size_t inputs = 0, segments = 0;
  for (std::size_t k = 0; k < periods; ++k) {
    std::vector<GradeProbabilities> column;
    for (const auto& channel : grouping.channels) {
      for (const auto& pv : channel) {
        if (pv.period != k) continue;
        column.push_back(pv.p);
        segments += pv.segments;
      }
    }
    if (column.empty()) continue;
    inputs += column.size();
    medians.push_back(elementwise_median(column));
  }
  if (medians.empty()) throw DataError("two-step vote needs at least one period vector");
  GradeDecision d = finish(VotingMethod::kTwoStep, mean_of(medians));
  d.periods = medians;
  d.inputs = inputs;
  d.segments_used = segments;
  return d;
}

GradeDecision vote(VotingMethod method, const SegmentProbabilities& probs,
                   const PeriodGrouping& grouping) {
  switch (method) {
    case VotingMethod::kRawAverage:
      return vote_raw_average(probs, grouping);
    case VotingMethod::kOneStep:
      return vote_one_step(grouping);
    case VotingMethod::kTwoStep:
      return vote_two_step(grouping);
  }
  throw InvariantError("unhandled voting method");
}

RecordingGrades grade_recording(const ModelParams& params, const SegmentSource& source,
                                double segment_minutes) {
  const std::size_t window = segment_samples_for(segment_minutes, source.sample_rate);
  if (window != params.spec.segment_samples) {
    throw DataError("model expects " + std::to_string(params.spec.segment_samples) +
                    "-sample segments but " + std::to_string(segment_minutes) + " min at " +
                    std::to_string(source.sample_rate) + " Hz gives " + std::to_string(window));
  }
  RecordingGrades out;
  out.subject_id = source.subject_id;
  const auto segments = segment_recording(source, segment_minutes);
  out.segments = segments.size();
  out.probabilities = infer_segments(params, segments);
  out.grouping = group_ten_minute(out.probabilities, source.duration_seconds(),
                                  static_cast<double>(window) / source.sample_rate);
  for (VotingMethod m : kAllMethods) out.decisions.push_back(vote(m, out.probabilities, out.grouping));
  return out;
}

std::string decision_csv_header() { return "subject_id,method,grade,p1,p2,p3,p4,n_segments_used"; }

std::string decision_csv_row(const std::string& subject_id, const GradeDecision& d) {
  std::string row = subject_id + "," + to_string(d.method) + "," + std::to_string(d.grade);
  for (double p : d.probabilities) row += "," + fmt(p);
  row += "," + std::to_string(d.segments_used);
  return row;
}

std::string decision_json(const std::string& subject_id, const GradeDecision& d) {
  nlohmann::ordered_json j;
  j["subject_id"] = subject_id;
  j["method"] = to_string(d.method);
  j["grade"] = d.grade;
  j["probabilities"] = d.probabilities;
  j["normalized"] = d.normalized;
  j["periods"] = d.periods;
  j["inputs"] = d.inputs;
  j["n_segments_used"] = d.segments_used;
  return j.dump(2);
}

}  // namespace hienet
