#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hienet/errors.hpp"
#include "hienet/model.hpp"
#include "hienet/segmentation.hpp"

namespace hienet {
namespace {

SegmentSource flat_source(double seconds, std::size_t channels = 8) {
  SegmentSource s;
  s.subject_id = "T";
  for (std::size_t c = 0; c < channels; ++c) {
    s.channel_labels.push_back("c" + std::to_string(c));
    s.channels.emplace_back(static_cast<std::size_t>(seconds * kModelSampleRate), 0.0);
  }
  return s;
}

// Probability rows on the 5-minute grid with the given per-row vectors.
SegmentProbabilities grid_rows(std::size_t channels, std::size_t per_channel,
                               const std::function<GradeProbabilities(std::size_t, std::size_t)>& p) {
  SegmentProbabilities rows;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < per_channel; ++k) {
      rows.push_back({c, 150.0 * static_cast<double>(k), p(c, k)});
    }
  }
  return rows;
}

PeriodGrouping make_grouping(const std::vector<std::vector<GradeProbabilities>>& channels) {
  PeriodGrouping g;
  for (const auto& periods : channels) {
    std::vector<PeriodVector> row;
    for (std::size_t k = 0; k < periods.size(); ++k) row.push_back({k, periods[k], 3});
    g.channels.push_back(row);
  }
  return g;
}

TEST(Segmentation, OneHourFiveMinuteCounts) {
  const SegmentSource src = flat_source(3600.0);
  EXPECT_EQ(segment_samples_for(5.0), 19200u);
  const auto segments = segment_recording(src, 5.0);
  EXPECT_EQ(segments.size(), 23u * 8u);
  EXPECT_EQ(segments_per_channel(src.length(), 19200, 9600), 23u);
  for (std::size_t k = 0; k < 23; ++k) {
    EXPECT_EQ(segments[k].channel_index, 0u);
    EXPECT_EQ(segments[k].start_sample, 9600u * k);
    EXPECT_DOUBLE_EQ(segments[k].start_time, 150.0 * static_cast<double>(k));
    EXPECT_EQ(segments[k].samples.size(), 19200u);
  }
  EXPECT_EQ(segments[23].channel_index, 1u);
}

TEST(Segmentation, GroupingOfOneHour) {
  const auto rows = grid_rows(8, 23, [](std::size_t, std::size_t) {
    return GradeProbabilities{0.25, 0.25, 0.25, 0.25};
  });
  const PeriodGrouping g = group_ten_minute(rows, 3600.0, 300.0);
  ASSERT_EQ(g.channels.size(), 8u);
  for (const auto& periods : g.channels) {
    ASSERT_EQ(periods.size(), 6u);
    for (const auto& v : periods) EXPECT_EQ(v.segments, 3u);
  }
  EXPECT_EQ(g.vector_count(), 48u);
  EXPECT_EQ(g.contained_rows.size(), 144u);
  // Starts 450, 1050, ... straddle a period boundary.
  for (std::size_t r : g.contained_rows) {
    const double start = rows[r].start_time;
    EXPECT_LE(std::fmod(start, 600.0) + 300.0, 600.0);
  }
}

TEST(Segmentation, PeriodAveragesContainedSegments) {
  SegmentProbabilities rows = {
      {0, 0.0, {1, 0, 0, 0}}, {0, 150.0, {0, 1, 0, 0}}, {0, 300.0, {1, 0, 0, 0}},
      {0, 450.0, {0, 0, 0, 1}},  // straddles 600
  };
  const PeriodGrouping g = group_ten_minute(rows, 750.0, 300.0);
  ASSERT_EQ(g.channels[0].size(), 1u);
  const GradeProbabilities& p = g.channels[0][0].p;
  EXPECT_DOUBLE_EQ(p[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(p[1], 1.0 / 3.0);
  EXPECT_EQ(p[3], 0.0);
}

TEST(Segmentation, TrailingPartialPeriod) {
  // 45 minutes: the fifth period [2400,3000) holds only the segment starting at 2400.
  const auto rows = grid_rows(1, 17, [](std::size_t, std::size_t) {
    return GradeProbabilities{1, 0, 0, 0};
  });
  const auto partial = group_ten_minute(rows, 2700.0, 300.0);
  ASSERT_EQ(partial.channels[0].size(), 5u);
  EXPECT_EQ(partial.channels[0][4].segments, 1u);
  EXPECT_EQ(partial.contained_rows.size(), 13u);
}

TEST(Segmentation, RejectsShortRecordingAndBadParameters) {
  EXPECT_THROW(segment_recording(flat_source(299.0), 5.0), DataError);
  EXPECT_NO_THROW(segment_recording(flat_source(300.0), 5.0));
  EXPECT_THROW(segment_recording(flat_source(600.0), 0.0), DataError);
  EXPECT_THROW(segment_recording(flat_source(600.0), 5.0, 1.0), DataError);
}

TEST(Segmentation, SegmentsViewTheSource) {
  SegmentSource src = flat_source(600.0, 1);
  for (std::size_t i = 0; i < src.length(); ++i) src.channels[0][i] = static_cast<double>(i);
  const auto segments = segment_recording(src, 5.0);
  ASSERT_EQ(segments.size(), 3u);
  EXPECT_EQ(segments[2].samples.front(), 19200.0);
  EXPECT_EQ(segments[2].samples.back(), 38399.0);
}

TEST(Voting, RawAverageOracle) {
  const std::vector<GradeProbabilities> v = {{0.1, 0.2, 0.3, 0.4}, {0.5, 0.3, 0.1, 0.1}};
  const GradeDecision d = vote_raw_average(v);
  EXPECT_DOUBLE_EQ(d.probabilities[0], 0.3);
  EXPECT_DOUBLE_EQ(d.probabilities[1], 0.25);
  EXPECT_DOUBLE_EQ(d.probabilities[2], 0.2);
  EXPECT_DOUBLE_EQ(d.probabilities[3], 0.25);
  EXPECT_EQ(d.grade, 1);
  EXPECT_EQ(d.inputs, 2u);
  EXPECT_THROW(vote_raw_average(std::span<const GradeProbabilities>{}), DataError);
}

TEST(Voting, TieGoesToLowerGrade) {
  const std::vector<GradeProbabilities> v = {{0.0, 0.5, 0.5, 0.0}};
  EXPECT_EQ(vote_raw_average(v).grade, 2);
  EXPECT_EQ(argmax_grade({0.25, 0.25, 0.25, 0.25}), 1);
}

TEST(Voting, OneStepOracleOnTwoByTwo) {
  const PeriodGrouping g = make_grouping({{{1, 0, 0, 0}, {0, 1, 0, 0}},
                                          {{0, 0, 1, 0}, {0, 0.5, 0.5, 0}}});
  const GradeDecision d = vote_one_step(g);
  EXPECT_DOUBLE_EQ(d.probabilities[0], 0.25);
  EXPECT_DOUBLE_EQ(d.probabilities[1], 0.375);
  EXPECT_DOUBLE_EQ(d.probabilities[2], 0.375);
  EXPECT_EQ(d.probabilities[3], 0.0);
  EXPECT_EQ(d.grade, 2);
  EXPECT_EQ(d.inputs, 4u);
  EXPECT_EQ(d.segments_used, 12u);
  EXPECT_THROW(vote_one_step(PeriodGrouping{}), DataError);
}

TEST(Voting, TwoStepThreeChannelMedianOracle) {
  // Period 0 medians per class: median(0.7,0.1,0.2)=0.2, median(0.1,0.6,0.3)=0.3,
  // median(0.1,0.2,0.4)=0.2, median(0.1,0.1,0.1)=0.1.
  // Period 1 is identical across channels: (0, 0, 1, 0).
  const PeriodGrouping g = make_grouping({
      {{0.7, 0.1, 0.1, 0.1}, {0, 0, 1, 0}},
      {{0.1, 0.6, 0.2, 0.1}, {0, 0, 1, 0}},
      {{0.2, 0.3, 0.4, 0.1}, {0, 0, 1, 0}},
  });
  const GradeDecision d = vote_two_step(g);
  ASSERT_EQ(d.periods.size(), 2u);
  EXPECT_DOUBLE_EQ(d.periods[0][0], 0.2);
  EXPECT_DOUBLE_EQ(d.periods[0][1], 0.3);
  EXPECT_DOUBLE_EQ(d.periods[0][2], 0.2);
  EXPECT_DOUBLE_EQ(d.periods[0][3], 0.1);
  EXPECT_DOUBLE_EQ(d.probabilities[0], 0.1);
  EXPECT_DOUBLE_EQ(d.probabilities[1], 0.15);
  EXPECT_DOUBLE_EQ(d.probabilities[2], 0.6);
  EXPECT_DOUBLE_EQ(d.probabilities[3], 0.05);
  EXPECT_EQ(d.grade, 3);
  double s = 0.0;
  for (double v : d.normalized) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Voting, EvenCountMedianAveragesMiddlePair) {
  const std::vector<GradeProbabilities> v = {
      {0.4, 0.1, 0, 0}, {0.1, 0.2, 0, 0}, {0.3, 0.8, 0, 0}, {0.2, 0.4, 0, 0}};
  const GradeProbabilities m = elementwise_median(v);
  EXPECT_DOUBLE_EQ(m[0], 0.25);
  EXPECT_DOUBLE_EQ(m[1], 0.3);
  EXPECT_EQ(m[2], 0.0);
}

TEST(Voting, TwoStepResistsOneOutlierChannel) {
  std::vector<std::vector<GradeProbabilities>> clean(8, std::vector<GradeProbabilities>(
                                                            6, GradeProbabilities{0.1, 0.6, 0.2, 0.1}));
  auto noisy = clean;
  for (auto& p : noisy[5]) p = {0, 0, 0, 1};
  EXPECT_EQ(vote_two_step(make_grouping(clean)).grade, 2);
  EXPECT_EQ(vote_two_step(make_grouping(noisy)).grade, 2);
}

TEST(Voting, IdenticalChannelsMakeTwoStepEqualOneStep) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<GradeProbabilities> periods(6);
  for (auto& p : periods) {
    for (double& x : p) x = u(rng);
  }
  const PeriodGrouping g = make_grouping(std::vector(8, periods));
  const GradeDecision one = vote_one_step(g);
  const GradeDecision two = vote_two_step(g);
  EXPECT_EQ(one.grade, two.grade);
  for (int i = 0; i < kNumGrades; ++i) EXPECT_NEAR(one.probabilities[i], two.probabilities[i], 1e-12);
}

TEST(Voting, UnanimityForAllMethods) {
  const GradeProbabilities v{0.05, 0.1, 0.8, 0.05};
  const auto rows = grid_rows(8, 23, [&](std::size_t, std::size_t) { return v; });
  const PeriodGrouping g = group_ten_minute(rows, 3600.0, 300.0);
  for (VotingMethod m : kAllMethods) {
    const GradeDecision d = vote(m, rows, g);
    EXPECT_EQ(d.grade, 3) << to_string(m);
    EXPECT_EQ(d.probabilities, v) << to_string(m);
  }
  EXPECT_EQ(vote(VotingMethod::kRawAverage, rows, g).inputs, 144u);
  EXPECT_EQ(vote(VotingMethod::kOneStep, rows, g).inputs, 48u);
  EXPECT_EQ(vote(VotingMethod::kTwoStep, rows, g).segments_used, 144u);
}

TEST(Voting, MethodNames) {
  for (VotingMethod m : kAllMethods) EXPECT_EQ(parse_voting_method(to_string(m)), m);
  EXPECT_EQ(to_string(VotingMethod::kTwoStep), "two-step");
  EXPECT_THROW(parse_voting_method("median"), DataError);
}

TEST(Voting, DecisionRecords) {
  GradeDecision d;
  d.grade = 2;
  d.method = VotingMethod::kOneStep;
  d.probabilities = {0.25, 0.5, 0.125, 0.125};
  d.segments_used = 144;
  EXPECT_EQ(decision_csv_header(), "subject_id,method,grade,p1,p2,p3,p4,n_segments_used");
  const std::string row = decision_csv_row("S01", d);
  EXPECT_EQ(row.substr(0, 15), "S01,one-step,2,");
  EXPECT_EQ(row.substr(row.size() - 4), ",144");
  const std::string json = decision_json("S01", d);
  EXPECT_NE(json.find("\"n_segments_used\": 144"), std::string::npos) << json;
}

TEST(Grading, RecordingProducesAllMethods) {
  const ModelParams params = [] {
    ModelParams p = init_params(build_hienet(1920), 2);
    for (auto& layer : p.layers) {
      if (auto* bn = std::get_if<BatchNormState>(&layer)) {
        bn->running_mean.assign(bn->feature_maps(), 0.0);
        bn->running_var.assign(bn->feature_maps(), 1.0);
        bn->has_running_stats = true;
      }
    }
    return p;
  }();
  SegmentSource src = flat_source(1800.0, 2);
  for (std::size_t i = 0; i < src.length(); ++i) src.channels[1][i] = std::sin(0.01 * i);
  const RecordingGrades grades = grade_recording(params, src, 0.5);
  // 30 s segments with 15 s stride over 30 minutes: 119 per channel.
  EXPECT_EQ(grades.segments, 2u * 119u);
  ASSERT_EQ(grades.decisions.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(grades.decisions[i].method, kAllMethods[i]);
  EXPECT_THROW(grade_recording(params, src, 5.0), DataError);
}

}  // namespace
}  // namespace hienet
