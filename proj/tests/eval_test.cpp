#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hienet/errors.hpp"
#include "hienet/eval.hpp"
#include "hienet/signal.hpp"
#include "hienet/synth.hpp"
#include "test_support.hpp"

namespace hienet {
namespace {

namespace fs = std::filesystem;

// Published confusion counts: actual grade rows, predicted grade columns.
ConfusionMatrix published_matrix() {
  ConfusionMatrix m;
  const std::size_t rows[4][4] = {{22, 0, 0, 0}, {6, 7, 1, 0}, {0, 3, 9, 0}, {0, 0, 0, 6}};
  for (int a = 0; a < 4; ++a) {
    for (int p = 0; p < 4; ++p) m.counts[a][p] = rows[a][p];
  }
  return m;
}

TEST(Confusion, PublishedTableStatistics) {
  const ConfusionMatrix m = published_matrix();
  EXPECT_EQ(m.total(), 54u);
  EXPECT_EQ(m.correct(), 44u);
  EXPECT_EQ(format_percent(m.accuracy()), "81.5%");
  EXPECT_EQ(m.off_by_more_than_one(), 0u);
  EXPECT_EQ(m.column_total(1), 28u);
  EXPECT_EQ(m.column_total(2), 10u);
  EXPECT_EQ(m.column_total(3), 10u);
  EXPECT_EQ(m.column_total(4), 6u);
  EXPECT_EQ(m.false_count(1), 0u);
  EXPECT_EQ(m.false_count(2), 7u);
  EXPECT_EQ(m.false_count(3), 3u);
  EXPECT_EQ(m.false_count(4), 0u);
  EXPECT_DOUBLE_EQ(m.recall(2), 0.5);
}

TEST(Confusion, FromPairs) {
  const std::vector<std::pair<int, int>> pairs = {{1, 1}, {2, 2}, {3, 3}, {4, 4}};
  const ConfusionMatrix id = confusion_matrix(pairs);
  EXPECT_DOUBLE_EQ(id.accuracy(), 1.0);

  const std::vector<std::pair<int, int>> one = {{2, 3}};
  const ConfusionMatrix m = confusion_matrix(one);
  EXPECT_EQ(m.counts[1][2], 1u);
  EXPECT_EQ(m.accuracy(), 0.0);
  EXPECT_EQ(m.off_by_more_than_one(), 0u);

  const std::vector<std::pair<int, int>> far = {{1, 3}, {4, 1}, {2, 1}};
  EXPECT_EQ(confusion_matrix(far).off_by_more_than_one(), 2u);
  EXPECT_TRUE(std::isnan(ConfusionMatrix{}.accuracy()));

  const std::vector<std::pair<int, int>> bad = {{0, 1}};
  EXPECT_THROW(confusion_matrix(bad), DataError);
}

TEST(Confusion, CsvRoundTrip) {
  const ConfusionMatrix m = published_matrix();
  const std::string csv = m.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "actual,1,2,3,4,total,false");
  EXPECT_NE(csv.find("\n2,6,7,1,0,14,7\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\ntotal,28,10,10,6,54,10"), std::string::npos) << csv;
  EXPECT_EQ(parse_confusion_csv(csv), m);
}

TEST(Confusion, ParseChecksTotals) {
  EXPECT_EQ(parse_confusion_csv("actual,1,2,3,4\n1,1,0,0,0\n2,0,1,0,0\n3,0,0,1,0\n4,0,0,0,1\n")
                .correct(),
            4u);
  EXPECT_THROW(parse_confusion_csv("actual,1,2,3,4,total,false\n1,1,0,0,0,2,0\n2,0,1,0,0,1,0\n"
                                   "3,0,0,1,0,1,0\n4,0,0,0,1,1,0\n"),
               DataError);
  EXPECT_THROW(parse_confusion_csv("actual,1,2,3,4\n1,1,0,0\n"), DataError);
}

TEST(Confusion, TextTable) {
  const std::string text = published_matrix().to_text();
  EXPECT_NE(text.find("81.5% (44/54)"), std::string::npos) << text;
}

TEST(Format, Percent) {
  EXPECT_EQ(format_percent(42.0 / 54.0), "77.8%");
  EXPECT_EQ(format_percent(43.0 / 54.0), "79.6%");
  EXPECT_EQ(format_percent(1.0), "100.0%");
}

// Two short 64 Hz subjects whose grades differ by amplitude.
std::vector<LosoSubject> toy_subjects() {
  std::vector<LosoSubject> subjects;
  for (int g : {1, 4}) {
    LosoSubject s;
    s.subject_id = g == 1 ? "A" : "B";
    s.grade = g;
    s.source.subject_id = s.subject_id;
    s.source.grade = g;
    for (int c = 0; c < 2; ++c) {
      s.source.channel_labels.push_back(bipolar_label(c));
      s.source.channels.push_back(testing::random_values(64 * 120, 10 * g + c, g == 1 ? 40.0 : 4.0));
    }
    subjects.push_back(std::move(s));
  }
  return subjects;
}

LosoConfig toy_config() {
  LosoConfig c;
  c.segment_minutes = 0.5;
  c.train.epochs = 1;
  c.train.batch_size = 4;
  c.train.validation_fraction = 0.0;
  return c;
}

TEST(Loso, TwoSubjectFolds) {
  const auto subjects = toy_subjects();
  std::size_t starts = 0, ends = 0;
  const LosoReport r = loso_evaluate(subjects, toy_config(), [&](const FoldProgress& p) {
    EXPECT_EQ(p.folds, 2u);
    (p.result ? ends : starts)++;
  });
  EXPECT_EQ(starts, 2u);
  EXPECT_EQ(ends, 2u);
  ASSERT_EQ(r.folds.size(), 2u);
  EXPECT_EQ(r.folds[0].subject_id, "A");
  EXPECT_EQ(r.folds[0].training_subjects, std::vector<std::string>{"B"});
  EXPECT_EQ(r.folds[1].training_subjects, std::vector<std::string>{"A"});
  // 120 s at 30 s windows with 15 s stride: 7 windows on each of 2 channels.
  EXPECT_EQ(r.folds[0].training_segments, 14u);
  EXPECT_EQ(r.folds[0].decisions.size(), 3u);
  EXPECT_EQ(r.confusion(VotingMethod::kTwoStep).total(), 2u);
  EXPECT_EQ(r.folds[0].checkpoint_digest.size(), 16u);
}

TEST(Loso, ReportJsonRoundTripAndDeterminism) {
  const auto subjects = toy_subjects();
  const LosoReport a = loso_evaluate(subjects, toy_config());
  const LosoReport b = loso_evaluate(subjects, toy_config());
  EXPECT_EQ(a.to_json(), b.to_json());
  const LosoReport c = LosoReport::from_json(a.to_json());
  EXPECT_EQ(c.to_json(), a.to_json());
  EXPECT_EQ(c.folds[1].checkpoint_digest, a.folds[1].checkpoint_digest);
}

TEST(Loso, JobsDoNotChangeResults) {
  const auto subjects = toy_subjects();
  LosoConfig c = toy_config();
  const std::string serial = loso_evaluate(subjects, c).to_json();
  c.jobs = 2;
  LosoReport parallel = loso_evaluate(subjects, c);
  parallel.config.jobs = 1;
  EXPECT_EQ(parallel.to_json(), serial);
}

TEST(Loso, RejectsBadSubjectLists) {
  auto subjects = toy_subjects();
  EXPECT_THROW(loso_evaluate(std::span(subjects).first(1), toy_config()), DataError);
  subjects[1].subject_id = "A";
  EXPECT_THROW(loso_evaluate(subjects, toy_config()), DataError);
}

TEST(Loso, LabeledSegmentsCarryGradeAndId) {
  const auto subjects = toy_subjects();
  const auto segs = labeled_segments(subjects[1], 0.5);
  ASSERT_EQ(segs.size(), 14u);
  for (const auto& s : segs) {
    EXPECT_EQ(s.grade, 4);
    EXPECT_EQ(s.subject_id, "B");
    EXPECT_EQ(s.samples.size(), 1920u);
  }
}

TEST(Loso, CorpusLoadingChecksGrades) {
  const fs::path dir = fs::temp_directory_path() / "hienet-eval-corpus";
  fs::remove_all(dir);
  CorpusSpec spec;
  spec.subjects_per_grade = 1;
  spec.duration_seconds = 600.0;
  const auto entries = generate_corpus(spec, dir);
  const auto subjects = load_corpus(dir / kManifestFileName);
  ASSERT_EQ(subjects.size(), 4u);
  EXPECT_EQ(subjects[3].grade, 4);
  EXPECT_EQ(subjects[3].source.sample_rate, kModelSampleRate);
  EXPECT_EQ(subjects[3].source.channels.size(), 8u);
  EXPECT_EQ(subjects[3].source.length(), 64u * 600u);

  auto wrong = entries;
  wrong[0].grade = 3;
  write_manifest(wrong, dir / "wrong.csv");
  EXPECT_THROW(load_corpus(dir / "wrong.csv"), DataError);
  fs::remove_all(dir);
}

TEST(Sweep, DefaultLengthsAndSkips) {
  const auto lengths = default_sweep_lengths();
  ASSERT_EQ(lengths.size(), 20u);
  EXPECT_EQ(lengths.front(), 0.5);
  EXPECT_EQ(lengths.back(), 10.0);

  const auto subjects = toy_subjects();
  const std::vector<double> asked = {0.5, 3.0};
  const SweepResult r = segment_length_sweep(subjects, asked, toy_config());
  ASSERT_EQ(r.points.size(), 1u);
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.to_csv().substr(0, 25), "segment_minutes,accuracy\n");
}

}  // namespace
}  // namespace hienet
