#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hienet/signal.hpp"

namespace hienet {

/// Parameters of one synthetic grade. Amplitudes are the RMS of the
/// background activity during bursts, in microvolts.
struct GradeArchetype {
  int grade = 1;
  double rms_min_uv = 30.0;
  double rms_max_uv = 50.0;
  double suppression_min_s = 0.0;  // inter-burst interval range
  double suppression_max_s = 0.0;
  double burst_min_s = 0.0;
  double burst_max_s = 0.0;
  double discontinuity_fraction = 0.0;  // expected share of time suppressed
  double suppression_gain = 0.1;        // envelope level while suppressed
  double asymmetry_min = 1.0;           // right/left hemisphere amplitude ratio
  double asymmetry_max = 1.1;
  double band_low_hz = 0.5;
  double band_high_hz = 8.0;

  /// Throws DataError on inverted ranges, a continuous grade with
  /// suppression, or interval ranges inconsistent with the fraction.
  void validate() const;
};

/// Defaults for grades 1..4.
GradeArchetype default_archetype(int grade);
std::array<GradeArchetype, 4> default_archetypes();

struct CorpusSpec {
  std::size_t subjects_per_grade = 3;
  double duration_seconds = 3600.0;
  int sample_rate = kRawSampleRate;  // 256: nine electrodes; 64: eight bipolar channels
  std::uint64_t master_seed = 7;
  std::array<GradeArchetype, 4> archetypes = default_archetypes();

  std::size_t subject_count() const { return 4 * subjects_per_grade; }
  void validate() const;
};

/// Burst/suppression envelope, one gain per sample (1 in bursts).
std::vector<double> synth_envelope(const GradeArchetype& archetype, std::size_t samples,
                                   int sample_rate, std::uint64_t seed);

/// One labeled recording. Nine referential electrodes at 256 Hz, or the
/// eight bipolar derivations when `sample_rate` is 64. Deterministic in
/// (archetype, duration, rate, seed, subject_id).
EegRecording generate_subject(const GradeArchetype& archetype, double duration_seconds,
                              std::uint64_t seed, const std::string& subject_id = "synthetic",
                              int sample_rate = kRawSampleRate);

/// Subject ids "S01".."Snn"; subjects are grade-ordered blocks.
std::string synth_subject_id(std::size_t index);
int synth_subject_grade(const CorpusSpec& spec, std::size_t index);

/// Subject `index` of the corpus, seeded from the master seed and its id.
EegRecording generate_corpus_subject(const CorpusSpec& spec, std::size_t index);

/// Writes `<id>.neeg` per subject and `manifest.csv` into `out_dir`.
/// Subjects may be generated on `jobs` threads; the output does not depend on it.
std::vector<ManifestEntry> generate_corpus(const CorpusSpec& spec,
                                           const std::filesystem::path& out_dir,
                                           unsigned jobs = 1);

inline constexpr char kManifestFileName[] = "manifest.csv";

}  // namespace hienet
