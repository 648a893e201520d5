#include "hienet/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include "hienet/errors.hpp"
#include "hienet/grade.hpp"
#include "hienet/trainer.hpp"

namespace hienet {
namespace {

constexpr double kRampSeconds = 0.25;     // envelope transition length
constexpr double kWarmupSeconds = 10.0;   // filter settling, discarded
constexpr double kCommonShare = 0.3;      // variance share of the shared source

// Second-order section (RBJ cookbook), direct form I.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  double step(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

Biquad butterworth(double cutoff_hz, double rate, bool highpass) {
  const double w = 2.0 * std::numbers::pi * cutoff_hz / rate;
  const double q = 1.0 / std::numbers::sqrt2;
  const double alpha = std::sin(w) / (2.0 * q);
  const double c = std::cos(w);
  const double a0 = 1.0 + alpha;
  Biquad f;
  if (highpass) {
    f.b0 = (1.0 + c) / 2.0 / a0;
    f.b1 = -(1.0 + c) / a0;
  } else {
    f.b0 = (1.0 - c) / 2.0 / a0;
    f.b1 = (1.0 - c) / a0;
  }
  f.b2 = f.b0;
  f.a1 = -2.0 * c / a0;
  f.a2 = (1.0 - alpha) / a0;
  return f;
}

// 1/f noise (Kellet's three-pole approximation) band-limited to
// [low, high] and scaled to unit RMS.
std::vector<double> band_limited_pink(std::size_t samples, int rate, double low_hz, double high_hz,
                                      std::mt19937_64& rng) {
  std::normal_distribution<double> white(0.0, 1.0);
  Biquad hp = butterworth(low_hz, rate, true);
  Biquad lp = butterworth(high_hz, rate, false);
  const auto warmup = static_cast<std::size_t>(kWarmupSeconds * rate);
  std::vector<double> out(samples);
  double p0 = 0, p1 = 0, p2 = 0;
  for (std::size_t t = 0; t < warmup + samples; ++t) {
    const double w = white(rng);
    p0 = 0.99765 * p0 + w * 0.0990460;
    p1 = 0.96300 * p1 + w * 0.2965164;
    p2 = 0.57000 * p2 + w * 1.0526913;
    const double y = lp.step(hp.step(p0 + p1 + p2 + w * 0.1848));
    if (t >= warmup) out[t - warmup] = y;
  }
  double energy = 0.0;
  for (double v : out) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(samples));
  for (double& v : out) v /= rms;
  return out;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

bool right_hemisphere(std::string_view electrode) {
  return electrode == "F4" || electrode == "C4" || electrode == "O2" || electrode == "T4";
}

void check_range(double lo, double hi, const std::string& what) {
  if (!(lo >= 0.0 && hi >= lo && std::isfinite(hi))) {
    throw DataError("archetype " + what + " range [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "] is invalid");
  }
}

}  // namespace

void GradeArchetype::validate() const {
  require_grade(grade, "archetype grade");
  check_range(rms_min_uv, rms_max_uv, "rms");
  check_range(suppression_min_s, suppression_max_s, "suppression interval");
  check_range(burst_min_s, burst_max_s, "burst duration");
  check_range(asymmetry_min, asymmetry_max, "asymmetry");
  if (!(rms_min_uv > 0.0)) throw DataError("archetype rms must be positive");
  if (!(asymmetry_min > 0.0)) throw DataError("archetype asymmetry must be positive");
  if (!(band_low_hz > 0.0 && band_high_hz > band_low_hz)) throw DataError("archetype band is invalid");
  if (!(suppression_gain >= 0.0 && suppression_gain < 1.0)) {
    throw DataError("archetype suppression gain must be in [0, 1)");
  }
  if (!(discontinuity_fraction >= 0.0 && discontinuity_fraction < 1.0)) {
    throw DataError("archetype discontinuity fraction must be in [0, 1)");
  }
  if (discontinuity_fraction == 0.0) {
    if (suppression_max_s > 0.0) throw DataError("a continuous archetype cannot have suppressions");
    return;
  }
  if (!(suppression_min_s > 0.0 && burst_min_s > 0.0)) {
    throw DataError("a discontinuous archetype needs positive burst and suppression durations");
  }
  const double s = 0.5 * (suppression_min_s + suppression_max_s);
  const double b = 0.5 * (burst_min_s + burst_max_s);
  if (std::abs(s / (s + b) - discontinuity_fraction) > 0.02) {
    throw DataError("archetype interval ranges give a suppressed share of " +
                    std::to_string(s / (s + b)) + ", not the configured " +
                    std::to_string(discontinuity_fraction));
  }
}

GradeArchetype default_archetype(int grade) {
  require_grade(grade, "archetype grade");
  GradeArchetype a;
  a.grade = grade;
  switch (grade) {
    case 1:
      a.rms_min_uv = 30.0, a.rms_max_uv = 50.0;
      a.asymmetry_min = 1.0, a.asymmetry_max = 1.1;
      a.band_high_hz = 8.0;
      break;
    case 2:
      a.rms_min_uv = 20.0, a.rms_max_uv = 40.0;
      a.suppression_min_s = 2.0, a.suppression_max_s = 5.0;
      a.burst_min_s = 20.0, a.burst_max_s = 43.0;
      a.discontinuity_fraction = 0.1;
      a.asymmetry_min = 1.0, a.asymmetry_max = 1.2;
      a.band_high_hz = 6.0;
      break;
    case 3:
      a.rms_min_uv = 10.0, a.rms_max_uv = 25.0;
      a.suppression_min_s = 5.0, a.suppression_max_s = 15.0;
      a.burst_min_s = 10.0, a.burst_max_s = 20.0;
      a.discontinuity_fraction = 0.4;
      a.asymmetry_min = 1.1, a.asymmetry_max = 1.4;
      a.band_high_hz = 4.0;
      break;
    default:
      a.rms_min_uv = 3.0, a.rms_max_uv = 10.0;
      a.suppression_min_s = 10.0, a.suppression_max_s = 60.0;
      a.burst_min_s = 6.0, a.burst_max_s = 17.0;
      a.discontinuity_fraction = 0.75;
      a.asymmetry_min = 1.2, a.asymmetry_max = 1.6;
      a.band_high_hz = 2.0;
      break;
  }
  return a;
}

std::array<GradeArchetype, 4> default_archetypes() {
  return {default_archetype(1), default_archetype(2), default_archetype(3), default_archetype(4)};
}

void CorpusSpec::validate() const {
  if (subjects_per_grade == 0) throw DataError("corpus needs at least one subject per grade");
  if (subjects_per_grade > 99 / 4) throw DataError("corpus is limited to 24 subjects per grade");
  if (!(duration_seconds >= 600.0)) throw DataError("synthetic recordings must last at least 10 minutes");
  if (sample_rate != kRawSampleRate && sample_rate != kModelSampleRate) {
    throw DataError("synthetic sample rate must be 256 or 64 Hz, got " + std::to_string(sample_rate));
  }
  for (std::size_t g = 0; g < archetypes.size(); ++g) {
    archetypes[g].validate();
    if (archetypes[g].grade != static_cast<int>(g) + 1) {
      throw DataError("archetype slot " + std::to_string(g + 1) + " holds grade " +
                      std::to_string(archetypes[g].grade));
    }
  }
}

std::vector<double> synth_envelope(const GradeArchetype& a, std::size_t samples, int rate,
                                   std::uint64_t seed) {
  std::vector<double> env(samples, 1.0);
  if (a.discontinuity_fraction == 0.0) return env;
  std::mt19937_64 rng(mix_seed(seed ^ 0xe17e10beULL));
  const double total = static_cast<double>(samples) / rate;
  // Start at a random phase of the burst/suppression cycle.
  bool suppressed = uniform(rng, 0.0, 1.0) < a.discontinuity_fraction;
  double t = -uniform(rng, 0.0, suppressed ? a.suppression_max_s : a.burst_max_s);
  std::vector<std::pair<double, double>> intervals;  // suppressed [start, end)
  while (t < total) {
    const double length = suppressed ? uniform(rng, a.suppression_min_s, a.suppression_max_s)
                                     : uniform(rng, a.burst_min_s, a.burst_max_s);
    if (suppressed) intervals.emplace_back(t, t + length);
    t += length;
    suppressed = !suppressed;
  }
  const double depth = 1.0 - a.suppression_gain;
  for (const auto& [start, end] : intervals) {
    const double from = std::max(0.0, start);
    const double to = std::min(total, end);
    const auto first = static_cast<std::size_t>(std::ceil(from * rate));
    const auto last = std::min(samples, static_cast<std::size_t>(std::ceil(to * rate)));
    for (std::size_t i = first; i < last; ++i) {
      const double s = static_cast<double>(i) / rate;
      // Raised-cosine ramps inside the interval edges.
      const double edge = std::min(s - start, end - s);
      const double ramp = edge >= kRampSeconds
                              ? 1.0
                              : 0.5 - 0.5 * std::cos(std::numbers::pi * std::max(edge, 0.0) / kRampSeconds);
      env[i] = std::min(env[i], 1.0 - depth * ramp);
    }
  }
  return env;
}

EegRecording generate_subject(const GradeArchetype& a, double duration_seconds, std::uint64_t seed,
                              const std::string& subject_id, int sample_rate) {
  a.validate();
  if (!(duration_seconds >= 600.0)) throw DataError("synthetic recordings must last at least 10 minutes");
  if (sample_rate != kRawSampleRate && sample_rate != kModelSampleRate) {
    throw DataError("synthetic sample rate must be 256 or 64 Hz");
  }
  const auto samples = static_cast<std::size_t>(std::llround(duration_seconds * sample_rate));
  std::mt19937_64 rng(mix_seed(seed));
  const double rms = uniform(rng, a.rms_min_uv, a.rms_max_uv);
  const double asymmetry = uniform(rng, a.asymmetry_min, a.asymmetry_max);
  const std::vector<double> envelope = synth_envelope(a, samples, sample_rate, rng());
  const std::vector<double> common =
      band_limited_pink(samples, sample_rate, a.band_low_hz, a.band_high_hz, rng);

  EegRecording r;
  r.subject_id = subject_id;
  r.sample_rate = sample_rate;
  r.grade = a.grade;
  const double shared = std::sqrt(kCommonShare);
  const double own = std::sqrt(1.0 - kCommonShare);
  for (std::string_view electrode : kElectrodes) {
    const std::vector<double> local =
        band_limited_pink(samples, sample_rate, a.band_low_hz, a.band_high_hz, rng);
    const double gain = rms * (right_hemisphere(electrode) ? asymmetry : 1.0);
    std::vector<float> channel(samples);
    for (std::size_t t = 0; t < samples; ++t) {
      channel[t] = static_cast<float>(gain * envelope[t] * (shared * common[t] + own * local[t]));
    }
    r.channel_labels.emplace_back(electrode);
    r.samples.push_back(std::move(channel));
  }
  if (sample_rate == kModelSampleRate) r = derive_bipolar_montage(r);
  r.validate();
  return r;
}

std::string synth_subject_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02zu", index + 1);
  return buf;
}

int synth_subject_grade(const CorpusSpec& spec, std::size_t index) {
  return static_cast<int>(index / spec.subjects_per_grade) + 1;
}

EegRecording generate_corpus_subject(const CorpusSpec& spec, std::size_t index) {
  spec.validate();
  if (index >= spec.subject_count()) throw DataError("subject index out of range");
  const std::string id = synth_subject_id(index);
  const auto& archetype = spec.archetypes[static_cast<std::size_t>(synth_subject_grade(spec, index) - 1)];
  return generate_subject(archetype, spec.duration_seconds, derive_seed(spec.master_seed, id), id,
                          spec.sample_rate);
}

std::vector<ManifestEntry> generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir,
                                           unsigned jobs) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const std::size_t n = spec.subject_count();
  std::vector<ManifestEntry> entries(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const EegRecording r = generate_corpus_subject(spec, i);
        const std::string file = r.subject_id + ".neeg";
        save_recording(r, out_dir / file);
        entries[i] = {r.subject_id, *r.grade, file};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  write_manifest(entries, out_dir / kManifestFileName);
  return entries;
}

}  // namespace hienet
