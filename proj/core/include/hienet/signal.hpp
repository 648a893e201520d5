#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hienet {

/// Multi-channel EEG in microvolts, stored channel-major as 32-bit floats
/// (the on-disk sample type, so file round trips are exact).
struct EegRecording {
  std::string subject_id;
  int sample_rate = 0;  // Hz
  std::vector<std::string> channel_labels;
  std::vector<std::vector<float>> samples;  // [channel][time]
  std::optional<int> grade;                 // 1..4 when labeled

  std::size_t channel_count() const { return samples.size(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().size(); }
  double duration_seconds() const;

  /// Index of the channel called `label`; throws DataError naming it if absent.
  std::size_t channel_index(std::string_view label) const;

  /// Throws DataError on non-positive rate, ragged channels, label/channel
  /// count mismatch, duplicate labels, non-finite samples or a bad grade.
  void validate() const;

  friend bool operator==(const EegRecording&, const EegRecording&) = default;
};

// ---- Binary recording format ----------------------------------------------
//
// "NEEG", u16 version, u32 sample_rate, u16 n_channels, u64 n_samples,
// u32-prefixed UTF-8 subject_id, u32-prefixed label per channel, u8 grade
// (0 = unlabeled), then channel-major f32 samples. All little-endian.

inline constexpr std::uint16_t kRecordingVersion = 1;

std::vector<char> encode_recording(const EegRecording& recording);
EegRecording decode_recording(const std::vector<char>& bytes);
void save_recording(const EegRecording& recording, const std::filesystem::path& path);
EegRecording load_recording(const std::filesystem::path& path);

/// CSV import: header row of channel labels, then one row per sample.
EegRecording load_recording_csv(const std::filesystem::path& path, int sample_rate,
                                std::string subject_id, std::optional<int> grade = std::nullopt);

/// Loads NEEG, or CSV (by .csv extension) using `csv_sample_rate`; the
/// subject id of a CSV recording is the file stem.
EegRecording load_any_recording(const std::filesystem::path& path, int csv_sample_rate = 256);

// ---- Labels manifest --------------------------------------------------------

struct ManifestEntry {
  std::string subject_id;
  int grade = 0;
  std::filesystem::path path;  // as written; relative paths resolve against the manifest's folder

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// CSV with header `subject_id,grade,path`.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

// ---- Montage ------------------------------------------------------------------

/// The eight bipolar derivations, in output order.
inline constexpr std::array<std::pair<std::string_view, std::string_view>, 8> kBipolarPairs{{
    {"F4", "C4"}, {"F3", "C3"}, {"C4", "O2"}, {"C3", "O1"},
    {"T4", "C4"}, {"C3", "T3"}, {"C4", "Cz"}, {"Cz", "C3"},
}};

/// Referential electrodes the montage reads.
inline constexpr std::array<std::string_view, 9> kElectrodes{
    "F4", "F3", "C4", "C3", "O2", "O1", "T4", "T3", "Cz"};

std::string bipolar_label(std::size_t pair);

/// Channel i = first electrode - second electrode of kBipolarPairs[i].
EegRecording derive_bipolar_montage(const EegRecording& recording);

/// True when the channels are exactly the eight bipolar labels in order.
bool is_bipolar_montage(const EegRecording& recording);

// ---- Anti-alias filtering and decimation -------------------------------------

/// Acceptance mask the designed filter must satisfy.
struct FilterMask {
  double passband_edge_hz = 24.0;
  double stopband_edge_hz = 32.0;
  double max_passband_ripple_db = 1.0;
  double min_stopband_attenuation_db = 40.0;
};

/// Odd-length symmetric (linear-phase) FIR low-pass.
struct FilterDesign {
  std::vector<double> taps;
  double cutoff_hz = 0.0;
  double sample_rate = 0.0;
  std::string window = "hamming";

  std::size_t order() const { return taps.empty() ? 0 : taps.size() - 1; }
  /// Magnitude of the frequency response at `hz`.
  double magnitude(double hz) const;
};

inline constexpr std::size_t kDefaultFilterTaps = 201;

/// Hamming-windowed sinc with unit DC gain. Throws DataError when
/// cutoff >= rate / 2, `taps` is even, or the response misses `mask`.
FilterDesign design_antialias_filter(double cutoff_hz = 30.0, double sample_rate = 256.0,
                                     std::size_t taps = kDefaultFilterTaps,
                                     const FilterMask& mask = {});

/// Worst passband deviation (dB) and weakest stopband attenuation (dB),
/// measured on a 0.01 Hz grid.
struct FilterResponse {
  double passband_ripple_db = 0.0;
  double stopband_attenuation_db = 0.0;
};
FilterResponse measure_response(const FilterDesign& filter, const FilterMask& mask = {});

/// Zero-phase (centered) filtering; edges extended with the edge sample.
std::vector<double> apply_filter(std::span<const double> signal, const FilterDesign& filter);

/// Zero-phase filter then keep every `factor`-th sample. Output length is
/// floor(length / factor) per channel.
EegRecording downsample(const EegRecording& recording, const FilterDesign& filter,
                        int factor = 4);

inline constexpr int kRawSampleRate = 256;
inline constexpr int kModelSampleRate = 64;

/// Full front end: 9-electrode 256 Hz -> 8-channel bipolar 64 Hz. Already
/// bipolar recordings skip the montage; 64 Hz bipolar recordings pass through.
EegRecording preprocess(const EegRecording& recording);

/// Copy of one channel as doubles.
std::vector<double> channel_as_double(const EegRecording& recording, std::size_t channel);

}  // namespace hienet
