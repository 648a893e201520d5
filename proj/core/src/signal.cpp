#include "hienet/signal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "hienet/errors.hpp"
#include "hienet/grade.hpp"

namespace hienet {
namespace {

constexpr char kMagic[] = "NEEG";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(where + ": cannot parse '" + s + "' as a number");
  }
  return v;
}

int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError(where + ": cannot parse '" + s + "' as an integer");
  }
  return v;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double response(const std::vector<double>& taps, double normalized_freq) {
  // Amplitude of a symmetric filter, phase removed.
  const double center = static_cast<double>(taps.size() - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t n = 0; n < taps.size(); ++n) {
    sum += taps[n] * std::cos(2.0 * std::numbers::pi * normalized_freq *
                              (static_cast<double>(n) - center));
  }
  return sum;
}

double to_db(double magnitude) { return 20.0 * std::log10(std::max(magnitude, 1e-300)); }

}  // namespace

double EegRecording::duration_seconds() const {
  return sample_rate > 0 ? static_cast<double>(length()) / sample_rate : 0.0;
}

std::size_t EegRecording::channel_index(std::string_view label) const {
  const auto it = std::find(channel_labels.begin(), channel_labels.end(), label);
  if (it == channel_labels.end()) {
    throw DataError("recording '" + subject_id + "' has no channel labeled " + std::string(label));
  }
  return static_cast<std::size_t>(it - channel_labels.begin());
}

void EegRecording::validate() const {
  const std::string who = "recording '" + subject_id + "'";
  if (sample_rate <= 0) throw DataError(who + ": sample rate must be positive, got " + std::to_string(sample_rate));
  if (samples.empty()) throw DataError(who + ": has no channels");
  if (channel_labels.size() != samples.size()) {
    throw DataError(who + ": " + std::to_string(channel_labels.size()) + " labels for " +
                    std::to_string(samples.size()) + " channels");
  }
  std::set<std::string> seen;
  for (const auto& label : channel_labels) {
    if (!seen.insert(label).second) throw DataError(who + ": duplicate channel label " + label);
  }
  for (std::size_t c = 0; c < samples.size(); ++c) {
    if (samples[c].size() != samples.front().size()) {
      throw DataError(who + ": channel " + channel_labels[c] + " has " +
                      std::to_string(samples[c].size()) + " samples, expected " +
                      std::to_string(samples.front().size()));
    }
    for (std::size_t t = 0; t < samples[c].size(); ++t) {
      if (!std::isfinite(samples[c][t])) {
        throw DataError(who + ": non-finite sample in channel " + channel_labels[c] + " at index " +
                        std::to_string(t));
      }
    }
  }
  if (grade && !valid_grade(*grade)) {
    throw DataError(who + ": grade " + std::to_string(*grade) + " is outside 1..4");
  }
}

std::vector<char> encode_recording(const EegRecording& r) {
  r.validate();
  detail::ByteWriter w;
  w.put_bytes(kMagic);
  w.put(kRecordingVersion);
  w.put(static_cast<std::uint32_t>(r.sample_rate));
  w.put(static_cast<std::uint16_t>(r.channel_count()));
  w.put(static_cast<std::uint64_t>(r.length()));
  w.put_string(r.subject_id);
  for (const auto& label : r.channel_labels) w.put_string(label);
  w.put(static_cast<std::uint8_t>(r.grade.value_or(0)));
  for (const auto& channel : r.samples) {
    for (float v : channel) w.put(v);
  }
  return w.bytes();
}

EegRecording decode_recording(const std::vector<char>& bytes) {
  detail::ByteReader in(bytes.data(), bytes.size(), "recording");
  if (in.get_bytes(4, "magic") != kMagic) throw DataError("recording: bad magic, expected \"NEEG\"");
  const auto version = in.get<std::uint16_t>("version");
  if (version != kRecordingVersion) {
    throw DataError("recording: unsupported format version " + std::to_string(version) +
                    ", expected " + std::to_string(kRecordingVersion));
  }
  EegRecording r;
  const auto rate = in.get<std::uint32_t>("sample rate");
  if (rate == 0 || rate > 1'000'000) {
    throw DataError("recording: invalid sample rate " + std::to_string(rate));
  }
  r.sample_rate = static_cast<int>(rate);
  const auto channels = in.get<std::uint16_t>("channel count");
  const auto length = in.get<std::uint64_t>("sample count");
  if (channels == 0) throw DataError("recording: header declares zero channels");
  r.subject_id = in.get_string("subject id");
  for (std::uint16_t c = 0; c < channels; ++c) r.channel_labels.push_back(in.get_string("channel label"));
  const auto grade = in.get<std::uint8_t>("grade");
  if (grade != 0) r.grade = grade;
  if (length > in.remaining() / sizeof(float) / channels) {
    throw DataError("recording: truncated sample payload (header declares " +
                    std::to_string(length) + " samples x " + std::to_string(channels) +
                    " channels)");
  }
  r.samples.assign(channels, std::vector<float>(length));
  for (auto& channel : r.samples) {
    for (float& v : channel) v = in.get<float>("samples");
  }
  in.expect_end();
  r.validate();
  return r;
}

void save_recording(const EegRecording& recording, const std::filesystem::path& path) {
  const auto bytes = encode_recording(recording);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

EegRecording load_recording(const std::filesystem::path& path) {
  try {
    return decode_recording(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

EegRecording load_recording_csv(const std::filesystem::path& path, int sample_rate,
                                std::string subject_id, std::optional<int> grade) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  EegRecording r;
  r.subject_id = std::move(subject_id);
  r.sample_rate = sample_rate;
  r.grade = grade;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty CSV, expected a header row");
  r.channel_labels = split_csv_line(line);
  for (const auto& label : r.channel_labels) {
    if (label.empty()) throw DataError(path.string() + ": malformed header, empty channel label");
  }
  r.samples.assign(r.channel_labels.size(), {});
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != r.channel_labels.size()) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                      std::to_string(fields.size()) + " columns, header has " +
                      std::to_string(r.channel_labels.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      r.samples[c].push_back(static_cast<float>(
          parse_double(fields[c], path.string() + " row " + std::to_string(row))));
    }
  }
  try {
    r.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return r;
}

EegRecording load_any_recording(const std::filesystem::path& path, int csv_sample_rate) {
  if (path.extension() == ".csv") {
    return load_recording_csv(path, csv_sample_rate, path.stem().string());
  }
  return load_recording(path);
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"subject_id", "grade", "path"}) {
    throw DataError(path.string() + ": manifest header must be subject_id,grade,path");
  }
  std::vector<ManifestEntry> entries;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::string where = path.string() + " row " + std::to_string(row);
    if (fields.size() != 3) throw DataError(where + ": expected 3 columns");
    ManifestEntry e{fields[0], parse_int(fields[1], where), fields[2]};
    if (e.subject_id.empty()) throw DataError(where + ": empty subject_id");
    require_grade(e.grade, where + ": grade");
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "subject_id,grade,path\n";
  for (const auto& e : entries) out << e.subject_id << ',' << e.grade << ',' << e.path.generic_string() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

std::string bipolar_label(std::size_t pair) {
  const auto& [a, b] = kBipolarPairs.at(pair);
  return std::string(a) + "-" + std::string(b);
}

EegRecording derive_bipolar_montage(const EegRecording& recording) {
  EegRecording out;
  out.subject_id = recording.subject_id;
  out.sample_rate = recording.sample_rate;
  out.grade = recording.grade;
  const std::size_t length = recording.length();
  for (std::size_t i = 0; i < kBipolarPairs.size(); ++i) {
    const auto& first = recording.samples[recording.channel_index(kBipolarPairs[i].first)];
    const auto& second = recording.samples[recording.channel_index(kBipolarPairs[i].second)];
    std::vector<float> channel(length);
    for (std::size_t t = 0; t < length; ++t) {
      channel[t] = static_cast<float>(static_cast<double>(first[t]) - static_cast<double>(second[t]));
    }
    out.channel_labels.push_back(bipolar_label(i));
    out.samples.push_back(std::move(channel));
  }
  return out;
}

bool is_bipolar_montage(const EegRecording& recording) {
  if (recording.channel_labels.size() != kBipolarPairs.size()) return false;
  for (std::size_t i = 0; i < kBipolarPairs.size(); ++i) {
    if (recording.channel_labels[i] != bipolar_label(i)) return false;
  }
  return true;
}

double FilterDesign::magnitude(double hz) const {
  return std::abs(response(taps, hz / sample_rate));
}

FilterResponse measure_response(const FilterDesign& filter, const FilterMask& mask) {
  FilterResponse r;
  r.stopband_attenuation_db = std::numeric_limits<double>::infinity();
  const double nyquist = filter.sample_rate / 2.0;
  for (double f = 0.0; f <= nyquist + 1e-9; f += 0.01) {
    const double db = to_db(filter.magnitude(f));
    if (f <= mask.passband_edge_hz) r.passband_ripple_db = std::max(r.passband_ripple_db, std::abs(db));
    if (f >= mask.stopband_edge_hz) r.stopband_attenuation_db = std::min(r.stopband_attenuation_db, -db);
  }
  return r;
}

FilterDesign design_antialias_filter(double cutoff_hz, double sample_rate, std::size_t taps,
                                     const FilterMask& mask) {
  if (!(sample_rate > 0.0)) throw DataError("filter sample rate must be positive");
  if (!(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0)) {
    throw DataError("filter cutoff " + std::to_string(cutoff_hz) + " Hz must lie in (0, " +
                    std::to_string(sample_rate / 2.0) + ") Hz");
  }
  if (taps < 3 || taps % 2 == 0) {
    throw DataError("filter length must be odd and >= 3 for a zero-phase design, got " +
                    std::to_string(taps));
  }
  FilterDesign design;
  design.cutoff_hz = cutoff_hz;
  design.sample_rate = sample_rate;
  design.taps.resize(taps);
  const double fc = cutoff_hz / sample_rate;  // cycles per sample
  // Built from the center outwards so the taps are exactly symmetric.
  const std::size_t half = (taps - 1) / 2;
  for (std::size_t k = 0; k <= half; ++k) {
    const double m = static_cast<double>(k);
    const double ideal = k == 0 ? 2.0 * fc
                                : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
    const double window =
        0.54 + 0.46 * std::cos(2.0 * std::numbers::pi * m / static_cast<double>(taps - 1));
    design.taps[half + k] = design.taps[half - k] = ideal * window;
  }
  double sum = 0.0;
  for (double v : design.taps) sum += v;
  for (double& v : design.taps) v /= sum;

  const FilterResponse r = measure_response(design, mask);
  if (r.passband_ripple_db >= mask.max_passband_ripple_db ||
      r.stopband_attenuation_db < mask.min_stopband_attenuation_db) {
    throw DataError("a " + std::to_string(taps) + "-tap filter cannot meet the anti-alias mask: ripple " +
                    std::to_string(r.passband_ripple_db) + " dB below " +
                    std::to_string(mask.passband_edge_hz) + " Hz, attenuation " +
                    std::to_string(r.stopband_attenuation_db) + " dB above " +
                    std::to_string(mask.stopband_edge_hz) + " Hz");
  }
  return design;
}

namespace {

// Centered FIR output at sample t, clamping reads to the signal's ends.
template <typename Sample>
double filtered_at(std::span<const Sample> x, const std::vector<double>& taps, std::size_t t) {
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto last = static_cast<std::ptrdiff_t>(x.size()) - 1;
  const auto base = static_cast<std::ptrdiff_t>(t) - half;
  double sum = 0.0;
  if (base >= 0 && base + static_cast<std::ptrdiff_t>(taps.size()) - 1 <= last) {
    const Sample* p = x.data() + base;
    for (std::size_t k = 0; k < taps.size(); ++k) sum += taps[k] * static_cast<double>(p[k]);
    return sum;
  }
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const auto i = std::clamp<std::ptrdiff_t>(base + static_cast<std::ptrdiff_t>(k), 0, last);
    sum += taps[k] * static_cast<double>(x[static_cast<std::size_t>(i)]);
  }
  return sum;
}

}  // namespace

std::vector<double> apply_filter(std::span<const double> signal, const FilterDesign& filter) {
  std::vector<double> out(signal.size());
  for (std::size_t t = 0; t < signal.size(); ++t) out[t] = filtered_at(signal, filter.taps, t);
  return out;
}

EegRecording downsample(const EegRecording& recording, const FilterDesign& filter, int factor) {
  if (factor < 1) throw DataError("decimation factor must be >= 1");
  if (recording.sample_rate % factor != 0) {
    throw DataError("sample rate " + std::to_string(recording.sample_rate) +
                    " Hz is not divisible by the decimation factor " + std::to_string(factor));
  }
  if (std::abs(filter.sample_rate - recording.sample_rate) > 1e-9) {
    throw DataError("filter was designed for " + std::to_string(filter.sample_rate) +
                    " Hz but the recording is sampled at " + std::to_string(recording.sample_rate) + " Hz");
  }
  EegRecording out;
  out.subject_id = recording.subject_id;
  out.sample_rate = recording.sample_rate / factor;
  out.channel_labels = recording.channel_labels;
  out.grade = recording.grade;
  const std::size_t out_length = recording.length() / static_cast<std::size_t>(factor);
  for (const auto& channel : recording.samples) {
    std::vector<float> y(out_length);
    const std::span<const float> x(channel);
    for (std::size_t m = 0; m < out_length; ++m) {
      y[m] = static_cast<float>(filtered_at(x, filter.taps, m * static_cast<std::size_t>(factor)));
    }
    out.samples.push_back(std::move(y));
  }
  return out;
}

EegRecording preprocess(const EegRecording& recording) {
  recording.validate();
  EegRecording bipolar = is_bipolar_montage(recording) ? recording : derive_bipolar_montage(recording);
  if (bipolar.sample_rate == kModelSampleRate) return bipolar;
  if (bipolar.sample_rate != kRawSampleRate) {
    throw DataError("recording '" + recording.subject_id + "' is sampled at " +
                    std::to_string(recording.sample_rate) + " Hz; expected 256 or 64 Hz");
  }
  static const FilterDesign filter = design_antialias_filter();
  return downsample(bipolar, filter, kRawSampleRate / kModelSampleRate);
}

std::vector<double> channel_as_double(const EegRecording& recording, std::size_t channel) {
  const auto& c = recording.samples.at(channel);
  return {c.begin(), c.end()};
}

}  // namespace hienet
