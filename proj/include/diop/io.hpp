#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "diop/metrics.hpp"

namespace diop {

// ---- RTTM ----

/// Parses "SPEAKER <file> 1 <onset> <dur> <NA> <NA> <label> <NA> <NA>"
/// lines. Blank lines and lines starting with '#' are skipped. Throws
/// FormatError with the 1-based line number on malformed input. A file
/// with no segments yields an empty Annotation.
Annotation rttm_parse(const std::string& text);
/// One line per segment, onset and duration with exactly 3 decimals.
std::string rttm_format(const Annotation& a);

Annotation rttm_read(const std::filesystem::path& path);
void rttm_write(const Annotation& a, const std::filesystem::path& path);

// ---- audio ----

struct Audio {
  std::uint32_t sample_rate = 16000;
  std::vector<float> samples;  ///< mono, nominal range [-1, 1]

  double duration() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

/// Reads PCM16 mono RIFF/WAVE. Anything else is a FormatError. If
/// `expected_rate` is nonzero a different rate is a FormatError too.
Audio wav_read(const std::filesystem::path& path, std::uint32_t expected_rate = 0);
/// Writes PCM16 mono, clipping to [-1, 1].
void wav_write(const Audio& audio, const std::filesystem::path& path);

/// Headerless little-endian f32 samples.
Audio raw_f32_read(const std::filesystem::path& path, std::uint32_t sample_rate);
void raw_f32_write(const Audio& audio, const std::filesystem::path& path);

/// Dispatches on extension: ".wav" -> PCM16, anything else -> raw f32.
Audio audio_read(const std::filesystem::path& path, std::uint32_t sample_rate);
void audio_write(const Audio& audio, const std::filesystem::path& path);

// ---- key=value configuration ----

/// Flat "section.key = value" settings. '#' starts a comment.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  /// Starts from defaults; only these keys are accepted by set().
  explicit KeyValueConfig(std::map<std::string, std::string> defaults);

  /// Parses text, throwing FormatError for malformed lines and ConfigError
  /// for keys without a default.
  void merge_text(const std::string& text);
  void merge_file(const std::filesystem::path& path);
  /// "key=value" override.
  void merge_assignment(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool contains(const std::string& key) const { return values_.contains(key); }
  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  bool boolean(const std::string& key) const;
  /// Comma-separated reals.
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::string> strings(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// Sorted "key = value" lines.
  std::string resolved() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace diop
