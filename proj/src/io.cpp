#include "diop/io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "diop/errors.hpp"

namespace diop {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const char* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

template <typename T>
T read_le(const std::vector<char>& b, std::size_t pos) {
  T v{};
  std::memcpy(&v, b.data() + pos, sizeof(T));
  return v;
}

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

Annotation rttm_parse(const std::string& text) {
  Annotation a;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto f = split_ws(t);
    if (f.size() != 10) {
      throw FormatError("expected 10 RTTM fields, got " + std::to_string(f.size()), lineno);
    }
    if (f[0] != "SPEAKER") throw FormatError("expected record type SPEAKER, got '" + f[0] + "'", lineno);
    Segment s;
    if (!parse_double(f[3], s.onset) || !std::isfinite(s.onset)) {
      throw FormatError("non-numeric onset '" + f[3] + "'", lineno);
    }
    if (!parse_double(f[4], s.duration) || !std::isfinite(s.duration)) {
      throw FormatError("non-numeric duration '" + f[4] + "'", lineno);
    }
    if (s.duration <= 0.0) throw FormatError("duration must be > 0", lineno);
    if (a.segments.empty() && a.file_id.empty()) {
      a.file_id = f[1];
    } else if (f[1] != a.file_id) {
      throw FormatError("mixed file ids '" + a.file_id + "' and '" + f[1] + "'", lineno);
    }
    s.label = f[7];
    a.segments.push_back(std::move(s));
  }
  return a;
}

std::string rttm_format(const Annotation& a) {
  std::string out;
  char buf[64];
  for (const Segment& s : a.segments) {
    std::snprintf(buf, sizeof buf, " 1 %.3f %.3f <NA> <NA> ", s.onset, s.duration);
    out += "SPEAKER " + a.file_id + buf + s.label + " <NA> <NA>\n";
  }
  return out;
}

Annotation rttm_read(const std::filesystem::path& path) {
  try {
    return rttm_parse(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void rttm_write(const Annotation& a, const std::filesystem::path& path) {
  write_text_file(path, rttm_format(a));
}

Audio wav_read(const std::filesystem::path& path, std::uint32_t expected_rate) {
  const auto b = read_bytes(path);
  const std::string where = path.string() + ": ";
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw FormatError(where + "not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  Audio audio;
  while (pos + 8 <= b.size()) {
    const std::string id(b.data() + pos, 4);
    const auto size = read_le<std::uint32_t>(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw FormatError(where + "truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (size < 16) throw FormatError(where + "short fmt chunk");
      const auto format = read_le<std::uint16_t>(b, body);
      const auto channels = read_le<std::uint16_t>(b, body + 2);
      audio.sample_rate = read_le<std::uint32_t>(b, body + 4);
      const auto bits = read_le<std::uint16_t>(b, body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError(where + "only PCM16 mono is supported (format " + std::to_string(format) +
                          ", " + std::to_string(channels) + " channels, " + std::to_string(bits) +
                          " bits)");
      }
      if (expected_rate != 0 && audio.sample_rate != expected_rate) {
        throw FormatError(where + "sample rate " + std::to_string(audio.sample_rate) +
                          " Hz, expected " + std::to_string(expected_rate) + " Hz");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(where + "data chunk before fmt chunk");
      audio.samples.resize(size / 2);
      for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        audio.samples[i] = static_cast<float>(read_le<std::int16_t>(b, body + 2 * i)) / 32768.0F;
      }
      return audio;
    }
    pos = body + size + (size & 1U);
  }
  throw FormatError(where + "missing data chunk");
}

void wav_write(const Audio& audio, const std::filesystem::path& path) {
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  std::string out = "RIFF";
  put_le<std::uint32_t>(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint16_t>(out, 1);
  put_le<std::uint32_t>(out, audio.sample_rate);
  put_le<std::uint32_t>(out, audio.sample_rate * 2);
  put_le<std::uint16_t>(out, 2);
  put_le<std::uint16_t>(out, 16);
  out += "data";
  put_le<std::uint32_t>(out, data_bytes);
  for (const float s : audio.samples) {
    const float c = std::clamp(s, -1.0F, 1.0F);
    put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(std::min(c * 32768.0F, 32767.0F))));
  }
  write_bytes(path, out.data(), out.size());
}

Audio raw_f32_read(const std::filesystem::path& path, std::uint32_t sample_rate) {
  const auto b = read_bytes(path);
  if (b.size() % 4 != 0) throw FormatError(path.string() + ": size is not a multiple of 4 bytes");
  Audio audio{sample_rate, std::vector<float>(b.size() / 4)};
  std::memcpy(audio.samples.data(), b.data(), b.size());
  return audio;
}

void raw_f32_write(const Audio& audio, const std::filesystem::path& path) {
  write_bytes(path, reinterpret_cast<const char*>(audio.samples.data()), audio.samples.size() * 4);
}

Audio audio_read(const std::filesystem::path& path, std::uint32_t sample_rate) {
  if (path.extension() == ".wav") return wav_read(path, sample_rate);
  return raw_f32_read(path, sample_rate);
}

void audio_write(const Audio& audio, const std::filesystem::path& path) {
  if (path.extension() == ".wav") {
    wav_write(audio, path);
  } else {
    raw_f32_write(audio, path);
  }
}

KeyValueConfig::KeyValueConfig(std::map<std::string, std::string> defaults)
    : values_(std::move(defaults)) {}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

void KeyValueConfig::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string t = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FormatError("expected key = value", lineno);
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw FormatError("empty key", lineno);
    try {
      set(key, trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void KeyValueConfig::merge_file(const std::filesystem::path& path) {
  merge_text(read_text_file(path));
}

void KeyValueConfig::merge_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& KeyValueConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double KeyValueConfig::real(const std::string& key) const {
  double v = 0;
  if (!parse_double(str(key), v)) throw ConfigError(key + ": '" + str(key) + "' is not a number");
  return v;
}

std::int64_t KeyValueConfig::integer(const std::string& key) const {
  const std::string& s = str(key);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(key + ": '" + s + "' is not an integer");
  }
  return v;
}

std::uint64_t KeyValueConfig::unsigned_integer(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v < 0) throw ConfigError(key + " must be >= 0");
  return static_cast<std::uint64_t>(v);
}

bool KeyValueConfig::boolean(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": '" + s + "' is not a boolean");
}

std::vector<std::string> KeyValueConfig::strings(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(str(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> KeyValueConfig::reals(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : strings(key)) {
    double v = 0;
    if (!parse_double(item, v)) throw ConfigError(key + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::string KeyValueConfig::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace diop
