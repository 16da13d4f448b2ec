#include "diop/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "diop/errors.hpp"
#include "diop/model.hpp"

namespace diop {

namespace {

constexpr std::uint32_t kBandKernel = 257;

}  // namespace

std::vector<Band> SynthSpec::resolved_bands() const {
  if (!bands.empty()) return bands;
  std::vector<Band> out;
  const double lo = 100.0, hi = 7600.0;
  const double width = (hi - lo) / num_speakers;
  for (std::uint32_t i = 0; i < num_speakers; ++i) {
    out.push_back({lo + width * i + 0.1 * width, lo + width * (i + 1) - 0.1 * width});
  }
  return out;
}

void SynthSpec::validate() const {
  if (num_speakers == 0) throw ConfigError("synth: num_speakers must be >= 1");
  if (!(duration > 0.0)) throw ConfigError("synth: duration must be > 0");
  if (!(min_turn > 0.0) || max_turn < min_turn) throw ConfigError("synth: need 0 < min_turn <= max_turn");
  if (!(silence_fraction >= 0.0 && silence_fraction < 1.0)) {
    throw ConfigError("synth: silence_fraction must be in [0, 1)");
  }
  if (!(amplitude > 0.0)) throw ConfigError("synth: amplitude must be > 0");
  if (sample_rate == 0) throw ConfigError("synth: sample_rate must be > 0");
  const auto b = resolved_bands();
  if (b.size() != num_speakers) throw ConfigError("synth: need one band per speaker");
  for (const Band& x : b) {
    if (!(x.low_hz > 0.0 && x.high_hz > x.low_hz && x.high_hz < sample_rate / 2.0)) {
      throw ConfigError("synth: band must satisfy 0 < low < high < nyquist");
    }
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t j = i + 1; j < b.size(); ++j) {
      if (b[i].low_hz < b[j].high_hz && b[j].low_hz < b[i].high_hz) {
        throw ConfigError("synth: speaker bands overlap");
      }
    }
  }
}

std::pair<Audio, Annotation> synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const auto total_ms = static_cast<std::int64_t>(std::llround(spec.duration * 1000.0));
  const auto min_ms = static_cast<std::int64_t>(std::llround(spec.min_turn * 1000.0));
  const auto max_ms = static_cast<std::int64_t>(std::llround(spec.max_turn * 1000.0));
  std::uniform_int_distribution<std::int64_t> turn_len(std::max<std::int64_t>(1, min_ms),
                                                       std::max<std::int64_t>(1, max_ms));
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  std::uniform_real_distribution<double> gain_jitter(0.8, 1.2);

  struct Turn {
    std::int64_t start_ms, end_ms;
    std::uint32_t speaker;
    double gain;
  };
  std::vector<Turn> turns;
  std::int64_t t = 0;
  for (std::size_t k = 0; t < total_ms; ++k) {
    const std::int64_t len = std::min(turn_len(rng), total_ms - t);
    turns.push_back({t, t + len, static_cast<std::uint32_t>(k % spec.num_speakers), gain_jitter(rng)});
    t += len;
    if (spec.silence_fraction > 0.0) {
      const double ratio = spec.silence_fraction / (1.0 - spec.silence_fraction);
      t += static_cast<std::int64_t>(std::llround(static_cast<double>(len) * ratio * jitter(rng)));
    }
  }

  const std::size_t n = static_cast<std::size_t>(total_ms) * spec.sample_rate / 1000;
  Audio audio{spec.sample_rate, std::vector<float>(n, 0.0F)};
  const auto bands = spec.resolved_bands();
  std::vector<Tensor> filters;
  std::vector<double> norms;
  for (const Band& b : bands) {
    filters.push_back(sinc_filterbank(1, kBandKernel, static_cast<float>(b.low_hz),
                                      static_cast<float>(b.high_hz), spec.sample_rate));
    double e = 0.0;
    for (const float h : filters.back().values<float>()) e += static_cast<double>(h) * h;
    norms.push_back(std::sqrt(e));
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  struct SpanMs {
    std::int64_t start, end;
    std::uint32_t speaker;
  };
  std::vector<SpanMs> spans;
  for (const Turn& turn : turns) {
    const std::size_t s0 = static_cast<std::size_t>(turn.start_ms) * spec.sample_rate / 1000;
    const std::size_t s1 = static_cast<std::size_t>(turn.end_ms) * spec.sample_rate / 1000;
    const auto h = filters[turn.speaker].values<float>();
    std::vector<double> white(s1 - s0 + kBandKernel - 1);
    for (double& w : white) w = noise(rng);
    const double g = spec.amplitude * turn.gain / norms[turn.speaker];
    for (std::size_t i = s0; i < s1; ++i) {
      double acc = 0.0;
      const double* src = white.data() + (i - s0);
      for (std::uint32_t k = 0; k < kBandKernel; ++k) acc += h[k] * src[k];
      audio.samples[i] = static_cast<float>(g * acc);
    }
    if (!spans.empty() && spans.back().speaker == turn.speaker && spans.back().end == turn.start_ms) {
      spans.back().end = turn.end_ms;
    } else {
      spans.push_back({turn.start_ms, turn.end_ms, turn.speaker});
    }
  }
  Annotation ref{spec.file_id, {}};
  for (const SpanMs& sp : spans) {
    ref.segments.push_back({static_cast<double>(sp.start) / 1000.0,
                            static_cast<double>(sp.end - sp.start) / 1000.0,
                            "spk" + std::to_string(sp.speaker)});
  }
  return {std::move(audio), std::move(ref)};
}

}  // namespace diop
