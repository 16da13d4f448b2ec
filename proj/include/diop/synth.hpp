#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "diop/io.hpp"
#include "diop/metrics.hpp"

namespace diop {

struct Band {
  double low_hz = 0.0;
  double high_hz = 0.0;
};

struct SynthSpec {
  std::uint32_t num_speakers = 2;
  double duration = 20.0;  ///< seconds
  double min_turn = 1.5;   ///< seconds
  double max_turn = 4.0;
  double silence_fraction = 0.15;  ///< expected share of silence, in [0, 1)
  double amplitude = 0.1;          ///< RMS of a speaker's signal
  /// One band per speaker; empty means evenly split 100-7600 Hz with guard gaps.
  std::vector<Band> bands;
  std::uint32_t sample_rate = 16000;
  std::uint64_t seed = 0;
  std::string file_id = "synth";

  /// Throws ConfigError on invalid values or overlapping bands.
  void validate() const;
  std::vector<Band> resolved_bands() const;
};

/// Alternating speaker turns (spk0, spk1, ...) of band-limited seeded noise
/// separated by silences. Turn bounds fall on whole milliseconds so the
/// reference round-trips through 3-decimal RTTM exactly.
std::pair<Audio, Annotation> synth_generate(const SynthSpec& spec);

}  // namespace diop
