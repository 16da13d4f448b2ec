#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace diop {

struct Segment {
  double onset = 0.0;     ///< seconds
  double duration = 0.0;  ///< seconds, > 0
  std::string label;

  double end() const noexcept { return onset + duration; }
  bool operator==(const Segment&) const = default;
};

struct Annotation {
  std::string file_id;
  std::vector<Segment> segments;

  bool operator==(const Annotation&) const = default;
};

/// Sorts segments by (onset, label) and merges overlapping or touching
/// segments of the same label. Throws ValueError on non-finite bounds or
/// non-positive durations.
Annotation normalize(const Annotation& a);

/// Distinct labels in sorted order.
std::vector<std::string> labels(const Annotation& a);

/// Total labelled time per speaker, overlap counted per speaker.
double speech_seconds(const Annotation& a);

struct DERBreakdown {
  double missed = 0.0;
  double false_alarm = 0.0;
  double confusion = 0.0;
  double total_reference_speech = 0.0;
  double der = 0.0;  ///< fraction
};

/// Hypothesis label -> reference label.
using LabelMap = std::map<std::string, std::string>;

/// overlap[r][h]: seconds during which reference label r and hypothesis
/// label h are both active. Rows and columns follow labels().
std::vector<std::vector<double>> overlap_matrix(const Annotation& reference,
                                                const Annotation& hypothesis);

/// One-to-one partial mapping maximizing the jointly attributed time.
/// Exhaustive search up to 6 labels per side, Hungarian solver above.
/// Pairs with zero overlap are left unmapped.
LabelMap optimal_mapping(const Annotation& reference, const Annotation& hypothesis);

/// Hungarian solver on a square or rectangular score matrix; returns for
/// each row the chosen column or -1. Maximizes the total score.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& score);

/// Exact breakpoint integration, no collar, overlap per speaker-second.
/// Throws ValueError if the file ids differ or the reference has no speech.
DERBreakdown der(const Annotation& reference, const Annotation& hypothesis);
/// DER under a fixed mapping.
DERBreakdown der_with_mapping(const Annotation& reference, const Annotation& hypothesis,
                              const LabelMap& mapping);

struct LatencyStats {
  std::vector<double> samples;  ///< seconds
  double mean = 0.0;
  double std = 0.0;  ///< sample (n - 1) standard deviation, 0 for one sample
};

/// Throws ValueError on an empty sample list.
LatencyStats latency_stats(std::vector<double> samples);

/// Smallest positive step observed between consecutive monotonic clock
/// reads, in seconds.
double measured_clock_resolution(std::size_t reads = 10000);

struct BenchRow {
  std::string variant;
  DERBreakdown der;
  LatencyStats latency;
  std::size_t size_bytes = 0;
};

struct BenchReport {
  std::string baseline;
  std::vector<BenchRow> rows;
  std::vector<double> latency_percent;  ///< 100 * mean / baseline mean, per row

  /// Columns: Model, DER (percent), latency mean s, latency % of baseline,
  /// size MB (10^6 bytes).
  std::string to_csv() const;
};

/// Throws ValueError if `baseline` is not one of the rows.
BenchReport bench_report(std::vector<BenchRow> rows, const std::string& baseline);

/// One line per sample: "variant,chunk,latency_s" with full precision.
std::string latency_samples_csv(const std::vector<BenchRow>& rows);

}  // namespace diop
