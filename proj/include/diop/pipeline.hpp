#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "diop/io.hpp"
#include "diop/metrics.hpp"
#include "diop/model.hpp"

namespace diop {

struct PipelineConfig {
  double window_duration = 5.0;  ///< seconds
  double step = 0.25;
  double latency = 3.0;
  double tau_active = 0.555;
  double rho_update = 0.422;
  double delta_new = 1.517;
  std::uint32_t sample_rate = 16000;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless 0 < step <= latency <= window, tau_active in
  /// (0, 1), rho_update in [0, 1] and delta_new in (0, 2].
  void validate() const;
  std::size_t window_samples() const;
  std::size_t step_samples() const;
};

struct ChunkSpan {
  std::size_t index = 0;
  std::size_t start_sample = 0;
  std::size_t valid_samples = 0;  ///< samples taken from the stream, rest zero padding
  double start_time = 0.0;        ///< index * step
};

/// Window starts 0, step, 2 step, ... while the window fits, plus one
/// zero-padded window if samples remain after the last full one.
std::vector<ChunkSpan> chunk_stream(std::size_t num_samples, const PipelineConfig& cfg);
/// [1 x window] tensor for one chunk.
Tensor extract_chunk(const std::vector<float>& samples, const ChunkSpan& span,
                     const PipelineConfig& cfg);

/// Segmentation forward pass: [T x K] activities in [0, 1].
Tensor segment_chunk(const ModelGraph& segmenter, const Tensor& chunk);

struct SlotEmbedding {
  std::size_t slot = 0;
  double speech_ratio = 0.0;     ///< mean activity of the slot over the chunk
  std::vector<double> embedding;  ///< L2-normalized
};

/// Embeds every slot whose mean activity exceeds tau_active, on the chunk
/// weighted sample-wise by that slot's frame activities.
std::vector<SlotEmbedding> embed_active_speakers(const ModelGraph& embedder, const Tensor& chunk,
                                                 const Tensor& activities, double tau_active);

struct ClusteringState {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> counts;
  std::size_t next_label = 0;
};

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b);

/// Assigns one global label per embedding, in order. A new centroid is
/// created when the state is empty or the nearest centroid is farther than
/// delta_new; otherwise the nearest label is used and its centroid is
/// updated by running mean if speech_ratio >= rho_update. Throws ShapeError
/// on a dimension mismatch.
std::vector<std::size_t> cluster_update(ClusteringState& state,
                                        const std::vector<SlotEmbedding>& embeddings,
                                        const PipelineConfig& cfg);

struct ChunkResult {
  std::size_t index = 0;
  double start_time = 0.0;
  Tensor activities;                ///< [T x K]
  std::vector<long> slot_labels;    ///< global label per slot, -1 if not embedded
  double t1 = 0.0;                  ///< seconds since the run started
  double t2 = 0.0;

  double latency() const { return t2 - t1; }
};

struct PipelineResult {
  Annotation annotation;
  std::vector<ChunkResult> chunks;

  std::vector<double> latency_samples() const;
};

/// Online diarization over one stream. Each frame is labelled from the
/// chunks that ended no later than frame_time + latency (or the first chunk
/// covering it if none did) by activity-weighted vote; ties go to the lower
/// label. A frame is speech when its highest slot activity averaged over
/// those chunks exceeds 0.5; speech frames without any labelled vote stay
/// unlabelled.
PipelineResult run_pipeline(const ModelGraph& embedder, const ModelGraph& segmenter,
                            const Audio& audio, const PipelineConfig& cfg,
                            const std::string& file_id);

/// "chunk_index,t1,t2,latency_s" rows.
std::string latency_csv(const PipelineResult& result);

/// Hypothesis label for a global cluster id.
std::string speaker_label(std::size_t id);

}  // namespace diop
