#include "diop/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "diop/errors.hpp"

namespace diop {

void PipelineConfig::validate() const {
  if (sample_rate == 0) throw ConfigError("pipeline: sample_rate must be > 0");
  if (!(step > 0.0 && step <= latency && latency <= window_duration)) {
    throw ConfigError("pipeline: need 0 < step <= latency <= window_duration");
  }
  if (!(tau_active > 0.0 && tau_active < 1.0)) throw ConfigError("pipeline: tau_active must be in (0, 1)");
  if (!(rho_update >= 0.0 && rho_update <= 1.0)) throw ConfigError("pipeline: rho_update must be in [0, 1]");
  if (!(delta_new > 0.0 && delta_new <= 2.0)) throw ConfigError("pipeline: delta_new must be in (0, 2]");
  if (step_samples() == 0) throw ConfigError("pipeline: step is shorter than one sample");
}

std::size_t PipelineConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_duration * sample_rate));
}

std::size_t PipelineConfig::step_samples() const {
  return static_cast<std::size_t>(std::llround(step * sample_rate));
}

std::vector<ChunkSpan> chunk_stream(std::size_t num_samples, const PipelineConfig& cfg) {
  cfg.validate();
  std::vector<ChunkSpan> out;
  if (num_samples == 0) return out;
  const std::size_t w = cfg.window_samples();
  const std::size_t s = cfg.step_samples();
  const std::size_t full = num_samples >= w ? (num_samples - w) / s + 1 : 0;
  for (std::size_t k = 0; k < full; ++k) {
    out.push_back({k, k * s, w, static_cast<double>(k) * cfg.step});
  }
  const std::size_t covered = full == 0 ? 0 : (full - 1) * s + w;
  if (covered < num_samples) {
    const std::size_t start = full * s;
    out.push_back({full, start, num_samples - start, static_cast<double>(full) * cfg.step});
  }
  return out;
}

Tensor extract_chunk(const std::vector<float>& samples, const ChunkSpan& span,
                     const PipelineConfig& cfg) {
  const std::size_t w = cfg.window_samples();
  std::vector<float> buf(w, 0.0F);
  std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(span.start_sample),
              std::min(span.valid_samples, w), buf.begin());
  return Tensor({1, w}, std::move(buf));
}

Tensor segment_chunk(const ModelGraph& segmenter, const Tensor& chunk) {
  Tensor a = forward(segmenter, chunk);
  if (a.ndim() != 2) throw ShapeError("segmenter must return [T x K], got " + to_string(a.shape()));
  return a;
}

std::vector<SlotEmbedding> embed_active_speakers(const ModelGraph& embedder, const Tensor& chunk,
                                                 const Tensor& activities, double tau_active) {
  const std::size_t frames = activities.dim(0);
  const std::size_t slots = activities.dim(1);
  const std::size_t length = chunk.dim(1);
  std::vector<SlotEmbedding> out;
  if (frames == 0) return out;
  const Tensor x = chunk.to(ElemKind::f32);
  const auto xs = x.values<float>();
  const Tensor act = activities.to(ElemKind::f32);
  const auto a = act.values<float>();
  for (std::size_t k = 0; k < slots; ++k) {
    double mean = 0.0;
    for (std::size_t t = 0; t < frames; ++t) mean += a[t * slots + k];
    mean /= static_cast<double>(frames);
    if (!(mean > tau_active)) continue;
    std::vector<float> weighted(length);
    for (std::size_t i = 0; i < length; ++i) {
      const std::size_t t = std::min(frames - 1, i * frames / length);
      weighted[i] = xs[i] * a[t * slots + k];
    }
    const Tensor e = forward(embedder, Tensor({1, length}, std::move(weighted)));
    SlotEmbedding se{k, mean, std::vector<double>(e.numel())};
    double norm = 0.0;
    for (std::size_t i = 0; i < e.numel(); ++i) {
      se.embedding[i] = e.get(i);
      norm += se.embedding[i] * se.embedding[i];
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : se.embedding) v /= norm;
    }
    out.push_back(std::move(se));
  }
  return out;
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_distance: dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;
  return 1.0 - ab / std::sqrt(aa * bb);
}

std::vector<std::size_t> cluster_update(ClusteringState& state,
                                        const std::vector<SlotEmbedding>& embeddings,
                                        const PipelineConfig& cfg) {
  std::vector<std::size_t> labels;
  for (const SlotEmbedding& e : embeddings) {
    if (!state.centroids.empty() && e.embedding.size() != state.centroids[0].size()) {
      throw ShapeError("cluster_update: embedding dim " + std::to_string(e.embedding.size()) +
                       " != centroid dim " + std::to_string(state.centroids[0].size()));
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < state.centroids.size(); ++c) {
      const double d = cosine_distance(e.embedding, state.centroids[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    if (state.centroids.empty() || best_d > cfg.delta_new) {
      state.centroids.push_back(e.embedding);
      state.counts.push_back(1);
      labels.push_back(state.next_label++);
      continue;
    }
    if (e.speech_ratio >= cfg.rho_update) {
      auto& c = state.centroids[best];
      const double n = static_cast<double>(++state.counts[best]);
      for (std::size_t i = 0; i < c.size(); ++i) c[i] += (e.embedding[i] - c[i]) / n;
    }
    labels.push_back(best);
  }
  return labels;
}

std::vector<double> PipelineResult::latency_samples() const {
  std::vector<double> out;
  out.reserve(chunks.size());
  for (const ChunkResult& c : chunks) out.push_back(c.latency());
  return out;
}

std::string speaker_label(std::size_t id) { return "S" + std::to_string(id); }

PipelineResult run_pipeline(const ModelGraph& embedder, const ModelGraph& segmenter,
                            const Audio& audio, const PipelineConfig& cfg,
                            const std::string& file_id) {
  cfg.validate();
  if (audio.sample_rate != cfg.sample_rate) {
    throw ConfigError("pipeline: audio is " + std::to_string(audio.sample_rate) +
                      " Hz, config expects " + std::to_string(cfg.sample_rate) + " Hz");
  }
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto seconds = [&](clock::time_point t) { return std::chrono::duration<double>(t - t0).count(); };

  const std::size_t n = audio.samples.size();
  const auto spans = chunk_stream(n, cfg);
  const std::size_t w = cfg.window_samples();

  PipelineResult result;
  result.annotation.file_id = file_id;

  // per-frame vote accumulators, sized once the frame rate is known
  std::size_t frame_stride = 0;
  std::size_t num_frames = 0;
  std::vector<std::map<std::size_t, double>> votes;
  std::vector<std::size_t> contributors;
  std::vector<double> speech;  // summed max-slot activity
  ClusteringState state;

  for (const ChunkSpan& span : spans) {
    ChunkResult cr;
    cr.index = span.index;
    cr.start_time = span.start_time;
    try {
      const Tensor chunk = extract_chunk(audio.samples, span, cfg);
      const auto t1 = clock::now();
      cr.activities = segment_chunk(segmenter, chunk);
      const auto embs = embed_active_speakers(embedder, chunk, cr.activities, cfg.tau_active);
      const auto labels = cluster_update(state, embs, cfg);
      const auto t2 = clock::now();
      cr.t1 = seconds(t1);
      cr.t2 = seconds(t2);
      cr.slot_labels.assign(cr.activities.dim(1), -1);
      for (std::size_t i = 0; i < embs.size(); ++i) {
        cr.slot_labels[embs[i].slot] = static_cast<long>(labels[i]);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("chunk " + std::to_string(span.index) + " at " +
                               std::to_string(span.start_time) + " s: " + e.what());
    }

    const std::size_t frames = cr.activities.dim(0);
    const std::size_t slots = cr.activities.dim(1);
    if (frames == 0) {
      result.chunks.push_back(std::move(cr));
      continue;
    }
    if (frame_stride == 0) {
      frame_stride = w / frames;
      if (frame_stride * frames != w || cfg.step_samples() % frame_stride != 0) {
        throw ConfigError("pipeline: window and step must be whole multiples of the segmenter frame");
      }
      num_frames = (n + frame_stride - 1) / frame_stride;
      votes.resize(num_frames);
      contributors.assign(num_frames, 0);
      speech.assign(num_frames, 0.0);
    }
    const std::size_t first = span.start_sample / frame_stride;
    const double chunk_end = static_cast<double>(span.start_sample + w) / cfg.sample_rate;
    for (std::size_t t = 0; t < frames && first + t < num_frames; ++t) {
      const std::size_t f = first + t;
      const double frame_time = static_cast<double>(f * frame_stride) / cfg.sample_rate;
      const bool in_horizon = chunk_end <= frame_time + cfg.latency + 1e-9;
      if (!in_horizon && contributors[f] > 0) continue;
      ++contributors[f];
      double top = 0.0;
      for (std::size_t k = 0; k < slots; ++k) {
        top = std::max(top, cr.activities.get(t * slots + k));
        if (cr.slot_labels[k] < 0) continue;
        votes[f][static_cast<std::size_t>(cr.slot_labels[k])] += cr.activities.get(t * slots + k);
      }
      speech[f] += top;
    }
    result.chunks.push_back(std::move(cr));
  }

  long current = -1;
  std::size_t seg_start = 0;
  const auto close = [&](std::size_t end_frame) {
    if (current < 0) return;
    const double onset = static_cast<double>(seg_start * frame_stride) / cfg.sample_rate;
    const double end = static_cast<double>(std::min(end_frame * frame_stride, n)) / cfg.sample_rate;
    result.annotation.segments.push_back({onset, end - onset, speaker_label(static_cast<std::size_t>(current))});
  };
  for (std::size_t f = 0; f < num_frames; ++f) {
    long label = -1;
    if (contributors[f] > 0 && speech[f] / static_cast<double>(contributors[f]) > 0.5) {
      double best = 0.0;
      for (const auto& [id, score] : votes[f]) {
        if (score > best) {
          best = score;
          label = static_cast<long>(id);
        }
      }
    }
    if (label != current) {
      close(f);
      current = label;
      seg_start = f;
    }
  }
  close(num_frames);
  return result;
}

std::string latency_csv(const PipelineResult& result) {
  std::string out = "chunk_index,t1,t2,latency_s\n";
  char buf[128];
  for (const ChunkResult& c : result.chunks) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f,%.17g\n", c.index, c.t1, c.t2, c.latency());
    out += buf;
  }
  return out;
}

}  // namespace diop
