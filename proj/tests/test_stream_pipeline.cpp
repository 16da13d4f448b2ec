#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "diop/passes.hpp"
#include "diop/pipeline.hpp"
#include "diop/synth.hpp"
#include "grad_check.hpp"

namespace diop {
namespace {

SlotEmbedding unit(std::vector<double> v, double ratio = 1.0) {
  return SlotEmbedding{0, ratio, std::move(v)};
}

TEST(Chunking, TenSecondsGivesTwentyOneWindows) {
  const PipelineConfig cfg;
  const auto spans = chunk_stream(160000, cfg);
  ASSERT_EQ(spans.size(), 21U);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    EXPECT_EQ(spans[k].start_time, static_cast<double>(k) * 0.25);
    EXPECT_EQ(spans[k].start_sample, k * 4000);
    EXPECT_EQ(spans[k].valid_samples, 80000U);
  }
  EXPECT_EQ(spans.back().start_time, 5.0);
}

TEST(Chunking, ShortAndEmptyAudio) {
  const PipelineConfig cfg;
  EXPECT_TRUE(chunk_stream(0, cfg).empty());
  const auto one = chunk_stream(16000, cfg);
  ASSERT_EQ(one.size(), 1U);
  EXPECT_EQ(one[0].valid_samples, 16000U);
  std::vector<float> samples(16000, 1.0F);
  const Tensor t = extract_chunk(samples, one[0], cfg);
  EXPECT_EQ(t.shape(), (Shape{1, 80000}));
  EXPECT_EQ(t.get(15999), 1.0);
  EXPECT_EQ(t.get(16000), 0.0);
}

TEST(Chunking, CountLawAgainstEnumeration) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> len(80000, 400000);
  const PipelineConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = len(rng);
    std::size_t full = 0;
    for (std::size_t start = 0; start + 80000 <= n; start += 4000) ++full;
    const std::size_t expected_full =
        static_cast<std::size_t>(std::floor((n / 16000.0 - 5.0) / 0.25)) + 1;
    EXPECT_EQ(full, expected_full);
    const auto spans = chunk_stream(n, cfg);
    const bool partial = (full - 1) * 4000 + 80000 < n;
    EXPECT_EQ(spans.size(), full + (partial ? 1 : 0));
    for (std::size_t k = 0; k < full; ++k) EXPECT_EQ(spans[k].valid_samples, 80000U);
  }
}

TEST(Chunking, ConfigValidation) {
  PipelineConfig c;
  c.step = 4.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.tau_active = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PipelineConfig{};
  c.latency = 6.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(PipelineConfig{}.validate());
}

TEST(Segmentation, ZeroModelGivesHalf) {
  const ModelGraph seg = build_segmentation_model({}, 1);
  ParamStore p = seg.params();
  for (auto& [name, t] : p) {
    if (name == "sinc.weight") continue;
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, 0.0);
  }
  const ModelGraph zero = seg.with_params(std::move(p));
  const Tensor a = segment_chunk(zero, Tensor({1, 80000}, ElemKind::f32));
  EXPECT_EQ(a.shape(), (Shape{500, 2}));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.get(i), 0.5);
}

TEST(Segmentation, ShapeRangeDeterminism) {
  const ModelGraph seg = build_segmentation_model({}, 1);
  std::mt19937_64 rng(2);
  const Tensor x = testing::random_f32({1, 80000}, rng, -0.2, 0.2);
  const Tensor a = segment_chunk(seg, x);
  EXPECT_EQ(a.shape(), (Shape{500, 2}));
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_GE(a.get(i), 0.0);
    EXPECT_LE(a.get(i), 1.0);
  }
  EXPECT_TRUE(a.bitwise_equal(segment_chunk(seg, x)));
}

TEST(Segmentation, SlotsFollowSpeakerBands) {
  SynthSpec spec;
  spec.duration = 5.0;
  spec.min_turn = spec.max_turn = 5.0;
  spec.silence_fraction = 0.0;
  const auto [audio, ref] = synth_generate(spec);
  const Tensor a = segment_chunk(build_segmentation_model({}, 1), Tensor({1, audio.samples.size()}, audio.samples));
  double m0 = 0, m1 = 0;
  for (std::size_t t = 0; t < a.dim(0); ++t) {
    m0 += a.get(2 * t) / static_cast<double>(a.dim(0));
    m1 += a.get(2 * t + 1) / static_cast<double>(a.dim(0));
  }
  EXPECT_GT(m0, 0.9);  // spk0 occupies the low band
  EXPECT_LT(m1, 0.1);
}

TEST(Embedding, ThresholdAndShape) {
  const ModelGraph emb = build_embedding_model({}, EmbeddingVariant::reduced, 1);
  std::mt19937_64 rng(3);
  const Tensor x = testing::random_f32({1, 16000}, rng, -0.2, 0.2);
  Tensor low({100, 2}, ElemKind::f32);
  for (std::size_t i = 0; i < low.numel(); ++i) low.set(i, 0.3);
  EXPECT_TRUE(embed_active_speakers(emb, x, low, 0.555).empty());

  Tensor one = low;
  for (std::size_t t = 0; t < 100; ++t) one.set(2 * t + 1, 0.9);
  const auto e = embed_active_speakers(emb, x, one, 0.555);
  ASSERT_EQ(e.size(), 1U);
  EXPECT_EQ(e[0].slot, 1U);
  EXPECT_NEAR(e[0].speech_ratio, 0.9, 1e-6);
  ASSERT_EQ(e[0].embedding.size(), 32U);
  double norm = 0;
  for (const double v : e[0].embedding) norm += v * v;
  EXPECT_NEAR(norm, 1.0, 1e-12);

  Tensor scaled = one;
  for (std::size_t i = 0; i < scaled.numel(); ++i) scaled.set(i, scaled.get(i) * 1.0);
  EXPECT_EQ(embed_active_speakers(emb, x, scaled, 0.555)[0].embedding, e[0].embedding);
}

TEST(Clustering, ColdStartAndIdentity) {
  PipelineConfig cfg;
  ClusteringState s;
  EXPECT_EQ(cluster_update(s, {unit({1, 0})}, cfg), (std::vector<std::size_t>{0}));
  EXPECT_EQ(s.centroids.size(), 1U);
  EXPECT_EQ(cluster_update(s, {unit({1, 0})}, cfg), (std::vector<std::size_t>{0}));
  EXPECT_EQ(s.centroids.size(), 1U);
}

TEST(Clustering, OrthogonalAgainstDeltaNew) {
  PipelineConfig cfg;
  EXPECT_DOUBLE_EQ(cosine_distance({1, 0}, {0, 1}), 1.0);
  ClusteringState s;
  EXPECT_EQ(cluster_update(s, {unit({1, 0}), unit({0, 1})}, cfg), (std::vector<std::size_t>{0, 0}));
  cfg.delta_new = 0.5;
  ClusteringState t;
  EXPECT_EQ(cluster_update(t, {unit({1, 0}), unit({0, 1})}, cfg), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(t.next_label, 2U);
}

TEST(Clustering, UpdateGatedBySpeechRatio) {
  PipelineConfig cfg;
  ClusteringState s;
  (void)cluster_update(s, {unit({1, 0})}, cfg);
  (void)cluster_update(s, {unit({0.6, 0.8}, 0.3)}, cfg);
  EXPECT_EQ(s.centroids[0], (std::vector<double>{1, 0}));
  (void)cluster_update(s, {unit({0.6, 0.8}, 0.5)}, cfg);
  EXPECT_DOUBLE_EQ(s.centroids[0][0], 0.8);
  EXPECT_DOUBLE_EQ(s.centroids[0][1], 0.4);
  EXPECT_THROW((void)cluster_update(s, {unit({1, 0, 0})}, cfg), ShapeError);
}

TEST(Clustering, StableLabels) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  std::vector<SlotEmbedding> seq;
  for (int i = 0; i < 50; ++i) seq.push_back(unit({n(rng), n(rng), n(rng)}));
  PipelineConfig cfg;
  cfg.delta_new = 0.7;
  ClusteringState a, b;
  EXPECT_EQ(cluster_update(a, seq, cfg), cluster_update(b, seq, cfg));
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SynthSpec spec;
    spec.duration = 12.0;
    spec.seed = 5;
    std::tie(audio_, ref_) = synth_generate(spec);
  }
  static inline Audio audio_;
  static inline Annotation ref_;
};

TEST_F(Pipeline, DeterministicWithLatencySamples) {
  const ModelGraph emb = build_embedding_model({}, EmbeddingVariant::reduced, 1);
  const ModelGraph seg = build_segmentation_model({}, 1);
  const PipelineConfig cfg;
  const PipelineResult a = run_pipeline(emb, seg, audio_, cfg, ref_.file_id);
  const PipelineResult b = run_pipeline(emb, seg, audio_, cfg, ref_.file_id);
  EXPECT_EQ(a.annotation, b.annotation);
  ASSERT_EQ(a.chunks.size(), chunk_stream(audio_.samples.size(), cfg).size());
  for (std::size_t i = 0; i < a.chunks.size(); ++i) {
    EXPECT_EQ(a.chunks[i].slot_labels, b.chunks[i].slot_labels);
    EXPECT_GT(a.chunks[i].latency(), 0.0);
    EXPECT_GE(a.chunks[i].t2, a.chunks[i].t1);
  }
  EXPECT_EQ(a.latency_samples().size(), a.chunks.size());
  const std::string csv = latency_csv(a);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "chunk_index,t1,t2,latency_s");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), a.chunks.size() + 1);
}

TEST_F(Pipeline, FusedEmbedderGivesIdenticalOutput) {
  const ModelGraph emb = build_embedding_model({}, EmbeddingVariant::reduced, 1);
  const ModelGraph seg = build_segmentation_model({}, 1);
  const PipelineResult a = run_pipeline(emb, seg, audio_, {}, ref_.file_id);
  const PipelineResult b = run_pipeline(fuse_conv_relu(emb), seg, audio_, {}, ref_.file_id);
  EXPECT_EQ(a.annotation, b.annotation);
  for (std::size_t i = 0; i < a.chunks.size(); ++i) {
    EXPECT_EQ(a.chunks[i].slot_labels, b.chunks[i].slot_labels);
    EXPECT_TRUE(a.chunks[i].activities.bitwise_equal(b.chunks[i].activities));
  }
}

TEST_F(Pipeline, AnnotationIsSortedAndDisjointPerLabel) {
  const PipelineResult r = run_pipeline(build_embedding_model({}, EmbeddingVariant::reduced, 1),
                                        build_segmentation_model({}, 1), audio_, {}, ref_.file_id);
  ASSERT_FALSE(r.annotation.segments.empty());
  EXPECT_EQ(r.annotation.file_id, ref_.file_id);
  for (std::size_t i = 1; i < r.annotation.segments.size(); ++i) {
    EXPECT_GE(r.annotation.segments[i].onset, r.annotation.segments[i - 1].end() - 1e-12);
  }
  EXPECT_EQ(normalize(r.annotation).segments.size(), r.annotation.segments.size());
  for (const Segment& s : r.annotation.segments) {
    EXPECT_GT(s.duration, 0.0);
    EXPECT_LE(s.end(), audio_.duration() + 1e-9);
  }
}

TEST(PipelineSingleSpeaker, OneLabel) {
  SynthSpec spec;
  spec.num_speakers = 1;
  spec.duration = 10.0;
  spec.seed = 2;
  const auto [audio, ref] = synth_generate(spec);
  const PipelineResult r = run_pipeline(build_embedding_model({}, EmbeddingVariant::reduced, 1),
                                        build_segmentation_model({}, 1), audio, {}, ref.file_id);
  EXPECT_EQ(labels(r.annotation).size(), 1U);
}

TEST(PipelineErrors, SampleRateMismatch) {
  Audio a{8000, std::vector<float>(8000, 0.0F)};
  EXPECT_THROW((void)run_pipeline(build_embedding_model({}, EmbeddingVariant::reduced, 1),
                                  build_segmentation_model({}, 1), a, {}, "f"),
               ConfigError);
}

}  // namespace
}  // namespace diop
