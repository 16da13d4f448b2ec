#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "diop/kernels.hpp"
#include "diop/tensor.hpp"

namespace diop {

enum class NodeKind : std::uint8_t {
  sinc_frontend = 0,  ///< frozen band-pass filter bank (strided conv) followed by |x|
  conv1d = 1,
  batchnorm1d = 2,
  relu = 3,
  leaky_relu = 4,
  fused_conv_relu = 5,
  lstm = 6,  ///< consumes [C x T] features, emits [T x H]
  pool = 7,
  linear = 8,
  sigmoid = 9,
};

std::string to_string(NodeKind kind);

/// One graph node. Parameters live in the model's store under
/// "<name>.<role>" (weight, bias, gamma, beta, running_mean, running_var,
/// w_ih, w_hh).
struct LayerNode {
  NodeKind kind = NodeKind::conv1d;
  std::string name;
  std::uint32_t in = 0;   ///< input channels / features
  std::uint32_t out = 0;  ///< output channels / features / hidden size
  std::uint32_t kernel = 0;
  std::uint32_t stride = 1;
  std::uint32_t padding = 0;
  float slope = static_cast<float>(kDefaultLeakySlope);
  float eps = 1e-5F;

  bool operator==(const LayerNode&) const = default;
};

enum class Architecture : std::uint8_t {
  embedding_baseline = 0,
  embedding_reduced = 1,
  segmentation = 2,
  custom = 3,
};

std::string to_string(Architecture arch);

struct ModelMetadata {
  Architecture architecture = Architecture::custom;
  std::int32_t epoch = -1;  ///< training epoch of a checkpoint, -1 when untrained
  std::uint64_t seed = 0;

  bool operator==(const ModelMetadata&) const = default;
};

using ParamStore = std::map<std::string, Tensor>;

/// Ordered layer list plus its parameter store. Immutable once built;
/// passes produce new graphs.
class ModelGraph {
 public:
  ModelGraph() = default;
  /// Validates that every node's parameters exist with consistent shapes and
  /// that adjacent nodes agree on channel / feature counts.
  ModelGraph(std::vector<LayerNode> nodes, ParamStore params, ModelMetadata meta);

  const std::vector<LayerNode>& nodes() const noexcept { return nodes_; }
  const ParamStore& params() const noexcept { return params_; }
  const ModelMetadata& metadata() const noexcept { return meta_; }
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return params_.contains(name); }

  /// Input channel count expected by the first node (1 for waveform models).
  std::size_t input_channels() const;

  /// Names of parameters updated by training (conv / fused / linear weights
  /// and biases, batch-norm gamma and beta). Frontend filters and running
  /// statistics are excluded.
  std::vector<std::string> trainable_params() const;

  ModelGraph with_params(ParamStore params) const;
  ModelGraph with_metadata(ModelMetadata meta) const;

 private:
  std::vector<LayerNode> nodes_;
  ParamStore params_;
  ModelMetadata meta_;
};

enum class EmbeddingVariant : std::uint8_t { baseline, reduced };

/// Layer widths and sizes. Defaults are the desk profile.
struct ModelConfig {
  std::uint32_t sample_rate = 16000;

  // embedding frontend
  std::uint32_t frontend_channels = 16;
  std::uint32_t frontend_kernel = 65;
  std::uint32_t frontend_stride = 10;
  float frontend_low_hz = 100.0F;
  float frontend_high_hz = 7600.0F;

  /// Output channels of each (conv, activation, batchnorm) block. Five
  /// entries support both variants; four entries only the reduced one.
  std::vector<std::uint32_t> block_channels = {32, 32, 32, 32, 32};
  std::uint32_t block_kernel = 5;
  std::uint32_t block_stride = 2;
  float leaky_slope = static_cast<float>(kDefaultLeakySlope);
  float bn_eps = 1e-5F;
  std::uint32_t embedding_dim = 32;

  // segmenter
  std::uint32_t seg_frontend_channels = 16;
  std::uint32_t seg_frontend_kernel = 401;
  std::uint32_t frame_rate = 100;  ///< segmenter frames per second
  std::uint32_t seg_hidden = 8;
  std::uint32_t max_speakers = 2;

  /// Throws ConfigError on a non-positive dim or a block count outside {4, 5}.
  void validate() const;
  std::uint32_t frame_stride() const { return sample_rate / frame_rate; }
};

/// sinc_frontend -> N x (conv1d -> activation -> batchnorm1d) -> pool -> linear.
/// baseline: 5 blocks with leaky relu; reduced: 4 blocks with relu.
ModelGraph build_embedding_model(const ModelConfig& cfg, EmbeddingVariant variant,
                                 std::uint64_t seed);

/// sinc_frontend -> lstm -> linear -> sigmoid, one output column per speaker
/// slot.
ModelGraph build_segmentation_model(const ModelConfig& cfg, std::uint64_t seed);

/// Band-pass filter bank used as the frozen frontend: `channels` Hamming-
/// windowed sinc filters of length `kernel`, linearly spaced bands between
/// `low_hz` and `high_hz`, each normalized to unit gain at its centre.
Tensor sinc_filterbank(std::uint32_t channels, std::uint32_t kernel, float low_hz, float high_hz,
                       std::uint32_t sample_rate);

struct ExecStats {
  std::size_t nodes_executed = 0;
};

/// Runs every node in order. Throws ShapeError naming the failing node.
Tensor forward(const ModelGraph& model, const Tensor& input, ExecStats* stats = nullptr);

std::size_t param_count(const ModelGraph& model);
/// Sum of element bytes over all parameters plus 4 bytes per quant scale.
std::size_t model_size_bytes(const ModelGraph& model);

bool bitwise_equal(const ModelGraph& a, const ModelGraph& b);

// DIOP model file, all integers little-endian:
//   "DIOP" | u16 version | u16 node_count
//   node_count x { u8 kind | u16 name_len | name | u32 in, out, kernel,
//                  stride, padding | f32 slope, eps }
//   u8 architecture | i32 epoch | u64 seed
//   u32 param_count
//   param_count x { u16 name_len | name | u8 elem_kind | u8 ndim |
//                   u32 dims[ndim] | raw data | f32 scale (i8 only) }
inline constexpr std::uint16_t kModelFormatVersion = 1;

std::vector<std::byte> serialize_model(const ModelGraph& model);
ModelGraph deserialize_model(std::span<const std::byte> bytes);
void save_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

}  // namespace diop
