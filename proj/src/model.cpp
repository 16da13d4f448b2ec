#include "diop/model.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace diop {

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::sinc_frontend:
      return "sinc_frontend";
    case NodeKind::conv1d:
      return "conv1d";
    case NodeKind::batchnorm1d:
      return "batchnorm1d";
    case NodeKind::relu:
      return "relu";
    case NodeKind::leaky_relu:
      return "leaky_relu";
    case NodeKind::fused_conv_relu:
      return "fused_conv_relu";
    case NodeKind::lstm:
      return "lstm";
    case NodeKind::pool:
      return "pool";
    case NodeKind::linear:
      return "linear";
    case NodeKind::sigmoid:
      return "sigmoid";
  }
  return "unknown";
}

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::embedding_baseline:
      return "embedding_baseline";
    case Architecture::embedding_reduced:
      return "embedding_reduced";
    case Architecture::segmentation:
      return "segmentation";
    case Architecture::custom:
      return "custom";
  }
  return "unknown";
}

namespace {

enum class Layout { channels_time, time_features, vector };

void expect_param(const ParamStore& params, const LayerNode& node, const std::string& role,
                  const Shape& shape) {
  const std::string key = node.name + "." + role;
  const auto it = params.find(key);
  if (it == params.end()) {
    throw ShapeError("node '" + node.name + "': missing parameter " + key);
  }
  if (it->second.shape() != shape) {
    throw ShapeError("node '" + node.name + "': parameter " + key + " has shape " +
                     to_string(it->second.shape()) + ", expected " + to_string(shape));
  }
}

void expect_width(const LayerNode& node, std::size_t width) {
  if (node.in != width) {
    throw ShapeError("node '" + node.name + "' (" + to_string(node.kind) + ") expects " +
                     std::to_string(node.in) + " inputs, predecessor produces " +
                     std::to_string(width));
  }
}

void validate_graph(const std::vector<LayerNode>& nodes, const ParamStore& params) {
  std::size_t width = nodes.empty() ? 0 : nodes.front().in;
  Layout layout = Layout::channels_time;
  std::size_t expected_params = 0;
  for (const LayerNode& n : nodes) {
    switch (n.kind) {
      case NodeKind::sinc_frontend:
        expect_width(n, width);
        if (layout != Layout::channels_time) throw ShapeError("sinc_frontend needs [C x L] input");
        expect_param(params, n, "weight", {n.out, n.in, n.kernel});
        expected_params += 1;
        width = n.out;
        break;
      case NodeKind::conv1d:
      case NodeKind::fused_conv_relu:
        expect_width(n, width);
        if (layout != Layout::channels_time) {
          throw ShapeError("node '" + n.name + "' needs [C x L] input");
        }
        if (n.stride == 0 || n.kernel == 0) {
          throw ShapeError("node '" + n.name + "': kernel and stride must be positive");
        }
        expect_param(params, n, "weight", {n.out, n.in, n.kernel});
        expect_param(params, n, "bias", {n.out});
        expected_params += 2;
        width = n.out;
        break;
      case NodeKind::batchnorm1d:
        expect_width(n, width);
        for (const char* role : {"gamma", "beta", "running_mean", "running_var"}) {
          expect_param(params, n, role, {n.out});
        }
        expected_params += 4;
        break;
      case NodeKind::lstm:
        expect_width(n, width);
        if (layout != Layout::channels_time) throw ShapeError("lstm needs [C x T] input");
        expect_param(params, n, "w_ih", {4 * std::size_t{n.out}, n.in});
        expect_param(params, n, "w_hh", {4 * std::size_t{n.out}, n.out});
        expect_param(params, n, "bias", {4 * std::size_t{n.out}});
        expected_params += 3;
        width = n.out;
        layout = Layout::time_features;
        break;
      case NodeKind::pool:
        if (layout != Layout::channels_time) throw ShapeError("pool needs [C x L] input");
        layout = Layout::vector;
        break;
      case NodeKind::linear:
        expect_width(n, width);
        if (layout == Layout::channels_time) {
          throw ShapeError("node '" + n.name + "': linear needs pooled or sequence input");
        }
        expect_param(params, n, "weight", {n.out, n.in});
        expect_param(params, n, "bias", {n.out});
        expected_params += 2;
        width = n.out;
        break;
      case NodeKind::relu:
      case NodeKind::leaky_relu:
      case NodeKind::sigmoid:
        break;
    }
  }
  if (expected_params != params.size()) {
    throw ShapeError("parameter store holds " + std::to_string(params.size()) +
                     " tensors, nodes reference " + std::to_string(expected_params));
  }
}

using Rng = std::mt19937_64;

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  const std::size_t n = shape_numel(shape);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(dist(rng));
  return Tensor(std::move(shape), std::move(v));
}

Tensor filled(Shape shape, float value) {
  std::vector<float> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v));
}

LayerNode make_node(NodeKind kind, std::string name, std::uint32_t in, std::uint32_t out,
                    std::uint32_t kernel = 0, std::uint32_t stride = 1,
                    std::uint32_t padding = 0) {
  LayerNode n;
  n.kind = kind;
  n.name = std::move(name);
  n.in = in;
  n.out = out;
  n.kernel = kernel;
  n.stride = stride;
  n.padding = padding;
  return n;
}

void add_conv_params(ParamStore& params, const LayerNode& n, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(n.in) * n.kernel);
  params.emplace(n.name + ".weight", uniform_tensor({n.out, n.in, n.kernel}, bound, rng));
  params.emplace(n.name + ".bias", uniform_tensor({n.out}, bound, rng));
}

void add_bn_params(ParamStore& params, const LayerNode& n) {
  params.emplace(n.name + ".gamma", filled({n.out}, 1.0F));
  params.emplace(n.name + ".beta", filled({n.out}, 0.0F));
  params.emplace(n.name + ".running_mean", filled({n.out}, 0.0F));
  params.emplace(n.name + ".running_var", filled({n.out}, 1.0F));
}

void add_linear_params(ParamStore& params, const LayerNode& n, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(n.in));
  params.emplace(n.name + ".weight", uniform_tensor({n.out, n.in}, bound, rng));
  params.emplace(n.name + ".bias", uniform_tensor({n.out}, bound, rng));
}

const Tensor& node_param(const ModelGraph& m, const LayerNode& n, const char* role) {
  return m.param(n.name + "." + role);
}

Tensor run_node(const ModelGraph& model, const LayerNode& n, const Tensor& x) {
  switch (n.kind) {
    case NodeKind::sinc_frontend: {
      const Tensor& w = node_param(model, n, "weight");
      const Tensor zero_bias({n.out}, x.kind());
      return abs_forward(conv1d_forward(x, w, zero_bias, n.stride, n.padding));
    }
    case NodeKind::conv1d:
      return conv1d_forward(x, node_param(model, n, "weight"), node_param(model, n, "bias"),
                            n.stride, n.padding);
    case NodeKind::fused_conv_relu:
      return conv1d_relu_forward(x, node_param(model, n, "weight"), node_param(model, n, "bias"),
                                 n.stride, n.padding);
    case NodeKind::batchnorm1d:
      return batchnorm1d_forward(x, node_param(model, n, "gamma"), node_param(model, n, "beta"),
                                 node_param(model, n, "running_mean"),
                                 node_param(model, n, "running_var"), n.eps);
    case NodeKind::relu:
      return activation_forward(x, Activation::relu);
    case NodeKind::leaky_relu:
      return activation_forward(x, Activation::leaky_relu, n.slope);
    case NodeKind::lstm: {
      LstmParams p{node_param(model, n, "w_ih"), node_param(model, n, "w_hh"),
                   node_param(model, n, "bias")};
      const Tensor zeros({n.out}, x.kind());
      return lstm_forward(transpose2d(x), p, zeros, zeros);
    }
    case NodeKind::pool:
      return temporal_stats_pool(x);
    case NodeKind::linear:
      return linear_forward(x, node_param(model, n, "weight"), node_param(model, n, "bias"));
    case NodeKind::sigmoid:
      return sigmoid_forward(x);
  }
  throw ValueError("unknown node kind");
}

}  // namespace

ModelGraph::ModelGraph(std::vector<LayerNode> nodes, ParamStore params, ModelMetadata meta)
    : nodes_(std::move(nodes)), params_(std::move(params)), meta_(meta) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes_.size(); ++j) {
      if (nodes_[i].name == nodes_[j].name) {
        throw ValueError("duplicate node name '" + nodes_[i].name + "'");
      }
    }
  }
  validate_graph(nodes_, params_);
}

const Tensor& ModelGraph::param(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) throw ValueError("model has no parameter '" + name + "'");
  return it->second;
}

std::size_t ModelGraph::input_channels() const { return nodes_.empty() ? 0 : nodes_.front().in; }

std::vector<std::string> ModelGraph::trainable_params() const {
  std::vector<std::string> names;
  for (const LayerNode& n : nodes_) {
    switch (n.kind) {
      case NodeKind::conv1d:
      case NodeKind::fused_conv_relu:
      case NodeKind::linear:
        names.push_back(n.name + ".weight");
        names.push_back(n.name + ".bias");
        break;
      case NodeKind::batchnorm1d:
        names.push_back(n.name + ".gamma");
        names.push_back(n.name + ".beta");
        break;
      default:
        break;
    }
  }
  return names;
}

ModelGraph ModelGraph::with_params(ParamStore params) const {
  return ModelGraph(nodes_, std::move(params), meta_);
}

ModelGraph ModelGraph::with_metadata(ModelMetadata meta) const {
  ModelGraph out = *this;
  out.meta_ = meta;
  return out;
}

void ModelConfig::validate() const {
  const auto positive = [](std::uint32_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(sample_rate, "sample_rate");
  positive(frontend_channels, "frontend_channels");
  positive(frontend_kernel, "frontend_kernel");
  positive(frontend_stride, "frontend_stride");
  positive(block_kernel, "block_kernel");
  positive(block_stride, "block_stride");
  positive(embedding_dim, "embedding_dim");
  positive(seg_frontend_channels, "seg_frontend_channels");
  positive(seg_frontend_kernel, "seg_frontend_kernel");
  positive(frame_rate, "frame_rate");
  positive(seg_hidden, "seg_hidden");
  positive(max_speakers, "max_speakers");
  if (block_channels.size() != 4 && block_channels.size() != 5) {
    throw ConfigError("model config: number of conv blocks must be 4 or 5, got " +
                      std::to_string(block_channels.size()));
  }
  for (const std::uint32_t c : block_channels) positive(c, "block_channels");
  if (!(frontend_low_hz > 0.0F) || !(frontend_high_hz > frontend_low_hz) ||
      frontend_high_hz >= static_cast<float>(sample_rate) / 2.0F) {
    throw ConfigError("model config: frontend band must satisfy 0 < low < high < sample_rate/2");
  }
  if (sample_rate % frame_rate != 0) {
    throw ConfigError("model config: sample_rate must be a multiple of frame_rate");
  }
  if (seg_hidden < max_speakers) {
    throw ConfigError("model config: seg_hidden must be at least max_speakers");
  }
  if (seg_frontend_channels < max_speakers) {
    throw ConfigError("model config: seg_frontend_channels must be at least max_speakers");
  }
}

Tensor sinc_filterbank(std::uint32_t channels, std::uint32_t kernel, float low_hz, float high_hz,
                       std::uint32_t sample_rate) {
  const double pi = std::numbers::pi;
  const double width = (static_cast<double>(high_hz) - low_hz) / channels;
  const double center = (static_cast<double>(kernel) - 1.0) / 2.0;
  std::vector<float> w(static_cast<std::size_t>(channels) * kernel);
  for (std::uint32_t c = 0; c < channels; ++c) {
    const double f1 = (low_hz + width * c) / sample_rate;
    const double f2 = (low_hz + width * (c + 1)) / sample_rate;
    const double fc = 0.5 * (f1 + f2);
    std::vector<double> h(kernel);
    double gain = 0.0;
    for (std::uint32_t k = 0; k < kernel; ++k) {
      const double n = k - center;
      const double ideal = n == 0.0 ? 2.0 * (f2 - f1)
                                    : (std::sin(2.0 * pi * f2 * n) - std::sin(2.0 * pi * f1 * n)) /
                                          (pi * n);
      const double window =
          kernel > 1 ? 0.54 - 0.46 * std::cos(2.0 * pi * k / (kernel - 1.0)) : 1.0;
      h[k] = ideal * window;
      gain += h[k] * std::cos(2.0 * pi * fc * n);
    }
    for (std::uint32_t k = 0; k < kernel; ++k) {
      w[static_cast<std::size_t>(c) * kernel + k] = static_cast<float>(h[k] / gain);
    }
  }
  return Tensor({channels, 1, kernel}, std::move(w));
}

ModelGraph build_embedding_model(const ModelConfig& cfg, EmbeddingVariant variant,
                                 std::uint64_t seed) {
  cfg.validate();
  const bool baseline = variant == EmbeddingVariant::baseline;
  const std::size_t blocks = baseline ? 5 : 4;
  if (cfg.block_channels.size() < blocks) {
    throw ConfigError("baseline embedder needs 5 conv blocks, config has " +
                      std::to_string(cfg.block_channels.size()));
  }
  Rng rng(seed);
  std::vector<LayerNode> nodes;
  ParamStore params;

  LayerNode front = make_node(NodeKind::sinc_frontend, "sinc", 1, cfg.frontend_channels,
                              cfg.frontend_kernel, cfg.frontend_stride);
  params.emplace("sinc.weight", sinc_filterbank(cfg.frontend_channels, cfg.frontend_kernel,
                                                cfg.frontend_low_hz, cfg.frontend_high_hz,
                                                cfg.sample_rate));
  nodes.push_back(front);

  std::uint32_t width = cfg.frontend_channels;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    const std::uint32_t out = cfg.block_channels[b];
    LayerNode conv = make_node(NodeKind::conv1d, prefix + ".conv", width, out, cfg.block_kernel,
                               cfg.block_stride, cfg.block_kernel / 2);
    add_conv_params(params, conv, rng);
    nodes.push_back(conv);

    LayerNode act = make_node(baseline ? NodeKind::leaky_relu : NodeKind::relu, prefix + ".act",
                              out, out);
    act.slope = cfg.leaky_slope;
    nodes.push_back(act);

    LayerNode bn = make_node(NodeKind::batchnorm1d, prefix + ".bn", out, out);
    bn.eps = cfg.bn_eps;
    add_bn_params(params, bn);
    nodes.push_back(bn);
    width = out;
  }
  nodes.push_back(make_node(NodeKind::pool, "pool", width, width));
  LayerNode head = make_node(NodeKind::linear, "embedding", width, cfg.embedding_dim);
  add_linear_params(params, head, rng);
  nodes.push_back(head);

  ModelMetadata meta;
  meta.architecture = baseline ? Architecture::embedding_baseline : Architecture::embedding_reduced;
  meta.seed = seed;
  return ModelGraph(std::move(nodes), std::move(params), meta);
}

ModelGraph build_segmentation_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::uint32_t filters = cfg.seg_frontend_channels;
  const std::uint32_t hidden = cfg.seg_hidden;
  const std::uint32_t slots = cfg.max_speakers;

  std::vector<LayerNode> nodes;
  ParamStore params;
  nodes.push_back(make_node(NodeKind::sinc_frontend, "sinc", 1, filters, cfg.seg_frontend_kernel,
                            cfg.frame_stride(), cfg.seg_frontend_kernel / 2));
  params.emplace("sinc.weight",
                 sinc_filterbank(filters, cfg.seg_frontend_kernel, cfg.frontend_low_hz,
                                 cfg.frontend_high_hz, cfg.sample_rate));

  // The recurrent classifier is set up as a per-slot band-energy detector:
  // slot k integrates the rectified filter outputs of the k-th contiguous
  // group of frontend bands (leaky integration through the forget gate) and
  // the readout thresholds the integrated level. Units beyond the slot count
  // carry seeded random weights and are ignored by the readout.
  constexpr float kGateOpen = 6.0F;       // sigmoid(6) ~ 0.9975
  const float forget_bias = std::log(4.0F);  // sigmoid = 0.8
  constexpr float kEnergyGain = 400.0F;
  constexpr float kEnergyThreshold = 2.0F;  // level 0.005 per filter
  constexpr float kReadoutGain = 4.0F;

  const std::size_t rows = 4 * std::size_t{hidden};
  std::vector<float> w_ih(rows * filters, 0.0F);
  std::vector<float> w_hh(rows * hidden, 0.0F);
  std::vector<float> bias(rows, 0.0F);
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  for (std::uint32_t u = 0; u < hidden; ++u) {
    if (u < slots) {
      bias[u] = kGateOpen;
      bias[hidden + u] = forget_bias;
      bias[2 * std::size_t{hidden} + u] = -kEnergyThreshold;
      bias[3 * std::size_t{hidden} + u] = kGateOpen;
      const std::uint32_t first = u * filters / slots;
      const std::uint32_t last = (u + 1) * filters / slots;
      for (std::uint32_t f = first; f < last; ++f) {
        w_ih[(2 * std::size_t{hidden} + u) * filters + f] =
            kEnergyGain / static_cast<float>(last - first);
      }
    } else {
      for (std::size_t g = 0; g < 4; ++g) {
        const std::size_t r = g * hidden + u;
        for (std::uint32_t f = 0; f < filters; ++f) {
          w_ih[r * filters + f] = static_cast<float>(small(rng));
        }
        for (std::uint32_t j = 0; j < hidden; ++j) {
          w_hh[r * hidden + j] = static_cast<float>(small(rng));
        }
      }
    }
  }
  LayerNode lstm = make_node(NodeKind::lstm, "lstm", filters, hidden);
  params.emplace("lstm.w_ih", Tensor({rows, filters}, std::move(w_ih)));
  params.emplace("lstm.w_hh", Tensor({rows, hidden}, std::move(w_hh)));
  params.emplace("lstm.bias", Tensor({rows}, std::move(bias)));
  nodes.push_back(lstm);

  std::vector<float> readout(static_cast<std::size_t>(slots) * hidden, 0.0F);
  for (std::uint32_t k = 0; k < slots; ++k) readout[k * std::size_t{hidden} + k] = kReadoutGain;
  params.emplace("classifier.weight", Tensor({slots, hidden}, std::move(readout)));
  params.emplace("classifier.bias", Tensor({slots}, std::vector<float>(slots, 0.0F)));
  nodes.push_back(make_node(NodeKind::linear, "classifier", hidden, slots));
  nodes.push_back(make_node(NodeKind::sigmoid, "activity", slots, slots));

  ModelMetadata meta;
  meta.architecture = Architecture::segmentation;
  meta.seed = seed;
  return ModelGraph(std::move(nodes), std::move(params), meta);
}

Tensor forward(const ModelGraph& model, const Tensor& input, ExecStats* stats) {
  if (!model.nodes().empty() && (input.ndim() != 2 || input.dim(0) != model.input_channels())) {
    throw ShapeError("model input must be [" + std::to_string(model.input_channels()) +
                     " x L], got " + to_string(input.shape()));
  }
  Tensor x = input;
  for (const LayerNode& n : model.nodes()) {
    try {
      x = run_node(model, n, x);
    } catch (const ShapeError& e) {
      throw ShapeError("node '" + n.name + "' (" + to_string(n.kind) + "): " + e.what());
    }
    if (stats != nullptr) ++stats->nodes_executed;
  }
  return x;
}

std::size_t param_count(const ModelGraph& model) {
  std::size_t total = 0;
  for (const auto& [name, t] : model.params()) total += t.numel();
  return total;
}

std::size_t model_size_bytes(const ModelGraph& model) {
  std::size_t total = 0;
  for (const auto& [name, t] : model.params()) total += t.storage_bytes();
  return total;
}

bool bitwise_equal(const ModelGraph& a, const ModelGraph& b) {
  if (a.nodes() != b.nodes() || !(a.metadata() == b.metadata())) return false;
  if (a.params().size() != b.params().size()) return false;
  for (const auto& [name, t] : a.params()) {
    const auto it = b.params().find(name);
    if (it == b.params().end() || !t.bitwise_equal(it->second)) return false;
  }
  return true;
}

}  // namespace diop
