#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "diop/model.hpp"

namespace diop {
namespace {

constexpr char kMagic[4] = {'D', 'I', 'O', 'P'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::byte*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
    }
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void name(const std::string& s) {
    if (s.size() > 0xFFFF) throw ValueError("name too long for model file: " + s);
    uint(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor_data(const Tensor& t) {
    const auto raw = t.bytes();
    if constexpr (std::endian::native == std::endian::little) {
      bytes(raw.data(), raw.size());
    } else {
      const std::size_t width = element_size(t.kind());
      for (std::size_t i = 0; i < raw.size(); i += width) {
        for (std::size_t b = width; b-- > 0;) out_.push_back(raw[i + b]);
      }
    }
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, in_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(std::to_integer<std::uint8_t>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::string name() {
    const auto len = uint<std::uint16_t>();
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
  void tensor_data(Tensor& t) {
    auto raw = t.mutable_bytes();
    bytes(raw.data(), raw.size());
    if constexpr (std::endian::native != std::endian::little) {
      const std::size_t width = element_size(t.kind());
      for (std::size_t i = 0; i < raw.size(); i += width) {
        std::reverse(raw.begin() + i, raw.begin() + i + width);
      }
    }
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) {
      throw FormatError("model file truncated at byte " + std::to_string(pos_) + " (needed " +
                        std::to_string(n) + " more bytes)");
    }
  }
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::byte> serialize_model(const ModelGraph& model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.uint(kModelFormatVersion);
  if (model.nodes().size() > 0xFFFF) throw ValueError("too many nodes for model file");
  w.uint(static_cast<std::uint16_t>(model.nodes().size()));
  for (const LayerNode& n : model.nodes()) {
    w.uint(static_cast<std::uint8_t>(n.kind));
    w.name(n.name);
    w.uint(n.in);
    w.uint(n.out);
    w.uint(n.kernel);
    w.uint(n.stride);
    w.uint(n.padding);
    w.f32(n.slope);
    w.f32(n.eps);
  }
  const ModelMetadata& meta = model.metadata();
  w.uint(static_cast<std::uint8_t>(meta.architecture));
  w.uint(static_cast<std::uint32_t>(meta.epoch));
  w.uint(meta.seed);
  w.uint(static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, t] : model.params()) {
    w.name(name);
    w.uint(static_cast<std::uint8_t>(t.kind()));
    w.uint(static_cast<std::uint8_t>(t.ndim()));
    for (const std::size_t d : t.shape()) w.uint(static_cast<std::uint32_t>(d));
    w.tensor_data(t);
    if (t.kind() == ElemKind::i8) w.f32(*t.quant_scale());
  }
  return w.take();
}

ModelGraph deserialize_model(std::span<const std::byte> bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a DIOP model file (bad magic)");
  const auto version = r.uint<std::uint16_t>();
  if (version != kModelFormatVersion) {
    throw FormatError("unsupported model file version " + std::to_string(version));
  }
  const auto node_count = r.uint<std::uint16_t>();
  std::vector<LayerNode> nodes;
  nodes.reserve(node_count);
  for (std::uint16_t i = 0; i < node_count; ++i) {
    LayerNode n;
    const auto kind = r.uint<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(NodeKind::sigmoid)) {
      throw FormatError("unknown node kind " + std::to_string(kind) + " at node " +
                        std::to_string(i));
    }
    n.kind = static_cast<NodeKind>(kind);
    n.name = r.name();
    n.in = r.uint<std::uint32_t>();
    n.out = r.uint<std::uint32_t>();
    n.kernel = r.uint<std::uint32_t>();
    n.stride = r.uint<std::uint32_t>();
    n.padding = r.uint<std::uint32_t>();
    n.slope = r.f32();
    n.eps = r.f32();
    nodes.push_back(std::move(n));
  }
  ModelMetadata meta;
  const auto arch = r.uint<std::uint8_t>();
  if (arch > static_cast<std::uint8_t>(Architecture::custom)) {
    throw FormatError("unknown architecture id " + std::to_string(arch));
  }
  meta.architecture = static_cast<Architecture>(arch);
  meta.epoch = static_cast<std::int32_t>(r.uint<std::uint32_t>());
  meta.seed = r.uint<std::uint64_t>();

  const auto param_count = r.uint<std::uint32_t>();
  ParamStore params;
  for (std::uint32_t i = 0; i < param_count; ++i) {
    std::string name = r.name();
    const auto kind = r.uint<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(ElemKind::i8)) {
      throw FormatError("parameter " + name + ": unknown element kind " + std::to_string(kind));
    }
    const auto ndim = r.uint<std::uint8_t>();
    Shape shape(ndim);
    for (auto& d : shape) d = r.uint<std::uint32_t>();
    if (shape_numel(shape) * element_size(static_cast<ElemKind>(kind)) >
        bytes.size() - r.position()) {
      throw FormatError("model file truncated in parameter " + name);
    }
    Tensor t(shape, static_cast<ElemKind>(kind));
    r.tensor_data(t);
    if (t.kind() == ElemKind::i8) {
      const float scale = r.f32();
      std::vector<std::int8_t> q(t.values<std::int8_t>().begin(), t.values<std::int8_t>().end());
      try {
        t = Tensor::quantized(shape, std::move(q), scale);
      } catch (const ValueError& e) {
        throw FormatError("parameter " + name + ": " + e.what());
      }
    }
    if (!params.emplace(name, std::move(t)).second) {
      throw FormatError("duplicate parameter " + name);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after parameter directory");
  try {
    return ModelGraph(std::move(nodes), std::move(params), meta);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent model file: ") + e.what());
  }
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  const auto data = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(std::as_bytes(std::span(raw)));
}

}  // namespace diop
