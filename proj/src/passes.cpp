#include "diop/passes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace diop {

std::size_t count_conv_relu_pairs(const ModelGraph& model) {
  const auto& nodes = model.nodes();
  std::size_t pairs = 0;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    if (nodes[i].kind == NodeKind::conv1d && nodes[i + 1].kind == NodeKind::relu) {
      ++pairs;
      ++i;
    }
  }
  return pairs;
}

ModelGraph fuse_conv_relu(const ModelGraph& model) {
  const auto& nodes = model.nodes();
  std::vector<LayerNode> fused;
  fused.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i + 1 < nodes.size() && nodes[i].kind == NodeKind::conv1d &&
        nodes[i + 1].kind == NodeKind::relu) {
      LayerNode n = nodes[i];
      n.kind = NodeKind::fused_conv_relu;
      fused.push_back(std::move(n));
      ++i;
    } else {
      fused.push_back(nodes[i]);
    }
  }
  return ModelGraph(std::move(fused), model.params(), model.metadata());
}

Tensor quantize_tensor_int8(const Tensor& t) {
  if (!t.is_float()) throw ValueError("quantize_tensor_int8: tensor is already int8");
  const Tensor f = t.to(ElemKind::f32);
  const auto values = f.values<float>();
  for (const float v : values) {
    if (!std::isfinite(v)) throw ValueError("quantize_tensor_int8: non-finite value");
  }
  std::vector<std::int8_t> q(values.size());
  const float scale = quantize_symmetric(values, q);
  return Tensor::quantized(t.shape(), std::move(q), scale);
}

Tensor dequantize(const Tensor& t) { return t.to(ElemKind::f32); }

namespace {

bool has_weight_matrix(NodeKind kind) {
  return kind == NodeKind::conv1d || kind == NodeKind::fused_conv_relu || kind == NodeKind::linear;
}

}  // namespace

ModelGraph quantize_weights_int8(const ModelGraph& model) {
  ParamStore params = model.params();
  for (const LayerNode& n : model.nodes()) {
    if (!has_weight_matrix(n.kind)) continue;
    Tensor& w = params.at(n.name + ".weight");
    if (w.kind() != ElemKind::i8) w = quantize_tensor_int8(w);
  }
  return model.with_params(std::move(params));
}

std::vector<std::string> prunable_weights(const ModelGraph& model) {
  std::vector<std::string> names;
  for (const LayerNode& n : model.nodes()) {
    if (has_weight_matrix(n.kind)) names.push_back(n.name + ".weight");
  }
  return names;
}

ModelGraph apply_mask(const ModelGraph& model, const PruneMask& mask) {
  ParamStore params = model.params();
  for (const auto& [name, m] : mask.masks) {
    auto it = params.find(name);
    if (it == params.end()) throw ValueError("mask refers to unknown parameter " + name);
    if (it->second.shape() != m.shape()) {
      throw ShapeError("mask for " + name + " has shape " + to_string(m.shape()) +
                       ", parameter has " + to_string(it->second.shape()));
    }
    for (std::size_t i = 0; i < m.numel(); ++i) {
      if (m.get(i) == 0.0) it->second.set(i, 0.0);
    }
  }
  return model.with_params(std::move(params));
}

PruneResult prune_structured(const ModelGraph& model, std::size_t amount, double norm_order,
                             std::size_t dim) {
  if (amount < 1) throw ValueError("prune_structured: amount must be at least 1");
  if (!(norm_order > 0.0)) throw ValueError("prune_structured: norm order must be positive");
  PruneMask mask;
  mask.method = PruneMethod::structured;
  for (const std::string& name : prunable_weights(model)) {
    const Tensor& w = model.param(name);
    if (dim >= w.ndim()) {
      throw ShapeError("prune_structured: dim " + std::to_string(dim) + " out of range for " +
                       name + " " + to_string(w.shape()));
    }
    const std::size_t slices = w.dim(dim);
    if (amount >= slices) {
      throw ValueError("prune_structured: amount " + std::to_string(amount) +
                       " must be below the " + std::to_string(slices) + " slices of " + name);
    }
    // Flat index i lies in slice (i / inner) % slices.
    std::size_t inner = 1;
    for (std::size_t a = dim + 1; a < w.ndim(); ++a) inner *= w.dim(a);
    std::vector<double> norms(slices, 0.0);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const std::size_t s = (i / inner) % slices;
      if (std::isinf(norm_order)) {
        norms[s] = std::max(norms[s], std::abs(w.real(i)));
      } else {
        norms[s] += std::pow(std::abs(w.real(i)), norm_order);
      }
    }
    std::vector<std::size_t> order(slices);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
    std::vector<bool> drop(slices, false);
    for (std::size_t k = 0; k < amount; ++k) drop[order[k]] = true;

    Tensor m(w.shape(), ElemKind::f32);
    for (std::size_t i = 0; i < w.numel(); ++i) m.set(i, drop[(i / inner) % slices] ? 0.0 : 1.0);
    mask.masks.emplace(name, std::move(m));
  }
  return {apply_mask(model, mask), std::move(mask)};
}

PruneResult prune_unstructured_global(const ModelGraph& model, double amount) {
  if (!(amount >= 0.0 && amount < 1.0)) {
    throw ValueError("prune_unstructured_global: amount must lie in [0, 1)");
  }
  const std::vector<std::string> names = prunable_weights(model);
  struct Entry {
    double magnitude;
    std::size_t tensor;
    std::size_t index;
  };
  std::vector<Entry> pool;
  for (std::size_t t = 0; t < names.size(); ++t) {
    const Tensor& w = model.param(names[t]);
    for (std::size_t i = 0; i < w.numel(); ++i) pool.push_back({std::abs(w.real(i)), t, i});
  }
  const auto count = static_cast<std::size_t>(std::floor(amount * static_cast<double>(pool.size())));
  // Entries are generated in (tensor, index) order, so a stable partial
  // ordering by magnitude breaks ties by position.
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Entry& a, const Entry& b) { return a.magnitude < b.magnitude; });

  PruneMask mask;
  mask.method = PruneMethod::unstructured;
  std::vector<Tensor> masks;
  for (const std::string& name : names) {
    Tensor m(model.param(name).shape(), ElemKind::f32);
    for (std::size_t i = 0; i < m.numel(); ++i) m.set(i, 1.0);
    masks.push_back(std::move(m));
  }
  for (std::size_t k = 0; k < count; ++k) masks[pool[k].tensor].set(pool[k].index, 0.0);
  for (std::size_t t = 0; t < names.size(); ++t) mask.masks.emplace(names[t], std::move(masks[t]));
  return {apply_mask(model, mask), std::move(mask)};
}

SparsityReport sparsity_report(const ModelGraph& model, const PruneMask& mask) {
  SparsityReport report;
  std::size_t pruned = 0;
  double total = 0.0;
  for (const std::string& name : prunable_weights(model)) {
    const Tensor& w = model.param(name);
    ModuleSparsity s;
    s.param = name;
    s.numel = w.numel();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      if (w.get(i) == 0.0) ++s.zeros;
    }
    s.sparsity = s.numel == 0 ? 0.0 : static_cast<double>(s.zeros) / static_cast<double>(s.numel);
    s.is_pruned = mask.masks.contains(name);
    if (s.is_pruned) {
      ++pruned;
      total += s.sparsity;
    }
    report.modules.push_back(std::move(s));
  }
  for (const auto& [name, m] : mask.masks) {
    if (!model.has_param(name)) throw ValueError("mask refers to unknown parameter " + name);
  }
  report.average = pruned == 0 ? 0.0 : total / static_cast<double>(pruned);
  return report;
}

std::size_t dense_memory_bytes(const Shape& shape, std::size_t element_size) {
  return shape_numel(shape) * element_size;
}

std::size_t coo_memory_bytes(const Shape& shape, std::int64_t nze, std::size_t element_size) {
  if (nze < 0) throw ValueError("coo_memory_bytes: negative nonzero count");
  const auto n = static_cast<std::size_t>(nze);
  if (n > shape_numel(shape)) {
    throw ValueError("coo_memory_bytes: " + std::to_string(n) + " nonzeros exceed " +
                     std::to_string(shape_numel(shape)) + " elements");
  }
  return shape.size() * 8 * n + n * element_size;
}

double coo_break_even_amount(std::size_t ndim, std::size_t element_size) {
  if (ndim < 1 || element_size < 1) {
    throw ValueError("coo_break_even_amount: ndim and element_size must be positive");
  }
  return 1.0 - static_cast<double>(element_size) /
                   static_cast<double>(ndim * 8 + element_size);
}

MemoryEstimate sparse_export_size(const ModelGraph& model, const PruneMask& mask) {
  MemoryEstimate est;
  double dense_weight = 0.0;
  double coo_weight = 0.0;
  for (const auto& [name, m] : mask.masks) {
    const Tensor& w = model.param(name);
    std::int64_t nze = 0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      if (w.get(i) != 0.0) ++nze;
    }
    const std::size_t elem = element_size(w.kind());
    est.dense_bytes += dense_memory_bytes(w.shape(), elem);
    est.coo_bytes += coo_memory_bytes(w.shape(), nze, elem);
    dense_weight += static_cast<double>(elem * w.numel());
    coo_weight += static_cast<double>((w.ndim() * 8 + elem) * w.numel());
  }
  est.break_even_amount = coo_weight > 0.0 ? 1.0 - dense_weight / coo_weight : 0.0;
  return est;
}

}  // namespace diop
