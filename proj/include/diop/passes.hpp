#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "diop/model.hpp"

namespace diop {

// ---- layer fusion ----

/// Number of adjacent (conv1d, relu) node pairs.
std::size_t count_conv_relu_pairs(const ModelGraph& model);

/// Replaces every adjacent (conv1d, relu) pair by one fused_conv_relu node
/// that keeps the conv's name and parameters. Leaky relu is never fused.
ModelGraph fuse_conv_relu(const ModelGraph& model);

// ---- int8 weight quantization ----

/// Symmetric per-tensor quantization of a float tensor. Throws ValueError on
/// NaN or infinite values.
Tensor quantize_tensor_int8(const Tensor& t);
/// q * scale as f32.
Tensor dequantize(const Tensor& t);

/// Stores the weights of conv1d / fused / linear nodes as int8 + scale.
/// Biases, batch-norm tensors and the frozen frontend stay float; the
/// forward pass then quantizes activations dynamically per tensor.
ModelGraph quantize_weights_int8(const ModelGraph& model);

// ---- pruning ----

enum class PruneMethod : std::uint8_t { structured, unstructured };

/// Per-parameter 0/1 masks (f32) over the pruned weight tensors.
struct PruneMask {
  PruneMethod method = PruneMethod::unstructured;
  std::map<std::string, Tensor> masks;
};

struct PruneResult {
  ModelGraph model;
  PruneMask mask;
};

/// Weight tensors eligible for pruning: conv1d, fused and linear weights.
std::vector<std::string> prunable_weights(const ModelGraph& model);

/// Zeroes, in every prunable tensor, the `amount` slices along `dim` with
/// the smallest L-`norm_order` norm (ties: lowest slice index). Shapes and
/// parameter counts are unchanged.
PruneResult prune_structured(const ModelGraph& model, std::size_t amount = 1,
                             double norm_order = 2.0, std::size_t dim = 0);

/// Pools all prunable weights and zeroes the floor(amount * N) smallest by
/// magnitude (ties: lowest position in node order, then flat index).
PruneResult prune_unstructured_global(const ModelGraph& model, double amount = 0.3);

/// Multiplies masked parameters by their masks. Idempotent.
ModelGraph apply_mask(const ModelGraph& model, const PruneMask& mask);

struct ModuleSparsity {
  std::string param;
  std::size_t numel = 0;
  std::size_t zeros = 0;
  double sparsity = 0.0;  ///< fraction in [0, 1]
  bool is_pruned = false;
};

struct SparsityReport {
  std::vector<ModuleSparsity> modules;  ///< every prunable tensor, node order
  double average = 0.0;                 ///< mean sparsity over pruned modules
};

SparsityReport sparsity_report(const ModelGraph& model, const PruneMask& mask);

// ---- sparse storage model ----

/// Dense storage: product(shape) * element_size.
std::size_t dense_memory_bytes(const Shape& shape, std::size_t element_size);

/// COO storage with int64 indices: ndim * 8 * nze + nze * element_size.
std::size_t coo_memory_bytes(const Shape& shape, std::int64_t nze, std::size_t element_size);

/// Pruning amount above which COO storage is smaller than dense:
/// 1 - element_size / (ndim * 8 + element_size).
double coo_break_even_amount(std::size_t ndim, std::size_t element_size);

struct MemoryEstimate {
  std::size_t dense_bytes = 0;
  std::size_t coo_bytes = 0;
  /// Uniform amount at which total COO bytes equal total dense bytes.
  double break_even_amount = 0.0;
};

/// Dense vs COO bytes over the tensors covered by `mask`, counting the
/// nonzeros actually present in the model.
MemoryEstimate sparse_export_size(const ModelGraph& model, const PruneMask& mask);

}  // namespace diop
