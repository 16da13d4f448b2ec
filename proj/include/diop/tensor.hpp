#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "diop/errors.hpp"

namespace diop {

enum class ElemKind : std::uint8_t { f32 = 0, f64 = 1, i8 = 2 };

using Shape = std::vector<std::size_t>;

std::size_t element_size(ElemKind kind);
std::string to_string(ElemKind kind);
std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

template <typename T>
constexpr ElemKind elem_kind_of() {
  if constexpr (std::is_same_v<T, float>) {
    return ElemKind::f32;
  } else if constexpr (std::is_same_v<T, double>) {
    return ElemKind::f64;
  } else {
    static_assert(std::is_same_v<T, std::int8_t>, "unsupported element type");
    return ElemKind::i8;
  }
}

/// Dense row-major n-dimensional array.
///
/// Holds float32, float64 or int8 storage. An int8 tensor always carries a
/// positive per-tensor quantization scale (real value = q * scale); float
/// tensors never do.
class Tensor {
 public:
  /// Empty f32 tensor of shape {0}.
  Tensor();
  /// Zero-filled tensor.
  explicit Tensor(Shape shape, ElemKind kind = ElemKind::f32);

  Tensor(Shape shape, std::vector<float> values);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor quantized(Shape shape, std::vector<std::int8_t> values, float scale);
  static Tensor scalar(double value, ElemKind kind);

  ElemKind kind() const noexcept { return kind_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept;
  bool empty() const noexcept { return numel() == 0; }
  bool is_float() const noexcept { return kind_ != ElemKind::i8; }
  std::optional<float> quant_scale() const noexcept { return scale_; }

  template <typename T>
  std::span<T> values() {
    check_kind(elem_kind_of<T>());
    return std::span<T>(std::get<std::vector<T>>(data_));
  }
  template <typename T>
  std::span<const T> values() const {
    check_kind(elem_kind_of<T>());
    return std::span<const T>(std::get<std::vector<T>>(data_));
  }

  /// Stored value at a flat index, widened to double (raw q for int8).
  double get(std::size_t flat) const;
  /// Real value at a flat index (q * scale for int8).
  double real(std::size_t flat) const;
  void set(std::size_t flat, double value);

  /// Element-kind conversion between float kinds; int8 tensors dequantize.
  Tensor to(ElemKind kind) const;
  Tensor reshaped(Shape shape) const;

  /// Raw data bytes plus 4 bytes for a quantization scale.
  std::size_t storage_bytes() const noexcept;

  bool bitwise_equal(const Tensor& other) const;

  /// Raw byte view of the element storage.
  std::span<const std::byte> bytes() const;
  std::span<std::byte> mutable_bytes();

 private:
  void check_kind(ElemKind expected) const;

  Shape shape_;
  ElemKind kind_ = ElemKind::f32;
  std::variant<std::vector<float>, std::vector<double>, std::vector<std::int8_t>> data_;
  std::optional<float> scale_;
};

/// Calls `fn(span<T>)` for the float storage of `t`; throws for int8.
template <typename Fn>
decltype(auto) visit_float(const Tensor& t, Fn&& fn) {
  if (t.kind() == ElemKind::f64) {
    return fn(t.values<double>());
  }
  if (t.kind() == ElemKind::f32) {
    return fn(t.values<float>());
  }
  throw ValueError("expected a float tensor, got " + to_string(t.kind()));
}

}  // namespace diop
