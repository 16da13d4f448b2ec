#include "diop/tensor.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

namespace diop {

std::size_t element_size(ElemKind kind) {
  switch (kind) {
    case ElemKind::f32:
      return 4;
    case ElemKind::f64:
      return 8;
    case ElemKind::i8:
      return 1;
  }
  throw ValueError("unknown element kind");
}

std::string to_string(ElemKind kind) {
  switch (kind) {
    case ElemKind::f32:
      return "f32";
    case ElemKind::f64:
      return "f64";
    case ElemKind::i8:
      return "i8";
  }
  return "?";
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor() : shape_{0}, data_(std::vector<float>{}) {}

Tensor::Tensor(Shape shape, ElemKind kind) : shape_(std::move(shape)), kind_(kind) {
  const std::size_t n = shape_numel(shape_);
  switch (kind) {
    case ElemKind::f32:
      data_ = std::vector<float>(n, 0.0F);
      break;
    case ElemKind::f64:
      data_ = std::vector<double>(n, 0.0);
      break;
    case ElemKind::i8:
      data_ = std::vector<std::int8_t>(n, 0);
      scale_ = 1.0F;
      break;
  }
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), kind_(ElemKind::f32), data_(std::move(values)) {
  if (shape_numel(shape_) != std::get<std::vector<float>>(data_).size()) {
    throw ShapeError("shape " + to_string(shape_) + " does not match " +
                     std::to_string(std::get<std::vector<float>>(data_).size()) + " values");
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), kind_(ElemKind::f64), data_(std::move(values)) {
  if (shape_numel(shape_) != std::get<std::vector<double>>(data_).size()) {
    throw ShapeError("shape " + to_string(shape_) + " does not match " +
                     std::to_string(std::get<std::vector<double>>(data_).size()) + " values");
  }
}

Tensor Tensor::quantized(Shape shape, std::vector<std::int8_t> values, float scale) {
  if (!(scale > 0.0F) || !std::isfinite(scale)) {
    throw ValueError("quantization scale must be positive and finite");
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.kind_ = ElemKind::i8;
  t.data_ = std::move(values);
  t.scale_ = scale;
  return t;
}

Tensor Tensor::scalar(double value, ElemKind kind) {
  Tensor t({1}, kind);
  t.set(0, value);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::numel() const noexcept { return shape_numel(shape_); }

double Tensor::get(std::size_t flat) const {
  return std::visit([flat](const auto& v) { return static_cast<double>(v.at(flat)); }, data_);
}

double Tensor::real(std::size_t flat) const {
  const double raw = get(flat);
  return scale_ ? raw * static_cast<double>(*scale_) : raw;
}

void Tensor::set(std::size_t flat, double value) {
  std::visit(
      [flat, value](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        v.at(flat) = static_cast<T>(value);
      },
      data_);
}

Tensor Tensor::to(ElemKind kind) const {
  if (kind == kind_) return *this;
  if (kind == ElemKind::i8) {
    throw ValueError("conversion to i8 requires quantization");
  }
  Tensor out(shape_, kind);
  const std::size_t n = numel();
  for (std::size_t i = 0; i < n; ++i) out.set(i, real(i));
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

std::size_t Tensor::storage_bytes() const noexcept {
  return numel() * element_size(kind_) + (scale_ ? sizeof(float) : 0);
}

std::span<const std::byte> Tensor::bytes() const {
  return std::visit([](const auto& v) { return std::as_bytes(std::span(v)); }, data_);
}

std::span<std::byte> Tensor::mutable_bytes() {
  return std::visit([](auto& v) { return std::as_writable_bytes(std::span(v)); }, data_);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (kind_ != other.kind_ || shape_ != other.shape_) return false;
  if (scale_.has_value() != other.scale_.has_value()) return false;
  if (scale_ && std::memcmp(&*scale_, &*other.scale_, sizeof(float)) != 0) return false;
  const auto a = bytes();
  const auto b = other.bytes();
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size()) == 0);
}

void Tensor::check_kind(ElemKind expected) const {
  if (expected != kind_) {
    throw ValueError("tensor holds " + to_string(kind_) + ", accessed as " + to_string(expected));
  }
}

}  // namespace diop
